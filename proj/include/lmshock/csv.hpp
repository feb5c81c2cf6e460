#pragma once

// CSV serialization for spell panels, task surveys, and municipality
// metadata. The formats are strict: exact headers, exact field counts, empty
// fields for missing values. Numbers are written in shortest round-trip form
// so write -> load reproduces records bit for bit.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "lmshock/common.hpp"
#include "lmshock/panel.hpp"

namespace lmshock {

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t discarded_age = 0;
};

namespace csvdetail {

inline void split(std::string_view line, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

[[noreturn]] inline void fail(const std::string& path, std::size_t line_no,
                              const std::string& what) {
    throw input_error(path + " line " + std::to_string(line_no) + ": " + what);
}

inline std::int64_t parse_i64(std::string_view f, const std::string& path, std::size_t ln,
                              const char* field) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size())
        fail(path, ln, std::string("bad integer in ") + field);
    return v;
}

inline double parse_f64(std::string_view f, const std::string& path, std::size_t ln,
                        const char* field) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size())
        fail(path, ln, std::string("bad number in ") + field);
    return v;
}

inline bool parse_bool(std::string_view f, const std::string& path, std::size_t ln,
                       const char* field) {
    if (f == "1") return true;
    if (f == "0") return false;
    fail(path, ln, std::string("bad flag in ") + field + " (expected 0 or 1)");
}

inline void append_num(std::string& out, double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    require(ec == std::errc(), "number formatting failed");
    out.append(buf, p);
}

inline void append_num(std::string& out, std::int64_t v) {
    char buf[24];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    require(ec == std::errc(), "number formatting failed");
    out.append(buf, p);
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw input_error("cannot open " + path + " for writing");
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open " + path);
    return is;
}

inline void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace csvdetail

inline const char* to_label(TaskClass t) {
    return t == TaskClass::Routine ? "Routine" : "Abstract";
}
inline const char* to_label(HoursBand b) {
    switch (b) {
        case HoursBand::FullTime: return "FullTime";
        case HoursBand::Part18to30: return "Part18to30";
        case HoursBand::PartUnder18: return "PartUnder18";
    }
    throw input_error("unknown hours band");
}
inline const char* to_label(Education e) {
    switch (e) {
        case Education::None: return "None";
        case Education::Apprenticeship: return "Apprenticeship";
        case Education::University: return "University";
    }
    throw input_error("unknown education level");
}
inline const char* to_label(Nationality n) {
    return n == Nationality::Native ? "Native" : "Commuter";
}

inline constexpr const char* kSpellHeader =
    "worker_id,year,employed,muni_id,district_id,occupation_code,task_class,"
    "log_daily_wage,censored,hours_band,age,female,education,apprentice,nationality";

inline void write_spells(const std::string& path, const std::vector<SpellRecord>& records) {
    auto os = csvdetail::open_out(path);
    std::string line;
    line.reserve(160);
    os << kSpellHeader << '\n';
    for (const auto& r : records) {
        line.clear();
        csvdetail::append_num(line, r.worker_id);
        line += ',';
        csvdetail::append_num(line, static_cast<std::int64_t>(r.year));
        line += ',';
        line += r.employed ? '1' : '0';
        line += ',';
        if (r.muni_id) csvdetail::append_num(line, *r.muni_id);
        line += ',';
        if (r.district_id) csvdetail::append_num(line, *r.district_id);
        line += ',';
        if (r.occupation_code) csvdetail::append_num(line, *r.occupation_code);
        line += ',';
        if (r.task_class) line += to_label(*r.task_class);
        line += ',';
        if (r.log_daily_wage) csvdetail::append_num(line, *r.log_daily_wage);
        line += ',';
        line += r.censored ? '1' : '0';
        line += ',';
        if (r.hours_band) line += to_label(*r.hours_band);
        line += ',';
        csvdetail::append_num(line, static_cast<std::int64_t>(r.age));
        line += ',';
        line += r.female ? '1' : '0';
        line += ',';
        line += to_label(r.education);
        line += ',';
        line += r.apprentice ? '1' : '0';
        line += ',';
        line += to_label(r.nationality);
        line += '\n';
        os << line;
    }
    require(os.good(), "write failure on " + path);
}

inline std::vector<SpellRecord> load_spells(const std::string& path,
                                            LoadReport* report = nullptr) {
    auto is = csvdetail::open_in(path);
    std::string line;
    std::size_t ln = 0;
    if (!std::getline(is, line)) throw input_error(path + ": empty file");
    ++ln;
    csvdetail::strip_cr(line);
    if (line != kSpellHeader)
        csvdetail::fail(path, ln, "unexpected header (see documented spell schema)");

    std::vector<SpellRecord> out;
    std::vector<std::string_view> f;
    std::unordered_set<std::uint64_t> seen;
    LoadReport rep;
    while (std::getline(is, line)) {
        ++ln;
        csvdetail::strip_cr(line);
        if (line.empty()) continue;
        csvdetail::split(line, f);
        if (f.size() != 15) csvdetail::fail(path, ln, "expected 15 fields, got " +
                                                          std::to_string(f.size()));
        ++rep.rows_read;

        SpellRecord r;
        r.worker_id = csvdetail::parse_i64(f[0], path, ln, "worker_id");
        r.year = static_cast<int>(csvdetail::parse_i64(f[1], path, ln, "year"));
        if (r.year < 1900 || r.year >= 2100) csvdetail::fail(path, ln, "year out of range");
        r.employed = csvdetail::parse_bool(f[2], path, ln, "employed");
        if (!f[3].empty()) r.muni_id = csvdetail::parse_i64(f[3], path, ln, "muni_id");
        if (!f[4].empty()) r.district_id = csvdetail::parse_i64(f[4], path, ln, "district_id");
        if (!f[5].empty())
            r.occupation_code = csvdetail::parse_i64(f[5], path, ln, "occupation_code");
        if (!f[6].empty()) {
            if (f[6] == "Routine") r.task_class = TaskClass::Routine;
            else if (f[6] == "Abstract") r.task_class = TaskClass::Abstract;
            else csvdetail::fail(path, ln, "bad task_class");
        }
        if (!f[7].empty())
            r.log_daily_wage = csvdetail::parse_f64(f[7], path, ln, "log_daily_wage");
        r.censored = csvdetail::parse_bool(f[8], path, ln, "censored");
        if (!f[9].empty()) {
            if (f[9] == "FullTime") r.hours_band = HoursBand::FullTime;
            else if (f[9] == "Part18to30") r.hours_band = HoursBand::Part18to30;
            else if (f[9] == "PartUnder18") r.hours_band = HoursBand::PartUnder18;
            else csvdetail::fail(path, ln, "bad hours_band");
        }
        r.age = static_cast<int>(csvdetail::parse_i64(f[10], path, ln, "age"));
        r.female = csvdetail::parse_bool(f[11], path, ln, "female");
        if (f[12] == "None") r.education = Education::None;
        else if (f[12] == "Apprenticeship") r.education = Education::Apprenticeship;
        else if (f[12] == "University") r.education = Education::University;
        else csvdetail::fail(path, ln, "bad education");
        r.apprentice = csvdetail::parse_bool(f[13], path, ln, "apprentice");
        if (f[14] == "Native") r.nationality = Nationality::Native;
        else if (f[14] == "Commuter") r.nationality = Nationality::Commuter;
        else csvdetail::fail(path, ln, "bad nationality");

        if (r.employed) {
            if (!r.muni_id) csvdetail::fail(path, ln, "employed record without muni_id");
            if (!r.district_id) csvdetail::fail(path, ln, "employed record without district_id");
            if (!r.log_daily_wage) csvdetail::fail(path, ln, "employed record without a wage");
            if (!r.hours_band) csvdetail::fail(path, ln, "employed record without hours_band");
        } else {
            if (r.muni_id) csvdetail::fail(path, ln, "non-employed record carries a muni_id");
            if (r.log_daily_wage) csvdetail::fail(path, ln, "non-employed record carries a wage");
        }
        if (r.censored && !r.log_daily_wage)
            csvdetail::fail(path, ln, "censored flag without a wage");

        if (r.age < 16 || r.age > 65) {
            ++rep.discarded_age;
            continue;
        }
        std::uint64_t key = static_cast<std::uint64_t>(r.worker_id) * 200u +
                            static_cast<std::uint64_t>(r.year - 1900);
        if (!seen.insert(key).second)
            csvdetail::fail(path, ln, "duplicate record for worker " +
                                          std::to_string(r.worker_id) + " in year " +
                                          std::to_string(r.year));
        out.push_back(r);
    }
    if (report) *report = rep;
    return out;
}

inline constexpr const char* kTaskSurveyHeader =
    "occupation_code,individual_id,n_routine_tasks,n_abstract_tasks";

inline void write_task_survey(const std::string& path, const std::vector<TaskSurveyRow>& rows) {
    auto os = csvdetail::open_out(path);
    os << kTaskSurveyHeader << '\n';
    std::string line;
    for (const auto& r : rows) {
        line.clear();
        csvdetail::append_num(line, r.occupation_code);
        line += ',';
        csvdetail::append_num(line, r.individual_id);
        line += ',';
        csvdetail::append_num(line, static_cast<std::int64_t>(r.n_routine));
        line += ',';
        csvdetail::append_num(line, static_cast<std::int64_t>(r.n_abstract));
        line += '\n';
        os << line;
    }
    require(os.good(), "write failure on " + path);
}

inline std::vector<TaskSurveyRow> load_task_survey(const std::string& path) {
    auto is = csvdetail::open_in(path);
    std::string line;
    std::size_t ln = 0;
    if (!std::getline(is, line)) throw input_error(path + ": empty file");
    ++ln;
    csvdetail::strip_cr(line);
    if (line != kTaskSurveyHeader) csvdetail::fail(path, ln, "unexpected header");
    std::vector<TaskSurveyRow> out;
    std::vector<std::string_view> f;
    while (std::getline(is, line)) {
        ++ln;
        csvdetail::strip_cr(line);
        if (line.empty()) continue;
        csvdetail::split(line, f);
        if (f.size() != 4) csvdetail::fail(path, ln, "expected 4 fields");
        TaskSurveyRow r;
        r.occupation_code = csvdetail::parse_i64(f[0], path, ln, "occupation_code");
        r.individual_id = csvdetail::parse_i64(f[1], path, ln, "individual_id");
        r.n_routine = static_cast<int>(csvdetail::parse_i64(f[2], path, ln, "n_routine_tasks"));
        r.n_abstract = static_cast<int>(csvdetail::parse_i64(f[3], path, ln, "n_abstract_tasks"));
        out.push_back(r);
    }
    return out;
}

inline constexpr const char* kMunicipalityHeader = "muni_id,district_id,is_border,distance_km";

inline void write_municipalities(const std::string& path,
                                 const std::vector<Municipality>& munis) {
    auto os = csvdetail::open_out(path);
    os << kMunicipalityHeader << '\n';
    std::string line;
    for (const auto& m : munis) {
        line.clear();
        csvdetail::append_num(line, m.muni_id);
        line += ',';
        csvdetail::append_num(line, m.district_id);
        line += ',';
        line += m.is_border ? '1' : '0';
        line += ',';
        csvdetail::append_num(line, m.distance_km);
        line += '\n';
        os << line;
    }
    require(os.good(), "write failure on " + path);
}

inline std::vector<Municipality> load_municipalities(const std::string& path) {
    auto is = csvdetail::open_in(path);
    std::string line;
    std::size_t ln = 0;
    if (!std::getline(is, line)) throw input_error(path + ": empty file");
    ++ln;
    csvdetail::strip_cr(line);
    if (line != kMunicipalityHeader) csvdetail::fail(path, ln, "unexpected header");
    std::vector<Municipality> out;
    std::vector<std::string_view> f;
    std::unordered_set<std::int64_t> seen;
    while (std::getline(is, line)) {
        ++ln;
        csvdetail::strip_cr(line);
        if (line.empty()) continue;
        csvdetail::split(line, f);
        if (f.size() != 4) csvdetail::fail(path, ln, "expected 4 fields");
        Municipality m;
        m.muni_id = csvdetail::parse_i64(f[0], path, ln, "muni_id");
        m.district_id = csvdetail::parse_i64(f[1], path, ln, "district_id");
        m.is_border = csvdetail::parse_bool(f[2], path, ln, "is_border");
        m.distance_km = csvdetail::parse_f64(f[3], path, ln, "distance_km");
        if (m.distance_km < 0) csvdetail::fail(path, ln, "negative distance");
        if (!seen.insert(m.muni_id).second)
            csvdetail::fail(path, ln, "duplicate municipality " + std::to_string(m.muni_id));
        out.push_back(m);
    }
    return out;
}

}  // namespace lmshock
