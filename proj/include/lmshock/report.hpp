#pragma once

// Rendering of study results: machine-readable CSVs and aligned text tables.
// Both views are generated from the same row structure, so every number a
// table shows is also in a CSV. Coefficients are the shock coefficients of
// the underlying regressions; intervals are percentile bootstrap when
// replications ran and normal otherwise.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "lmshock/common.hpp"
#include "lmshock/studies.hpp"

namespace lmshock {

struct TableRow {
    std::string label;
    int sign = 0;  // -1 / +1 as in the table header; 0 = memo or summary row
    double coefficient = 0.0;
    double se = 0.0;
    double ci_low = 0.0, ci_high = 0.0;
    std::size_t n = 0;
    std::size_t clusters = 0;
};

namespace reportdetail {

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string fmt_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%11.4f", v);
    return buf;
}

inline const char* sign_mark(int sign) {
    return sign < 0 ? "-" : sign > 0 ? "+" : "";
}

}  // namespace reportdetail

inline TableRow make_row(std::string label, int sign, const RegressionResult& r) {
    require(label.find(',') == std::string::npos, "row labels may not contain commas");
    TableRow row;
    row.label = std::move(label);
    row.sign = sign;
    row.coefficient = shock_coefficient(r);
    row.se = shock_se(r);
    auto ci = shock_interval(r);
    row.ci_low = ci.first;
    row.ci_high = ci.second;
    row.n = r.n_obs;
    row.clusters = r.n_clusters;
    return row;
}

inline std::vector<TableRow> table_rows(const DecompositionReport& rep) {
    std::vector<TableRow> rows;
    for (const auto& c : rep.components) rows.push_back(make_row(c.label, c.sign, c.result));
    TableRow residual;
    residual.label = "additivity residual";
    residual.coefficient = rep.additivity_residual;
    residual.n = rep.n_municipalities;
    rows.push_back(residual);
    return rows;
}

inline std::vector<TableRow> table_rows(const SubgroupReport& rep) {
    std::vector<TableRow> rows;
    rows.push_back(make_row(std::string(subgroup_name(rep.subgroup)) + ": displacement", 0,
                            rep.displacement));
    rows.push_back(make_row(std::string(subgroup_name(rep.subgroup)) + ": wage effect", 0,
                            rep.wage));
    return rows;
}

inline std::vector<TableRow> table_rows(const PseudoPanelResult& rep) {
    std::vector<TableRow> rows;
    rows.push_back(make_row("grouped wage effect", 0, rep.result));
    return rows;
}

inline constexpr const char* kReportHeader =
    "component,sign,coefficient,se,ci_low,ci_high,n,clusters";

inline std::string rows_csv(const std::vector<TableRow>& rows) {
    std::string out = kReportHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += r.label;
        out += ',';
        out += reportdetail::sign_mark(r.sign);
        out += ',';
        out += reportdetail::fmt(r.coefficient);
        out += ',';
        out += reportdetail::fmt(r.se);
        out += ',';
        out += reportdetail::fmt(r.ci_low);
        out += ',';
        out += reportdetail::fmt(r.ci_high);
        out += ',';
        out += std::to_string(r.n);
        out += ',';
        out += std::to_string(r.clusters);
        out += '\n';
    }
    return out;
}

// Aligned text table with the sign convention in the header, one row per
// component, coefficients and inference side by side.
inline std::string rows_table(const std::string& title, const std::vector<TableRow>& rows) {
    std::size_t width = 24;
    for (const auto& r : rows) width = std::max(width, r.label.size() + 2);

    std::string out = title;
    out += '\n';
    char head[160];
    std::snprintf(head, sizeof head, "%-*s %4s %11s %11s %23s %8s %8s", static_cast<int>(width),
                  "component", "sign", "coef", "se", "95% interval", "n", "clusters");
    out += head;
    out += '\n';
    out.append(width + 4 + 11 + 11 + 23 + 8 + 8 + 6, '-');
    out += '\n';
    for (const auto& r : rows) {
        char line[256];
        std::snprintf(line, sizeof line, "%-*s %4s %s %s  [%s,%s] %8zu %8zu",
                      static_cast<int>(width), r.label.c_str(),
                      reportdetail::sign_mark(r.sign), reportdetail::fmt_fixed(r.coefficient).c_str(),
                      reportdetail::fmt_fixed(r.se).c_str(),
                      reportdetail::fmt_fixed(r.ci_low).c_str(),
                      reportdetail::fmt_fixed(r.ci_high).c_str(), r.n, r.clusters);
        out += line;
        out += '\n';
    }
    return out;
}

inline std::string decomposition_csv(const DecompositionReport& rep) {
    return rows_csv(table_rows(rep));
}

inline std::string decomposition_table(const DecompositionReport& rep) {
    std::string title = "study: " + rep.study + "  (municipalities: " +
                        std::to_string(rep.n_municipalities) + ", excluded: " +
                        std::to_string(rep.excluded.size()) + ")";
    return rows_table(title, table_rows(rep));
}

inline constexpr const char* kEventStudyHeader = "year,coefficient,ci_low,ci_high";

inline std::string event_study_csv(const EventStudy& study) {
    std::string out = kEventStudyHeader;
    out += '\n';
    for (const auto& p : study.points) {
        auto ci = shock_interval(p.result);
        out += std::to_string(p.year);
        out += ',';
        out += reportdetail::fmt(shock_coefficient(p.result));
        out += ',';
        out += reportdetail::fmt(ci.first);
        out += ',';
        out += reportdetail::fmt(ci.second);
        out += '\n';
    }
    return out;
}

inline std::string event_study_table(const EventStudy& study) {
    std::string out = std::string("event study: ") + event_outcome_name(study.outcome) +
                      "  (base year " + std::to_string(study.base_year) + ")\n";
    char head[96];
    std::snprintf(head, sizeof head, "%6s %11s %23s %8s", "year", "coef", "95% interval", "n");
    out += head;
    out += '\n';
    for (const auto& p : study.points) {
        auto ci = shock_interval(p.result);
        char line[128];
        std::snprintf(line, sizeof line, "%6d %s  [%s,%s] %8zu", p.year,
                      reportdetail::fmt_fixed(shock_coefficient(p.result)).c_str(),
                      reportdetail::fmt_fixed(ci.first).c_str(),
                      reportdetail::fmt_fixed(ci.second).c_str(), p.result.n_obs);
        out += line;
        out += '\n';
    }
    if (!study.skipped_years.empty()) {
        out += "skipped years:";
        for (int y : study.skipped_years) out += ' ' + std::to_string(y);
        out += '\n';
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open for writing: " + path);
    os << content;
    os.flush();
    require(os.good(), "write failed: " + path);
}

}  // namespace lmshock
