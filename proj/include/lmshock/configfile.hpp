#pragma once

// Plain key = value configuration files with [section] headers. Lines may
// carry # or ; comments. Keys are addressed as "section.key" and diagnostics
// cite the file and line, so a typo fails loudly instead of silently running
// on defaults.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lmshock/common.hpp"

namespace lmshock {

class ConfigFile {
public:
    static ConfigFile parse_text(const std::string& text,
                                 const std::string& origin = "<config>") {
        ConfigFile cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line, section;
        std::size_t ln = 0;
        while (std::getline(in, line)) {
            ++ln;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::size_t cut = line.find_first_of("#;");
            if (cut != std::string::npos) line.erase(cut);
            const std::string t = trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                require(t.back() == ']', cfg.where(ln) + "unterminated section header");
                section = trim(t.substr(1, t.size() - 2));
                require(!section.empty(), cfg.where(ln) + "empty section name");
                continue;
            }
            const std::size_t eq = t.find('=');
            require(eq != std::string::npos, cfg.where(ln) + "expected key = value");
            const std::string key = trim(t.substr(0, eq));
            require(!key.empty(), cfg.where(ln) + "empty key");
            const std::string full = section.empty() ? key : section + "." + key;
            require(!cfg.values_.count(full), cfg.where(ln) + "duplicate key: " + full);
            cfg.values_[full] = trim(t.substr(eq + 1));
        }
        return cfg;
    }

    static ConfigFile load(const std::string& path) {
        std::ifstream in(path);
        require(in.good(), "cannot open configuration file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_text(buf.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& def = "") const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    std::int64_t get_int(const std::string& key, std::int64_t def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::size_t used = 0;
        std::int64_t v = 0;
        try {
            v = std::stoll(it->second, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        require(used == it->second.size() && !it->second.empty(),
                origin_ + ": not an integer: " + key + " = " + it->second);
        return v;
    }

    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(it->second, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        require(used == it->second.size() && !it->second.empty(),
                origin_ + ": not a number: " + key + " = " + it->second);
        return v;
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        const std::string& v = it->second;
        if (v == "true" || v == "yes" || v == "1") return true;
        if (v == "false" || v == "no" || v == "0") return false;
        throw input_error(origin_ + ": not a boolean: " + key + " = " + v);
    }

    // Comma-separated values; empty pieces are dropped, so an empty value
    // yields an empty list.
    std::vector<std::string> get_list(const std::string& key) const {
        std::vector<std::string> out;
        auto it = values_.find(key);
        if (it == values_.end()) return out;
        std::istringstream in(it->second);
        std::string piece;
        while (std::getline(in, piece, ',')) {
            piece = trim(piece);
            if (!piece.empty()) out.push_back(piece);
        }
        return out;
    }

    // Keys present in the file but not in the caller's schema.
    std::vector<std::string> unknown_keys(const std::set<std::string>& known) const {
        std::vector<std::string> out;
        for (const auto& [key, value] : values_)
            if (!known.count(key)) out.push_back(key);
        return out;
    }

    const std::string& origin() const { return origin_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        std::size_t e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    }

    std::string where(std::size_t line) const {
        return origin_ + ":" + std::to_string(line) + ": ";
    }

    std::map<std::string, std::string> values_;
    std::string origin_;
};

}  // namespace lmshock
