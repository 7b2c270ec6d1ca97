#pragma once

// Key-value-with-sections text files. Parsing is delegated to
// boost::property_tree's INI reader; this layer adds typed access and
// strict unknown-key rejection.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stp/errors.hpp"

namespace stp {

class ConfigSection {
public:
    ConfigSection() = default;
    ConfigSection(std::string name, std::map<std::string, std::string> values)
        : name_(std::move(name)), values_(std::move(values)) {}

    const std::string& name() const { return name_; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::optional<std::string> text(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        return text(key).value_or(fallback);
    }

    std::string require_text(const std::string& key) const {
        auto v = text(key);
        if (!v) throw ConfigError("[" + name_ + "] missing required key '" + key + "'");
        return *v;
    }

    std::optional<double> number(const std::string& key) const {
        auto v = text(key);
        if (!v) return std::nullopt;
        return parse_number(key, *v);
    }

    double number(const std::string& key, double fallback) const { return number(key).value_or(fallback); }

    double require_number(const std::string& key) const {
        auto v = number(key);
        if (!v) throw ConfigError("[" + name_ + "] missing required key '" + key + "'");
        return *v;
    }

    std::optional<std::int64_t> integer(const std::string& key) const {
        auto v = number(key);
        if (!v) return std::nullopt;
        if (*v != std::floor(*v)) throw ConfigError("[" + name_ + "] key '" + key + "' must be an integer");
        return static_cast<std::int64_t>(*v);
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) const {
        return integer(key).value_or(fallback);
    }

    std::optional<bool> boolean(const std::string& key) const {
        auto v = text(key);
        if (!v) return std::nullopt;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw ConfigError("[" + name_ + "] key '" + key + "' must be a boolean");
    }

    /// Comma- or whitespace-separated list. expected == 0 accepts any length.
    std::optional<std::vector<double>> numbers(const std::string& key, std::size_t expected = 0) const {
        auto v = text(key);
        if (!v) return std::nullopt;
        std::string s = *v;
        for (char& ch : s) {
            if (ch == ',' || ch == ';') ch = ' ';
        }
        std::istringstream in(s);
        std::vector<double> out;
        std::string token;
        while (in >> token) out.push_back(parse_number(key, token));
        if (expected != 0 && out.size() != expected) {
            throw ConfigError("[" + name_ + "] key '" + key + "' expects " + std::to_string(expected) +
                              " values, got " + std::to_string(out.size()));
        }
        return out;
    }

    void check_keys(const std::set<std::string>& allowed) const {
        for (const auto& [key, value] : values_) {
            if (allowed.count(key) == 0) throw ConfigError("[" + name_ + "] unknown key '" + key + "'");
        }
    }

private:
    double parse_number(const std::string& key, const std::string& raw) const {
        try {
            std::size_t used = 0;
            double v = std::stod(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("[" + name_ + "] key '" + key + "': cannot parse number '" + raw + "'");
        }
    }

    std::string name_;
    std::map<std::string, std::string> values_;
};

class ConfigFile {
public:
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>") {
        boost::property_tree::ptree tree;
        std::istringstream in(text);
        try {
            boost::property_tree::ini_parser::read_ini(in, tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
        }
        ConfigFile out;
        out.origin_ = origin;
        out.text_ = text;
        for (const auto& [section, body] : tree) {
            if (body.empty()) throw ConfigError(origin + ": key '" + section + "' outside of any section");
            std::map<std::string, std::string> values;
            for (const auto& [key, value] : body) values[key] = value.get_value<std::string>();
            out.sections_[section] = ConfigSection(section, std::move(values));
        }
        return out;
    }

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open '" + path + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path);
    }

    bool has(const std::string& section) const { return sections_.count(section) != 0; }

    const ConfigSection& section(const std::string& name) const {
        auto it = sections_.find(name);
        if (it == sections_.end()) throw ConfigError(origin_ + ": missing section [" + name + "]");
        return it->second;
    }

    /// Section or an empty one when absent.
    ConfigSection section_or_empty(const std::string& name) const {
        auto it = sections_.find(name);
        return it == sections_.end() ? ConfigSection(name, {}) : it->second;
    }

    void check_sections(const std::set<std::string>& allowed) const {
        for (const auto& [name, body] : sections_) {
            if (allowed.count(name) == 0) throw ConfigError(origin_ + ": unknown section [" + name + "]");
        }
    }

    /// Replace or add one value (used for command-line overrides).
    void set(const std::string& section, const std::string& key, const std::string& value) {
        auto& s = sections_[section];
        auto values = s.values();
        values[key] = value;
        s = ConfigSection(section, std::move(values));
    }

    void erase(const std::string& section, const std::string& key) {
        auto it = sections_.find(section);
        if (it == sections_.end()) return;
        auto values = it->second.values();
        values.erase(key);
        it->second = ConfigSection(section, std::move(values));
    }

    const std::string& origin() const { return origin_; }
    const std::string& text() const { return text_; }

    /// Canonical re-serialization (sections and keys sorted).
    std::string canonical() const {
        std::ostringstream out;
        for (const auto& [name, body] : sections_) {
            out << "[" << name << "]\n";
            for (const auto& [key, value] : body.values()) out << key << " = " << value << "\n";
        }
        return out.str();
    }

private:
    std::string origin_;
    std::string text_;
    std::map<std::string, ConfigSection> sections_;
};

}  // namespace stp
