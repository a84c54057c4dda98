#pragma once

#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcp {

/// Configuration problem with enough context to point at the offending line.
class ConfigError : public std::runtime_error {
public:
    ConfigError(int line, const std::string& key, const std::string& message)
        : std::runtime_error(format(line, key, message)), line_(line), key_(key) {}

    int line() const { return line_; }
    const std::string& key() const { return key_; }

private:
    static std::string format(int line, const std::string& key, const std::string& message) {
        std::string out = "config";
        if (line > 0) out += " line " + std::to_string(line);
        if (!key.empty()) out += ", key '" + key + "'";
        return out + ": " + message;
    }

    int line_;
    std::string key_;
};

/// Flat `key = value` text configuration with dotted keys. Lines starting
/// with '#' and blank lines are ignored. Serialization is canonical (sorted
/// keys), so parse-serialize round-trips are idempotent.
class ConfigMap {
public:
    static ConfigMap parse(std::istream& is) {
        ConfigMap cfg;
        std::string line;
        int number = 0;
        while (std::getline(is, line)) {
            ++number;
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed.front() == '#') continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(number, "", "expected 'key = value'");
            }
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) throw ConfigError(number, "", "empty key");
            for (char c : key) {
                if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_') {
                    throw ConfigError(number, key, "key may contain letters, digits, '.' and '_'");
                }
            }
            if (cfg.values_.count(key)) throw ConfigError(number, key, "duplicate key");
            cfg.values_[key] = value;
            cfg.lines_[key] = number;
        }
        return cfg;
    }

    static ConfigMap parse_string(const std::string& text) {
        std::istringstream is(text);
        return parse(is);
    }

    std::string serialize() const {
        std::string out;
        for (const auto& [key, value] : values_) {
            out += key;
            out += " = ";
            out += value;
            out += '\n';
        }
        return out;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) {
        values_[key] = value;
        lines_[key] = 0;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        return it->second;
    }

    std::string require_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError(0, key, "required key missing");
        consumed_.insert(key);
        return it->second;
    }

    long get_int(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        try {
            std::size_t pos = 0;
            const long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(line_of(key), key, "expected an integer, got '" + it->second + "'");
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(line_of(key), key, "expected a number, got '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError(line_of(key), key, "expected true/false, got '" + it->second + "'");
    }

    /// Comma-separated list value.
    std::vector<std::string> get_list(const std::string& key,
                                      const std::vector<std::string>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        std::vector<std::string> out;
        std::string item;
        std::istringstream stream(it->second);
        while (std::getline(stream, item, ',')) {
            const std::string t = trim(item);
            if (!t.empty()) out.push_back(t);
        }
        if (out.empty()) throw ConfigError(line_of(key), key, "expected a comma-separated list");
        return out;
    }

    /// Keys never read by any getter, with their line numbers; used to reject
    /// unknown (likely misspelled) keys after all expected ones were consumed.
    std::vector<std::pair<std::string, int>> unconsumed() const {
        std::vector<std::pair<std::string, int>> out;
        for (const auto& [key, value] : values_) {
            if (!consumed_.count(key)) out.emplace_back(key, line_of(key));
        }
        return out;
    }

    void reject_unconsumed() const {
        const auto leftover = unconsumed();
        if (!leftover.empty()) {
            throw ConfigError(leftover.front().second, leftover.front().first, "unknown key");
        }
    }

    int line_of(const std::string& key) const {
        auto it = lines_.find(key);
        return it == lines_.end() ? 0 : it->second;
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
    mutable std::set<std::string> consumed_;
};

}  // namespace qcp
