#include "flowrecon/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace flowrecon {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    return std::all_of(k.begin(), k.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '.' || c == '_' || c == '-';
    });
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return from_string(os.str());
}

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (!valid_key(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": invalid key '" + key +
                              "'");
        if (cfg.kv_.count(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        cfg.kv_[key] = value;
    }
    return cfg;
}

bool Config::has(const std::string& key) const {
    if (kv_.count(key)) {
        read_.insert(key);
        return true;
    }
    return false;
}

std::string Config::raw(const std::string& key) const {
    read_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& def) const {
    read_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
}

std::string Config::require_string(const std::string& key) const { return raw(key); }

int64_t Config::get_int(const std::string& key, int64_t def) const {
    read_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        size_t pos = 0;
        int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + it->second +
                          "'");
    }
}

uint64_t Config::get_u64(const std::string& key, uint64_t def) const {
    read_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" +
                          it->second + "'");
    }
}

double Config::get_double(const std::string& key, double def) const {
    read_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + it->second +
                          "'");
    }
}

bool Config::get_bool(const std::string& key, bool def) const {
    read_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

void Config::reject_unknown() const {
    std::string unknown;
    for (const auto& [k, v] : kv_)
        if (!read_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
}

}  // namespace flowrecon
