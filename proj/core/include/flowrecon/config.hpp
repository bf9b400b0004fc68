#pragma once

#include <map>
#include <set>
#include <string>

#include "flowrecon/errors.hpp"

namespace flowrecon {

// Flat dotted-key configuration: one `section.key = value` per line,
// `#` starts a comment. Reads are tracked so unknown keys can be
// rejected after the consumer has pulled everything it understands.
class Config {
public:
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& def) const;
    std::string require_string(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t def) const;
    uint64_t get_u64(const std::string& key, uint64_t def) const;
    double get_double(const std::string& key, double def) const;
    bool get_bool(const std::string& key, bool def) const;

    // Throws ConfigError naming every key that was never read.
    void reject_unknown() const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::string raw(const std::string& key) const;
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> read_;
};

}  // namespace flowrecon
