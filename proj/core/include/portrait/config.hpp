#pragma once

#include <map>
#include <set>
#include <string>

namespace portrait {

// `key = value` text config with `#` comments and dotted section keys.
// Readers consume keys; anything left unconsumed is rejected, so typos
// never pass silently.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text, const std::string& origin = "<string>");

    // Override or add a single key (CLI flags take precedence over files).
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    float get_float(const std::string& key, float fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Throws ConfigError naming every key no reader asked about.
    void require_all_consumed() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
    std::string origin_ = "<empty>";
};

}  // namespace portrait
