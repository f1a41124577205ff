#pragma once

#include <map>
#include <string>
#include <vector>

namespace kv {

// Plain-text key = value configuration. '#' starts a comment. Later
// assignments win, so CLI overrides are applied by a second merge pass.
// Every get_* records the effective value, and dump() emits the full
// effective configuration for the run manifest.
class Config {
  public:
    Config() = default;

    static Config from_file(const std::string& path);
    void merge_file(const std::string& path);
    void merge_line(const std::string& line);   // "key = value" or "key=value"
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& def) const;
    double get_double(const std::string& key, double def) const;
    int get_int(const std::string& key, int def) const;
    bool get_bool(const std::string& key, bool def) const;

    // Effective config: explicit values plus every queried default.
    std::string dump() const;
    std::string hash() const;  // fnv over dump()

  private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, std::string> effective_;
};

}  // namespace kv
