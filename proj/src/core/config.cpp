#include "kv/core/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "kv/core/utils.hpp"

namespace kv {

Config Config::from_file(const std::string& path) {
    Config c;
    c.merge_file(path);
    return c;
}

void Config::merge_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    std::string line;
    while (std::getline(f, line)) merge_line(line);
}

void Config::merge_line(const std::string& line) {
    std::string s = line;
    if (const auto hash = s.find('#'); hash != std::string::npos) s.resize(hash);
    s = trim(s);
    if (s.empty()) return;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::runtime_error("config line missing '=': " + line);
    set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw std::runtime_error("config: empty key");
    values_[key] = value;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::get_str(const std::string& key, const std::string& def) const {
    const auto it = values_.find(key);
    const std::string v = it == values_.end() ? def : it->second;
    effective_[key] = v;
    return v;
}

double Config::get_double(const std::string& key, double def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        effective_[key] = std::to_string(def);
        return def;
    }
    effective_[key] = it->second;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw std::runtime_error("config: bad number for " + key + ": " + it->second);
    }
}

int Config::get_int(const std::string& key, int def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        effective_[key] = std::to_string(def);
        return def;
    }
    effective_[key] = it->second;
    try {
        return std::stoi(it->second);
    } catch (...) {
        throw std::runtime_error("config: bad integer for " + key + ": " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        effective_[key] = def ? "true" : "false";
        return def;
    }
    effective_[key] = it->second;
    const std::string v = lowercase(it->second);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::runtime_error("config: bad boolean for " + key + ": " + it->second);
}

std::string Config::dump() const {
    std::map<std::string, std::string> all = effective_;
    for (const auto& [k, v] : values_) all[k] = v;
    std::ostringstream os;
    for (const auto& [k, v] : all) os << k << " = " << v << "\n";
    return os.str();
}

std::string Config::hash() const { return fnv1a_hex(dump()); }

}  // namespace kv
