#include "cgs/runconfig.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace cgs {

namespace {
std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}
}  // namespace

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                        ": expected key=value");
        file_values_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
}

void RunConfig::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("config: override must be key=value: " + assignment);
    set_override(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set_override(const std::string& key, const std::string& value) {
    overrides_[key] = value;
}

const std::string* RunConfig::lookup(const std::string& key) const {
    if (auto it = overrides_.find(key); it != overrides_.end()) return &it->second;
    if (auto it = file_values_.find(key); it != file_values_.end()) return &it->second;
    return nullptr;
}

bool RunConfig::has(const std::string& key) const { return lookup(key) != nullptr; }

double RunConfig::get_double(const std::string& key, double fallback) {
    consumed_.insert(key);
    const std::string* v = lookup(key);
    if (!v) return fallback;
    try {
        size_t pos = 0;
        const double d = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw std::invalid_argument("config: " + key + ": not a number: " + *v);
    }
}

int64_t RunConfig::get_int(const std::string& key, int64_t fallback) {
    consumed_.insert(key);
    const std::string* v = lookup(key);
    if (!v) return fallback;
    try {
        size_t pos = 0;
        const long long i = std::stoll(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return i;
    } catch (...) {
        throw std::invalid_argument("config: " + key + ": not an integer: " + *v);
    }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) {
    consumed_.insert(key);
    const std::string* v = lookup(key);
    if (!v) return fallback;
    std::string s = *v;
    std::transform(s.begin(), s.end(), s.begin(), ::tolower);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("config: " + key + ": not a boolean: " + *v);
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    const std::string* v = lookup(key);
    return v ? *v : fallback;
}

void RunConfig::ensure_all_consumed() const {
    std::string unknown;
    for (const auto& [k, v] : file_values_) {
        (void)v;
        if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    }
    for (const auto& [k, v] : overrides_) {
        (void)v;
        if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    }
    if (!unknown.empty())
        throw std::invalid_argument("config: unknown key(s): " + unknown);
}

nlohmann::json RunConfig::manifest() const {
    nlohmann::json j;
    for (const auto& [k, v] : file_values_) j[k] = {{"value", v}, {"source", "file"}};
    for (const auto& [k, v] : overrides_) j[k] = {{"value", v}, {"source", "flag"}};
    return j;
}

}  // namespace cgs
