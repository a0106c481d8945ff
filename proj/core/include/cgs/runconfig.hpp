#pragma once

#include <json.hpp>

#include <map>
#include <set>
#include <string>

namespace cgs {

/// Merged key=value view of a config file and command-line overrides, with
/// dotted keys (train.g_lr=0.0025). Precedence: overrides > file > defaults.
/// Every key must be consumed by a typed getter; leftovers are typos and
/// fail ensure_all_consumed().
class RunConfig {
public:
    void load_file(const std::string& path);  // '#' comments, blank lines ok
    void set_override(const std::string& assignment);  // "key=value"
    void set_override(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;

    double get_double(const std::string& key, double fallback);
    int64_t get_int(const std::string& key, int64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::string get_string(const std::string& key, const std::string& fallback);

    /// Throws std::invalid_argument naming any key never consumed.
    void ensure_all_consumed() const;

    /// Effective values plus their sources, for the run manifest.
    nlohmann::json manifest() const;

private:
    const std::string* lookup(const std::string& key) const;
    std::map<std::string, std::string> file_values_;
    std::map<std::string, std::string> overrides_;
    std::set<std::string> consumed_;
};

}  // namespace cgs
