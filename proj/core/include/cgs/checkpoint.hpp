#pragma once

#include <json.hpp>

#include <map>
#include <string>

#include "cgs/tensor.hpp"

namespace cgs {

/// Versioned binary container: a JSON header (configs, counters, RNG state,
/// tensor directory) followed by raw little-endian double arrays. Carries
/// everything needed to resume training bit-exactly: parameters, EMA copy,
/// optimizer moments, RNG streams.
struct Checkpoint {
    static constexpr int kVersion = 1;

    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
};

}  // namespace cgs
