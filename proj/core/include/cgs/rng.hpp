#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace cgs {

/// Deterministic RNG used everywhere instead of std distributions, whose
/// output is implementation-defined. Uniforms come from the top 53 bits of
/// mt19937_64; normals from Box-Muller. State serializes to text so training
/// runs can resume bit-exactly.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        // Rejection-free modulo bias is negligible for n << 2^64; use
        // multiply-shift for uniformity.
        return static_cast<int64_t>((static_cast<__uint128_t>(engine_()) *
                                     static_cast<__uint128_t>(n)) >> 64);
    }

    /// Standard normal via Box-Muller (pairs cached).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fork a stream for a worker/purpose; derived deterministically.
    Rng fork(uint64_t stream_id) const;

    std::string serialize() const;
    void deserialize(const std::string& text);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cgs
