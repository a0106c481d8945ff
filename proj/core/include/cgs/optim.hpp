#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cgs/layers.hpp"

namespace cgs {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter set; honors per-param lr_mult.
/// Moment buffers serialize by parameter name so checkpoints resume exactly.
class Adam {
public:
    Adam() = default;
    Adam(nn::ParamRefs params, AdamConfig cfg);

    void step();
    void zero_grad();
    const AdamConfig& config() const { return cfg_; }
    int64_t steps_taken() const { return t_; }

    // Checkpoint support: moment buffers keyed "<param>.m" / "<param>.v".
    std::map<std::string, Tensor> state() const;
    void load_state(const std::map<std::string, Tensor>& state, int64_t steps);

private:
    nn::ParamRefs params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

/// ema <- beta*ema + (1-beta)*live, elementwise across matching param lists.
/// Throws std::invalid_argument on shape mismatch.
void ema_update(nn::ParamRefs ema_params, const nn::ParamRefs& live_params, double beta);

/// EMA decay per step: 0.5^(batch / halflife_images).
double ema_beta(int64_t batch_size, double halflife_images);

}  // namespace cgs
