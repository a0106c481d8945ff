#pragma once

#include <string>
#include <vector>

#include "cgs/camera.hpp"
#include "cgs/layers.hpp"
#include "cgs/rng.hpp"
#include "cgs/tensor.hpp"

namespace cgs {

struct DiscriminatorConfig {
    int resolution = 64;          // power of two >= 32
    int64_t channel_base = 32768; // channels(res) = min(channel_max, channel_base/res)
    int64_t channel_max = 512;
    int64_t channel_min = 8;
    int64_t mbstd_group = 4;
    int64_t embed_dim = 512;      // label embedding == feature dim
    int64_t label_dim = 25;
    std::string preset_name = "custom";

    static DiscriminatorConfig preset(const std::string& name, int resolution);
    int64_t channels_for(int res) const;
    void validate() const;
};

/// StyleGAN2-style residual convolutional critic with minibatch standard
/// deviation and projection-style camera-label conditioning:
///   score = base(phi) + <embed(label), phi> / sqrt(embed_dim).
/// The zero-initialized label embedding is the only conditioning channel.
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(DiscriminatorConfig cfg, uint64_t seed);

    const DiscriminatorConfig& config() const { return cfg_; }

    /// images [B,3,R,R] in [0,1] (already composited/blurred), labels [B,25].
    /// Throws std::invalid_argument on a malformed label width.
    Tensor forward(const Tensor& images, const Tensor& labels);

    /// Final image features phi of the last forward (pose-loss ablation hook).
    const Tensor& features() const { return cached_phi_; }

    /// Returns grad w.r.t. the input images; parameter grads scaled by
    /// param_scale (0 skips them: used for the R1 input-gradient pass and the
    /// generator step). extra_grad_phi, when given, adds a gradient arriving
    /// directly at the feature vector phi (contrastive ablation).
    Tensor backward(const Tensor& grad_scores, double param_scale = 1.0,
                    const Tensor* extra_grad_phi = nullptr);

    nn::ParamRefs params();
    void zero_grad();
    void copy_values_from(const Discriminator& other);

private:
    struct Block {
        nn::Conv2d conv1, conv2, skip;
        nn::LeakyReLU act1{0.2}, act2{0.2};
        int res = 0;  // input resolution of the block
    };

    DiscriminatorConfig cfg_;
    nn::Conv2d from_rgb_;
    nn::LeakyReLU from_rgb_act_{0.2};
    std::vector<Block> blocks_;
    nn::MinibatchStddev mbstd_{4};
    nn::Conv2d final_conv_;
    nn::LeakyReLU final_act_{0.2};
    nn::Linear fc_;
    nn::LeakyReLU fc_act_{0.2};
    nn::Linear base_head_;
    nn::Linear embed_;

    // caches
    Tensor cached_phi_;     // [B, embed_dim]
    Tensor cached_embed_;   // [B, embed_dim]
};

}  // namespace cgs
