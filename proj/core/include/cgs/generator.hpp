#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cgs/layers.hpp"
#include "cgs/rasterizer.hpp"
#include "cgs/rng.hpp"
#include "cgs/scene.hpp"
#include "cgs/tensor.hpp"

namespace cgs {

/// Layout of the hierarchical point-cloud generator. The backbone transformer
/// always runs on base_points points; each level's decode path upsamples by
/// the cumulative product of upsample_schedule[1..k].
struct GeneratorConfig {
    int64_t z_dim = 512;
    int64_t w_dim = 512;
    int64_t base_points = 512;
    int64_t feature_dim = 512;
    int64_t attn_heads = 8;
    int64_t encode_frequencies = 10;    // L; raw encoding width 3 + 6L
    int64_t mapping_layers = 8;
    double mapping_lr_mult = 0.01;
    double w_avg_decay = 0.995;
    double log_scale_min = -9.210340371976182;  // log 1e-4
    double log_scale_max = -2.302585092994046;  // log 0.1
    std::vector<int> upsample_schedule;         // per level k>=1; empty = single level
    std::vector<double> offset_scale;           // per level; level 0 entry unused

    std::string preset_name = "custom";

    /// Named presets: desk, paper-256, paper-512, paper-1024, paper-2048.
    static GeneratorConfig preset(const std::string& name);

    int levels() const { return static_cast<int>(upsample_schedule.size()) + 1; }
    /// Primitive count of each level (level 0 = base_points).
    std::vector<int64_t> level_counts() const;
    int64_t total_primitives() const;
    double offset_scale_at(int level) const;

    void validate() const;  // throws std::invalid_argument on bad schedules
};

/// w' = w_avg + psi * (w - w_avg), rows of w [B, W].
Tensor truncate_styles(const Tensor& w, const Tensor& w_avg, double psi);

/// 8-layer fully connected mapping z -> w with leaky-ReLU; maintains the
/// running style average used by the truncation trick. No camera/label input
/// exists anywhere in this network.
class MappingNetwork {
public:
    MappingNetwork() = default;
    MappingNetwork(const GeneratorConfig& cfg, Rng& rng);

    /// update_w_avg is enabled only by the training loop.
    Tensor forward(const Tensor& z, bool update_w_avg = false);
    Tensor backward(const Tensor& grad_w, double param_scale = 1.0);
    void collect(nn::ParamRefs& out);

    Tensor w_avg;  // [w_dim] running average (buffer, not a Param)
    double w_avg_decay = 0.995;

private:
    std::vector<nn::Linear> layers_;
    std::vector<nn::LeakyReLU> acts_;
};

/// AdaIN -> self-attention (+residual) -> MLP (+residual) on [B, P, D].
class AdaptiveBlock {
public:
    AdaptiveBlock() = default;
    AdaptiveBlock(const std::string& name, const GeneratorConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x, const Tensor& w);
    /// Returns grad_x; adds the style gradient into grad_w [B, W].
    Tensor backward(const Tensor& grad_y, Tensor& grad_w, double param_scale = 1.0);
    void collect(nn::ParamRefs& out);

    nn::AdaIN adain;
    nn::SelfAttention attn;
    nn::Linear mlp_fc1, mlp_fc2;

private:
    nn::LeakyReLU act_{0.2};
};

/// Raw (pre-activation) head outputs for one role, [B, P, 14] packed as
/// position 0:3, color 3:6, scale 6:9, rotation 9:13, opacity 13:14.
struct DecodedLocal {
    Tensor raw;                          // [B, P, 14]
    std::vector<GaussianScene> scenes;   // per-sample local scenes
};

/// Per-sample gradient carrier for one scene (no background slot).
struct SceneGradList {
    std::vector<SceneGrads> per_sample;
};

/// The full synthesis network: constant learnable feature point cloud,
/// positional encoding, adaptive transformer backbone, per-level decode paths
/// (upsample chains + toGauss/toAnchor heads), anchored hierarchy composition.
class Generator {
public:
    Generator() = default;
    Generator(GeneratorConfig cfg, uint64_t seed);

    const GeneratorConfig& config() const { return cfg_; }

    Tensor map_latent(const Tensor& z, bool training = false);
    Tensor truncate(const Tensor& w, double psi) const;

    /// Synthesizes one scene per style row; no camera input exists in the
    /// signature or anywhere downstream. keep_graph retains activations for
    /// backward().
    std::vector<LayeredScene> synthesize(const Tensor& w, bool keep_graph = false);

    /// Gradients flowing back into the synthesis graph: per sample, per
    /// level, grads on the rendered scenes; optionally grads on level-0
    /// anchor positions (clustering regularizer). Returns grad_w [B, W] and
    /// accumulates all parameter gradients.
    Tensor backward(const std::vector<std::vector<SceneGrads>>& rendered_grads,
                    const std::vector<Tensor>* anchor0_position_grads = nullptr);

    /// Mapping-network backward (call with grad_w from backward()).
    void mapping_backward(const Tensor& grad_w) { mapping_.backward(grad_w); }

    nn::ParamRefs params();
    MappingNetwork& mapping() { return mapping_; }
    const MappingNetwork& mapping() const { return mapping_; }

    void zero_grad();

    /// EMA/checkpoint support: copy parameter values (not grads) from another
    /// generator with identical config.
    void copy_values_from(const Generator& other);

private:
    struct LevelCache {
        Tensor u;                        // decode-path features [B, Pk, D]
        DecodedLocal rendered, anchor;   // raw + local scenes
        std::vector<GaussianScene> world_rendered, world_anchor;
    };

    Tensor encode_points(bool keep_graph);  // [P, D] from const_points_
    Tensor encode_backward(const Tensor& grad_enc);

    DecodedLocal decode_attributes(nn::Linear& head, const Tensor& u, bool keep_graph);
    // grad wrt raw from per-sample scene grads (positions interpreted local).
    Tensor decode_backward(const DecodedLocal& dec,
                           const std::vector<SceneGrads>& scene_grads) const;

    GeneratorConfig cfg_;
    nn::Param const_points_;             // [base_points, 3]
    nn::Linear posenc_linear_;
    MappingNetwork mapping_;
    std::vector<AdaptiveBlock> blocks_;
    std::vector<std::vector<nn::PointUpsample>> upchains_;   // per level
    std::vector<nn::Linear> heads_rendered_, heads_anchor_;  // D -> 14 per level

    // forward caches
    bool has_graph_ = false;
    Tensor cached_enc_raw_;              // [P, 3+6L]
    std::vector<LevelCache> levels_;
    int64_t batch_ = 0;
};

/// Decode mapping constants shared with tests.
double weak_tanh(double x);
double weak_tanh_derivative(double x);

}  // namespace cgs
