#pragma once

#include <string>
#include <vector>

#include "cgs/rng.hpp"
#include "cgs/tensor.hpp"

namespace cgs::nn {

/// Learnable parameter with its gradient accumulator. lr_mult scales the
/// effective learning rate in the optimizer (StyleGAN-style mapping-network
/// slowdown).
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    double lr_mult = 1.0;

    void init_shape(std::string n, std::vector<int64_t> shape, double lr = 1.0) {
        name = std::move(n);
        value = Tensor(shape);
        grad = Tensor(shape);
        lr_mult = lr;
    }
    void zero_grad() { grad.zero(); }
};

using ParamRefs = std::vector<Param*>;

/// N(0, std) fill.
void init_normal(Tensor& t, Rng& rng, double std_dev);

// ---- Fully connected -----------------------------------------------------

/// y = x W^T + b over the trailing dimension; leading dimensions are
/// flattened row-wise. Weights init N(0, gain/sqrt(fan_in)).
class Linear {
public:
    Linear() = default;
    Linear(std::string name, int64_t in, int64_t out, Rng& rng, double gain = 1.0,
           double lr_mult = 1.0);

    Tensor forward(const Tensor& x);
    /// Returns grad_x; accumulates weight/bias grads scaled by param_scale.
    Tensor backward(const Tensor& grad_y, double param_scale = 1.0);
    void collect(ParamRefs& out);

    /// Zero weights and bias (upsample learnable branch, label embedding).
    void zero_init();

    Param weight;  // [out, in]
    Param bias;    // [out]
    int64_t in_features = 0;
    int64_t out_features = 0;

private:
    Tensor cached_x_;
};

class LeakyReLU {
public:
    explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_y) const;

private:
    double slope_;
    Tensor cached_x_;
};

// ---- Convolution ----------------------------------------------------------

/// Same-padding 2D convolution on [B, C, H, W], kernel 1x1 or 3x3.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int64_t in_ch, int64_t out_ch, int ksize, Rng& rng,
           double gain = 1.0);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_y, double param_scale = 1.0);
    void collect(ParamRefs& out);
    void zero_init();

    Param weight;  // [out, in * k * k]
    Param bias;    // [out]
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int ksize = 3;

private:
    Tensor cached_x_;
};

/// 2x2 mean pooling, stride 2.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& grad_y, int64_t in_h, int64_t in_w);

// ---- Point-cloud pieces ---------------------------------------------------

/// Adaptive instance normalization over point clouds [B, P, D]: per-channel
/// standardization across the P dimension, then style scale/offset from an
/// affine map of w (scale bias starts at 1).
class AdaIN {
public:
    AdaIN() = default;
    AdaIN(std::string name, int64_t feature_dim, int64_t w_dim, Rng& rng);

    Tensor forward(const Tensor& x, const Tensor& w);  // x [B,P,D], w [B,W]
    /// Returns grad_x and accumulates grad_w into `grad_w` (shape [B,W]).
    Tensor backward(const Tensor& grad_y, Tensor& grad_w, double param_scale = 1.0);
    void collect(ParamRefs& out);

    /// Standardize-then-style core with explicit per-sample scale/offset
    /// [B,D]; exposed for the moment-oracle tests.
    static Tensor apply_style(const Tensor& x, const Tensor& scale, const Tensor& offset,
                              double eps = 1e-8);

    Linear affine;  // w -> [scale | offset]

private:
    Tensor cached_xhat_;   // [B,P,D]
    Tensor cached_sigma_;  // [B,D]
    Tensor cached_scale_;  // [B,D]
};

/// Full multi-head self-attention over P points, [B, P, D] -> [B, P, D]
/// (projection only; the residual add lives in the block).
class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(std::string name, int64_t dim, int64_t heads, Rng& rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_y, double param_scale = 1.0);
    void collect(ParamRefs& out);

    Linear qkv;
    Linear proj;
    int64_t heads = 8;

private:
    Tensor cached_q_, cached_k_, cached_v_;  // [B,H,P,dh]
    Tensor cached_s_;                        // [B,H,P,P] softmax rows
};

/// Point upsampling: repeat each point `factor` times plus a zero-initialized
/// learnable branch (Linear D -> factor*D reshaped into the point dimension).
class PointUpsample {
public:
    PointUpsample() = default;
    PointUpsample(std::string name, int64_t dim, int factor, Rng& rng);

    Tensor forward(const Tensor& x);  // [B,P,D] -> [B,factor*P,D]
    Tensor backward(const Tensor& grad_y, double param_scale = 1.0);
    void collect(ParamRefs& out);

    Linear learnable;
    int factor = 4;
};

// ---- Discriminator pieces -------------------------------------------------

/// Appends one channel of cross-batch variability: per group of at most
/// `group_size` samples, per feature, sqrt(biased variance + 1e-8), averaged
/// over all features; broadcast spatially. Partial trailing groups are padded
/// by cycling their members.
class MinibatchStddev {
public:
    explicit MinibatchStddev(int64_t group_size = 4) : group_size_(group_size) {}
    Tensor forward(const Tensor& x);  // [B,C,H,W] -> [B,C+1,H,W]
    Tensor backward(const Tensor& grad_y);

    int64_t group_size() const { return group_size_; }

private:
    int64_t group_size_ = 4;
    Tensor cached_x_;
    Tensor cached_mean_;  // [groups, C*H*W]
    Tensor cached_std_;   // [groups, C*H*W]
};

// ---- Warm-up blur ----------------------------------------------------------

/// Blur schedule: sigma = sigma0 * max(0, 1 - images_seen / horizon).
double blur_sigma(int64_t images_seen, int64_t horizon_images = 200000, double sigma0 = 10.0);

/// Separable Gaussian blur on [B,3,H,W], kernel truncated at 3 sigma and
/// renormalized at the borders (a constant image stays constant);
/// sigma <= 0 returns the input unchanged.
Tensor blur_images(const Tensor& images, double sigma);

/// Exact adjoint of blur_images (they differ only in where the border
/// renormalization applies).
Tensor blur_images_backward(const Tensor& grad, double sigma);

}  // namespace cgs::nn
