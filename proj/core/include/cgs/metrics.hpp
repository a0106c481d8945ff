#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cgs/dataset.hpp"
#include "cgs/generator.hpp"
#include "cgs/tensor.hpp"

namespace cgs {

/// Mean and unbiased covariance of extractor features.
struct FeatureStats {
    Tensor mean;  // [D]
    Tensor cov;   // [D, D]
    int64_t n = 0;
};

/// Pluggable deterministic image-feature extractor. The desk implementation
/// below is a frozen random-weight conv net; an InceptionV3 adapter can slot
/// in behind the same interface when available.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual int64_t dim() const = 0;
    virtual std::string identifier() const = 0;
    /// images: each [H,W,3] in [0,1]; returns [B, dim] features.
    virtual Tensor evaluate(const std::vector<Tensor>& images) = 0;
};

/// Frozen random-weight convolutional feature map (identifier-pinned, fully
/// deterministic): four stride-2 stages of 3x3 convs with ReLU, then global
/// average pooling to `dim` channels.
class RandConvExtractor : public FeatureExtractor {
public:
    explicit RandConvExtractor(uint64_t seed = 0, int64_t feature_dim = 64);
    int64_t dim() const override { return dim_; }
    std::string identifier() const override;
    Tensor evaluate(const std::vector<Tensor>& images) override;

private:
    uint64_t seed_;
    int64_t dim_;
    std::vector<Tensor> kernels_;  // per stage [C_out, C_in*9]
    std::vector<Tensor> biases_;
    std::vector<int64_t> chans_;
};

/// Streaming mean/covariance accumulation with a fixed merge order.
class FeatureStatsAccumulator {
public:
    explicit FeatureStatsAccumulator(int64_t dim);
    void add(const Tensor& features);  // [B, D]
    FeatureStats finalize() const;     // throws std::invalid_argument when n < 2

private:
    int64_t dim_;
    int64_t n_ = 0;
    Tensor sum_;    // [D]
    Tensor outer_;  // [D, D] sum of x x^T
};

/// Throws std::invalid_argument when fewer than 2 images are given.
FeatureStats feature_stats(const std::vector<Tensor>& images, FeatureExtractor& extractor);

/// d^2 = |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), matrix square root by
/// eigendecomposition of the symmetrized product sqrt(S1) S2 sqrt(S1).
/// Eigenvalues below -1e-6 raise std::runtime_error; small negatives clamp
/// to zero; the result is floored at 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

enum class FidMode { Standard, Fid3d };

struct FidOptions {
    int64_t n_samples = 2048;  // desk default; tracking default 20k
    FidMode mode = FidMode::Standard;
    uint64_t seed = 0;
    double psi = 1.0;
    int64_t batch = 8;
};

struct FidRecord {
    std::string extractor_id;
    int64_t n_samples = 0;
    std::string mode;
    double value = 0.0;
    std::string to_json() const;
};

/// Renders one image per latent (scene synthesized once, pose drawn from the
/// dataset labels, random background) and compares feature statistics against
/// the full real dataset composited the same way. Standard and fid3d modes
/// execute the same unconditional procedure.
FidRecord compute_fid(Generator& generator, const Dataset& dataset, FeatureExtractor& extractor,
                      const FidOptions& opts);

/// Real-side statistics alone (reusable across evaluations).
FeatureStats real_feature_stats(const Dataset& dataset, FeatureExtractor& extractor,
                                uint64_t bg_seed);

/// 10*log10(1/MSE) in dB, capped at 99 for identical images.
double psnr(const Tensor& a, const Tensor& b);

}  // namespace cgs
