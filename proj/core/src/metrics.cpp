#include "cgs/metrics.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <stdexcept>

#include "cgs/rasterizer.hpp"

namespace cgs {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---- desk extractor ---------------------------------------------------------

RandConvExtractor::RandConvExtractor(uint64_t seed, int64_t feature_dim)
    : seed_(seed), dim_(feature_dim) {
    Rng rng(seed ^ 0xfeedc0deULL);
    chans_ = {3, 16, 32, 64, dim_};
    for (size_t s = 0; s + 1 < chans_.size(); ++s) {
        Tensor k({chans_[s + 1], chans_[s] * 9});
        nn::init_normal(k, rng, std::sqrt(2.0 / static_cast<double>(chans_[s] * 9)));
        kernels_.push_back(std::move(k));
        Tensor b({chans_[s + 1]});
        nn::init_normal(b, rng, 0.1);
        biases_.push_back(std::move(b));
    }
}

std::string RandConvExtractor::identifier() const {
    return "randconv" + std::to_string(dim_) + "/seed" + std::to_string(seed_);
}

namespace {

// 3x3 stride-2 convolution with same-ish padding (output ceil(h/2)).
Tensor conv3_stride2(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int64_t c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int64_t c_out = w.dim(0);
    const int64_t oh = (h + 1) / 2, ow = (wd + 1) / 2;
    Tensor y({c_out, oh, ow});
    for (int64_t o = 0; o < c_out; ++o)
        for (int64_t yy = 0; yy < oh; ++yy)
            for (int64_t xx = 0; xx < ow; ++xx) {
                double acc = b[o];
                for (int64_t c = 0; c < c_in; ++c)
                    for (int dy = 0; dy < 3; ++dy)
                        for (int dx = 0; dx < 3; ++dx) {
                            const int64_t sy = 2 * yy + dy - 1;
                            const int64_t sx = 2 * xx + dx - 1;
                            if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                            acc += w[o * c_in * 9 + c * 9 + dy * 3 + dx] *
                                   x[(c * h + sy) * wd + sx];
                        }
                y[(o * oh + yy) * ow + xx] = std::max(0.0, acc);  // ReLU
            }
    return y;
}

}  // namespace

Tensor RandConvExtractor::evaluate(const std::vector<Tensor>& images) {
    const int64_t b = static_cast<int64_t>(images.size());
    Tensor out({b, dim_});
    for (int64_t i = 0; i < b; ++i) {
        const Tensor& img = images[static_cast<size_t>(i)];
        const int64_t h = img.dim(0), w = img.dim(1);
        // HWC -> CHW
        Tensor x({3, h, w});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx)
                for (int c = 0; c < 3; ++c) x[(c * h + y) * w + xx] = img.at(y, xx, c);
        for (size_t s = 0; s < kernels_.size(); ++s)
            x = conv3_stride2(x, kernels_[s], biases_[s]);
        // Global average pool.
        const int64_t ph = x.dim(1), pw = x.dim(2);
        for (int64_t c = 0; c < dim_; ++c) {
            double acc = 0.0;
            for (int64_t j = 0; j < ph * pw; ++j) acc += x[c * ph * pw + j];
            out.at(i, c) = acc / static_cast<double>(ph * pw);
        }
    }
    return out;
}

// ---- statistics --------------------------------------------------------------

FeatureStatsAccumulator::FeatureStatsAccumulator(int64_t dim)
    : dim_(dim), sum_({dim}), outer_({dim, dim}) {}

void FeatureStatsAccumulator::add(const Tensor& features) {
    const int64_t b = features.dim(0);
    if (features.dim(1) != dim_)
        throw std::invalid_argument("FeatureStatsAccumulator: dim mismatch");
    Eigen::Map<const EMat> f(features.data(), b, dim_);
    Eigen::Map<EMat> o(outer_.data(), dim_, dim_);
    o.noalias() += f.transpose() * f;
    Eigen::Map<Eigen::RowVectorXd>(sum_.data(), dim_) += f.colwise().sum();
    n_ += b;
}

FeatureStats FeatureStatsAccumulator::finalize() const {
    if (n_ < 2) throw std::invalid_argument("feature_stats: need at least 2 samples");
    FeatureStats st;
    st.n = n_;
    st.mean = Tensor({dim_});
    st.cov = Tensor({dim_, dim_});
    const double n = static_cast<double>(n_);
    for (int64_t i = 0; i < dim_; ++i) st.mean[i] = sum_[i] / n;
    // Unbiased: (sum xx^T - n mu mu^T) / (n - 1), then symmetrize.
    for (int64_t i = 0; i < dim_; ++i)
        for (int64_t j = 0; j < dim_; ++j)
            st.cov.at(i, j) = (outer_.at(i, j) - n * st.mean[i] * st.mean[j]) / (n - 1.0);
    for (int64_t i = 0; i < dim_; ++i)
        for (int64_t j = i + 1; j < dim_; ++j) {
            const double s = 0.5 * (st.cov.at(i, j) + st.cov.at(j, i));
            st.cov.at(i, j) = s;
            st.cov.at(j, i) = s;
        }
    return st;
}

FeatureStats feature_stats(const std::vector<Tensor>& images, FeatureExtractor& extractor) {
    if (images.size() < 2) throw std::invalid_argument("feature_stats: need at least 2 images");
    FeatureStatsAccumulator acc(extractor.dim());
    constexpr size_t kBatch = 32;
    for (size_t at = 0; at < images.size(); at += kBatch) {
        std::vector<Tensor> batch(images.begin() + static_cast<std::ptrdiff_t>(at),
                                  images.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(images.size(), at + kBatch)));
        acc.add(extractor.evaluate(batch));
    }
    return acc.finalize();
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    const int64_t d = a.mean.numel();
    if (b.mean.numel() != d) throw std::invalid_argument("frechet_distance: dimension mismatch");

    Eigen::Map<const EMat> s1(a.cov.data(), d, d);
    Eigen::Map<const EMat> s2(b.cov.data(), d, d);

    double mean_term = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        const double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }

    // sqrt(S1) via eigendecomposition (clamping small negatives).
    Eigen::SelfAdjointEigenSolver<EMat> es1(s1);
    if (es1.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eig failed");
    Eigen::VectorXd ev1 = es1.eigenvalues();
    for (int64_t i = 0; i < d; ++i) {
        if (ev1[i] < -1e-6) throw std::runtime_error("frechet_distance: covariance not PSD");
        ev1[i] = std::sqrt(std::max(0.0, ev1[i]));
    }
    EMat root1 = es1.eigenvectors() * ev1.asDiagonal() * es1.eigenvectors().transpose();

    // Symmetrized product sqrt(S1) S2 sqrt(S1) is PSD; its eigenvalue square
    // roots sum to Tr((S1 S2)^{1/2}).
    EMat sym = root1 * s2 * root1;
    sym = 0.5 * (sym + sym.transpose().eval());
    Eigen::SelfAdjointEigenSolver<EMat> es2(sym);
    if (es2.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eig failed");
    double trace_sqrt = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        const double ev = es2.eigenvalues()[i];
        if (ev < -1e-6) throw std::runtime_error("frechet_distance: product eigenvalue < -1e-6");
        trace_sqrt += std::sqrt(std::max(0.0, ev));
    }

    const double d2 = mean_term + s1.trace() + s2.trace() - 2.0 * trace_sqrt;
    return std::max(0.0, d2);
}

std::string FidRecord::to_json() const {
    nlohmann::json j;
    j["extractor_id"] = extractor_id;
    j["n_samples"] = n_samples;
    j["mode"] = mode;
    j["value"] = value;
    return j.dump();
}

FeatureStats real_feature_stats(const Dataset& dataset, FeatureExtractor& extractor,
                                uint64_t bg_seed) {
    Rng rng(bg_seed ^ 0x8badf00dULL);
    FeatureStatsAccumulator acc(extractor.dim());
    constexpr size_t kBatch = 32;
    std::vector<Tensor> batch;
    for (size_t i = 0; i < dataset.size(); ++i) {
        batch.push_back(composite_random_background(dataset.load_rgba(i), rng));
        if (batch.size() == kBatch || i + 1 == dataset.size()) {
            acc.add(extractor.evaluate(batch));
            batch.clear();
        }
    }
    return acc.finalize();
}

FidRecord compute_fid(Generator& generator, const Dataset& dataset, FeatureExtractor& extractor,
                      const FidOptions& opts) {
    if (opts.n_samples < 2) throw std::invalid_argument("compute_fid: n_samples must be >= 2");
    if (dataset.size() < 2) throw std::invalid_argument("compute_fid: dataset too small");

    // Standard and fid3d execute the same unconditional code path: the scene
    // is synthesized once per latent and the render pose is drawn from the
    // dataset; only the record's mode differs.
    const PoseDistribution poses = PoseDistribution::empirical(dataset.labels());
    Rng rng(opts.seed ^ 0x1dfa3ULL);

    FeatureStatsAccumulator fake_acc(extractor.dim());
    const int64_t z_dim = generator.config().z_dim;
    std::vector<Tensor> images;
    for (int64_t done = 0; done < opts.n_samples;) {
        const int64_t b = std::min<int64_t>(opts.batch, opts.n_samples - done);
        Tensor z({b, z_dim});
        for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();
        Tensor w = generator.map_latent(z, false);
        if (opts.psi != 1.0) w = generator.truncate(w, opts.psi);
        std::vector<LayeredScene> scenes = generator.synthesize(w, false);
        for (int64_t i = 0; i < b; ++i) {
            const GaussianScene flat = flatten_layers(scenes[static_cast<size_t>(i)]);
            Camera cam = sample_camera_pose(rng, poses, dataset.width, dataset.height);
            const Vec3 bg = {rng.uniform(), rng.uniform(), rng.uniform()};
            images.push_back(render_forward(flat, cam, bg).image);
        }
        fake_acc.add(extractor.evaluate(images));
        images.clear();
        done += b;
    }

    FeatureStats real = real_feature_stats(dataset, extractor, opts.seed);
    FidRecord rec;
    rec.extractor_id = extractor.identifier();
    rec.n_samples = opts.n_samples;
    rec.mode = opts.mode == FidMode::Standard ? "standard" : "fid3d";
    rec.value = frechet_distance(fake_acc.finalize(), real);
    return rec;
}

double psnr(const Tensor& a, const Tensor& b) {
    const double mse = image_mse(a, b);
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

}  // namespace cgs
