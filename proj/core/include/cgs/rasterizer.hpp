#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cgs/camera.hpp"
#include "cgs/scene.hpp"
#include "cgs/tensor.hpp"

namespace cgs {

struct RenderSettings {
    double alpha_clamp = 0.99;              // per-splat alpha ceiling
    double alpha_cutoff = 1.0 / 255.0;      // contributions below are skipped
    double transmittance_floor = 1e-4;      // compositing early-stop
    double dilation = 0.3;                  // low-pass px^2 added to cov2d diagonal
    double near_plane = 0.01;
    int tile_size = 16;

    /// Smooth variant for finite-difference checks: no cutoff/early-stop
    /// discontinuities (clamp and culling remain).
    static RenderSettings smooth() {
        RenderSettings s;
        s.alpha_cutoff = 0.0;
        s.transmittance_floor = 0.0;
        return s;
    }
};

struct ProjectedGaussian {
    double mean2d[2] = {0, 0};   // pixel coordinates
    double cov2d[3] = {0, 0, 0}; // (a, b, c) of [[a,b],[b,c]], dilated
    double depth = 0.0;          // camera-space z
    bool cull = false;
};

/// EWA projection of one Gaussian. cull is set when the primitive is behind
/// the near plane or its 3-sigma extent misses the image.
ProjectedGaussian project_gaussian(const Vec3& mean, const Quat& rotation, const Vec3& scale,
                                   const Camera& camera,
                                   const RenderSettings& settings = RenderSettings{});

struct RenderOutput {
    Tensor image;          // H x W x 3, in [0,1]
    Tensor transmittance;  // H x W, product of (1 - alpha)
    // Per-pixel ordered (primitive index, alpha) contributor records; filled
    // only when record_aux is requested (needed by render_backward).
    std::vector<std::vector<std::pair<int32_t, double>>> contribs;
    bool has_aux = false;
    int64_t culled = 0;
    int64_t skipped_singular = 0;
};

/// Gradients of a scalar loss w.r.t. every scene attribute group plus the
/// background color.
struct SceneGrads {
    Tensor positions;   // N x 3
    Tensor rotations;   // N x 4 (w.r.t. the stored, pre-normalization quaternion)
    Tensor log_scales;  // N x 3
    Tensor colors;      // N x 3
    Tensor opacities;   // N
    double background[3] = {0, 0, 0};

    explicit SceneGrads(int64_t n = 0);
    void accumulate(const SceneGrads& other, double weight);
};

/// Deterministic forward render: contributors composited front-to-back per
/// pixel (global depth sort, index tiebreak), remaining transmittance times
/// the background color. Identical inputs produce bit-identical images
/// regardless of thread count.
RenderOutput render_forward(const GaussianScene& scene, const Camera& camera, const Vec3& bg,
                            const RenderSettings& settings = RenderSettings{},
                            bool record_aux = false);

/// Analytic adjoint of render_forward; `out` must come from render_forward
/// with record_aux=true on identical inputs (throws std::logic_error
/// otherwise).
SceneGrads render_backward(const Tensor& grad_image, const RenderOutput& out,
                           const GaussianScene& scene, const Camera& camera, const Vec3& bg,
                           const RenderSettings& settings = RenderSettings{});

struct GradCheckReport {
    // Max relative error per attribute group.
    double positions = 0.0;
    double rotations = 0.0;
    double log_scales = 0.0;
    double colors = 0.0;
    double opacities = 0.0;
    double background = 0.0;

    double max_rel_error() const;
    bool passed(double tol = 1e-3) const { return max_rel_error() < tol; }
    std::string to_string() const;
};

/// Central finite-difference comparison (h=1e-5) of render_backward against
/// a randomized scene/camera/loss; smooth settings, double precision.
GradCheckReport gradcheck(int64_t scene_size, int resolution, uint64_t seed);

}  // namespace cgs
