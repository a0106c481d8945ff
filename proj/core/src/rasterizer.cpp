#include "cgs/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cgs {

namespace {

struct ProjectionCache {
    std::vector<ProjectedGaussian> proj;
    std::vector<int32_t> order;  // kept primitives, sorted by (depth, index)
    int64_t culled = 0;
    int64_t skipped_singular = 0;
};

// Largest eigenvalue of [[a,b],[b,c]].
double max_eigen2x2(double a, double b, double c) {
    const double mid = 0.5 * (a + c);
    const double d = 0.5 * (a - c);
    return mid + std::sqrt(d * d + b * b);
}

ProjectionCache project_all(const GaussianScene& scene, const Camera& camera,
                            const RenderSettings& settings) {
    const int64_t n = scene.size();
    ProjectionCache cache;
    cache.proj.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        cache.proj[static_cast<size_t>(i)] = project_gaussian(
            scene.position_at(i), scene.rotation_at(i), scene.scale_at(i), camera, settings);
    }
    for (int64_t i = 0; i < n; ++i) {
        const auto& pg = cache.proj[static_cast<size_t>(i)];
        if (pg.cull) {
            ++cache.culled;
            continue;
        }
        const double det = pg.cov2d[0] * pg.cov2d[2] - pg.cov2d[1] * pg.cov2d[1];
        if (!(det > 1e-12) || !std::isfinite(det)) {
            ++cache.skipped_singular;
            continue;
        }
        cache.order.push_back(static_cast<int32_t>(i));
    }
    std::stable_sort(cache.order.begin(), cache.order.end(), [&](int32_t a, int32_t b) {
        const double da = cache.proj[static_cast<size_t>(a)].depth;
        const double db = cache.proj[static_cast<size_t>(b)].depth;
        if (da != db) return da < db;
        return a < b;
    });
    return cache;
}

}  // namespace

ProjectedGaussian project_gaussian(const Vec3& mean, const Quat& rotation, const Vec3& scale,
                                   const Camera& camera, const RenderSettings& settings) {
    ProjectedGaussian out;
    const Vec3 t = camera.world_to_camera(mean);
    out.depth = t[2];
    if (t[2] <= settings.near_plane) {
        out.cull = true;
        return out;
    }

    const double fx = camera.focal_px();
    const double fy = camera.focal_px();
    const double cx = camera.width / 2.0;
    const double cy = camera.height / 2.0;
    out.mean2d[0] = fx * t[0] / t[2] + cx;
    out.mean2d[1] = fy * t[1] / t[2] + cy;

    // 3D covariance R diag(s^2) R^T, rotated into camera space.
    const Mat3 rq = quaternion_to_rotation(rotation);
    const Mat3 rcw = camera.rotation();  // world-from-camera; transpose maps world->camera
    double m[3][3];                        // camera-space covariance
    {
        double rs[3][3];  // R * diag(s)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) rs[r][c] = rq[static_cast<size_t>(r)][static_cast<size_t>(c)] * scale[static_cast<size_t>(c)];
        double sigma[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                sigma[r][c] = rs[r][0] * rs[c][0] + rs[r][1] * rs[c][1] + rs[r][2] * rs[c][2];
        // W = rcw^T (world->camera). m = W sigma W^T.
        double ws[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                ws[r][c] = rcw[0][static_cast<size_t>(r)] * sigma[0][static_cast<size_t>(c)] +
                           rcw[1][static_cast<size_t>(r)] * sigma[1][static_cast<size_t>(c)] +
                           rcw[2][static_cast<size_t>(r)] * sigma[2][static_cast<size_t>(c)];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                m[r][c] = ws[r][0] * rcw[0][static_cast<size_t>(c)] + ws[r][1] * rcw[1][static_cast<size_t>(c)] +
                          ws[r][2] * rcw[2][static_cast<size_t>(c)];
    }

    // Perspective Jacobian, with the off-axis ratios limited as in reference
    // 3DGS so far-out-of-frustum splats stay bounded.
    const double tan_half_x = (camera.width / 2.0) / fx;
    const double tan_half_y = (camera.height / 2.0) / fy;
    const double lim_x = 1.3 * tan_half_x;
    const double lim_y = 1.3 * tan_half_y;
    const double ctx = std::clamp(t[0] / t[2], -lim_x, lim_x);
    const double cty = std::clamp(t[1] / t[2], -lim_y, lim_y);
    const double j00 = fx / t[2];
    const double j02 = -fx * ctx / t[2];
    const double j11 = fy / t[2];
    const double j12 = -fy * cty / t[2];

    // cov2d = J m J^T (rows of J are (j00,0,j02) and (0,j11,j12)).
    const double a = j00 * (j00 * m[0][0] + j02 * m[2][0]) + j02 * (j00 * m[0][2] + j02 * m[2][2]);
    const double b = j11 * (j00 * m[0][1] + j02 * m[2][1]) + j12 * (j00 * m[0][2] + j02 * m[2][2]);
    const double c = j11 * (j11 * m[1][1] + j12 * m[2][1]) + j12 * (j11 * m[1][2] + j12 * m[2][2]);
    out.cov2d[0] = a + settings.dilation;
    out.cov2d[1] = b;
    out.cov2d[2] = c + settings.dilation;

    // Cull when the 3-sigma extent misses the image rectangle.
    const double radius = 3.0 * std::sqrt(std::max(1e-12, max_eigen2x2(out.cov2d[0], out.cov2d[1], out.cov2d[2])));
    if (out.mean2d[0] + radius < 0.0 || out.mean2d[0] - radius > camera.width ||
        out.mean2d[1] + radius < 0.0 || out.mean2d[1] - radius > camera.height)
        out.cull = true;
    return out;
}

SceneGrads::SceneGrads(int64_t n)
    : positions({n, 3}), rotations({n, 4}), log_scales({n, 3}), colors({n, 3}), opacities({n}) {}

void SceneGrads::accumulate(const SceneGrads& other, double weight) {
    positions.add_scaled_(other.positions, weight);
    rotations.add_scaled_(other.rotations, weight);
    log_scales.add_scaled_(other.log_scales, weight);
    colors.add_scaled_(other.colors, weight);
    opacities.add_scaled_(other.opacities, weight);
    for (int c = 0; c < 3; ++c) background[c] += weight * other.background[c];
}

RenderOutput render_forward(const GaussianScene& scene, const Camera& camera, const Vec3& bg,
                            const RenderSettings& settings, bool record_aux) {
    const int w = camera.width;
    const int h = camera.height;
    RenderOutput out;
    out.image = Tensor({h, w, 3});
    out.transmittance = Tensor({h, w});
    out.has_aux = record_aux;
    if (record_aux) out.contribs.assign(static_cast<size_t>(h) * static_cast<size_t>(w), {});

    ProjectionCache cache = project_all(scene, camera, settings);
    out.culled = cache.culled;
    out.skipped_singular = cache.skipped_singular;

    // Flat per-splat records in global draw order; bins index into them.
    struct SplatRec {
        double mean2d[2];
        double con[3];      // inverse covariance (a, b, c)
        double opacity;
        double color[3];
        double power_min;   // alpha-cutoff threshold in log domain
        int32_t id;
    };
    std::vector<SplatRec> recs;
    recs.reserve(cache.order.size());
    const double log_cutoff = settings.alpha_cutoff > 0.0
                                  ? std::log(settings.alpha_cutoff)
                                  : -std::numeric_limits<double>::infinity();
    for (int32_t idx : cache.order) {
        const auto& pg = cache.proj[static_cast<size_t>(idx)];
        SplatRec r;
        r.mean2d[0] = pg.mean2d[0];
        r.mean2d[1] = pg.mean2d[1];
        const double det = pg.cov2d[0] * pg.cov2d[2] - pg.cov2d[1] * pg.cov2d[1];
        r.con[0] = pg.cov2d[2] / det;
        r.con[1] = -pg.cov2d[1] / det;
        r.con[2] = pg.cov2d[0] / det;
        r.opacity = scene.opacity_at(idx);
        const Vec3 c = scene.color_at(idx);
        r.color[0] = c[0];
        r.color[1] = c[1];
        r.color[2] = c[2];
        // alpha < cutoff  <=>  power < log(cutoff / opacity); tested pre-exp.
        r.power_min = r.opacity > 0.0 ? log_cutoff - std::log(r.opacity)
                                      : std::numeric_limits<double>::infinity();
        r.id = idx;
        recs.push_back(r);
    }

    // Tile binning over the globally sorted order keeps per-tile lists sorted.
    const int ts = settings.tile_size;
    const int tiles_x = (w + ts - 1) / ts;
    const int tiles_y = (h + ts - 1) / ts;
    std::vector<std::vector<int32_t>> bins(static_cast<size_t>(tiles_x) * static_cast<size_t>(tiles_y));
    for (size_t ri = 0; ri < recs.size(); ++ri) {
        const auto& pg = cache.proj[static_cast<size_t>(recs[ri].id)];
        const double radius =
            3.0 * std::sqrt(std::max(1e-12, max_eigen2x2(pg.cov2d[0], pg.cov2d[1], pg.cov2d[2])));
        const int x0 = std::clamp(static_cast<int>(std::floor((pg.mean2d[0] - radius) / ts)), 0, tiles_x - 1);
        const int x1 = std::clamp(static_cast<int>(std::floor((pg.mean2d[0] + radius) / ts)), 0, tiles_x - 1);
        const int y0 = std::clamp(static_cast<int>(std::floor((pg.mean2d[1] - radius) / ts)), 0, tiles_y - 1);
        const int y1 = std::clamp(static_cast<int>(std::floor((pg.mean2d[1] + radius) / ts)), 0, tiles_y - 1);
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                bins[static_cast<size_t>(ty) * static_cast<size_t>(tiles_x) + static_cast<size_t>(tx)].push_back(static_cast<int32_t>(ri));
    }

#pragma omp parallel for schedule(dynamic, 1)
    for (int y = 0; y < h; ++y) {
        const int ty = y / ts;
        for (int x = 0; x < w; ++x) {
            const auto& bin = bins[static_cast<size_t>(ty) * static_cast<size_t>(tiles_x) + static_cast<size_t>(x / ts)];
            const double px = x + 0.5;
            const double py = y + 0.5;
            double t_acc = 1.0;
            double rgb[3] = {0, 0, 0};
            auto* aux = record_aux ? &out.contribs[static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)] : nullptr;
            for (int32_t ri : bin) {
                if (t_acc < settings.transmittance_floor) break;
                const SplatRec& r = recs[static_cast<size_t>(ri)];
                const double dx = px - r.mean2d[0];
                const double dy = py - r.mean2d[1];
                const double power =
                    -0.5 * (r.con[0] * dx * dx + 2.0 * r.con[1] * dx * dy + r.con[2] * dy * dy);
                if (power > 0.0 || power < r.power_min) continue;
                const double alpha = std::min(settings.alpha_clamp, r.opacity * std::exp(power));
                for (int k = 0; k < 3; ++k) rgb[k] += r.color[k] * alpha * t_acc;
                if (aux) aux->emplace_back(r.id, alpha);
                t_acc *= 1.0 - alpha;
            }
            for (int k = 0; k < 3; ++k) out.image.at(y, x, k) = rgb[k] + t_acc * bg[static_cast<size_t>(k)];
            out.transmittance.at(y, x) = t_acc;
        }
    }
    return out;
}

namespace {

// d(normalized q)/d(raw q) applied to a gradient in normalized coordinates.
Quat quat_normalize_backward(const Quat& q_raw, const Quat& grad_unit) {
    const double norm = std::sqrt(q_raw[0] * q_raw[0] + q_raw[1] * q_raw[1] +
                                  q_raw[2] * q_raw[2] + q_raw[3] * q_raw[3]);
    Quat qn = {q_raw[0] / norm, q_raw[1] / norm, q_raw[2] / norm, q_raw[3] / norm};
    double dot = 0.0;
    for (int k = 0; k < 4; ++k) dot += qn[static_cast<size_t>(k)] * grad_unit[static_cast<size_t>(k)];
    Quat out;
    for (int k = 0; k < 4; ++k)
        out[static_cast<size_t>(k)] = (grad_unit[static_cast<size_t>(k)] - dot * qn[static_cast<size_t>(k)]) / norm;
    return out;
}

// dR/dq for a unit quaternion (w,x,y,z), contracted with dL/dR.
Quat rotation_backward_unit(const Quat& q, const double g[3][3]) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Quat out{};
    // dR/dw
    out[0] = g[0][1] * (-2 * z) + g[0][2] * (2 * y) + g[1][0] * (2 * z) + g[1][2] * (-2 * x) +
             g[2][0] * (-2 * y) + g[2][1] * (2 * x);
    // dR/dx
    out[1] = g[0][1] * (2 * y) + g[0][2] * (2 * z) + g[1][0] * (2 * y) + g[1][1] * (-4 * x) +
             g[1][2] * (-2 * w) + g[2][0] * (2 * z) + g[2][1] * (2 * w) + g[2][2] * (-4 * x);
    // dR/dy
    out[2] = g[0][0] * (-4 * y) + g[0][1] * (2 * x) + g[0][2] * (2 * w) + g[1][0] * (2 * x) +
             g[1][2] * (2 * z) + g[2][0] * (-2 * w) + g[2][1] * (2 * z) + g[2][2] * (-4 * y);
    // dR/dz
    out[3] = g[0][0] * (-4 * z) + g[0][1] * (-2 * w) + g[0][2] * (2 * x) + g[1][0] * (2 * w) +
             g[1][1] * (-4 * z) + g[1][2] * (2 * y) + g[2][0] * (2 * x) + g[2][1] * (2 * y);
    return out;
}

}  // namespace

SceneGrads render_backward(const Tensor& grad_image, const RenderOutput& out,
                           const GaussianScene& scene, const Camera& camera, const Vec3& bg,
                           const RenderSettings& settings) {
    if (!out.has_aux)
        throw std::logic_error("render_backward: RenderOutput lacks contributor records");
    const int w = camera.width;
    const int h = camera.height;
    if (grad_image.ndim() != 3 || grad_image.dim(0) != h || grad_image.dim(1) != w ||
        grad_image.dim(2) != 3)
        throw std::logic_error("render_backward: grad_image shape mismatch");
    if (out.contribs.size() != static_cast<size_t>(h) * static_cast<size_t>(w))
        throw std::logic_error("render_backward: aux size mismatch");

    const int64_t n = scene.size();
    ProjectionCache cache = project_all(scene, camera, settings);

    // Stage 1: per-pixel compositing adjoint. Accumulates, per primitive,
    // gradients w.r.t. color, alpha-level quantities (opacity, power), and
    // through power w.r.t. mean2d / cov2d. Deterministic: one buffer per tile
    // row, reduced in row order.
    struct SplatGrad {
        double mean2d[2] = {0, 0};
        double cov2d[3] = {0, 0, 0};
        double color[3] = {0, 0, 0};
        double opacity = 0.0;
    };

    const int ts = settings.tile_size;
    const int tile_rows = (h + ts - 1) / ts;
    std::vector<std::vector<SplatGrad>> partials(
        static_cast<size_t>(tile_rows), std::vector<SplatGrad>(static_cast<size_t>(n)));
    std::vector<std::array<double, 3>> bg_partials(static_cast<size_t>(tile_rows), {0, 0, 0});

#pragma omp parallel for schedule(dynamic, 1)
    for (int tr = 0; tr < tile_rows; ++tr) {
        auto& local = partials[static_cast<size_t>(tr)];
        auto& bg_local = bg_partials[static_cast<size_t>(tr)];
        const int y_end = std::min(h, (tr + 1) * ts);
        for (int y = tr * ts; y < y_end; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto& contribs = out.contribs[static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)];
                const double g[3] = {grad_image.at(y, x, 0), grad_image.at(y, x, 1),
                                     grad_image.at(y, x, 2)};
                const double t_final = out.transmittance.at(y, x);
                for (int k = 0; k < 3; ++k) bg_local[static_cast<size_t>(k)] += g[k] * t_final;

                if (contribs.empty()) continue;
                // Recompute prefix transmittances.
                const size_t m = contribs.size();
                std::vector<double> t_pre(m);
                double t_acc = 1.0;
                for (size_t i = 0; i < m; ++i) {
                    t_pre[i] = t_acc;
                    t_acc *= 1.0 - contribs[i].second;
                }
                // Suffix color-sum S = sum_{j>i} c_j a_j T_j + T_final*bg.
                double suffix[3] = {t_final * bg[0], t_final * bg[1], t_final * bg[2]};
                const double px = x + 0.5, py = y + 0.5;
                for (size_t ii = m; ii-- > 0;) {
                    const int32_t idx = contribs[ii].first;
                    const double alpha = contribs[ii].second;
                    const double t_i = t_pre[ii];
                    const Vec3 c = scene.color_at(idx);
                    SplatGrad& sg = local[static_cast<size_t>(idx)];

                    double dalpha = 0.0;
                    for (int k = 0; k < 3; ++k) {
                        sg.color[k] += g[k] * alpha * t_i;
                        dalpha += g[k] * (c[static_cast<size_t>(k)] * t_i - suffix[k] / (1.0 - alpha));
                        suffix[k] += c[static_cast<size_t>(k)] * alpha * t_i;
                    }

                    // alpha = min(clamp, o * exp(power)); zero grad when clamped.
                    const double opacity = scene.opacity_at(idx);
                    const auto& pg = cache.proj[static_cast<size_t>(idx)];
                    const double det = pg.cov2d[0] * pg.cov2d[2] - pg.cov2d[1] * pg.cov2d[1];
                    const double ia = pg.cov2d[2] / det;
                    const double ib = -pg.cov2d[1] / det;
                    const double ic = pg.cov2d[0] / det;
                    const double dx = px - pg.mean2d[0];
                    const double dy = py - pg.mean2d[1];
                    const double power = -0.5 * (ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy);
                    const double gauss = std::exp(power);
                    if (opacity * gauss >= settings.alpha_clamp) continue;

                    sg.opacity += gauss * dalpha;
                    const double dpower = opacity * gauss * dalpha;

                    // power = -1/2 d^T Con d with Con = inv(cov2d).
                    const double gdx = -dpower * (ia * dx + ib * dy);
                    const double gdy = -dpower * (ib * dx + ic * dy);
                    sg.mean2d[0] += -gdx;  // d = pixel - mean2d
                    sg.mean2d[1] += -gdy;

                    // d power / d Con, then Con = inv(cov): dCov = -Con dCon Con.
                    // dConMat = [[dcon_a, dcon_b/2],[dcon_b/2, dcon_c]]; dcon_b
                    // carries both off-diagonal slots.
                    const double dcon_a = -0.5 * dx * dx * dpower;
                    const double dcon_b = -dx * dy * dpower;
                    const double dcon_c = -0.5 * dy * dy * dpower;
                    const double hb = 0.5 * dcon_b;
                    const double x00 = ia * dcon_a + ib * hb;
                    const double x01 = ia * hb + ib * dcon_c;
                    const double x10 = ib * dcon_a + ic * hb;
                    const double x11 = ib * hb + ic * dcon_c;
                    const double dcov00 = -(x00 * ia + x01 * ib);
                    const double dcov01 = -(x00 * ib + x01 * ic);
                    const double dcov10 = -(x10 * ia + x11 * ib);
                    const double dcov11 = -(x10 * ib + x11 * ic);
                    sg.cov2d[0] += dcov00;
                    sg.cov2d[1] += dcov01 + dcov10;
                    sg.cov2d[2] += dcov11;
                }
            }
        }
    }

    // Ordered reduction over tile rows.
    std::vector<SplatGrad> acc(static_cast<size_t>(n));
    SceneGrads grads(n);
    for (int tr = 0; tr < tile_rows; ++tr) {
        for (int64_t i = 0; i < n; ++i) {
            const SplatGrad& s = partials[static_cast<size_t>(tr)][static_cast<size_t>(i)];
            SplatGrad& a = acc[static_cast<size_t>(i)];
            a.mean2d[0] += s.mean2d[0];
            a.mean2d[1] += s.mean2d[1];
            for (int k = 0; k < 3; ++k) {
                a.cov2d[k] += s.cov2d[k];
                a.color[k] += s.color[k];
            }
            a.opacity += s.opacity;
        }
        for (int k = 0; k < 3; ++k) grads.background[k] += bg_partials[static_cast<size_t>(tr)][static_cast<size_t>(k)];
    }

    // Stage 2: chain projection adjoints per primitive (independent; parallel).
    const double fx = camera.focal_px();
    const double fy = camera.focal_px();
    const Mat3 rcw = camera.rotation();
    const double tan_half_x = (camera.width / 2.0) / fx;
    const double tan_half_y = (camera.height / 2.0) / fy;
    const double lim_x = 1.3 * tan_half_x;
    const double lim_y = 1.3 * tan_half_y;

#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const SplatGrad& a = acc[static_cast<size_t>(i)];
        grads.opacities.at(i) = a.opacity;
        for (int k = 0; k < 3; ++k) grads.colors.at(i, k) = a.color[k];

        const bool any = a.mean2d[0] != 0 || a.mean2d[1] != 0 || a.cov2d[0] != 0 ||
                         a.cov2d[1] != 0 || a.cov2d[2] != 0;
        if (!any) continue;

        const Vec3 p = scene.position_at(i);
        const Quat q_raw = scene.rotation_at(i);
        const Quat q = quaternion_normalize(q_raw);
        const Vec3 s = scene.scale_at(i);
        const Vec3 t = camera.world_to_camera(p);
        const double tz = t[2];

        const Mat3 rq = quaternion_to_rotation(q);
        // sigma (world) and m (camera) as in the forward pass.
        double rs[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) rs[r][c] = rq[static_cast<size_t>(r)][static_cast<size_t>(c)] * s[static_cast<size_t>(c)];
        double sigma[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                sigma[r][c] = rs[r][0] * rs[c][0] + rs[r][1] * rs[c][1] + rs[r][2] * rs[c][2];
        double wsig[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                wsig[r][c] = rcw[0][static_cast<size_t>(r)] * sigma[0][static_cast<size_t>(c)] +
                             rcw[1][static_cast<size_t>(r)] * sigma[1][static_cast<size_t>(c)] +
                             rcw[2][static_cast<size_t>(r)] * sigma[2][static_cast<size_t>(c)];
        double mcam[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                mcam[r][c] = wsig[r][0] * rcw[0][static_cast<size_t>(c)] + wsig[r][1] * rcw[1][static_cast<size_t>(c)] +
                             wsig[r][2] * rcw[2][static_cast<size_t>(c)];

        const double rx = t[0] / tz;
        const double ry = t[1] / tz;
        const bool clx = rx < -lim_x || rx > lim_x;
        const bool cly = ry < -lim_y || ry > lim_y;
        const double ctx = std::clamp(rx, -lim_x, lim_x);
        const double cty = std::clamp(ry, -lim_y, lim_y);
        const double j00 = fx / tz;
        const double j02 = -fx * ctx / tz;
        const double j11 = fy / tz;
        const double j12 = -fy * cty / tz;

        // dL/dcov2d as symmetric matrix G (b slot already holds both).
        const double g_a = a.cov2d[0];
        const double g_b = 0.5 * a.cov2d[1];
        const double g_c = a.cov2d[2];

        // cov2d = J M J^T with rows j0=(j00,0,j02), j1=(0,j11,j12).
        // T = G * J (2x3):
        const double t00 = g_a * j00;
        const double t01 = g_b * j11;
        const double t02 = g_a * j02 + g_b * j12;
        const double t10 = g_b * j00;
        const double t11 = g_c * j11;
        const double t12 = g_b * j02 + g_c * j12;
        // dM = J^T * T  (3x3), J^T rows: (j00,0),(0,j11),(j02,j12).
        double dm[3][3];
        dm[0][0] = j00 * t00;
        dm[0][1] = j00 * t01;
        dm[0][2] = j00 * t02;
        dm[1][0] = j11 * t10;
        dm[1][1] = j11 * t11;
        dm[1][2] = j11 * t12;
        dm[2][0] = j02 * t00 + j12 * t10;
        dm[2][1] = j02 * t01 + j12 * t11;
        dm[2][2] = j02 * t02 + j12 * t12;

        // dJ = 2 G J M  (2x3); use full symmetric G.
        double gj[2][3] = {{t00, t01, t02}, {t10, t11, t12}};
        double dj[2][3];
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c)
                dj[r][c] = 2.0 * (gj[r][0] * mcam[0][c] + gj[r][1] * mcam[1][c] + gj[r][2] * mcam[2][c]);

        // dt from J entries and from mean2d.
        double dt[3] = {0, 0, 0};
        // j00 = fx/tz, j11 = fy/tz.
        dt[2] += dj[0][0] * (-fx / (tz * tz));
        dt[2] += dj[1][1] * (-fy / (tz * tz));
        // j02 = -fx*ctx/tz, ctx = clamp(tx/tz).
        if (!clx) {
            dt[0] += dj[0][2] * (-fx / (tz * tz));
            dt[2] += dj[0][2] * (2.0 * fx * t[0] / (tz * tz * tz));
        } else {
            dt[2] += dj[0][2] * (fx * ctx / (tz * tz));
        }
        if (!cly) {
            dt[1] += dj[1][2] * (-fy / (tz * tz));
            dt[2] += dj[1][2] * (2.0 * fy * t[1] / (tz * tz * tz));
        } else {
            dt[2] += dj[1][2] * (fy * cty / (tz * tz));
        }
        // mean2d = (fx*tx/tz + cx, fy*ty/tz + cy), unclamped.
        dt[0] += a.mean2d[0] * (fx / tz);
        dt[2] += a.mean2d[0] * (-fx * t[0] / (tz * tz));
        dt[1] += a.mean2d[1] * (fy / tz);
        dt[2] += a.mean2d[1] * (-fy * t[1] / (tz * tz));

        // t = rcw^T (p - cam), so dp = rcw * dt.
        for (int r = 0; r < 3; ++r)
            grads.positions.at(i, r) =
                rcw[static_cast<size_t>(r)][0] * dt[0] + rcw[static_cast<size_t>(r)][1] * dt[1] + rcw[static_cast<size_t>(r)][2] * dt[2];

        // dSigma_world = rcw * dM * rcw^T  (dM symmetric).
        double rdm[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                rdm[r][c] = rcw[static_cast<size_t>(r)][0] * dm[0][c] + rcw[static_cast<size_t>(r)][1] * dm[1][c] +
                            rcw[static_cast<size_t>(r)][2] * dm[2][c];
        double dsigma[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                dsigma[r][c] = rdm[r][0] * rcw[static_cast<size_t>(c)][0] + rdm[r][1] * rcw[static_cast<size_t>(c)][1] +
                               rdm[r][2] * rcw[static_cast<size_t>(c)][2];

        // Sigma = Rq diag(s^2) Rq^T.
        // dRq = (dSigma + dSigma^T) Rq diag(s^2) = 2 sym(dSigma) Rq diag(s^2).
        double sym[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) sym[r][c] = dsigma[r][c] + dsigma[c][r];
        double drq[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (int k = 0; k < 3; ++k) v += sym[r][k] * rq[static_cast<size_t>(k)][static_cast<size_t>(c)];
                drq[r][c] = v * s[static_cast<size_t>(c)] * s[static_cast<size_t>(c)];
            }
        // ds2_k = (Rq^T dSigma Rq)_kk ; dlog s = 2 s^2 * that.
        for (int k = 0; k < 3; ++k) {
            double v = 0.0;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) v += rq[static_cast<size_t>(r)][static_cast<size_t>(k)] * dsigma[r][c] * rq[static_cast<size_t>(c)][static_cast<size_t>(k)];
            grads.log_scales.at(i, k) = 2.0 * s[static_cast<size_t>(k)] * s[static_cast<size_t>(k)] * v;
        }

        const Quat dq_unit = rotation_backward_unit(q, drq);
        const Quat dq_raw = quat_normalize_backward(q_raw, dq_unit);
        for (int k = 0; k < 4; ++k) grads.rotations.at(i, k) = dq_raw[static_cast<size_t>(k)];
    }

    return grads;
}

double GradCheckReport::max_rel_error() const {
    return std::max({positions, rotations, log_scales, colors, opacities, background});
}

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << "positions " << positions << "  rotations " << rotations
       << "  log_scales " << log_scales << "  colors " << colors << "  opacities " << opacities
       << "  background " << background;
    return os.str();
}

GradCheckReport gradcheck(int64_t scene_size, int resolution, uint64_t seed) {
    Rng rng(seed ^ 0x67c6a7b1f5ULL);
    GaussianScene scene(scene_size);
    for (int64_t i = 0; i < scene_size; ++i) {
        const Vec3 pos = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
        Quat rot = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        rot = quaternion_normalize(rot);
        const Vec3 ls = {rng.uniform(std::log(0.02), std::log(0.1)),
                         rng.uniform(std::log(0.02), std::log(0.1)),
                         rng.uniform(std::log(0.02), std::log(0.1))};
        const Vec3 col = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
        scene.set_primitive(i, pos, rot, ls, col, rng.uniform(0.3, 0.9));
    }
    const Camera camera = camera_from_angles(rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), 3.0,
                                             12.0, resolution, resolution);
    const Vec3 bg = {rng.uniform(), rng.uniform(), rng.uniform()};
    const RenderSettings settings = RenderSettings::smooth();

    // Fixed random image gradient; loss = <g, image>.
    Tensor g({resolution, resolution, 3});
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = rng.normal();

    auto loss_of = [&](const GaussianScene& s, const Vec3& b) {
        RenderOutput o = render_forward(s, camera, b, settings, false);
        double l = 0.0;
        for (int64_t i = 0; i < o.image.numel(); ++i) l += g[i] * o.image[i];
        return l;
    };

    RenderOutput out = render_forward(scene, camera, bg, settings, true);
    SceneGrads an = render_backward(g, out, scene, camera, bg, settings);

    const double h = 1e-5;
    auto rel = [](double a, double f) {
        return std::fabs(a - f) / std::max({std::fabs(a), std::fabs(f), 1e-4});
    };

    GradCheckReport report;
    auto check_tensor = [&](Tensor& param, const Tensor& analytic, double& slot) {
        for (int64_t i = 0; i < param.numel(); ++i) {
            const double orig = param[i];
            param[i] = orig + h;
            const double lp = loss_of(scene, bg);
            param[i] = orig - h;
            const double lm = loss_of(scene, bg);
            param[i] = orig;
            slot = std::max(slot, rel(analytic[i], (lp - lm) / (2.0 * h)));
        }
    };
    check_tensor(scene.positions, an.positions, report.positions);
    check_tensor(scene.rotations, an.rotations, report.rotations);
    check_tensor(scene.log_scales, an.log_scales, report.log_scales);
    check_tensor(scene.colors, an.colors, report.colors);
    check_tensor(scene.opacities, an.opacities, report.opacities);
    for (int k = 0; k < 3; ++k) {
        Vec3 bp = bg, bm = bg;
        bp[static_cast<size_t>(k)] += h;
        bm[static_cast<size_t>(k)] -= h;
        const double fd = (loss_of(scene, bp) - loss_of(scene, bm)) / (2.0 * h);
        report.background = std::max(report.background, rel(an.background[k], fd));
    }
    return report;
}

}  // namespace cgs
