#include "cgs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace cgs {

GaussianScene::GaussianScene(int64_t n) {
    positions = Tensor({n, 3});
    rotations = Tensor({n, 4});
    log_scales = Tensor({n, 3});
    colors = Tensor({n, 3});
    opacities = Tensor({n});
    for (int64_t i = 0; i < n; ++i) rotations.at(i, 0) = 1.0;  // identity
}

Vec3 GaussianScene::position_at(int64_t i) const {
    return {positions.at(i, 0), positions.at(i, 1), positions.at(i, 2)};
}

Quat GaussianScene::rotation_at(int64_t i) const {
    return {rotations.at(i, 0), rotations.at(i, 1), rotations.at(i, 2), rotations.at(i, 3)};
}

Vec3 GaussianScene::scale_at(int64_t i) const {
    return {std::exp(log_scales.at(i, 0)), std::exp(log_scales.at(i, 1)),
            std::exp(log_scales.at(i, 2))};
}

Vec3 GaussianScene::log_scale_at(int64_t i) const {
    return {log_scales.at(i, 0), log_scales.at(i, 1), log_scales.at(i, 2)};
}

Vec3 GaussianScene::color_at(int64_t i) const {
    return {colors.at(i, 0), colors.at(i, 1), colors.at(i, 2)};
}

double GaussianScene::opacity_at(int64_t i) const { return opacities.at(i); }

void GaussianScene::set_primitive(int64_t i, const Vec3& pos, const Quat& rot,
                                  const Vec3& log_scale, const Vec3& color, double opacity) {
    for (int k = 0; k < 3; ++k) {
        positions.at(i, k) = pos[static_cast<size_t>(k)];
        log_scales.at(i, k) = log_scale[static_cast<size_t>(k)];
        colors.at(i, k) = color[static_cast<size_t>(k)];
    }
    for (int k = 0; k < 4; ++k) rotations.at(i, k) = rot[static_cast<size_t>(k)];
    opacities.at(i) = opacity;
}

void GaussianScene::normalize_invariants() {
    const int64_t n = size();
    for (int64_t i = 0; i < n; ++i) {
        Quat q = quaternion_normalize(rotation_at(i));
        for (int k = 0; k < 4; ++k) rotations.at(i, k) = q[static_cast<size_t>(k)];
        for (int k = 0; k < 3; ++k) {
            positions.at(i, k) = std::clamp(positions.at(i, k), -kSceneCubeHalf, kSceneCubeHalf);
            colors.at(i, k) = std::clamp(colors.at(i, k), 0.0, 1.0);
        }
        opacities.at(i) = std::clamp(opacities.at(i), 0.0, 1.0 - 1e-6);
    }
}

std::string GaussianScene::validate() const {
    const int64_t n = size();
    auto fail = [](int64_t i, const char* what) {
        std::ostringstream os;
        os << "primitive " << i << ": " << what;
        return os.str();
    };
    if (rotations.numel() != n * 4 || log_scales.numel() != n * 3 || colors.numel() != n * 3 ||
        opacities.numel() != n)
        return "attribute array sizes disagree";
    for (int64_t i = 0; i < n; ++i) {
        Quat q = rotation_at(i);
        double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        if (std::fabs(norm - 1.0) > 1e-6) return fail(i, "quaternion not unit");
        for (int k = 0; k < 3; ++k) {
            double p = positions.at(i, k);
            if (!std::isfinite(p) || std::fabs(p) > kSceneCubeHalf + 1e-12)
                return fail(i, "position outside scene cube");
            if (!std::isfinite(log_scales.at(i, k))) return fail(i, "non-finite log scale");
            double c = colors.at(i, k);
            if (!(c >= 0.0 && c <= 1.0)) return fail(i, "color outside [0,1]");
        }
        double o = opacities.at(i);
        if (!(o >= 0.0 && o < 1.0)) return fail(i, "opacity outside [0,1)");
    }
    return "";
}

int64_t LayeredScene::total_rendered() const {
    int64_t n = 0;
    for (const auto& lvl : levels) n += lvl.rendered.size();
    return n;
}

Mat3 quaternion_to_rotation(const Quat& q_in) {
    double norm = std::sqrt(q_in[0] * q_in[0] + q_in[1] * q_in[1] + q_in[2] * q_in[2] +
                            q_in[3] * q_in[3]);
    if (norm <= 0.0 || !std::isfinite(norm))
        throw std::invalid_argument("quaternion_to_rotation: zero-norm quaternion");
    const double w = q_in[0] / norm, x = q_in[1] / norm, y = q_in[2] / norm, z = q_in[3] / norm;
    Mat3 r;
    r[0] = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)};
    r[1] = {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)};
    r[2] = {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
    return r;
}

Quat quaternion_multiply(const Quat& a, const Quat& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Quat quaternion_normalize(const Quat& q) {
    double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (norm < 1e-12) return {1.0, 0.0, 0.0, 0.0};
    return {q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm};
}

Vec3 rotate_vec(const Mat3& r, const Vec3& v) {
    return {r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2]};
}

GaussianScene compose_hierarchy(const GaussianScene& child_local, const GaussianScene& anchors) {
    const int64_t nc = child_local.size();
    const int64_t na = anchors.size();
    if (na == 0 || nc % na != 0)
        throw std::invalid_argument("compose_hierarchy: child count must be a multiple of anchor count");
    const int64_t fan_out = nc / na;

    GaussianScene out(nc);
    for (int64_t i = 0; i < nc; ++i) {
        const int64_t a = i / fan_out;
        const Quat qa = anchors.rotation_at(a);
        const Mat3 ra = quaternion_to_rotation(qa);
        const Vec3 pa = anchors.position_at(a);
        const Vec3 off = rotate_vec(ra, child_local.position_at(i));
        Vec3 pos = {pa[0] + off[0], pa[1] + off[1], pa[2] + off[2]};
        for (auto& p : pos) p = std::clamp(p, -kSceneCubeHalf, kSceneCubeHalf);
        Quat rot = quaternion_normalize(quaternion_multiply(qa, child_local.rotation_at(i)));
        out.set_primitive(i, pos, rot, child_local.log_scale_at(i), child_local.color_at(i),
                          child_local.opacity_at(i));
    }
    return out;
}

GaussianScene flatten_layers(const LayeredScene& layered) {
    int64_t total = layered.total_rendered();
    GaussianScene out(total);
    int64_t at = 0;
    for (const auto& lvl : layered.levels) {
        const GaussianScene& s = lvl.rendered;
        const int64_t n = s.size();
        if (n == 0) continue;
        std::memcpy(out.positions.data() + at * 3, s.positions.data(), sizeof(double) * 3 * n);
        std::memcpy(out.rotations.data() + at * 4, s.rotations.data(), sizeof(double) * 4 * n);
        std::memcpy(out.log_scales.data() + at * 3, s.log_scales.data(), sizeof(double) * 3 * n);
        std::memcpy(out.colors.data() + at * 3, s.colors.data(), sizeof(double) * 3 * n);
        std::memcpy(out.opacities.data() + at, s.opacities.data(), sizeof(double) * n);
        at += n;
    }
    return out;
}

namespace {
void hash_bytes(uint64_t& h, const void* data, size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
}
}  // namespace

uint64_t scene_hash(const GaussianScene& scene) {
    uint64_t h = 0xcbf29ce484222325ULL;
    int64_t n = scene.size();
    hash_bytes(h, &n, sizeof(n));
    hash_bytes(h, scene.positions.data(), sizeof(double) * static_cast<size_t>(scene.positions.numel()));
    hash_bytes(h, scene.rotations.data(), sizeof(double) * static_cast<size_t>(scene.rotations.numel()));
    hash_bytes(h, scene.log_scales.data(), sizeof(double) * static_cast<size_t>(scene.log_scales.numel()));
    hash_bytes(h, scene.colors.data(), sizeof(double) * static_cast<size_t>(scene.colors.numel()));
    hash_bytes(h, scene.opacities.data(), sizeof(double) * static_cast<size_t>(scene.opacities.numel()));
    return h;
}

std::string scene_hash_hex(const GaussianScene& scene) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(scene_hash(scene)));
    return buf;
}

}  // namespace cgs
