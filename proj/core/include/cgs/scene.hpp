#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cgs/tensor.hpp"

namespace cgs {

using Vec3 = std::array<double, 3>;
using Quat = std::array<double, 4>;  // (w, x, y, z), Hamilton product
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Explicit 3D scene: flat per-primitive attribute arrays.
///
/// Scales are stored as log-scale and exponentiated on read (scale_at);
/// opacities live in [0,1), colors in [0,1], positions inside the
/// axis-aligned cube [-0.5, 0.5]^3, rotations are unit quaternions.
struct GaussianScene {
    Tensor positions;   // N x 3
    Tensor rotations;   // N x 4, unit (w,x,y,z)
    Tensor log_scales;  // N x 3
    Tensor colors;      // N x 3, [0,1]
    Tensor opacities;   // N, [0,1)

    GaussianScene() = default;
    explicit GaussianScene(int64_t n);

    int64_t size() const { return positions.empty() ? 0 : positions.dim(0); }

    Vec3 position_at(int64_t i) const;
    Quat rotation_at(int64_t i) const;
    Vec3 scale_at(int64_t i) const;      // exp(log_scale)
    Vec3 log_scale_at(int64_t i) const;
    Vec3 color_at(int64_t i) const;
    double opacity_at(int64_t i) const;

    void set_primitive(int64_t i, const Vec3& pos, const Quat& rot, const Vec3& log_scale,
                       const Vec3& color, double opacity);

    /// Renormalizes quaternions and clamps positions/opacities/colors into
    /// their invariant ranges.
    void normalize_invariants();

    /// Checks the documented invariants; returns a description of the first
    /// violation or an empty string.
    std::string validate() const;
};

/// Per-level output of the hierarchical generator: the Gaussians that get
/// rendered plus the anchors that parameterize the next level.
struct LayeredScene {
    struct Level {
        GaussianScene rendered;
        GaussianScene anchors;
    };
    std::vector<Level> levels;

    int64_t total_rendered() const;
};

// ---- Quaternion algebra -------------------------------------------------

/// Rotation matrix of a (not necessarily unit) quaternion; q and -q map to
/// the same matrix. Throws std::invalid_argument on a zero-norm quaternion.
Mat3 quaternion_to_rotation(const Quat& q);

/// Hamilton product a*b (applies b first, then a).
Quat quaternion_multiply(const Quat& a, const Quat& b);

Quat quaternion_normalize(const Quat& q);

Vec3 rotate_vec(const Mat3& r, const Vec3& v);

// ---- Hierarchy ops ------------------------------------------------------

/// Places child primitives relative to their anchors: world position =
/// anchor position + R(anchor rotation) * child local offset; world rotation
/// = anchor rotation * child rotation (renormalized). Scale/color/opacity
/// pass through. Positions are re-clamped to the scene cube. Child i maps to
/// anchor i / fan_out, fan_out = child count / anchor count.
/// Throws std::invalid_argument when the counts do not divide.
GaussianScene compose_hierarchy(const GaussianScene& child_local, const GaussianScene& anchors);

/// Concatenates the rendered Gaussians of all levels in level order.
GaussianScene flatten_layers(const LayeredScene& layered);

/// FNV-1a over the raw little-endian bytes of all attribute arrays; the
/// consistency-contract hash ("same scene" means equal hashes).
uint64_t scene_hash(const GaussianScene& scene);
std::string scene_hash_hex(const GaussianScene& scene);

constexpr double kSceneCubeHalf = 0.5;

}  // namespace cgs
