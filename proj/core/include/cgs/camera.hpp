#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cgs/rng.hpp"
#include "cgs/scene.hpp"

namespace cgs {

using Mat4 = std::array<std::array<double, 4>, 4>;
using CameraLabel = std::array<double, 25>;

/// Pinhole camera on a fixed-radius sphere looking at the origin.
///
/// Conventions: camera x right, y down, z forward (z axis points at the
/// scene); image u right, v down; principal point at the image center.
/// The 25-number conditioning label is the row-major flattened cam_to_world
/// (16) followed by the row-major intrinsics normalized by resolution (9).
struct Camera {
    double fov_deg = 12.0;
    int width = 64;
    int height = 64;
    Mat4 cam_to_world{};

    static Camera look_at(const Vec3& position, const Vec3& target, double fov_deg, int width,
                          int height);

    /// Reconstructs a camera from its conditioning label (bit-exact inverse
    /// of label()). Throws std::invalid_argument on a non-rigid rotation.
    static Camera from_label(const CameraLabel& label, int width, int height);

    CameraLabel label() const;

    Vec3 position() const;
    Mat3 rotation() const;            // world-from-camera rotation block
    double focal_px() const;          // fx = fy in pixels
    Vec3 world_to_camera(const Vec3& p) const;

    /// Distance from the origin to the camera's forward axis; ~0 when the
    /// camera looks at the scene center.
    double forward_axis_miss() const;
};

/// Camera pose source for training and evaluation. Either parametric
/// (yaw/pitch normal around the frontal view, fixed radius) or empirical
/// (uniform draw from dataset labels).
struct PoseDistribution {
    enum class Kind { Parametric, Empirical };
    Kind kind = Kind::Parametric;

    // Parametric:
    double radius = 3.0;
    double yaw_std = 0.5;        // radians
    double pitch_std = 0.2;      // radians
    double yaw_clamp = 1.5;
    double pitch_clamp = 0.8;
    double fov_deg = 12.0;

    // Empirical:
    std::vector<CameraLabel> labels;

    static PoseDistribution parametric() { return PoseDistribution{}; }
    static PoseDistribution empirical(std::vector<CameraLabel> labels);
};

/// Yaw/pitch placement on the viewing sphere; yaw=0, pitch=0 is the frontal
/// camera on the +z axis.
Camera camera_from_angles(double yaw, double pitch, double radius, double fov_deg, int width,
                          int height);

/// Draws a camera from the distribution. Throws std::runtime_error for an
/// empirical distribution with an empty label pool.
Camera sample_camera_pose(Rng& rng, const PoseDistribution& dist, int width, int height);

}  // namespace cgs
