#include "cgs/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace cgs {

namespace {
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 normalized(const Vec3& v) {
    double n = std::sqrt(dot(v, v));
    if (n < 1e-15) throw std::invalid_argument("camera: degenerate direction");
    return {v[0] / n, v[1] / n, v[2] / n};
}
}  // namespace

Camera Camera::look_at(const Vec3& position, const Vec3& target, double fov_deg, int width,
                       int height) {
    Vec3 forward = normalized({target[0] - position[0], target[1] - position[1],
                               target[2] - position[2]});
    Vec3 up_world = {0.0, 1.0, 0.0};
    // Degenerate straight-up/down poses fall back to a z-aligned hint.
    if (std::fabs(dot(forward, up_world)) > 1.0 - 1e-9) up_world = {0.0, 0.0, 1.0};
    Vec3 right = normalized(cross(forward, up_world));
    Vec3 down = cross(forward, right);  // camera y points down in image space

    Camera cam;
    cam.fov_deg = fov_deg;
    cam.width = width;
    cam.height = height;
    for (int i = 0; i < 3; ++i) {
        cam.cam_to_world[static_cast<size_t>(i)][0] = right[static_cast<size_t>(i)];
        cam.cam_to_world[static_cast<size_t>(i)][1] = down[static_cast<size_t>(i)];
        cam.cam_to_world[static_cast<size_t>(i)][2] = forward[static_cast<size_t>(i)];
        cam.cam_to_world[static_cast<size_t>(i)][3] = position[static_cast<size_t>(i)];
    }
    cam.cam_to_world[3] = {0.0, 0.0, 0.0, 1.0};
    return cam;
}

CameraLabel Camera::label() const {
    CameraLabel out{};
    int k = 0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) out[static_cast<size_t>(k++)] = cam_to_world[static_cast<size_t>(r)][static_cast<size_t>(c)];
    const double fx = focal_px() / width;
    const double fy = focal_px() / height;
    const double intr[9] = {fx, 0.0, 0.5, 0.0, fy, 0.5, 0.0, 0.0, 1.0};
    for (double v : intr) out[static_cast<size_t>(k++)] = v;
    return out;
}

Camera Camera::from_label(const CameraLabel& label, int width, int height) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    int k = 0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) cam.cam_to_world[static_cast<size_t>(r)][static_cast<size_t>(c)] = label[static_cast<size_t>(k++)];
    const double fx_norm = label[16];
    cam.fov_deg = 2.0 * std::atan(0.5 / fx_norm) * 180.0 / M_PI;

    // Rotation block must be orthonormal with det +1.
    Mat3 r = cam.rotation();
    double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                 r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                 r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (std::fabs(det - 1.0) > 1e-6)
        throw std::invalid_argument("Camera::from_label: rotation block is not rigid");
    return cam;
}

Vec3 Camera::position() const {
    return {cam_to_world[0][3], cam_to_world[1][3], cam_to_world[2][3]};
}

Mat3 Camera::rotation() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r[static_cast<size_t>(i)][static_cast<size_t>(j)] = cam_to_world[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return r;
}

double Camera::focal_px() const {
    return (width / 2.0) / std::tan(fov_deg * M_PI / 180.0 / 2.0);
}

Vec3 Camera::world_to_camera(const Vec3& p) const {
    const Mat3 r = rotation();
    const Vec3 t = position();
    const Vec3 d = {p[0] - t[0], p[1] - t[1], p[2] - t[2]};
    // R is orthonormal: inverse = transpose.
    return {r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2]};
}

double Camera::forward_axis_miss() const {
    const Mat3 r = rotation();
    const Vec3 pos = position();
    const Vec3 fwd = {r[0][2], r[1][2], r[2][2]};
    // Distance from origin to the line pos + t*fwd.
    const double t = -dot(pos, fwd);
    const Vec3 closest = {pos[0] + t * fwd[0], pos[1] + t * fwd[1], pos[2] + t * fwd[2]};
    return std::sqrt(dot(closest, closest));
}

PoseDistribution PoseDistribution::empirical(std::vector<CameraLabel> labels) {
    PoseDistribution d;
    d.kind = Kind::Empirical;
    d.labels = std::move(labels);
    return d;
}

Camera camera_from_angles(double yaw, double pitch, double radius, double fov_deg, int width,
                          int height) {
    const Vec3 pos = {radius * std::sin(yaw) * std::cos(pitch), radius * std::sin(pitch),
                      radius * std::cos(yaw) * std::cos(pitch)};
    return Camera::look_at(pos, {0.0, 0.0, 0.0}, fov_deg, width, height);
}

Camera sample_camera_pose(Rng& rng, const PoseDistribution& dist, int width, int height) {
    if (dist.kind == PoseDistribution::Kind::Empirical) {
        if (dist.labels.empty())
            throw std::runtime_error("sample_camera_pose: empirical pose pool is empty");
        const int64_t idx = rng.uniform_int(static_cast<int64_t>(dist.labels.size()));
        return Camera::from_label(dist.labels[static_cast<size_t>(idx)], width, height);
    }
    double yaw = rng.normal(0.0, dist.yaw_std);
    double pitch = rng.normal(0.0, dist.pitch_std);
    yaw = std::clamp(yaw, -dist.yaw_clamp, dist.yaw_clamp);
    pitch = std::clamp(pitch, -dist.pitch_clamp, dist.pitch_clamp);
    return camera_from_angles(yaw, pitch, dist.radius, dist.fov_deg, width, height);
}

}  // namespace cgs
