// Temporary build probe: exercises the rasterizer gradcheck while the rest
// of the project comes up.
#include <chrono>
#include <cstdio>

#include "cgs/rasterizer.hpp"

int main() {
    using namespace cgs;
    for (uint64_t seed = 0; seed < 3; ++seed) {
        auto t0 = std::chrono::steady_clock::now();
        GradCheckReport r = gradcheck(5, 16, seed);
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0).count();
        std::printf("seed %llu: %s  (max %.3e) [%lld ms] %s\n",
                    (unsigned long long)seed, r.to_string().c_str(), r.max_rel_error(),
                    (long long)ms, r.passed() ? "PASS" : "FAIL");
    }

    // Throughput probe at desk scale.
    Rng rng(1);
    GaussianScene scene(10752);
    for (int64_t i = 0; i < scene.size(); ++i) {
        Vec3 pos = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
        Quat q = quaternion_normalize({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
        Vec3 ls = {rng.uniform(-6.0, -3.0), rng.uniform(-6.0, -3.0), rng.uniform(-6.0, -3.0)};
        Vec3 col = {rng.uniform(), rng.uniform(), rng.uniform()};
        scene.set_primitive(i, pos, q, ls, col, rng.uniform(0.2, 0.9));
    }
    Camera cam = camera_from_angles(0.2, 0.1, 3.0, 12.0, 64, 64);
    Vec3 bg = {0.3, 0.5, 0.7};
    auto t0 = std::chrono::steady_clock::now();
    int renders = 0;
    double checksum = 0.0;
    while (std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count() < 2000) {
        RenderOutput out = render_forward(scene, cam, bg);
        checksum += out.image[0];
        ++renders;
    }
    double secs = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0).count() / 1000.0;
    std::printf("forward: %.1f renders/s at 64^2 x 10752 prims (checksum %.3f)\n",
                renders / secs, checksum);
    return 0;
}
