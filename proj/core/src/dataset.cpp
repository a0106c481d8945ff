#include "cgs/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "cgs/ply.hpp"
#include "cgs/rasterizer.hpp"

namespace cgs {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor Dataset::load_rgba(size_t index) const {
    const auto& e = entries.at(index);
    Tensor img = load_png((fs::path(root) / e.filename).string());
    if (img.dim(2) != 4)
        throw std::runtime_error("dataset: " + e.filename + " lacks an alpha channel");
    return img;
}

std::vector<CameraLabel> Dataset::labels() const {
    std::vector<CameraLabel> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.label);
    return out;
}

Dataset load_dataset(const std::string& root, std::vector<std::string>* errors) {
    const fs::path json_path = fs::path(root) / "dataset.json";
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("load_dataset: missing " + json_path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_dataset: malformed dataset.json: " + std::string(e.what()));
    }
    if (!doc.contains("labels") || !doc["labels"].is_array())
        throw std::runtime_error("load_dataset: dataset.json lacks a \"labels\" array");

    std::map<std::string, json> annotations;
    if (doc.contains("annotations"))
        for (const auto& row : doc["annotations"])
            annotations[row.at(0).get<std::string>()] = row.at(1);

    Dataset ds;
    ds.root = root;
    auto report = [&](const std::string& msg) {
        if (errors) errors->push_back(msg);
    };

    for (const auto& row : doc["labels"]) {
        if (!row.is_array() || row.size() != 2) {
            report("malformed labels row (expected [filename, label])");
            continue;
        }
        DatasetEntry e;
        e.filename = row.at(0).get<std::string>();
        const auto& lab = row.at(1);
        if (!lab.is_array() || lab.size() != 25) {
            report(e.filename + ": label must have 25 numbers, has " +
                   std::to_string(lab.size()));
            continue;
        }
        for (size_t i = 0; i < 25; ++i) e.label[i] = lab.at(i).get<double>();

        const fs::path img_path = fs::path(root) / e.filename;
        if (!fs::exists(img_path)) {
            report(e.filename + ": image file missing");
            continue;
        }
        if (auto it = annotations.find(e.filename); it != annotations.end()) {
            const json& a = it->second;
            if (a.contains("pose_bin")) e.pose_bin = a["pose_bin"].get<std::string>();
            if (a.contains("smiling")) e.smiling = a["smiling"].get<bool>();
            if (a.contains("occluded")) e.occluded = a["occluded"].get<bool>();
        }
        ds.entries.push_back(std::move(e));
    }

    // Probe the first image for resolution and alpha presence.
    if (!ds.entries.empty()) {
        Tensor probe = load_png((fs::path(root) / ds.entries[0].filename).string());
        if (probe.dim(2) != 4) report(ds.entries[0].filename + ": alpha channel absent");
        ds.height = static_cast<int>(probe.dim(0));
        ds.width = static_cast<int>(probe.dim(1));
    }
    return ds;
}

Tensor composite_random_background(const Tensor& rgba, Rng& rng) {
    const double bg[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    return composite_over(rgba, bg);
}

std::optional<std::string> annotation_value(const DatasetEntry& entry, const std::string& key) {
    if (key == "pose_bin") return entry.pose_bin;
    if (key == "smiling")
        return entry.smiling ? std::optional<std::string>(*entry.smiling ? "true" : "false")
                             : std::nullopt;
    if (key == "occluded")
        return entry.occluded ? std::optional<std::string>(*entry.occluded ? "true" : "false")
                              : std::nullopt;
    return std::nullopt;
}

std::vector<DatasetEntry> rebalance(const std::vector<DatasetEntry>& entries,
                                    const std::string& key,
                                    const std::map<std::string, double>& target_weights,
                                    uint64_t seed) {
    std::map<std::string, std::vector<size_t>> bins;
    for (size_t i = 0; i < entries.size(); ++i) {
        auto v = annotation_value(entries[i], key);
        if (!v)
            throw std::invalid_argument("rebalance: entry " + entries[i].filename +
                                        " lacks annotation \"" + key + "\"");
        bins[*v].push_back(i);
    }
    for (const auto& [bin, members] : bins) {
        (void)members;
        if (!target_weights.count(bin))
            throw std::invalid_argument("rebalance: observed bin \"" + bin +
                                        "\" has no target weight");
    }
    for (const auto& [bin, w] : target_weights)
        if (w > 0.0 && !bins.count(bin))
            throw std::invalid_argument("rebalance: target bin \"" + bin +
                                        "\" has no observed entries to duplicate");

    // Smallest total where every bin's target count is at least its observed
    // count: T = max_b n_b / w_b.
    double t_total = 0.0;
    for (const auto& [bin, members] : bins) {
        const double w = target_weights.at(bin);
        if (w <= 0.0)
            throw std::invalid_argument("rebalance: observed bin \"" + bin +
                                        "\" has non-positive target weight");
        t_total = std::max(t_total, static_cast<double>(members.size()) / w);
    }

    std::vector<DatasetEntry> out = entries;  // never drop, never reorder originals
    Rng rng(seed ^ 0x9d2c5680ULL);
    for (const auto& [bin, members] : bins) {
        const auto target =
            static_cast<int64_t>(std::llround(target_weights.at(bin) * t_total));
        int64_t need = target - static_cast<int64_t>(members.size());
        if (need <= 0) continue;
        // Seeded permutation, then round-robin duplication.
        std::vector<size_t> order = members;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
        for (int64_t j = 0; j < need; ++j)
            out.push_back(entries[order[static_cast<size_t>(j) % order.size()]]);
    }
    return out;
}

void generate_synthetic_dataset(const std::string& root, const SyntheticConfig& cfg) {
    fs::create_directories(fs::path(root));
    fs::create_directories(fs::path(root) / "scenes");

    Rng rng(cfg.seed ^ 0x5e3d17ULL);
    json labels = json::array();

    for (int id = 0; id < cfg.n_identities; ++id) {
        Rng id_rng = rng.fork(static_cast<uint64_t>(id));
        const int64_t n = cfg.min_gaussians +
                          id_rng.uniform_int(cfg.max_gaussians - cfg.min_gaussians + 1);
        GaussianScene scene(n);
        // Smooth colors: per-identity sinusoidal field over the shell.
        double phase[3], freq[3];
        for (int c = 0; c < 3; ++c) {
            phase[c] = id_rng.uniform(0.0, 2.0 * M_PI);
            freq[c] = id_rng.uniform(2.0, 6.0);
        }
        for (int64_t i = 0; i < n; ++i) {
            // Cluster on the shell: isotropic direction, radius jittered.
            double dir[3] = {id_rng.normal(), id_rng.normal(), id_rng.normal()};
            const double dn = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
            const double r = cfg.shell_radius * (1.0 + 0.08 * id_rng.normal());
            const Vec3 pos = {dir[0] / dn * r, dir[1] / dn * r, dir[2] / dn * r};
            const Quat rot = quaternion_normalize(
                {id_rng.normal(), id_rng.normal(), id_rng.normal(), id_rng.normal()});
            const Vec3 ls = {id_rng.uniform(std::log(0.02), std::log(0.07)),
                             id_rng.uniform(std::log(0.02), std::log(0.07)),
                             id_rng.uniform(std::log(0.02), std::log(0.07))};
            Vec3 col;
            for (int c = 0; c < 3; ++c)
                col[static_cast<size_t>(c)] =
                    0.5 + 0.45 * std::sin(freq[c] * (pos[0] + pos[1] + pos[2]) + phase[c]);
            scene.set_primitive(i, pos, rot, ls, col, id_rng.uniform(0.5, 0.95));
        }
        scene.normalize_invariants();

        char scene_name[64];
        std::snprintf(scene_name, sizeof(scene_name), "scenes/id%04d.ply", id);
        export_ply(scene, (fs::path(root) / scene_name).string());

        for (int v = 0; v < cfg.views_per_identity; ++v) {
            Camera cam = sample_camera_pose(id_rng, cfg.poses, cfg.resolution, cfg.resolution);
            const Vec3 black = {0.0, 0.0, 0.0};
            RenderOutput out = render_forward(scene, cam, black);
            Tensor rgba({cfg.resolution, cfg.resolution, 4});
            for (int64_t y = 0; y < cfg.resolution; ++y)
                for (int64_t x = 0; x < cfg.resolution; ++x) {
                    const double alpha = 1.0 - out.transmittance.at(y, x);
                    rgba.at(y, x, 3) = alpha;
                    for (int c = 0; c < 3; ++c)
                        rgba.at(y, x, c) = alpha > 1e-6 ? out.image.at(y, x, c) / alpha : 0.0;
                }
            char img_name[64];
            std::snprintf(img_name, sizeof(img_name), "id%04d_v%02d.png", id, v);
            save_png(rgba, (fs::path(root) / img_name).string());
            labels.push_back(json::array({img_name, cam.label()}));
        }
    }

    json doc;
    doc["labels"] = std::move(labels);
    std::ofstream out(fs::path(root) / "dataset.json", std::ios::binary);
    out << doc.dump(1) << "\n";
}

}  // namespace cgs
