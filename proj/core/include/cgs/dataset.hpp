#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cgs/camera.hpp"
#include "cgs/image.hpp"
#include "cgs/rng.hpp"
#include "cgs/tensor.hpp"

namespace cgs {

/// One training example: an RGBA image reference, its 25-number camera label,
/// and optional rebalancing annotations (produced by external tooling).
struct DatasetEntry {
    std::string filename;
    CameraLabel label{};
    std::optional<std::string> pose_bin;
    std::optional<bool> smiling;
    std::optional<bool> occluded;
};

struct Dataset {
    std::string root;
    std::vector<DatasetEntry> entries;
    int width = 0;
    int height = 0;

    size_t size() const { return entries.size(); }
    /// Loads the RGBA image of one entry, [H,W,4] in [0,1].
    Tensor load_rgba(size_t index) const;
    std::vector<CameraLabel> labels() const;
};

/// Reads root/dataset.json ({"labels": [[filename, [25 numbers]], ...]},
/// optional "annotations": [[filename, {...}], ...]) and validates entries.
/// Per-entry validation failures (missing file, malformed label, missing
/// alpha) are collected into `errors`; structurally broken JSON throws.
Dataset load_dataset(const std::string& root, std::vector<std::string>* errors = nullptr);

/// fg.rgb * a + bg * (1 - a) with bg ~ Uniform[0,1]^3 drawn per call — the
/// same background distribution the renderer uses for fakes.
Tensor composite_random_background(const Tensor& rgba, Rng& rng);

/// Duplicates entries (never drops) until the per-bin histogram over the
/// annotation `key` matches the target weights within one entry per bin;
/// deterministic under `seed`. Throws std::invalid_argument when an entry
/// lacks the annotation, an observed bin has no target weight, or a positive-
/// weight target bin has no observed entries.
std::vector<DatasetEntry> rebalance(const std::vector<DatasetEntry>& entries,
                                    const std::string& key,
                                    const std::map<std::string, double>& target_weights,
                                    uint64_t seed);

struct SyntheticConfig {
    int n_identities = 16;
    int views_per_identity = 8;
    int resolution = 64;
    uint64_t seed = 0;
    int min_gaussians = 20;
    int max_gaussians = 60;
    double shell_radius = 0.3;
    PoseDistribution poses;  // parametric by default
};

/// Writes a closed-loop synthetic dataset (dataset.json + RGBA PNGs) whose
/// ground-truth scenes are persisted as PLY under root/scenes/. Re-running
/// with the same seed reproduces dataset.json byte-identically.
void generate_synthetic_dataset(const std::string& root, const SyntheticConfig& cfg);

/// Annotation accessor used by rebalance; "true"/"false" for booleans.
std::optional<std::string> annotation_value(const DatasetEntry& entry, const std::string& key);

}  // namespace cgs
