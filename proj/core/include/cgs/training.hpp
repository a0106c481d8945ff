#pragma once

#include <json.hpp>

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cgs/checkpoint.hpp"
#include "cgs/dataset.hpp"
#include "cgs/discriminator.hpp"
#include "cgs/generator.hpp"
#include "cgs/losses.hpp"
#include "cgs/metrics.hpp"
#include "cgs/optim.hpp"

namespace cgs {

struct TrainConfig {
    std::string preset = "desk";
    int resolution = 64;
    double g_lr = 0.0025;
    double d_lr = 0.002;
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-8;
    double r1_gamma = 1.0;
    int r1_interval = 16;          // lazy R1, penalty scaled by the interval
    int batch = 32;                // collated as views x view_batch
    int views = 4;                 // V
    double ema_halflife_images = 500000.0;
    int64_t blur_horizon_images = 200000;
    double blur_sigma0 = 10.0;
    double lambda_center = 1.0;
    double lambda_knn = 1.0;
    int knn_k = 3;
    double center_radius = 0.45;
    bool contrastive = false;      // GSGAN-style pose loss (ablation)
    double contrastive_tau = 0.1;
    double lambda_contrastive = 1.0;
    bool multiview_g = true;       // V views on the G step as well as D
    uint64_t seed = 0;
    int64_t total_images = 200000;
    int64_t snapshot_interval_images = 20000;  // checkpoint + tracked FID cadence
    int64_t fid_samples = 2048;
    int64_t metrics_interval_steps = 10;

    int view_batch() const { return batch / views; }
    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

nlohmann::json generator_config_to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json discriminator_config_to_json(const DiscriminatorConfig& cfg);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

/// Thrown when a loss goes non-finite; a diagnostic snapshot has been written.
struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when the batch-collation contract is violated (an identity repeated
/// within one discriminator batch).
struct CollationViolation : std::logic_error {
    explicit CollationViolation(const std::string& what) : std::logic_error(what) {}
};

struct ViewSpec {
    Camera camera;
    Vec3 bg{};
};

// Image packing helpers shared by the trainer, metrics and tests.
Tensor pack_images(const std::vector<Tensor>& images_hw3);          // [B,3,H,W]
Tensor unpack_image_grad(const Tensor& packed, int64_t index);      // [H,W,3]

/// Splits flattened-scene gradients back into per-level rendered gradients.
std::vector<SceneGrads> split_scene_grads(const SceneGrads& flat,
                                          const std::vector<int64_t>& level_counts);

struct GPassResult {
    double adv_loss = 0.0;
    double center_value = 0.0;
    double knn_value = 0.0;
    double score_mean = 0.0;
    uint64_t scene_hash_first = 0;  // hash of sample-0 scene before/after renders
    uint64_t scene_hash_last = 0;
};

/// Full generator pass: synthesize ONCE per style row, render every view with
/// its own camera/background, evaluate the critic per view-batch with loss
/// weight view_weight, add scene regularizers, and accumulate generator
/// parameter gradients (critic parameters untouched). The per-view gradients
/// are averaged before the single backbone backpropagation, so the result
/// equals the mean of independently computed per-view gradients.
GPassResult generator_pass(Generator& g, Discriminator& d, const Tensor& w,
                           const std::vector<std::vector<ViewSpec>>& views, double view_weight,
                           double blur_sig, const TrainConfig& cfg);

/// Adversarial training driver: alternating D/G steps, lazy R1, warm-up blur,
/// EMA tracking, desk-FID checkpoint selection, resumable checkpoints,
/// append-only metrics rows.
class Trainer {
public:
    Trainer(TrainConfig cfg, Dataset dataset, std::string run_dir);

    /// Loads run_dir/latest.ckpt when present; returns whether it resumed.
    bool resume_from_latest();

    /// Runs until total_images; writes latest/best checkpoints and metrics.
    void train();

    /// One D+G cycle (exposed for smoke and contract tests).
    void step();

    /// Real-batch collation sampler: per view, view_batch distinct dataset
    /// indices. Verifies the uniqueness contract.
    std::vector<std::vector<size_t>> sample_real_indices();

    double eval_desk_fid();
    void save_checkpoint(const std::string& name) const;
    void load_checkpoint(const std::string& path);

    struct StepStats {
        double d_loss = 0.0, g_loss = 0.0, r1 = 0.0, sigma_blur = 0.0;
        double score_real = 0.0, score_fake = 0.0;
        double center = 0.0, knn = 0.0;
    };

    int64_t images_seen() const { return images_seen_; }
    int64_t step_count() const { return step_; }
    const StepStats& last_stats() const { return stats_; }
    const TrainConfig& config() const { return cfg_; }
    Generator& generator() { return *g_; }
    Generator& ema_generator() { return *g_ema_; }
    Discriminator& discriminator() { return *d_; }
    double best_fid() const { return best_fid_; }
    double step0_fid() const { return step0_fid_; }

private:
    void d_step(double blur_sig);
    void g_step(double blur_sig);
    void write_metrics_row(std::optional<double> fid);
    Tensor load_real_batch(const std::vector<size_t>& indices, std::vector<CameraLabel>& labels);
    Tensor sample_latents(int64_t n);
    void check_finite(double value, const char* what);

    TrainConfig cfg_;
    Dataset dataset_;
    std::string run_dir_;
    PoseDistribution poses_;

    std::unique_ptr<Generator> g_, g_ema_;
    std::unique_ptr<Discriminator> d_;
    std::unique_ptr<Adam> opt_g_, opt_d_;
    // Contrastive ablation heads (created only when enabled).
    std::unique_ptr<nn::Linear> pose_image_head_, pose_camera_head_;

    Rng latent_rng_, camera_rng_, bg_rng_, data_rng_;
    int64_t images_seen_ = 0;
    int64_t step_ = 0;
    double best_fid_ = -1.0;
    double step0_fid_ = -1.0;
    StepStats stats_;
    std::vector<std::optional<Tensor>> image_cache_;
};

/// Rebuilds the EMA generator (and its config) from a checkpoint for the
/// generation/eval/export commands.
Generator load_ema_generator(const std::string& ckpt_path);
Generator load_ema_generator(const Checkpoint& ck);

}  // namespace cgs
