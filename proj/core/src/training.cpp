#include "cgs/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

namespace cgs {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config plumbing ----------------------------------------------------------

void TrainConfig::validate() const {
    if (views < 1) throw std::invalid_argument("train: views must be >= 1");
    if (batch % views != 0) throw std::invalid_argument("train: batch must divide into views");
    if (batch / views < 1) throw std::invalid_argument("train: empty view batch");
    if (r1_interval < 1) throw std::invalid_argument("train: r1_interval must be >= 1");
    if (contrastive && contrastive_tau <= 0.0)
        throw std::invalid_argument("train: contrastive temperature must be positive");
}

json TrainConfig::to_json() const {
    json j;
    j["preset"] = preset;
    j["resolution"] = resolution;
    j["g_lr"] = g_lr;
    j["d_lr"] = d_lr;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["r1_gamma"] = r1_gamma;
    j["r1_interval"] = r1_interval;
    j["batch"] = batch;
    j["views"] = views;
    j["ema_halflife_images"] = ema_halflife_images;
    j["blur_horizon_images"] = blur_horizon_images;
    j["blur_sigma0"] = blur_sigma0;
    j["lambda_center"] = lambda_center;
    j["lambda_knn"] = lambda_knn;
    j["knn_k"] = knn_k;
    j["center_radius"] = center_radius;
    j["contrastive"] = contrastive;
    j["contrastive_tau"] = contrastive_tau;
    j["lambda_contrastive"] = lambda_contrastive;
    j["multiview_g"] = multiview_g;
    j["seed"] = seed;
    j["total_images"] = total_images;
    j["snapshot_interval_images"] = snapshot_interval_images;
    j["fid_samples"] = fid_samples;
    j["metrics_interval_steps"] = metrics_interval_steps;
    return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.preset = j.value("preset", c.preset);
    c.resolution = j.value("resolution", c.resolution);
    c.g_lr = j.value("g_lr", c.g_lr);
    c.d_lr = j.value("d_lr", c.d_lr);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.r1_gamma = j.value("r1_gamma", c.r1_gamma);
    c.r1_interval = j.value("r1_interval", c.r1_interval);
    c.batch = j.value("batch", c.batch);
    c.views = j.value("views", c.views);
    c.ema_halflife_images = j.value("ema_halflife_images", c.ema_halflife_images);
    c.blur_horizon_images = j.value("blur_horizon_images", c.blur_horizon_images);
    c.blur_sigma0 = j.value("blur_sigma0", c.blur_sigma0);
    c.lambda_center = j.value("lambda_center", c.lambda_center);
    c.lambda_knn = j.value("lambda_knn", c.lambda_knn);
    c.knn_k = j.value("knn_k", c.knn_k);
    c.center_radius = j.value("center_radius", c.center_radius);
    c.contrastive = j.value("contrastive", c.contrastive);
    c.contrastive_tau = j.value("contrastive_tau", c.contrastive_tau);
    c.lambda_contrastive = j.value("lambda_contrastive", c.lambda_contrastive);
    c.multiview_g = j.value("multiview_g", c.multiview_g);
    c.seed = j.value("seed", c.seed);
    c.total_images = j.value("total_images", c.total_images);
    c.snapshot_interval_images = j.value("snapshot_interval_images", c.snapshot_interval_images);
    c.fid_samples = j.value("fid_samples", c.fid_samples);
    c.metrics_interval_steps = j.value("metrics_interval_steps", c.metrics_interval_steps);
    return c;
}

json generator_config_to_json(const GeneratorConfig& c) {
    json j;
    j["z_dim"] = c.z_dim;
    j["w_dim"] = c.w_dim;
    j["base_points"] = c.base_points;
    j["feature_dim"] = c.feature_dim;
    j["attn_heads"] = c.attn_heads;
    j["encode_frequencies"] = c.encode_frequencies;
    j["mapping_layers"] = c.mapping_layers;
    j["mapping_lr_mult"] = c.mapping_lr_mult;
    j["w_avg_decay"] = c.w_avg_decay;
    j["log_scale_min"] = c.log_scale_min;
    j["log_scale_max"] = c.log_scale_max;
    j["upsample_schedule"] = c.upsample_schedule;
    j["offset_scale"] = c.offset_scale;
    j["preset_name"] = c.preset_name;
    return j;
}

GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig c;
    c.z_dim = j.value("z_dim", c.z_dim);
    c.w_dim = j.value("w_dim", c.w_dim);
    c.base_points = j.value("base_points", c.base_points);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.attn_heads = j.value("attn_heads", c.attn_heads);
    c.encode_frequencies = j.value("encode_frequencies", c.encode_frequencies);
    c.mapping_layers = j.value("mapping_layers", c.mapping_layers);
    c.mapping_lr_mult = j.value("mapping_lr_mult", c.mapping_lr_mult);
    c.w_avg_decay = j.value("w_avg_decay", c.w_avg_decay);
    c.log_scale_min = j.value("log_scale_min", c.log_scale_min);
    c.log_scale_max = j.value("log_scale_max", c.log_scale_max);
    c.upsample_schedule = j.value("upsample_schedule", c.upsample_schedule);
    c.offset_scale = j.value("offset_scale", c.offset_scale);
    c.preset_name = j.value("preset_name", c.preset_name);
    return c;
}

json discriminator_config_to_json(const DiscriminatorConfig& c) {
    json j;
    j["resolution"] = c.resolution;
    j["channel_base"] = c.channel_base;
    j["channel_max"] = c.channel_max;
    j["channel_min"] = c.channel_min;
    j["mbstd_group"] = c.mbstd_group;
    j["embed_dim"] = c.embed_dim;
    j["label_dim"] = c.label_dim;
    j["preset_name"] = c.preset_name;
    return j;
}

DiscriminatorConfig discriminator_config_from_json(const json& j) {
    DiscriminatorConfig c;
    c.resolution = j.value("resolution", c.resolution);
    c.channel_base = j.value("channel_base", c.channel_base);
    c.channel_max = j.value("channel_max", c.channel_max);
    c.channel_min = j.value("channel_min", c.channel_min);
    c.mbstd_group = j.value("mbstd_group", c.mbstd_group);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.label_dim = j.value("label_dim", c.label_dim);
    c.preset_name = j.value("preset_name", c.preset_name);
    return c;
}

// ---- helpers -------------------------------------------------------------------

Tensor pack_images(const std::vector<Tensor>& images_hw3) {
    const int64_t b = static_cast<int64_t>(images_hw3.size());
    const int64_t h = images_hw3[0].dim(0), w = images_hw3[0].dim(1);
    Tensor out({b, 3, h, w});
    for (int64_t i = 0; i < b; ++i) {
        const Tensor& img = images_hw3[static_cast<size_t>(i)];
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    out[((i * 3 + c) * h + y) * w + x] = img[(y * w + x) * 3 + c];
    }
    return out;
}

Tensor unpack_image_grad(const Tensor& packed, int64_t index) {
    const int64_t h = packed.dim(2), w = packed.dim(3);
    Tensor out({h, w, 3});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out[(y * w + x) * 3 + c] = packed[((index * 3 + c) * h + y) * w + x];
    return out;
}

std::vector<SceneGrads> split_scene_grads(const SceneGrads& flat,
                                          const std::vector<int64_t>& level_counts) {
    std::vector<SceneGrads> out;
    int64_t at = 0;
    for (int64_t count : level_counts) {
        SceneGrads g(count);
        std::copy_n(flat.positions.data() + at * 3, count * 3, g.positions.data());
        std::copy_n(flat.rotations.data() + at * 4, count * 4, g.rotations.data());
        std::copy_n(flat.log_scales.data() + at * 3, count * 3, g.log_scales.data());
        std::copy_n(flat.colors.data() + at * 3, count * 3, g.colors.data());
        std::copy_n(flat.opacities.data() + at, count, g.opacities.data());
        out.push_back(std::move(g));
        at += count;
    }
    return out;
}

GPassResult generator_pass(Generator& g, Discriminator& d, const Tensor& w,
                           const std::vector<std::vector<ViewSpec>>& views, double view_weight,
                           double blur_sig, const TrainConfig& cfg) {
    const int64_t b = w.dim(0);
    GPassResult res;

    std::vector<LayeredScene> scenes = g.synthesize(w, /*keep_graph=*/true);
    std::vector<GaussianScene> flats;
    flats.reserve(static_cast<size_t>(b));
    for (auto& s : scenes) flats.push_back(flatten_layers(s));
    res.scene_hash_first = scene_hash(flats[0]);

    const auto counts = g.config().level_counts();
    std::vector<SceneGrads> flat_grads;
    for (int64_t i = 0; i < b; ++i) flat_grads.emplace_back(flats[static_cast<size_t>(i)].size());

    double score_sum = 0.0;
    int64_t score_n = 0;
    for (const auto& view_batch : views) {
        // Render, composite over the per-view backgrounds, run the critic.
        std::vector<RenderOutput> renders;
        std::vector<Tensor> images;
        Tensor labels({b, 25});
        for (int64_t i = 0; i < b; ++i) {
            const ViewSpec& vs = view_batch[static_cast<size_t>(i)];
            renders.push_back(render_forward(flats[static_cast<size_t>(i)], vs.camera, vs.bg,
                                             RenderSettings{}, /*record_aux=*/true));
            images.push_back(renders.back().image);
            const CameraLabel lab = vs.camera.label();
            for (int j = 0; j < 25; ++j) labels.at(i, j) = lab[static_cast<size_t>(j)];
        }
        Tensor packed = pack_images(images);
        Tensor blurred = nn::blur_images(packed, blur_sig);
        Tensor scores = d.forward(blurred, labels);
        for (int64_t i = 0; i < b; ++i) score_sum += scores[i];
        score_n += b;

        LossGrad lg = g_loss(scores);
        res.adv_loss += view_weight * lg.loss;
        lg.grad.scale_(view_weight);
        // Critic parameters untouched on the generator step.
        Tensor gimages = d.backward(lg.grad, /*param_scale=*/0.0);
        gimages = nn::blur_images_backward(gimages, blur_sig);
        for (int64_t i = 0; i < b; ++i) {
            Tensor gi = unpack_image_grad(gimages, i);
            const ViewSpec& vs = view_batch[static_cast<size_t>(i)];
            SceneGrads sg = render_backward(gi, renders[static_cast<size_t>(i)],
                                            flats[static_cast<size_t>(i)], vs.camera, vs.bg);
            flat_grads[static_cast<size_t>(i)].accumulate(sg, 1.0);
        }
    }
    res.scene_hash_last = scene_hash(flats[0]);
    res.score_mean = score_n ? score_sum / static_cast<double>(score_n) : 0.0;

    // Scene regularizers (once per scene, not per view).
    std::vector<Tensor> anchor0_grads;
    for (int64_t i = 0; i < b; ++i) {
        ScalarGrad center = center_regularizer(flats[static_cast<size_t>(i)].positions, cfg.center_radius);
        res.center_value += center.value / static_cast<double>(b);
        flat_grads[static_cast<size_t>(i)].positions.add_scaled_(center.grad,
                                                                 cfg.lambda_center / static_cast<double>(b));
        const GaussianScene& anchors0 = scenes[static_cast<size_t>(i)].levels[0].anchors;
        ScalarGrad knn = knn_cluster_regularizer(anchors0.positions, cfg.knn_k);
        res.knn_value += knn.value / static_cast<double>(b);
        knn.grad.scale_(cfg.lambda_knn / static_cast<double>(b));
        anchor0_grads.push_back(std::move(knn.grad));
    }

    // Per-level rendered grads, then one backbone backpropagation.
    std::vector<std::vector<SceneGrads>> per_level(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i)
        per_level[static_cast<size_t>(i)] = split_scene_grads(flat_grads[static_cast<size_t>(i)], counts);
    Tensor grad_w = g.backward(per_level, &anchor0_grads);
    g.mapping_backward(grad_w);
    return res;
}

// ---- trainer --------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, Dataset dataset, std::string run_dir)
    : cfg_(std::move(cfg)), dataset_(std::move(dataset)), run_dir_(std::move(run_dir)) {
    cfg_.validate();
    if (dataset_.size() == 0) throw std::invalid_argument("train: refusing to start on an empty dataset");
    if (static_cast<int64_t>(dataset_.size()) < cfg_.view_batch())
        throw std::invalid_argument("train: dataset smaller than one view batch");
    if (dataset_.width != cfg_.resolution || dataset_.height != cfg_.resolution)
        throw std::invalid_argument("train: dataset resolution does not match config");
    fs::create_directories(run_dir_);

    GeneratorConfig gcfg = GeneratorConfig::preset(cfg_.preset);
    DiscriminatorConfig dcfg = DiscriminatorConfig::preset(cfg_.preset, cfg_.resolution);
    Rng seeder(cfg_.seed);
    g_ = std::make_unique<Generator>(gcfg, seeder.next_u64());
    g_ema_ = std::make_unique<Generator>(gcfg, 1);  // values overwritten below
    g_ema_->copy_values_from(*g_);
    d_ = std::make_unique<Discriminator>(dcfg, seeder.next_u64());

    if (cfg_.contrastive) {
        Rng head_rng(seeder.next_u64());
        pose_image_head_ = std::make_unique<nn::Linear>("d.pose_image", dcfg.embed_dim, 64,
                                                        head_rng, 1.0);
        pose_camera_head_ = std::make_unique<nn::Linear>("d.pose_camera", 25, 64, head_rng, 1.0);
    }

    opt_g_ = std::make_unique<Adam>(g_->params(),
                                    AdamConfig{cfg_.g_lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps});
    nn::ParamRefs d_params = d_->params();
    if (pose_image_head_) {
        pose_image_head_->collect(d_params);
        pose_camera_head_->collect(d_params);
    }
    opt_d_ = std::make_unique<Adam>(d_params,
                                    AdamConfig{cfg_.d_lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps});

    latent_rng_ = Rng(cfg_.seed ^ 0x11aabbULL);
    camera_rng_ = Rng(cfg_.seed ^ 0x22ccddULL);
    bg_rng_ = Rng(cfg_.seed ^ 0x33eeffULL);
    data_rng_ = Rng(cfg_.seed ^ 0x449911ULL);
    poses_ = PoseDistribution::empirical(dataset_.labels());
    image_cache_.assign(dataset_.size(), std::nullopt);
}

Tensor Trainer::sample_latents(int64_t n) {
    Tensor z({n, g_->config().z_dim});
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = latent_rng_.normal();
    return z;
}

std::vector<std::vector<size_t>> Trainer::sample_real_indices() {
    const int vb = cfg_.view_batch();
    std::vector<std::vector<size_t>> out;
    for (int v = 0; v < cfg_.views; ++v) {
        // Partial Fisher-Yates: vb distinct indices per view batch.
        std::vector<size_t> pool(dataset_.size());
        for (size_t i = 0; i < pool.size(); ++i) pool[i] = i;
        std::vector<size_t> picks;
        for (int i = 0; i < vb; ++i) {
            const size_t j = static_cast<size_t>(i) +
                             static_cast<size_t>(data_rng_.uniform_int(
                                 static_cast<int64_t>(pool.size() - static_cast<size_t>(i))));
            std::swap(pool[static_cast<size_t>(i)], pool[j]);
            picks.push_back(pool[static_cast<size_t>(i)]);
        }
        std::set<size_t> uniq(picks.begin(), picks.end());
        if (uniq.size() != picks.size())
            throw CollationViolation("identity repeated within a real view batch");
        out.push_back(std::move(picks));
    }
    return out;
}

Tensor Trainer::load_real_batch(const std::vector<size_t>& indices,
                                std::vector<CameraLabel>& labels) {
    std::vector<Tensor> images;
    labels.clear();
    for (size_t idx : indices) {
        if (!image_cache_[idx]) image_cache_[idx] = dataset_.load_rgba(idx);
        images.push_back(composite_random_background(*image_cache_[idx], bg_rng_));
        labels.push_back(dataset_.entries[idx].label);
    }
    return pack_images(images);
}

void Trainer::check_finite(double value, const char* what) {
    if (std::isfinite(value)) return;
    json diag;
    diag["diverged_at_step"] = step_;
    diag["images_seen"] = images_seen_;
    diag["term"] = what;
    save_checkpoint("diverged.ckpt");
    std::ofstream(fs::path(run_dir_) / "diverged.json") << diag.dump(1) << "\n";
    throw TrainingDiverged(std::string("non-finite ") + what + " at step " +
                           std::to_string(step_));
}

void Trainer::d_step(double blur_sig) {
    const int64_t vb = cfg_.view_batch();
    opt_d_->zero_grad();

    // Fake view batches come from scenes synthesized once per step; the
    // generator graph is not retained (no G grads on the D step).
    Tensor z = sample_latents(vb);
    Tensor w = g_->map_latent(z, false);
    std::vector<LayeredScene> scenes = g_->synthesize(w, false);
    std::vector<GaussianScene> flats;
    for (auto& s : scenes) flats.push_back(flatten_layers(s));

    double loss_total = 0.0;
    double score_fake_sum = 0.0, score_real_sum = 0.0;
    const double inv_views = 1.0 / static_cast<double>(cfg_.views);

    for (int v = 0; v < cfg_.views; ++v) {
        std::vector<Tensor> images;
        Tensor labels({vb, 25});
        for (int64_t i = 0; i < vb; ++i) {
            Camera cam = sample_camera_pose(camera_rng_, poses_, cfg_.resolution, cfg_.resolution);
            const Vec3 bg = {bg_rng_.uniform(), bg_rng_.uniform(), bg_rng_.uniform()};
            images.push_back(render_forward(flats[static_cast<size_t>(i)], cam, bg).image);
            const CameraLabel lab = cam.label();
            for (int j = 0; j < 25; ++j) labels.at(i, j) = lab[static_cast<size_t>(j)];
        }
        Tensor packed = nn::blur_images(pack_images(images), blur_sig);
        Tensor scores = d_->forward(packed, labels);
        for (int64_t i = 0; i < vb; ++i) score_fake_sum += scores[i];
        LossGrad lf = d_loss_fake(scores);
        loss_total += inv_views * lf.loss;
        lf.grad.scale_(inv_views);
        d_->backward(lf.grad, 1.0);
    }

    const auto real_indices = sample_real_indices();
    const bool do_r1 = (step_ % cfg_.r1_interval) == 0 && cfg_.r1_gamma > 0.0;
    double r1_value = 0.0;
    for (int v = 0; v < cfg_.views; ++v) {
        std::vector<CameraLabel> labels_vec;
        Tensor reals = load_real_batch(real_indices[static_cast<size_t>(v)], labels_vec);
        Tensor labels({vb, 25});
        for (int64_t i = 0; i < vb; ++i)
            for (int j = 0; j < 25; ++j) labels.at(i, j) = labels_vec[static_cast<size_t>(i)][static_cast<size_t>(j)];
        Tensor blurred = nn::blur_images(reals, blur_sig);
        Tensor scores = d_->forward(blurred, labels);
        for (int64_t i = 0; i < vb; ++i) score_real_sum += scores[i];
        LossGrad lr = d_loss_real(scores);
        loss_total += inv_views * lr.loss;
        lr.grad.scale_(inv_views);

        if (pose_image_head_) {
            // GSGAN-style pose loss on real pairs (ablation).
            Tensor phi = d_->features();
            Tensor p_img = pose_image_head_->forward(phi);
            Tensor p_cam = pose_camera_head_->forward(labels);
            ContrastiveResult cres = contrastive_pose_loss(p_img, p_cam, cfg_.contrastive_tau);
            loss_total += inv_views * cfg_.lambda_contrastive * cres.loss;
            cres.grad_image_emb.scale_(inv_views * cfg_.lambda_contrastive);
            cres.grad_camera_emb.scale_(inv_views * cfg_.lambda_contrastive);
            Tensor gphi = pose_image_head_->backward(cres.grad_image_emb, 1.0);
            pose_camera_head_->backward(cres.grad_camera_emb, 1.0);
            d_->backward(lr.grad, 1.0, &gphi);
        } else {
            d_->backward(lr.grad, 1.0);
        }

        if (do_r1) {
            R1Result r1 = r1_penalty(*d_, blurred, labels, cfg_.r1_gamma);
            r1_value += inv_views * r1.penalty;
            // Parameter gradient via central-difference HVP on the summed
            // scores: grad_theta penalty = (gamma/B) * d/de grad_theta S(x+e g).
            const double gmax = r1.input_grads.abs_max();
            if (gmax > 0.0) {
                const double eps = 1e-4 / gmax;
                const double scale = cfg_.r1_gamma / static_cast<double>(vb) *
                                     static_cast<double>(cfg_.r1_interval) * inv_views /
                                     (2.0 * eps);
                Tensor ones({vb});
                ones.fill(1.0);
                Tensor shifted = blurred;
                shifted.add_scaled_(r1.input_grads, eps);
                d_->forward(shifted, labels);
                d_->backward(ones, scale);
                shifted = blurred;
                shifted.add_scaled_(r1.input_grads, -eps);
                d_->forward(shifted, labels);
                d_->backward(ones, -scale);
            }
        }
    }
    loss_total += r1_value * static_cast<double>(cfg_.r1_interval);
    check_finite(loss_total, "d_loss");
    opt_d_->step();

    stats_.d_loss = loss_total;
    stats_.r1 = r1_value;
    stats_.score_fake = score_fake_sum / static_cast<double>(vb * cfg_.views);
    stats_.score_real = score_real_sum / static_cast<double>(vb * cfg_.views);
}

void Trainer::g_step(double blur_sig) {
    const int64_t vb = cfg_.view_batch();
    const int g_views = cfg_.multiview_g ? cfg_.views : 1;
    opt_g_->zero_grad();

    Tensor z = sample_latents(vb);
    Tensor w = g_->map_latent(z, /*training=*/true);

    std::vector<std::vector<ViewSpec>> views(static_cast<size_t>(g_views));
    for (auto& view_batch : views) {
        view_batch.resize(static_cast<size_t>(vb));
        for (int64_t i = 0; i < vb; ++i) {
            view_batch[static_cast<size_t>(i)].camera =
                sample_camera_pose(camera_rng_, poses_, cfg_.resolution, cfg_.resolution);
            view_batch[static_cast<size_t>(i)].bg = {bg_rng_.uniform(), bg_rng_.uniform(),
                                                     bg_rng_.uniform()};
        }
    }

    GPassResult res = generator_pass(*g_, *d_, w, views, 1.0 / static_cast<double>(g_views),
                                     blur_sig, cfg_);
    if (res.scene_hash_first != res.scene_hash_last)
        throw std::logic_error("scene persistence violated: hash changed across views");
    const double total = res.adv_loss + cfg_.lambda_center * res.center_value +
                         cfg_.lambda_knn * res.knn_value;
    check_finite(total, "g_loss");
    opt_g_->step();

    stats_.g_loss = res.adv_loss;
    stats_.center = res.center_value;
    stats_.knn = res.knn_value;
}

void Trainer::step() {
    const double sig = nn::blur_sigma(images_seen_, cfg_.blur_horizon_images, cfg_.blur_sigma0);
    stats_.sigma_blur = sig;
    d_step(sig);
    g_step(sig);
    ema_update(g_ema_->params(), g_->params(), ema_beta(cfg_.batch, cfg_.ema_halflife_images));
    g_ema_->mapping().w_avg = g_->mapping().w_avg;
    ++step_;
    images_seen_ += cfg_.batch;
}

double Trainer::eval_desk_fid() {
    RandConvExtractor extractor;
    FidOptions opts;
    opts.n_samples = cfg_.fid_samples;
    opts.seed = cfg_.seed ^ 0x77aa55ULL;
    return compute_fid(*g_ema_, dataset_, extractor, opts).value;
}

void Trainer::write_metrics_row(std::optional<double> fid) {
    json row;
    row["step"] = step_;
    row["images_seen"] = images_seen_;
    row["d_loss"] = stats_.d_loss;
    row["g_loss"] = stats_.g_loss;
    row["r1"] = stats_.r1;
    row["sigma_blur"] = stats_.sigma_blur;
    row["score_real"] = stats_.score_real;
    row["score_fake"] = stats_.score_fake;
    row["center"] = stats_.center;
    row["knn"] = stats_.knn;
    if (fid) row["fid"] = *fid;
    std::ofstream out(fs::path(run_dir_) / "metrics.jsonl", std::ios::app);
    out << row.dump() << "\n";
}

void Trainer::save_checkpoint(const std::string& name) const {
    Checkpoint ck;
    ck.meta["kind"] = "cgs-train";
    ck.meta["train_config"] = cfg_.to_json();
    ck.meta["generator_config"] = generator_config_to_json(g_->config());
    ck.meta["discriminator_config"] = discriminator_config_to_json(d_->config());
    ck.meta["step"] = step_;
    ck.meta["images_seen"] = images_seen_;
    ck.meta["best_fid"] = best_fid_;
    ck.meta["step0_fid"] = step0_fid_;
    ck.meta["rng"] = {{"latent", latent_rng_.serialize()},
                      {"camera", camera_rng_.serialize()},
                      {"bg", bg_rng_.serialize()},
                      {"data", data_rng_.serialize()}};
    ck.meta["adam_g_steps"] = opt_g_->steps_taken();
    ck.meta["adam_d_steps"] = opt_d_->steps_taken();

    for (nn::Param* p : const_cast<Generator&>(*g_).params()) ck.tensors[p->name] = p->value;
    for (nn::Param* p : const_cast<Generator&>(*g_ema_).params())
        ck.tensors["ema." + p->name] = p->value;
    for (nn::Param* p : const_cast<Discriminator&>(*d_).params()) ck.tensors[p->name] = p->value;
    if (pose_image_head_) {
        nn::ParamRefs heads;
        pose_image_head_->collect(heads);
        pose_camera_head_->collect(heads);
        for (nn::Param* p : heads) ck.tensors[p->name] = p->value;
    }
    ck.tensors["g.w_avg"] = g_->mapping().w_avg;
    for (const auto& [name, t] : opt_g_->state()) ck.tensors["optg." + name] = t;
    for (const auto& [name, t] : opt_d_->state()) ck.tensors["optd." + name] = t;

    ck.save((fs::path(run_dir_) / name).string());
}

void Trainer::load_checkpoint(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    step_ = ck.meta.at("step").get<int64_t>();
    images_seen_ = ck.meta.at("images_seen").get<int64_t>();
    best_fid_ = ck.meta.value("best_fid", -1.0);
    step0_fid_ = ck.meta.value("step0_fid", -1.0);
    latent_rng_.deserialize(ck.meta.at("rng").at("latent").get<std::string>());
    camera_rng_.deserialize(ck.meta.at("rng").at("camera").get<std::string>());
    bg_rng_.deserialize(ck.meta.at("rng").at("bg").get<std::string>());
    data_rng_.deserialize(ck.meta.at("rng").at("data").get<std::string>());

    for (nn::Param* p : g_->params()) p->value = ck.get(p->name);
    for (nn::Param* p : g_ema_->params()) p->value = ck.get("ema." + p->name);
    for (nn::Param* p : d_->params()) p->value = ck.get(p->name);
    if (pose_image_head_) {
        nn::ParamRefs heads;
        pose_image_head_->collect(heads);
        pose_camera_head_->collect(heads);
        for (nn::Param* p : heads)
            if (ck.has(p->name)) p->value = ck.get(p->name);
    }
    g_->mapping().w_avg = ck.get("g.w_avg");
    g_ema_->mapping().w_avg = ck.get("g.w_avg");

    std::map<std::string, Tensor> sg, sd;
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("optg.", 0) == 0) sg[name.substr(5)] = t;
        if (name.rfind("optd.", 0) == 0) sd[name.substr(5)] = t;
    }
    opt_g_->load_state(sg, ck.meta.value("adam_g_steps", step_));
    opt_d_->load_state(sd, ck.meta.value("adam_d_steps", step_));
}

bool Trainer::resume_from_latest() {
    const fs::path latest = fs::path(run_dir_) / "latest.ckpt";
    if (!fs::exists(latest)) return false;
    load_checkpoint(latest.string());
    return true;
}

void Trainer::train() {
    if (step0_fid_ < 0.0) {
        step0_fid_ = eval_desk_fid();
        write_metrics_row(step0_fid_);
        save_checkpoint("latest.ckpt");
    }
    int64_t next_snapshot = ((images_seen_ / cfg_.snapshot_interval_images) + 1) *
                            cfg_.snapshot_interval_images;
    while (images_seen_ < cfg_.total_images) {
        step();
        const bool metrics_due = (step_ % cfg_.metrics_interval_steps) == 0;
        if (images_seen_ >= next_snapshot || images_seen_ >= cfg_.total_images) {
            const double fid = eval_desk_fid();
            if (best_fid_ < 0.0 || fid < best_fid_) {
                best_fid_ = fid;
                save_checkpoint("best.ckpt");
            }
            save_checkpoint("latest.ckpt");
            write_metrics_row(fid);
            next_snapshot += cfg_.snapshot_interval_images;
        } else if (metrics_due) {
            write_metrics_row(std::nullopt);
        }
    }
    save_checkpoint("latest.ckpt");
}

Generator load_ema_generator(const Checkpoint& ck) {
    GeneratorConfig gcfg = generator_config_from_json(ck.meta.at("generator_config"));
    Generator g(gcfg, 1);
    for (nn::Param* p : g.params()) p->value = ck.get("ema." + p->name);
    g.mapping().w_avg = ck.get("g.w_avg");
    return g;
}

Generator load_ema_generator(const std::string& ckpt_path) {
    return load_ema_generator(Checkpoint::load(ckpt_path));
}

}  // namespace cgs
