#include "cgs/generator.hpp"

#include <cmath>
#include <stdexcept>

namespace cgs {

// ---- config -----------------------------------------------------------------

GeneratorConfig GeneratorConfig::preset(const std::string& name) {
    GeneratorConfig cfg;
    cfg.preset_name = name;
    if (name == "desk") {
        cfg.upsample_schedule = {4, 4};
        cfg.feature_dim = 64;
    } else if (name == "paper-256") {
        cfg.upsample_schedule = {4, 4, 4, 2};
    } else if (name == "paper-512") {
        cfg.upsample_schedule = {4, 4, 4, 2, 2};
    } else if (name == "paper-1024") {
        cfg.upsample_schedule = {4, 4, 4, 2, 2, 2};
    } else if (name == "paper-2048") {
        cfg.upsample_schedule = {4, 4, 4, 2, 2, 2, 2};
    } else {
        throw std::invalid_argument("GeneratorConfig: unknown preset " + name);
    }
    return cfg;
}

std::vector<int64_t> GeneratorConfig::level_counts() const {
    std::vector<int64_t> counts{base_points};
    for (int f : upsample_schedule) counts.push_back(counts.back() * f);
    return counts;
}

int64_t GeneratorConfig::total_primitives() const {
    int64_t total = 0;
    for (int64_t c : level_counts()) total += c;
    return total;
}

double GeneratorConfig::offset_scale_at(int level) const {
    if (level <= 0) return 1.0;
    if (static_cast<size_t>(level) < offset_scale.size()) return offset_scale[static_cast<size_t>(level)];
    return 0.25 * std::pow(0.5, level);
}

void GeneratorConfig::validate() const {
    if (base_points < 1 || feature_dim < 1) throw std::invalid_argument("generator: bad dims");
    if (feature_dim % attn_heads != 0)
        throw std::invalid_argument("generator: feature_dim must divide into heads");
    for (int f : upsample_schedule)
        if (f != 2 && f != 4)
            throw std::invalid_argument("generator: upsample factors must be 2 or 4");
    if (!offset_scale.empty() && offset_scale.size() != static_cast<size_t>(levels()))
        throw std::invalid_argument("generator: offset_scale size must match levels");
}

Tensor truncate_styles(const Tensor& w, const Tensor& w_avg, double psi) {
    Tensor out = w;
    const int64_t wd = w.dim(-1);
    const int64_t rows = w.numel() / wd;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < wd; ++j)
            out[r * wd + j] = w_avg[j] + psi * (w[r * wd + j] - w_avg[j]);
    return out;
}

// ---- mapping ------------------------------------------------------------------

MappingNetwork::MappingNetwork(const GeneratorConfig& cfg, Rng& rng)
    : w_avg_decay(cfg.w_avg_decay) {
    w_avg = Tensor({cfg.w_dim});
    int64_t in = cfg.z_dim;
    for (int64_t i = 0; i < cfg.mapping_layers; ++i) {
        layers_.emplace_back("g.map.fc" + std::to_string(i), in, cfg.w_dim, rng, std::sqrt(2.0),
                             cfg.mapping_lr_mult);
        acts_.emplace_back(0.2);
        in = cfg.w_dim;
    }
}

Tensor MappingNetwork::forward(const Tensor& z, bool update_w_avg) {
    Tensor h = z;
    for (size_t i = 0; i < layers_.size(); ++i) h = acts_[i].forward(layers_[i].forward(h));
    if (update_w_avg) {
        const int64_t b = h.dim(0), wd = h.dim(1);
        for (int64_t j = 0; j < wd; ++j) {
            double mean = 0.0;
            for (int64_t r = 0; r < b; ++r) mean += h.at(r, j);
            mean /= static_cast<double>(b);
            w_avg[j] = w_avg_decay * w_avg[j] + (1.0 - w_avg_decay) * mean;
        }
    }
    return h;
}

Tensor MappingNetwork::backward(const Tensor& grad_w, double param_scale) {
    Tensor g = grad_w;
    for (size_t i = layers_.size(); i-- > 0;)
        g = layers_[i].backward(acts_[i].backward(g), param_scale);
    return g;
}

void MappingNetwork::collect(nn::ParamRefs& out) {
    for (auto& l : layers_) l.collect(out);
}

// ---- adaptive block --------------------------------------------------------------

AdaptiveBlock::AdaptiveBlock(const std::string& name, const GeneratorConfig& cfg, Rng& rng) {
    adain = nn::AdaIN(name + ".adain", cfg.feature_dim, cfg.w_dim, rng);
    attn = nn::SelfAttention(name + ".attn", cfg.feature_dim, cfg.attn_heads, rng);
    mlp_fc1 = nn::Linear(name + ".mlp.fc1", cfg.feature_dim, 2 * cfg.feature_dim, rng, std::sqrt(2.0));
    mlp_fc2 = nn::Linear(name + ".mlp.fc2", 2 * cfg.feature_dim, cfg.feature_dim, rng, 1.0);
}

Tensor AdaptiveBlock::forward(const Tensor& x, const Tensor& w) {
    Tensor x1 = adain.forward(x, w);
    Tensor x2 = attn.forward(x1);
    x2.add_(x1);
    Tensor x3 = mlp_fc2.forward(act_.forward(mlp_fc1.forward(x2)));
    x3.add_(x2);
    return x3;
}

Tensor AdaptiveBlock::backward(const Tensor& grad_y, Tensor& grad_w, double param_scale) {
    Tensor g2 = mlp_fc1.backward(act_.backward(mlp_fc2.backward(grad_y, param_scale)), param_scale);
    g2.add_(grad_y);
    Tensor g1 = attn.backward(g2, param_scale);
    g1.add_(g2);
    return adain.backward(g1, grad_w, param_scale);
}

void AdaptiveBlock::collect(nn::ParamRefs& out) {
    adain.collect(out);
    attn.collect(out);
    mlp_fc1.collect(out);
    mlp_fc2.collect(out);
}

// ---- decode helpers ----------------------------------------------------------------

double weak_tanh(double x) { return 20.0 * std::tanh(x / 20.0); }

double weak_tanh_derivative(double x) {
    const double t = std::tanh(x / 20.0);
    return 1.0 - t * t;
}

namespace {
constexpr double kOpacityLo = 1e-4;
constexpr double kOpacityHi = 1.0 - 1e-4;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

// ---- generator -----------------------------------------------------------------------

Generator::Generator(GeneratorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t p = cfg_.base_points;
    const int64_t d = cfg_.feature_dim;
    const int64_t enc_width = 3 + 6 * cfg_.encode_frequencies;

    const_points_.init_shape("g.const_points", {p, 3});
    nn::init_normal(const_points_.value, rng, 0.15);  // inside the scene cube

    posenc_linear_ = nn::Linear("g.posenc", enc_width, d, rng, 1.0);
    mapping_ = MappingNetwork(cfg_, rng);

    const int levels = cfg_.levels();
    for (int k = 0; k < levels; ++k)
        blocks_.emplace_back("g.block" + std::to_string(k), cfg_, rng);
    upchains_.resize(static_cast<size_t>(levels));
    for (int k = 1; k < levels; ++k)
        for (int j = 1; j <= k; ++j)
            upchains_[static_cast<size_t>(k)].emplace_back(
                "g.level" + std::to_string(k) + ".up" + std::to_string(j - 1), d,
                cfg_.upsample_schedule[static_cast<size_t>(j - 1)], rng);
    for (int k = 0; k < levels; ++k) {
        heads_rendered_.emplace_back("g.level" + std::to_string(k) + ".to_gauss", d, 14, rng, 1.0);
        heads_anchor_.emplace_back("g.level" + std::to_string(k) + ".to_anchor", d, 14, rng, 1.0);
    }
}

Tensor Generator::map_latent(const Tensor& z, bool training) {
    return mapping_.forward(z, training);
}

Tensor Generator::truncate(const Tensor& w, double psi) const {
    return truncate_styles(w, mapping_.w_avg, psi);
}

Tensor Generator::encode_points(bool keep_graph) {
    const int64_t p = cfg_.base_points;
    const int64_t freqs = cfg_.encode_frequencies;
    const int64_t width = 3 + 6 * freqs;
    Tensor raw({p, width});
    for (int64_t i = 0; i < p; ++i) {
        for (int j = 0; j < 3; ++j) {
            const double v = const_points_.value.at(i, j);
            raw.at(i, j) = v;
            for (int64_t k = 0; k < freqs; ++k) {
                const double arg = std::pow(2.0, static_cast<double>(k)) * M_PI * v;
                raw.at(i, 3 + 6 * k + j) = std::sin(arg);
                raw.at(i, 3 + 6 * k + 3 + j) = std::cos(arg);
            }
        }
    }
    if (keep_graph) cached_enc_raw_ = raw;
    return posenc_linear_.forward(raw);
}

Tensor Generator::encode_backward(const Tensor& grad_enc) {
    Tensor graw = posenc_linear_.backward(grad_enc);
    const int64_t p = cfg_.base_points;
    const int64_t freqs = cfg_.encode_frequencies;
    Tensor gpoints({p, 3});
    for (int64_t i = 0; i < p; ++i)
        for (int j = 0; j < 3; ++j) {
            const double v = const_points_.value.at(i, j);
            double g = graw.at(i, j);
            for (int64_t k = 0; k < freqs; ++k) {
                const double f = std::pow(2.0, static_cast<double>(k)) * M_PI;
                g += graw.at(i, 3 + 6 * k + j) * f * std::cos(f * v);
                g += graw.at(i, 3 + 6 * k + 3 + j) * (-f) * std::sin(f * v);
            }
            gpoints.at(i, j) = g;
        }
    return gpoints;
}

DecodedLocal Generator::decode_attributes(nn::Linear& head, const Tensor& u, bool keep_graph) {
    (void)keep_graph;
    DecodedLocal dec;
    dec.raw = head.forward(u);  // [B, P, 14]
    const int64_t b = dec.raw.dim(0), p = dec.raw.dim(1);
    const double smin = cfg_.log_scale_min, smax = cfg_.log_scale_max;
    dec.scenes.reserve(static_cast<size_t>(b));
    for (int64_t bb = 0; bb < b; ++bb) {
        GaussianScene s(p);
        for (int64_t pp = 0; pp < p; ++pp) {
            const double* r = dec.raw.data() + (bb * p + pp) * 14;
            double y[14];
            for (int j = 0; j < 14; ++j) y[j] = weak_tanh(r[j]);
            const Vec3 pos = {0.5 * std::tanh(y[0]), 0.5 * std::tanh(y[1]), 0.5 * std::tanh(y[2])};
            const Vec3 col = {0.5 * (std::tanh(y[3]) + 1.0), 0.5 * (std::tanh(y[4]) + 1.0),
                              0.5 * (std::tanh(y[5]) + 1.0)};
            const Vec3 ls = {smin + (smax - smin) * 0.5 * (std::tanh(y[6]) + 1.0),
                             smin + (smax - smin) * 0.5 * (std::tanh(y[7]) + 1.0),
                             smin + (smax - smin) * 0.5 * (std::tanh(y[8]) + 1.0)};
            const Quat q = quaternion_normalize({y[9], y[10], y[11], y[12]});
            const double op = std::clamp(sigmoid(y[13]), kOpacityLo, kOpacityHi);
            s.set_primitive(pp, pos, q, ls, col, op);
        }
        dec.scenes.push_back(std::move(s));
    }
    return dec;
}

Tensor Generator::decode_backward(const DecodedLocal& dec,
                                  const std::vector<SceneGrads>& scene_grads) const {
    const int64_t b = dec.raw.dim(0), p = dec.raw.dim(1);
    const double smin = cfg_.log_scale_min, smax = cfg_.log_scale_max;
    Tensor graw({b, p, 14});
    for (int64_t bb = 0; bb < b; ++bb) {
        const SceneGrads& sg = scene_grads[static_cast<size_t>(bb)];
        for (int64_t pp = 0; pp < p; ++pp) {
            const double* r = dec.raw.data() + (bb * p + pp) * 14;
            double* g = graw.data() + (bb * p + pp) * 14;
            double y[14], wt[14];
            for (int j = 0; j < 14; ++j) {
                y[j] = weak_tanh(r[j]);
                wt[j] = weak_tanh_derivative(r[j]);
            }
            for (int j = 0; j < 3; ++j) {
                const double t = std::tanh(y[j]);
                g[j] = sg.positions.at(pp, j) * 0.5 * (1.0 - t * t) * wt[j];
            }
            for (int j = 0; j < 3; ++j) {
                const double t = std::tanh(y[3 + j]);
                g[3 + j] = sg.colors.at(pp, j) * 0.5 * (1.0 - t * t) * wt[3 + j];
            }
            for (int j = 0; j < 3; ++j) {
                const double t = std::tanh(y[6 + j]);
                g[6 + j] = sg.log_scales.at(pp, j) * (smax - smin) * 0.5 * (1.0 - t * t) * wt[6 + j];
            }
            {
                const Quat y_quat = {y[9], y[10], y[11], y[12]};
                const double norm = std::sqrt(y_quat[0] * y_quat[0] + y_quat[1] * y_quat[1] +
                                              y_quat[2] * y_quat[2] + y_quat[3] * y_quat[3]);
                if (norm < 1e-12) {
                    g[9] = g[10] = g[11] = g[12] = 0.0;  // identity fallback, no gradient
                } else {
                    const Quat gq = {sg.rotations.at(pp, 0), sg.rotations.at(pp, 1),
                                     sg.rotations.at(pp, 2), sg.rotations.at(pp, 3)};
                    Quat qn = {y_quat[0] / norm, y_quat[1] / norm, y_quat[2] / norm,
                               y_quat[3] / norm};
                    double dot = 0.0;
                    for (int j = 0; j < 4; ++j) dot += qn[static_cast<size_t>(j)] * gq[static_cast<size_t>(j)];
                    for (int j = 0; j < 4; ++j)
                        g[9 + j] = (gq[static_cast<size_t>(j)] - dot * qn[static_cast<size_t>(j)]) / norm * wt[9 + j];
                }
            }
            {
                const double s = sigmoid(y[13]);
                g[13] = (s > kOpacityLo && s < kOpacityHi)
                            ? sg.opacities.at(pp) * s * (1.0 - s) * wt[13]
                            : 0.0;
            }
        }
    }
    return graw;
}

namespace {

// Adjoint of the Hamilton product prod = a*b.
void quat_product_backward(const Quat& a, const Quat& b, const Quat& g, Quat& ga, Quat& gb) {
    ga[0] += g[0] * b[0] + g[1] * b[1] + g[2] * b[2] + g[3] * b[3];
    ga[1] += -g[0] * b[1] + g[1] * b[0] - g[2] * b[3] + g[3] * b[2];
    ga[2] += -g[0] * b[2] + g[1] * b[3] + g[2] * b[0] - g[3] * b[1];
    ga[3] += -g[0] * b[3] - g[1] * b[2] + g[2] * b[1] + g[3] * b[0];
    gb[0] += g[0] * a[0] + g[1] * a[1] + g[2] * a[2] + g[3] * a[3];
    gb[1] += -g[0] * a[1] + g[1] * a[0] + g[2] * a[3] - g[3] * a[2];
    gb[2] += -g[0] * a[2] - g[1] * a[3] + g[2] * a[0] + g[3] * a[1];
    gb[3] += -g[0] * a[3] + g[1] * a[2] - g[2] * a[1] + g[3] * a[0];
}

Quat normalize_backward_at(const Quat& raw, const Quat& grad_unit) {
    const double norm = std::sqrt(raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] +
                                  raw[3] * raw[3]);
    if (norm < 1e-12) return {0, 0, 0, 0};
    Quat qn = {raw[0] / norm, raw[1] / norm, raw[2] / norm, raw[3] / norm};
    double dot = 0.0;
    for (int k = 0; k < 4; ++k) dot += qn[static_cast<size_t>(k)] * grad_unit[static_cast<size_t>(k)];
    Quat out;
    for (int k = 0; k < 4; ++k) out[static_cast<size_t>(k)] = (grad_unit[static_cast<size_t>(k)] - dot * qn[static_cast<size_t>(k)]) / norm;
    return out;
}

// dL/dR contracted into a unit-quaternion gradient (same partials as the
// rasterizer uses).
Quat rotation_grad_to_quat(const Quat& q, const double g[3][3]) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Quat out{};
    out[0] = g[0][1] * (-2 * z) + g[0][2] * (2 * y) + g[1][0] * (2 * z) + g[1][2] * (-2 * x) +
             g[2][0] * (-2 * y) + g[2][1] * (2 * x);
    out[1] = g[0][1] * (2 * y) + g[0][2] * (2 * z) + g[1][0] * (2 * y) + g[1][1] * (-4 * x) +
             g[1][2] * (-2 * w) + g[2][0] * (2 * z) + g[2][1] * (2 * w) + g[2][2] * (-4 * x);
    out[2] = g[0][0] * (-4 * y) + g[0][1] * (2 * x) + g[0][2] * (2 * w) + g[1][0] * (2 * x) +
             g[1][2] * (2 * z) + g[2][0] * (-2 * w) + g[2][1] * (2 * z) + g[2][2] * (-4 * y);
    out[3] = g[0][0] * (-4 * z) + g[0][1] * (-2 * w) + g[0][2] * (2 * x) + g[1][0] * (2 * w) +
             g[1][1] * (-4 * z) + g[1][2] * (2 * y) + g[2][0] * (2 * x) + g[2][1] * (2 * y);
    return out;
}

struct AnchorGrad {
    Tensor positions;  // [N,3]
    Tensor rotations;  // [N,4]
    explicit AnchorGrad(int64_t n = 0) : positions({n, 3}), rotations({n, 4}) {}
};

}  // namespace

std::vector<LayeredScene> Generator::synthesize(const Tensor& w, bool keep_graph) {
    if (!w.all_finite()) throw std::invalid_argument("synthesize: non-finite style input");
    const int64_t b = w.dim(0);
    const int64_t p = cfg_.base_points;
    const int64_t d = cfg_.feature_dim;
    batch_ = b;
    has_graph_ = keep_graph;
    levels_.assign(static_cast<size_t>(cfg_.levels()), {});

    Tensor enc = encode_points(keep_graph);  // [P, D]
    Tensor f({b, p, d});
    for (int64_t bb = 0; bb < b; ++bb)
        std::copy(enc.data(), enc.data() + p * d, f.data() + bb * p * d);

    std::vector<LayeredScene> out(static_cast<size_t>(b));
    for (size_t bb = 0; bb < out.size(); ++bb)
        out[bb].levels.resize(static_cast<size_t>(cfg_.levels()));

    for (int k = 0; k < cfg_.levels(); ++k) {
        LevelCache& lc = levels_[static_cast<size_t>(k)];
        f = blocks_[static_cast<size_t>(k)].forward(f, w);
        Tensor u = f;
        for (auto& up : upchains_[static_cast<size_t>(k)]) u = up.forward(u);
        lc.u = u;
        lc.rendered = decode_attributes(heads_rendered_[static_cast<size_t>(k)], u, keep_graph);
        lc.anchor = decode_attributes(heads_anchor_[static_cast<size_t>(k)], u, keep_graph);

        lc.world_rendered.resize(static_cast<size_t>(b));
        lc.world_anchor.resize(static_cast<size_t>(b));
        const double off = cfg_.offset_scale_at(k);
        for (int64_t bb = 0; bb < b; ++bb) {
            if (k == 0) {
                lc.world_rendered[static_cast<size_t>(bb)] = lc.rendered.scenes[static_cast<size_t>(bb)];
                lc.world_anchor[static_cast<size_t>(bb)] = lc.anchor.scenes[static_cast<size_t>(bb)];
            } else {
                const GaussianScene& anchors =
                    levels_[static_cast<size_t>(k - 1)].world_anchor[static_cast<size_t>(bb)];
                GaussianScene scaled_r = lc.rendered.scenes[static_cast<size_t>(bb)];
                scaled_r.positions.scale_(off);
                GaussianScene scaled_a = lc.anchor.scenes[static_cast<size_t>(bb)];
                scaled_a.positions.scale_(off);
                lc.world_rendered[static_cast<size_t>(bb)] = compose_hierarchy(scaled_r, anchors);
                lc.world_anchor[static_cast<size_t>(bb)] = compose_hierarchy(scaled_a, anchors);
            }
            out[static_cast<size_t>(bb)].levels[static_cast<size_t>(k)].rendered =
                lc.world_rendered[static_cast<size_t>(bb)];
            out[static_cast<size_t>(bb)].levels[static_cast<size_t>(k)].anchors =
                lc.world_anchor[static_cast<size_t>(bb)];
        }
    }
    if (!keep_graph) {
        levels_.clear();
        has_graph_ = false;
    }
    return out;
}

Tensor Generator::backward(const std::vector<std::vector<SceneGrads>>& rendered_grads,
                           const std::vector<Tensor>* anchor0_position_grads) {
    if (!has_graph_) throw std::logic_error("Generator::backward: no retained graph");
    const int64_t b = batch_;
    const int levels = cfg_.levels();
    const auto counts = cfg_.level_counts();

    Tensor grad_w({b, cfg_.w_dim});
    // Accumulated world-anchor grads per (sample, level).
    std::vector<std::vector<AnchorGrad>> ganchor(static_cast<size_t>(b));
    for (int64_t bb = 0; bb < b; ++bb) {
        ganchor[static_cast<size_t>(bb)].reserve(static_cast<size_t>(levels));
        for (int k = 0; k < levels; ++k)
            ganchor[static_cast<size_t>(bb)].emplace_back(counts[static_cast<size_t>(k)]);
    }

    Tensor gf_next;  // grad on the block-k output from block k+1
    for (int k = levels - 1; k >= 0; --k) {
        LevelCache& lc = levels_[static_cast<size_t>(k)];
        const int64_t pk = counts[static_cast<size_t>(k)];
        const double off = cfg_.offset_scale_at(k);

        std::vector<SceneGrads> glocal_r, glocal_a;
        glocal_r.reserve(static_cast<size_t>(b));
        glocal_a.reserve(static_cast<size_t>(b));
        for (int64_t bb = 0; bb < b; ++bb) {
            const SceneGrads& gworld_r = rendered_grads[static_cast<size_t>(bb)][static_cast<size_t>(k)];
            const AnchorGrad& gworld_a = ganchor[static_cast<size_t>(bb)][static_cast<size_t>(k)];
            if (k == 0) {
                SceneGrads gr = gworld_r;  // level 0: world == local
                SceneGrads ga(pk);
                ga.positions = gworld_a.positions;
                ga.rotations = gworld_a.rotations;
                if (anchor0_position_grads)
                    ga.positions.add_((*anchor0_position_grads)[static_cast<size_t>(bb)]);
                glocal_r.push_back(std::move(gr));
                glocal_a.push_back(std::move(ga));
                continue;
            }

            const GaussianScene& anchors =
                levels_[static_cast<size_t>(k - 1)].world_anchor[static_cast<size_t>(bb)];
            AnchorGrad& gprev = ganchor[static_cast<size_t>(bb)][static_cast<size_t>(k - 1)];
            const int64_t fan = pk / counts[static_cast<size_t>(k - 1)];

            auto compose_backward = [&](const GaussianScene& local, const double* gpos,
                                        const double* grot, SceneGrads& glocal) {
                for (int64_t i = 0; i < pk; ++i) {
                    const int64_t a = i / fan;
                    const Quat qa = anchors.rotation_at(a);
                    const Mat3 ra = quaternion_to_rotation(qa);
                    const Vec3 pl = local.position_at(i);
                    const Vec3 pa = anchors.position_at(a);
                    const Vec3 off_v = {off * pl[0], off * pl[1], off * pl[2]};
                    const Vec3 rot_off = rotate_vec(ra, off_v);

                    // Positions: world = clamp(pa + Ra*(off*pl)).
                    double gpre[3];
                    for (int j = 0; j < 3; ++j) {
                        const double pre = pa[static_cast<size_t>(j)] + rot_off[static_cast<size_t>(j)];
                        const bool open = pre > -kSceneCubeHalf && pre < kSceneCubeHalf;
                        gpre[j] = open ? gpos[i * 3 + j] : 0.0;
                        gprev.positions.at(a, j) += gpre[j];
                    }
                    for (int j = 0; j < 3; ++j)
                        glocal.positions.at(i, j) =
                            off * (ra[0][static_cast<size_t>(j)] * gpre[0] + ra[1][static_cast<size_t>(j)] * gpre[1] +
                                   ra[2][static_cast<size_t>(j)] * gpre[2]);
                    // dL/dRa = gpre (outer) off_v.
                    double gra[3][3];
                    for (int r = 0; r < 3; ++r)
                        for (int c = 0; c < 3; ++c) gra[r][c] = gpre[r] * off_v[static_cast<size_t>(c)];
                    Quat gqa = rotation_grad_to_quat(qa, gra);

                    // Rotations: world = normalize(qa * ql).
                    const Quat ql = local.rotation_at(i);
                    const Quat prod = quaternion_multiply(qa, ql);
                    const Quat gw_unit = {grot[i * 4 + 0], grot[i * 4 + 1], grot[i * 4 + 2],
                                          grot[i * 4 + 3]};
                    const Quat gprod = normalize_backward_at(prod, gw_unit);
                    Quat gql{0, 0, 0, 0};
                    quat_product_backward(qa, ql, gprod, gqa, gql);
                    for (int j = 0; j < 4; ++j) {
                        gprev.rotations.at(a, j) += gqa[static_cast<size_t>(j)];
                        glocal.rotations.at(i, j) = gql[static_cast<size_t>(j)];
                    }
                }
            };

            SceneGrads gr(pk);
            compose_backward(lc.rendered.scenes[static_cast<size_t>(bb)], gworld_r.positions.data(),
                             gworld_r.rotations.data(), gr);
            // Pass-through attributes.
            gr.log_scales = gworld_r.log_scales;
            gr.colors = gworld_r.colors;
            gr.opacities = gworld_r.opacities;

            SceneGrads ga(pk);
            compose_backward(lc.anchor.scenes[static_cast<size_t>(bb)], gworld_a.positions.data(),
                             gworld_a.rotations.data(), ga);
            glocal_r.push_back(std::move(gr));
            glocal_a.push_back(std::move(ga));
        }

        Tensor graw_r = decode_backward(lc.rendered, glocal_r);
        Tensor graw_a = decode_backward(lc.anchor, glocal_a);
        Tensor gu = heads_rendered_[static_cast<size_t>(k)].backward(graw_r);
        gu.add_(heads_anchor_[static_cast<size_t>(k)].backward(graw_a));
        for (size_t j = upchains_[static_cast<size_t>(k)].size(); j-- > 0;)
            gu = upchains_[static_cast<size_t>(k)][j].backward(gu);
        if (!gf_next.empty()) gu.add_(gf_next);
        gf_next = blocks_[static_cast<size_t>(k)].backward(gu, grad_w);
    }

    // gf_next is the grad on the broadcast encoded constant [B,P,D].
    const int64_t p = cfg_.base_points;
    const int64_t d = cfg_.feature_dim;
    Tensor genc({p, d});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t i = 0; i < p * d; ++i) genc[i] += gf_next[bb * p * d + i];
    const_points_.grad.add_(encode_backward(genc));
    return grad_w;
}

nn::ParamRefs Generator::params() {
    nn::ParamRefs out;
    out.push_back(&const_points_);
    posenc_linear_.collect(out);
    mapping_.collect(out);
    for (auto& blk : blocks_) blk.collect(out);
    for (auto& chain : upchains_)
        for (auto& up : chain) up.collect(out);
    for (auto& h : heads_rendered_) h.collect(out);
    for (auto& h : heads_anchor_) h.collect(out);
    return out;
}

void Generator::zero_grad() {
    for (nn::Param* p : params()) p->zero_grad();
}

void Generator::copy_values_from(const Generator& other) {
    nn::ParamRefs dst = params();
    nn::ParamRefs src = const_cast<Generator&>(other).params();
    if (dst.size() != src.size())
        throw std::invalid_argument("Generator::copy_values_from: parameter count mismatch");
    for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
    mapping_.w_avg = other.mapping_.w_avg;
}

}  // namespace cgs
