#include "cgs/discriminator.hpp"

#include <cmath>
#include <stdexcept>

namespace cgs {

DiscriminatorConfig DiscriminatorConfig::preset(const std::string& name, int resolution) {
    DiscriminatorConfig cfg;
    cfg.resolution = resolution;
    cfg.preset_name = name;
    if (name == "desk") {
        cfg.channel_base = 1024;
        cfg.channel_max = 128;
    } else if (name.rfind("paper", 0) == 0) {
        cfg.channel_base = 32768;
        cfg.channel_max = 512;
    } else {
        throw std::invalid_argument("DiscriminatorConfig: unknown preset " + name);
    }
    return cfg;
}

int64_t DiscriminatorConfig::channels_for(int res) const {
    return std::max(channel_min, std::min(channel_max, channel_base / res));
}

void DiscriminatorConfig::validate() const {
    if (resolution < 32 || (resolution & (resolution - 1)) != 0)
        throw std::invalid_argument("discriminator: resolution must be a power of two >= 32");
    if (label_dim != 25) throw std::invalid_argument("discriminator: label_dim must be 25");
}

Discriminator::Discriminator(DiscriminatorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    mbstd_ = nn::MinibatchStddev(cfg_.mbstd_group);
    from_rgb_ = nn::Conv2d("d.from_rgb", 3, cfg_.channels_for(cfg_.resolution), 1, rng, 1.0);
    for (int res = cfg_.resolution; res > 4; res /= 2) {
        Block blk;
        blk.res = res;
        const int64_t cin = cfg_.channels_for(res);
        const int64_t cout = cfg_.channels_for(res / 2);
        const std::string name = "d.b" + std::to_string(res);
        blk.conv1 = nn::Conv2d(name + ".conv1", cin, cin, 3, rng, std::sqrt(2.0));
        blk.conv2 = nn::Conv2d(name + ".conv2", cin, cout, 3, rng, std::sqrt(2.0));
        blk.skip = nn::Conv2d(name + ".skip", cin, cout, 1, rng, 1.0);
        blocks_.push_back(std::move(blk));
    }
    const int64_t c4 = cfg_.channels_for(4);
    final_conv_ = nn::Conv2d("d.final_conv", c4 + 1, c4, 3, rng, std::sqrt(2.0));
    fc_ = nn::Linear("d.fc", c4 * 16, cfg_.embed_dim, rng, std::sqrt(2.0));
    base_head_ = nn::Linear("d.base_head", cfg_.embed_dim, 1, rng, 1.0);
    embed_ = nn::Linear("d.embed", cfg_.label_dim, cfg_.embed_dim, rng, 1.0);
    embed_.zero_init();  // conditioning phases in smoothly
}

Tensor Discriminator::forward(const Tensor& images, const Tensor& labels) {
    if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.resolution ||
        images.dim(3) != cfg_.resolution)
        throw std::invalid_argument("discriminator: bad image shape " + images.shape_str());
    if (labels.ndim() != 2 || labels.dim(1) != cfg_.label_dim)
        throw std::invalid_argument("discriminator: label must be [B,25], got " +
                                    labels.shape_str());
    if (labels.dim(0) != images.dim(0))
        throw std::invalid_argument("discriminator: image/label batch mismatch");

    Tensor x = from_rgb_act_.forward(from_rgb_.forward(images));
    for (auto& blk : blocks_) {
        Tensor skip = blk.skip.forward(nn::avg_pool2(x));
        Tensor y = blk.act1.forward(blk.conv1.forward(x));
        y = blk.act2.forward(blk.conv2.forward(nn::avg_pool2(y)));
        y.add_(skip);
        y.scale_(1.0 / std::sqrt(2.0));
        x = std::move(y);
    }
    x = mbstd_.forward(x);
    x = final_act_.forward(final_conv_.forward(x));
    const int64_t b = x.dim(0);
    x.reshape({b, x.numel() / b});
    cached_phi_ = fc_act_.forward(fc_.forward(x));
    cached_embed_ = embed_.forward(labels);

    Tensor scores({b});
    Tensor base = base_head_.forward(cached_phi_);  // [B,1]
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
    for (int64_t i = 0; i < b; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < cfg_.embed_dim; ++j)
            dot += cached_embed_.at(i, j) * cached_phi_.at(i, j);
        scores[i] = base[i] + dot * inv_sqrt;
    }
    return scores;
}

Tensor Discriminator::backward(const Tensor& grad_scores, double param_scale,
                               const Tensor* extra_grad_phi) {
    const int64_t b = grad_scores.dim(0);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));

    // score = base(phi) + <embed, phi>/sqrt(D).
    Tensor gbase({b, 1});
    Tensor gphi({b, cfg_.embed_dim});
    Tensor gembed({b, cfg_.embed_dim});
    for (int64_t i = 0; i < b; ++i) {
        gbase.at(i, 0) = grad_scores[i];
        for (int64_t j = 0; j < cfg_.embed_dim; ++j) {
            gphi.at(i, j) = grad_scores[i] * cached_embed_.at(i, j) * inv_sqrt;
            gembed.at(i, j) = grad_scores[i] * cached_phi_.at(i, j) * inv_sqrt;
        }
    }
    if (extra_grad_phi) gphi.add_(*extra_grad_phi);
    embed_.backward(gembed, param_scale);  // label grads discarded
    gphi.add_(base_head_.backward(gbase, param_scale));

    Tensor gx = fc_.backward(fc_act_.backward(gphi), param_scale);
    const int64_t c4 = cfg_.channels_for(4);
    gx.reshape({b, c4, 4, 4});
    gx = final_conv_.backward(final_act_.backward(gx), param_scale);
    gx = mbstd_.backward(gx);
    for (size_t i = blocks_.size(); i-- > 0;) {
        Block& blk = blocks_[i];
        Tensor g = gx;
        g.scale_(1.0 / std::sqrt(2.0));
        // skip path
        Tensor gskip = blk.skip.backward(g, param_scale);
        Tensor gpool = nn::avg_pool2_backward(gskip, blk.res, blk.res);
        // main path
        Tensor gmain = blk.conv2.backward(blk.act2.backward(g), param_scale);
        gmain = nn::avg_pool2_backward(gmain, blk.res, blk.res);
        gmain = blk.conv1.backward(blk.act1.backward(gmain), param_scale);
        gmain.add_(gpool);
        gx = std::move(gmain);
    }
    return from_rgb_.backward(from_rgb_act_.backward(gx), param_scale);
}

nn::ParamRefs Discriminator::params() {
    nn::ParamRefs out;
    from_rgb_.collect(out);
    for (auto& blk : blocks_) {
        blk.conv1.collect(out);
        blk.conv2.collect(out);
        blk.skip.collect(out);
    }
    final_conv_.collect(out);
    fc_.collect(out);
    base_head_.collect(out);
    embed_.collect(out);
    return out;
}

void Discriminator::zero_grad() {
    for (nn::Param* p : params()) p->zero_grad();
}

void Discriminator::copy_values_from(const Discriminator& other) {
    nn::ParamRefs dst = params();
    nn::ParamRefs src = const_cast<Discriminator&>(other).params();
    if (dst.size() != src.size())
        throw std::invalid_argument("Discriminator::copy_values_from: parameter count mismatch");
    for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

}  // namespace cgs
