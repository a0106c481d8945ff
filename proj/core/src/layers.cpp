#include "cgs/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace cgs::nn {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void init_normal(Tensor& t, Rng& rng, double std_dev) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std_dev);
}

// ---- Linear ----------------------------------------------------------------

Linear::Linear(std::string name, int64_t in, int64_t out, Rng& rng, double gain, double lr_mult)
    : in_features(in), out_features(out) {
    weight.init_shape(name + ".weight", {out, in}, lr_mult);
    bias.init_shape(name + ".bias", {out}, lr_mult);
    init_normal(weight.value, rng, gain / std::sqrt(static_cast<double>(in)));
}

void Linear::zero_init() {
    weight.value.zero();
    bias.value.zero();
}

Tensor Linear::forward(const Tensor& x) {
    const int64_t rows = x.numel() / in_features;
    cached_x_ = x;
    std::vector<int64_t> out_shape = x.shape();
    out_shape.back() = out_features;
    Tensor y(out_shape);
    ConstMatMap xm(x.data(), rows, in_features);
    ConstMatMap wm(weight.value.data(), out_features, in_features);
    MatMap ym(y.data(), rows, out_features);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value.data(), out_features);
    return y;
}

Tensor Linear::backward(const Tensor& grad_y, double param_scale) {
    const int64_t rows = grad_y.numel() / out_features;
    ConstMatMap gym(grad_y.data(), rows, out_features);
    ConstMatMap xm(cached_x_.data(), rows, in_features);
    ConstMatMap wm(weight.value.data(), out_features, in_features);

    if (param_scale != 0.0) {
        MatMap gwm(weight.grad.data(), out_features, in_features);
        gwm.noalias() += param_scale * (gym.transpose() * xm);
        Eigen::Map<Eigen::RowVectorXd>(bias.grad.data(), out_features) +=
            param_scale * gym.colwise().sum();
    }
    Tensor gx(cached_x_.shape());
    MatMap gxm(gx.data(), rows, in_features);
    gxm.noalias() = gym * wm;
    return gx;
}

void Linear::collect(ParamRefs& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ---- LeakyReLU --------------------------------------------------------------

Tensor LeakyReLU::forward(const Tensor& x) {
    cached_x_ = x;
    Tensor y = x;
    for (int64_t i = 0; i < y.numel(); ++i)
        if (y[i] < 0.0) y[i] *= slope_;
    return y;
}

Tensor LeakyReLU::backward(const Tensor& grad_y) const {
    Tensor gx = grad_y;
    for (int64_t i = 0; i < gx.numel(); ++i)
        if (cached_x_[i] < 0.0) gx[i] *= slope_;
    return gx;
}

// ---- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(std::string name, int64_t in_ch, int64_t out_ch, int k, Rng& rng, double gain)
    : in_channels(in_ch), out_channels(out_ch), ksize(k) {
    if (k != 1 && k != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
    weight.init_shape(name + ".weight", {out_ch, in_ch * k * k});
    bias.init_shape(name + ".bias", {out_ch});
    init_normal(weight.value, rng, gain / std::sqrt(static_cast<double>(in_ch * k * k)));
}

void Conv2d::zero_init() {
    weight.value.zero();
    bias.value.zero();
}

namespace {

// col: [H*W, C*k*k] for one sample with same padding.
void im2col(const double* x, int64_t c_in, int64_t h, int64_t w, int k, double* col) {
    const int pad = (k - 1) / 2;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx) {
            double* row = col + (y * w + xx) * c_in * k * k;
            int64_t slot = 0;
            for (int64_t c = 0; c < c_in; ++c) {
                const double* plane = x + c * h * w;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        const int64_t sy = y + dy - pad;
                        const int64_t sx = xx + dx - pad;
                        row[slot++] = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                          ? plane[sy * w + sx]
                                          : 0.0;
                    }
            }
        }
}

void col2im_accumulate(const double* col, int64_t c_in, int64_t h, int64_t w, int k, double* gx) {
    const int pad = (k - 1) / 2;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx) {
            const double* row = col + (y * w + xx) * c_in * k * k;
            int64_t slot = 0;
            for (int64_t c = 0; c < c_in; ++c) {
                double* plane = gx + c * h * w;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        const int64_t sy = y + dy - pad;
                        const int64_t sx = xx + dx - pad;
                        if (sy >= 0 && sy < h && sx >= 0 && sx < w)
                            plane[sy * w + sx] += row[slot];
                        ++slot;
                    }
            }
        }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x) {
    const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != in_channels) throw std::invalid_argument("Conv2d: channel mismatch");
    cached_x_ = x;
    Tensor y({b, out_channels, h, w});
    const int64_t cols = in_channels * ksize * ksize;
    Tensor col({h * w, cols});
    Tensor ymat({h * w, out_channels});
    ConstMatMap wm(weight.value.data(), out_channels, cols);
    for (int64_t s = 0; s < b; ++s) {
        im2col(x.data() + s * c * h * w, c, h, w, ksize, col.data());
        ConstMatMap cm(col.data(), h * w, cols);
        MatMap ym(ymat.data(), h * w, out_channels);
        ym.noalias() = cm * wm.transpose();
        double* yp = y.data() + s * out_channels * h * w;
        for (int64_t o = 0; o < out_channels; ++o) {
            const double bo = bias.value[o];
            for (int64_t p = 0; p < h * w; ++p) yp[o * h * w + p] = ymat[p * out_channels + o] + bo;
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& grad_y, double param_scale) {
    const int64_t b = cached_x_.dim(0), c = cached_x_.dim(1), h = cached_x_.dim(2),
                  w = cached_x_.dim(3);
    const int64_t cols = in_channels * ksize * ksize;
    Tensor gx({b, c, h, w});
    Tensor col({h * w, cols});
    Tensor gymat({h * w, out_channels});
    Tensor gcol({h * w, cols});
    ConstMatMap wm(weight.value.data(), out_channels, cols);
    for (int64_t s = 0; s < b; ++s) {
        const double* gyp = grad_y.data() + s * out_channels * h * w;
        for (int64_t o = 0; o < out_channels; ++o)
            for (int64_t p = 0; p < h * w; ++p) gymat[p * out_channels + o] = gyp[o * h * w + p];
        ConstMatMap gym(gymat.data(), h * w, out_channels);
        if (param_scale != 0.0) {
            im2col(cached_x_.data() + s * c * h * w, c, h, w, ksize, col.data());
            ConstMatMap cm(col.data(), h * w, cols);
            MatMap gwm(weight.grad.data(), out_channels, cols);
            gwm.noalias() += param_scale * (gym.transpose() * cm);
            Eigen::Map<Eigen::RowVectorXd>(bias.grad.data(), out_channels) +=
                param_scale * gym.colwise().sum();
        }
        MatMap gcm(gcol.data(), h * w, cols);
        gcm.noalias() = gym * wm;
        col2im_accumulate(gcol.data(), c, h, w, ksize, gx.data() + s * c * h * w);
    }
    return gx;
}

void Conv2d::collect(ParamRefs& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

Tensor avg_pool2(const Tensor& x) {
    const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({b, c, h / 2, w / 2});
    for (int64_t s = 0; s < b * c; ++s) {
        const double* xp = x.data() + s * h * w;
        double* yp = y.data() + s * (h / 2) * (w / 2);
        for (int64_t yy = 0; yy < h / 2; ++yy)
            for (int64_t xx = 0; xx < w / 2; ++xx)
                yp[yy * (w / 2) + xx] = 0.25 * (xp[(2 * yy) * w + 2 * xx] +
                                                xp[(2 * yy) * w + 2 * xx + 1] +
                                                xp[(2 * yy + 1) * w + 2 * xx] +
                                                xp[(2 * yy + 1) * w + 2 * xx + 1]);
    }
    return y;
}

Tensor avg_pool2_backward(const Tensor& grad_y, int64_t in_h, int64_t in_w) {
    const int64_t b = grad_y.dim(0), c = grad_y.dim(1);
    Tensor gx({b, c, in_h, in_w});
    for (int64_t s = 0; s < b * c; ++s) {
        const double* gp = grad_y.data() + s * (in_h / 2) * (in_w / 2);
        double* xp = gx.data() + s * in_h * in_w;
        for (int64_t yy = 0; yy < in_h / 2; ++yy)
            for (int64_t xx = 0; xx < in_w / 2; ++xx) {
                const double v = 0.25 * gp[yy * (in_w / 2) + xx];
                xp[(2 * yy) * in_w + 2 * xx] = v;
                xp[(2 * yy) * in_w + 2 * xx + 1] = v;
                xp[(2 * yy + 1) * in_w + 2 * xx] = v;
                xp[(2 * yy + 1) * in_w + 2 * xx + 1] = v;
            }
    }
    return gx;
}

// ---- AdaIN ------------------------------------------------------------------

AdaIN::AdaIN(std::string name, int64_t feature_dim, int64_t w_dim, Rng& rng) {
    affine = Linear(name + ".affine", w_dim, 2 * feature_dim, rng, 1.0);
    // Style scale starts at 1, offset at 0.
    for (int64_t d = 0; d < feature_dim; ++d) affine.bias.value[d] = 1.0;
}

Tensor AdaIN::apply_style(const Tensor& x, const Tensor& scale, const Tensor& offset, double eps) {
    const int64_t b = x.dim(0), p = x.dim(1), d = x.dim(2);
    Tensor y({b, p, d});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t dd = 0; dd < d; ++dd) {
            double mu = 0.0;
            for (int64_t pp = 0; pp < p; ++pp) mu += x.at(bb, pp, dd);
            mu /= static_cast<double>(p);
            double var = 0.0;
            for (int64_t pp = 0; pp < p; ++pp) {
                const double c = x.at(bb, pp, dd) - mu;
                var += c * c;
            }
            var /= static_cast<double>(p);
            const double sigma = std::sqrt(var);
            const double a = scale.at(bb, dd);
            const double o = offset.at(bb, dd);
            for (int64_t pp = 0; pp < p; ++pp)
                y.at(bb, pp, dd) = a * (x.at(bb, pp, dd) - mu) / (sigma + eps) + o;
        }
    return y;
}

Tensor AdaIN::forward(const Tensor& x, const Tensor& w) {
    const int64_t b = x.dim(0), p = x.dim(1), d = x.dim(2);
    Tensor styles = affine.forward(w);  // [B, 2D]
    cached_xhat_ = Tensor({b, p, d});
    cached_sigma_ = Tensor({b, d});
    cached_scale_ = Tensor({b, d});
    constexpr double eps = 1e-8;
    Tensor y({b, p, d});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t dd = 0; dd < d; ++dd) {
            double mu = 0.0;
            for (int64_t pp = 0; pp < p; ++pp) mu += x.at(bb, pp, dd);
            mu /= static_cast<double>(p);
            double var = 0.0;
            for (int64_t pp = 0; pp < p; ++pp) {
                const double c = x.at(bb, pp, dd) - mu;
                var += c * c;
            }
            var /= static_cast<double>(p);
            const double sigma = std::sqrt(var);
            const double a = styles.at(bb, dd);
            const double o = styles.at(bb, d + dd);
            cached_sigma_.at(bb, dd) = sigma;
            cached_scale_.at(bb, dd) = a;
            for (int64_t pp = 0; pp < p; ++pp) {
                const double xh = (x.at(bb, pp, dd) - mu) / (sigma + eps);
                cached_xhat_.at(bb, pp, dd) = xh;
                y.at(bb, pp, dd) = a * xh + o;
            }
        }
    return y;
}

Tensor AdaIN::backward(const Tensor& grad_y, Tensor& grad_w, double param_scale) {
    const int64_t b = grad_y.dim(0), p = grad_y.dim(1), d = grad_y.dim(2);
    constexpr double eps = 1e-8;
    Tensor gstyles({b, 2 * d});
    Tensor gx({b, p, d});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t dd = 0; dd < d; ++dd) {
            const double a = cached_scale_.at(bb, dd);
            const double sigma = cached_sigma_.at(bb, dd);
            double gscale = 0.0, goffset = 0.0, m1 = 0.0, m2 = 0.0;
            for (int64_t pp = 0; pp < p; ++pp) {
                const double gy = grad_y.at(bb, pp, dd);
                const double xh = cached_xhat_.at(bb, pp, dd);
                gscale += gy * xh;
                goffset += gy;
                m1 += gy * a;
                m2 += gy * a * xh;
            }
            gstyles.at(bb, dd) = gscale;
            gstyles.at(bb, d + dd) = goffset;
            m1 /= static_cast<double>(p);
            m2 /= static_cast<double>(p);
            const double inv_se = 1.0 / (sigma + eps);
            const double inv_s = 1.0 / std::max(sigma, 1e-30);
            for (int64_t pp = 0; pp < p; ++pp) {
                const double gxh = grad_y.at(bb, pp, dd) * a;
                const double xh = cached_xhat_.at(bb, pp, dd);
                gx.at(bb, pp, dd) = (gxh - m1) * inv_se - xh * m2 * inv_s;
            }
        }
    Tensor gw = affine.backward(gstyles, param_scale);
    grad_w.add_(gw);
    return gx;
}

void AdaIN::collect(ParamRefs& out) { affine.collect(out); }

// ---- SelfAttention ------------------------------------------------------------

SelfAttention::SelfAttention(std::string name, int64_t dim, int64_t n_heads, Rng& rng)
    : heads(n_heads) {
    if (dim % n_heads != 0) throw std::invalid_argument("SelfAttention: dim % heads != 0");
    qkv = Linear(name + ".qkv", dim, 3 * dim, rng, 1.0);
    proj = Linear(name + ".proj", dim, dim, rng, 1.0);
}

Tensor SelfAttention::forward(const Tensor& x) {
    const int64_t b = x.dim(0), p = x.dim(1), d = x.dim(2);
    const int64_t hn = heads, dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor qkv_out = qkv.forward(x);  // [B,P,3D]

    cached_q_ = Tensor({b, hn, p, dh});
    cached_k_ = Tensor({b, hn, p, dh});
    cached_v_ = Tensor({b, hn, p, dh});
    cached_s_ = Tensor({b, hn, p, p});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t pp = 0; pp < p; ++pp) {
            const double* row = qkv_out.data() + (bb * p + pp) * 3 * d;
            for (int64_t h = 0; h < hn; ++h)
                for (int64_t j = 0; j < dh; ++j) {
                    cached_q_.at(bb, h, pp, j) = row[h * dh + j];
                    cached_k_.at(bb, h, pp, j) = row[d + h * dh + j];
                    cached_v_.at(bb, h, pp, j) = row[2 * d + h * dh + j];
                }
        }

    Tensor attn({b, p, d});
    Tensor z({p, p});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t h = 0; h < hn; ++h) {
            ConstMatMap qm(cached_q_.data() + (bb * hn + h) * p * dh, p, dh);
            ConstMatMap km(cached_k_.data() + (bb * hn + h) * p * dh, p, dh);
            ConstMatMap vm(cached_v_.data() + (bb * hn + h) * p * dh, p, dh);
            MatMap zm(z.data(), p, p);
            zm.noalias() = inv_sqrt * (qm * km.transpose());
            // Row-wise softmax into the cache.
            MatMap sm(cached_s_.data() + (bb * hn + h) * p * p, p, p);
            for (int64_t r = 0; r < p; ++r) {
                double mx = zm(r, 0);
                for (int64_t cc = 1; cc < p; ++cc) mx = std::max(mx, zm(r, cc));
                double sum = 0.0;
                for (int64_t cc = 0; cc < p; ++cc) {
                    const double e = std::exp(zm(r, cc) - mx);
                    sm(r, cc) = e;
                    sum += e;
                }
                const double inv = 1.0 / sum;
                for (int64_t cc = 0; cc < p; ++cc) sm(r, cc) *= inv;
            }
            // O_h = S V, scattered into [B,P,D] at head columns.
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> oh =
                sm * vm;
            for (int64_t pp = 0; pp < p; ++pp)
                for (int64_t j = 0; j < dh; ++j) attn.at(bb, pp, h * dh + j) = oh(pp, j);
        }
    return proj.forward(attn);
}

Tensor SelfAttention::backward(const Tensor& grad_y, double param_scale) {
    const int64_t b = cached_q_.dim(0), hn = cached_q_.dim(1), p = cached_q_.dim(2),
                  dh = cached_q_.dim(3);
    const int64_t d = hn * dh;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor g_attn = proj.backward(grad_y, param_scale);  // [B,P,D]
    Tensor g_qkv({b, p, 3 * d});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t h = 0; h < hn; ++h) {
            // Gather gO_h [P, dh].
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> go(p, dh);
            for (int64_t pp = 0; pp < p; ++pp)
                for (int64_t j = 0; j < dh; ++j) go(pp, j) = g_attn.at(bb, pp, h * dh + j);
            ConstMatMap sm(cached_s_.data() + (bb * hn + h) * p * p, p, p);
            ConstMatMap qm(cached_q_.data() + (bb * hn + h) * p * dh, p, dh);
            ConstMatMap km(cached_k_.data() + (bb * hn + h) * p * dh, p, dh);
            ConstMatMap vm(cached_v_.data() + (bb * hn + h) * p * dh, p, dh);

            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gs =
                go * vm.transpose();                       // [P,P]
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gv =
                sm.transpose() * go;                       // [P,dh]
            // Softmax backward: gZ = S .* (gS - rowsum(gS .* S)).
            for (int64_t r = 0; r < p; ++r) {
                double dot = 0.0;
                for (int64_t cc = 0; cc < p; ++cc) dot += gs(r, cc) * sm(r, cc);
                for (int64_t cc = 0; cc < p; ++cc)
                    gs(r, cc) = sm(r, cc) * (gs(r, cc) - dot);
            }
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gq =
                inv_sqrt * (gs * km);
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gk =
                inv_sqrt * (gs.transpose() * qm);
            for (int64_t pp = 0; pp < p; ++pp) {
                double* row = g_qkv.data() + (bb * p + pp) * 3 * d;
                for (int64_t j = 0; j < dh; ++j) {
                    row[h * dh + j] = gq(pp, j);
                    row[d + h * dh + j] = gk(pp, j);
                    row[2 * d + h * dh + j] = gv(pp, j);
                }
            }
        }
    return qkv.backward(g_qkv, param_scale);
}

void SelfAttention::collect(ParamRefs& out) {
    qkv.collect(out);
    proj.collect(out);
}

// ---- PointUpsample -------------------------------------------------------------

PointUpsample::PointUpsample(std::string name, int64_t dim, int f, Rng& rng) : factor(f) {
    if (f != 2 && f != 4)
        throw std::invalid_argument("PointUpsample: unsupported factor " + std::to_string(f));
    learnable = Linear(name + ".learnable", dim, f * dim, rng, 1.0);
    learnable.zero_init();  // starts as a pure repeat
}

Tensor PointUpsample::forward(const Tensor& x) {
    const int64_t b = x.dim(0), p = x.dim(1), d = x.dim(2);
    Tensor lin = learnable.forward(x);  // [B,P,factor*D]
    Tensor y({b, p * factor, d});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t pp = 0; pp < p; ++pp) {
            const double* xr = x.data() + (bb * p + pp) * d;
            const double* lr = lin.data() + (bb * p + pp) * factor * d;
            for (int r = 0; r < factor; ++r) {
                double* yr = y.data() + (bb * p * factor + pp * factor + r) * d;
                for (int64_t j = 0; j < d; ++j) yr[j] = xr[j] + lr[r * d + j];
            }
        }
    return y;
}

Tensor PointUpsample::backward(const Tensor& grad_y, double param_scale) {
    const int64_t b = grad_y.dim(0), pf = grad_y.dim(1), d = grad_y.dim(2);
    const int64_t p = pf / factor;
    Tensor glin({b, p, factor * d});
    Tensor gx({b, p, d});
    for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t pp = 0; pp < p; ++pp) {
            double* gxr = gx.data() + (bb * p + pp) * d;
            double* glr = glin.data() + (bb * p + pp) * factor * d;
            for (int r = 0; r < factor; ++r) {
                const double* gyr = grad_y.data() + (bb * pf + pp * factor + r) * d;
                for (int64_t j = 0; j < d; ++j) {
                    gxr[j] += gyr[j];
                    glr[r * d + j] = gyr[j];
                }
            }
        }
    gx.add_(learnable.backward(glin, param_scale));
    return gx;
}

void PointUpsample::collect(ParamRefs& out) { learnable.collect(out); }

// ---- MinibatchStddev -------------------------------------------------------------

Tensor MinibatchStddev::forward(const Tensor& x) {
    const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (b == 0) throw std::invalid_argument("minibatch_stddev: empty batch");
    const int64_t f = c * h * w;
    const int64_t groups = (b + group_size_ - 1) / group_size_;
    cached_x_ = x;
    cached_mean_ = Tensor({groups, f});
    cached_std_ = Tensor({groups, f});

    Tensor y({b, c + 1, h, w});
    for (int64_t s = 0; s < b; ++s)
        std::copy(x.data() + s * f, x.data() + (s + 1) * f, y.data() + s * (c + 1) * h * w);

    for (int64_t g = 0; g < groups; ++g) {
        const int64_t lo = g * group_size_;
        const int64_t hi = std::min(b, lo + group_size_);
        const int64_t real = hi - lo;
        // Padded group: cycle members to group_size.
        double scalar = 0.0;
        for (int64_t j = 0; j < f; ++j) {
            double mu = 0.0;
            for (int64_t m = 0; m < group_size_; ++m) mu += x[(lo + m % real) * f + j];
            mu /= static_cast<double>(group_size_);
            double var = 0.0;
            for (int64_t m = 0; m < group_size_; ++m) {
                const double dev = x[(lo + m % real) * f + j] - mu;
                var += dev * dev;
            }
            var /= static_cast<double>(group_size_);
            const double sd = std::sqrt(var + 1e-8);
            cached_mean_.at(g, j) = mu;
            cached_std_.at(g, j) = sd;
            scalar += sd;
        }
        scalar /= static_cast<double>(f);
        for (int64_t s = lo; s < hi; ++s) {
            double* extra = y.data() + s * (c + 1) * h * w + c * h * w;
            std::fill(extra, extra + h * w, scalar);
        }
    }
    return y;
}

Tensor MinibatchStddev::backward(const Tensor& grad_y) {
    const int64_t b = cached_x_.dim(0), c = cached_x_.dim(1), h = cached_x_.dim(2),
                  w = cached_x_.dim(3);
    const int64_t f = c * h * w;
    const int64_t groups = (b + group_size_ - 1) / group_size_;
    Tensor gx({b, c, h, w});
    for (int64_t s = 0; s < b; ++s)
        std::copy(grad_y.data() + s * (c + 1) * h * w,
                  grad_y.data() + s * (c + 1) * h * w + f, gx.data() + s * f);

    for (int64_t g = 0; g < groups; ++g) {
        const int64_t lo = g * group_size_;
        const int64_t hi = std::min(b, lo + group_size_);
        const int64_t real = hi - lo;
        double gscalar = 0.0;
        for (int64_t s = lo; s < hi; ++s) {
            const double* extra = grad_y.data() + s * (c + 1) * h * w + c * h * w;
            for (int64_t p = 0; p < h * w; ++p) gscalar += extra[p];
        }
        const double gstd = gscalar / static_cast<double>(f);
        for (int64_t j = 0; j < f; ++j) {
            const double sd = cached_std_.at(g, j);
            const double mu = cached_mean_.at(g, j);
            const double gvar = gstd / (2.0 * sd);
            // var = mean(dev^2) over padded members; mean subtraction drops
            // out since sum(dev) = 0 over the padded group.
            for (int64_t m = 0; m < group_size_; ++m) {
                const int64_t src = lo + m % real;
                const double dev = cached_x_[src * f + j] - mu;
                gx[src * f + j] += gvar * 2.0 * dev / static_cast<double>(group_size_);
            }
        }
    }
    return gx;
}

// ---- Blur ---------------------------------------------------------------------

double blur_sigma(int64_t images_seen, int64_t horizon_images, double sigma0) {
    const double ramp = 1.0 - static_cast<double>(images_seen) / static_cast<double>(horizon_images);
    return sigma0 * std::max(0.0, ramp);
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i)
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    double sum = 0.0;
    for (double v : k) sum += v;
    for (double& v : k) v /= sum;
    return k;
}

// Separable pass along one axis; forward renormalizes at borders, the adjoint
// divides before convolving instead.
void blur_axis(const double* src, double* dst, int64_t len, int64_t stride,
               const std::vector<double>& kernel, bool adjoint) {
    const int radius = static_cast<int>(kernel.size() / 2);
    std::vector<double> tmp(static_cast<size_t>(len));
    std::vector<double> norm(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i) {
        double nv = 0.0;
        for (int j = -radius; j <= radius; ++j)
            if (i + j >= 0 && i + j < len) nv += kernel[static_cast<size_t>(j + radius)];
        norm[static_cast<size_t>(i)] = nv;
    }
    if (!adjoint) {
        for (int64_t i = 0; i < len; ++i) {
            double acc = 0.0;
            for (int j = -radius; j <= radius; ++j) {
                const int64_t s = i + j;
                if (s >= 0 && s < len) acc += kernel[static_cast<size_t>(j + radius)] * src[s * stride];
            }
            tmp[static_cast<size_t>(i)] = acc / norm[static_cast<size_t>(i)];
        }
    } else {
        std::vector<double> scaled(static_cast<size_t>(len));
        for (int64_t i = 0; i < len; ++i) scaled[static_cast<size_t>(i)] = src[i * stride] / norm[static_cast<size_t>(i)];
        for (int64_t i = 0; i < len; ++i) {
            double acc = 0.0;
            for (int j = -radius; j <= radius; ++j) {
                const int64_t s = i + j;
                if (s >= 0 && s < len) acc += kernel[static_cast<size_t>(j + radius)] * scaled[static_cast<size_t>(s)];
            }
            tmp[static_cast<size_t>(i)] = acc;
        }
    }
    for (int64_t i = 0; i < len; ++i) dst[i * stride] = tmp[static_cast<size_t>(i)];
}

Tensor blur_impl(const Tensor& images, double sigma, bool adjoint) {
    if (sigma <= 0.0) return images;
    const int64_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const auto kernel = gaussian_kernel(sigma);
    Tensor out = images;
    for (int64_t s = 0; s < b * c; ++s) {
        double* plane = out.data() + s * h * w;
        for (int64_t y = 0; y < h; ++y) blur_axis(plane + y * w, plane + y * w, w, 1, kernel, adjoint);
        for (int64_t x = 0; x < w; ++x) blur_axis(plane + x, plane + x, h, w, kernel, adjoint);
    }
    return out;
}

}  // namespace

Tensor blur_images(const Tensor& images, double sigma) { return blur_impl(images, sigma, false); }

Tensor blur_images_backward(const Tensor& grad, double sigma) {
    return blur_impl(grad, sigma, true);
}

}  // namespace cgs::nn
