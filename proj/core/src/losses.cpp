#include "cgs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cgs {

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

LossGrad g_loss(const Tensor& fake_scores) {
    const int64_t b = fake_scores.numel();
    LossGrad out;
    out.grad = Tensor(fake_scores.shape());
    for (int64_t i = 0; i < b; ++i) {
        out.loss += softplus(-fake_scores[i]);
        out.grad[i] = -sigmoid(-fake_scores[i]) / static_cast<double>(b);
    }
    out.loss /= static_cast<double>(b);
    return out;
}

LossGrad d_loss_real(const Tensor& real_scores) {
    const int64_t b = real_scores.numel();
    LossGrad out;
    out.grad = Tensor(real_scores.shape());
    for (int64_t i = 0; i < b; ++i) {
        out.loss += softplus(-real_scores[i]);
        out.grad[i] = -sigmoid(-real_scores[i]) / static_cast<double>(b);
    }
    out.loss /= static_cast<double>(b);
    return out;
}

LossGrad d_loss_fake(const Tensor& fake_scores) {
    const int64_t b = fake_scores.numel();
    LossGrad out;
    out.grad = Tensor(fake_scores.shape());
    for (int64_t i = 0; i < b; ++i) {
        out.loss += softplus(fake_scores[i]);
        out.grad[i] = sigmoid(fake_scores[i]) / static_cast<double>(b);
    }
    out.loss /= static_cast<double>(b);
    return out;
}

double d_loss_value(const Tensor& real_scores, const Tensor& fake_scores) {
    double loss = 0.0;
    for (int64_t i = 0; i < real_scores.numel(); ++i) loss += softplus(-real_scores[i]);
    loss /= static_cast<double>(real_scores.numel());
    double lf = 0.0;
    for (int64_t i = 0; i < fake_scores.numel(); ++i) lf += softplus(fake_scores[i]);
    return loss + lf / static_cast<double>(fake_scores.numel());
}

R1Result r1_penalty(Discriminator& d, const Tensor& images, const Tensor& labels, double gamma) {
    const int64_t b = images.dim(0);
    d.forward(images, labels);
    Tensor ones({b});
    ones.fill(1.0);
    R1Result out;
    out.input_grads = d.backward(ones, /*param_scale=*/0.0);
    const int64_t per = out.input_grads.numel() / b;
    double acc = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        double n2 = 0.0;
        for (int64_t j = 0; j < per; ++j) {
            const double v = out.input_grads[i * per + j];
            n2 += v * v;
        }
        acc += n2;
    }
    out.penalty = 0.5 * gamma * acc / static_cast<double>(b);
    return out;
}

ScalarGrad center_regularizer(const Tensor& positions, double radius) {
    const int64_t n = positions.dim(0);
    ScalarGrad out;
    out.grad = Tensor({n, 3});
    if (n == 0) return out;
    for (int64_t i = 0; i < n; ++i) {
        const double x = positions.at(i, 0), y = positions.at(i, 1), z = positions.at(i, 2);
        const double norm = std::sqrt(x * x + y * y + z * z);
        const double excess = norm - radius;
        if (excess > 0.0) {
            out.value += excess * excess;
            const double coef = 2.0 * excess / (norm * static_cast<double>(n));
            out.grad.at(i, 0) = coef * x;
            out.grad.at(i, 1) = coef * y;
            out.grad.at(i, 2) = coef * z;
        }
    }
    out.value /= static_cast<double>(n);
    return out;
}

ScalarGrad knn_cluster_regularizer(const Tensor& positions, int k) {
    const int64_t n = positions.dim(0);
    if (n <= k) throw std::invalid_argument("knn_cluster_regularizer: need more anchors than k");
    ScalarGrad out;
    out.grad = Tensor({n, 3});
    std::vector<double> dist2(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double xi = positions.at(i, 0), yi = positions.at(i, 1), zi = positions.at(i, 2);
        for (int64_t j = 0; j < n; ++j) {
            const double dx = xi - positions.at(j, 0);
            const double dy = yi - positions.at(j, 1);
            const double dz = zi - positions.at(j, 2);
            dist2[static_cast<size_t>(j)] = dx * dx + dy * dy + dz * dz;
        }
        dist2[static_cast<size_t>(i)] = std::numeric_limits<double>::infinity();  // exclude self
        // k-th nearest: k=1 is the closest.
        std::vector<int64_t> idx(static_cast<size_t>(n));
        for (int64_t j = 0; j < n; ++j) idx[static_cast<size_t>(j)] = j;
        std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(),
                         [&](int64_t a, int64_t b2) { return dist2[static_cast<size_t>(a)] < dist2[static_cast<size_t>(b2)]; });
        const int64_t jstar = idx[static_cast<size_t>(k - 1)];
        const double dist = std::sqrt(dist2[static_cast<size_t>(jstar)]);
        out.value += dist;
        if (dist > 1e-30) {
            const double inv = 1.0 / (dist * static_cast<double>(n));
            for (int c = 0; c < 3; ++c) {
                const double u = (positions.at(i, c) - positions.at(jstar, c)) * inv;
                out.grad.at(i, c) += u;
                out.grad.at(jstar, c) -= u;
            }
        }
    }
    out.value /= static_cast<double>(n);
    return out;
}

ContrastiveResult contrastive_pose_loss(const Tensor& image_emb, const Tensor& camera_emb,
                                        double tau) {
    if (tau <= 0.0) throw std::invalid_argument("contrastive_pose_loss: tau must be positive");
    const int64_t b = image_emb.dim(0);
    const int64_t d = image_emb.dim(1);
    if (camera_emb.dim(0) != b || camera_emb.dim(1) != d)
        throw std::invalid_argument("contrastive_pose_loss: embedding shape mismatch");

    ContrastiveResult out;
    out.grad_image_emb = Tensor({b, d});
    out.grad_camera_emb = Tensor({b, d});

    // Normalized rows and cosine similarities.
    Tensor ni({b, d}), nc({b, d});
    std::vector<double> inorm(static_cast<size_t>(b)), cnorm(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        double s = 0.0, t = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            s += image_emb.at(i, j) * image_emb.at(i, j);
            t += camera_emb.at(i, j) * camera_emb.at(i, j);
        }
        inorm[static_cast<size_t>(i)] = std::sqrt(std::max(s, 1e-24));
        cnorm[static_cast<size_t>(i)] = std::sqrt(std::max(t, 1e-24));
        for (int64_t j = 0; j < d; ++j) {
            ni.at(i, j) = image_emb.at(i, j) / inorm[static_cast<size_t>(i)];
            nc.at(i, j) = camera_emb.at(i, j) / cnorm[static_cast<size_t>(i)];
        }
    }

    Tensor gni({b, d}), gnc({b, d});
    for (int64_t i = 0; i < b; ++i) {
        // logits over all cameras for image i
        std::vector<double> logits(static_cast<size_t>(b));
        double mx = -1e300;
        for (int64_t j = 0; j < b; ++j) {
            double sim = 0.0;
            for (int64_t c = 0; c < d; ++c) sim += ni.at(i, c) * nc.at(j, c);
            logits[static_cast<size_t>(j)] = sim / tau;
            mx = std::max(mx, logits[static_cast<size_t>(j)]);
        }
        double denom = 0.0;
        for (int64_t j = 0; j < b; ++j) denom += std::exp(logits[static_cast<size_t>(j)] - mx);
        const double log_softmax = logits[static_cast<size_t>(i)] - mx - std::log(denom);
        out.loss += -log_softmax;
        // dL_i/dlogit_j = softmax_j - [j == i]
        for (int64_t j = 0; j < b; ++j) {
            const double soft = std::exp(logits[static_cast<size_t>(j)] - mx) / denom;
            const double glogit = (soft - (j == i ? 1.0 : 0.0)) / (tau * static_cast<double>(b));
            for (int64_t c = 0; c < d; ++c) {
                gni.at(i, c) += glogit * nc.at(j, c);
                gnc.at(j, c) += glogit * ni.at(i, c);
            }
        }
    }
    out.loss /= static_cast<double>(b);

    // Chain through the row normalization.
    auto unnormalize = [d](const Tensor& normed, const Tensor& gnormed,
                           const std::vector<double>& norms, Tensor& gout) {
        const int64_t rows = normed.dim(0);
        for (int64_t i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (int64_t c = 0; c < d; ++c) dot += gnormed.at(i, c) * normed.at(i, c);
            for (int64_t c = 0; c < d; ++c)
                gout.at(i, c) = (gnormed.at(i, c) - dot * normed.at(i, c)) / norms[static_cast<size_t>(i)];
        }
    };
    unnormalize(ni, gni, inorm, out.grad_image_emb);
    unnormalize(nc, gnc, cnorm, out.grad_camera_emb);
    return out;
}

}  // namespace cgs
