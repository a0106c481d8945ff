#pragma once

#include "cgs/discriminator.hpp"
#include "cgs/tensor.hpp"

namespace cgs {

double softplus(double x);

struct LossGrad {
    double loss = 0.0;
    Tensor grad;  // w.r.t. the scores
};

/// Non-saturating generator loss: mean softplus(-fake).
LossGrad g_loss(const Tensor& fake_scores);

/// Critic loss halves: mean softplus(-real) and mean softplus(fake).
LossGrad d_loss_real(const Tensor& real_scores);
LossGrad d_loss_fake(const Tensor& fake_scores);
double d_loss_value(const Tensor& real_scores, const Tensor& fake_scores);

struct R1Result {
    double penalty = 0.0;   // (gamma/2) * E[ ||grad_x d||^2 ]
    Tensor input_grads;     // [B,3,H,W] gradient of the summed scores
};

/// Exact first-order R1 penalty on a real batch (no parameter-gradient side
/// effects). The training loop turns this into a parameter update via a
/// finite-difference Hessian-vector product.
R1Result r1_penalty(Discriminator& d, const Tensor& images, const Tensor& labels, double gamma);

struct ScalarGrad {
    double value = 0.0;
    Tensor grad;  // w.r.t. positions [N,3]
};

/// mean_i max(0, |p_i| - r0)^2 over primitive positions.
ScalarGrad center_regularizer(const Tensor& positions, double radius = 0.45);

/// Mean distance to the k-th nearest neighbor (exact, O(N^2)).
/// Throws std::invalid_argument when N <= k.
ScalarGrad knn_cluster_regularizer(const Tensor& positions, int k = 3);

struct ContrastiveResult {
    double loss = 0.0;
    Tensor grad_image_emb;   // [B,D]
    Tensor grad_camera_emb;  // [B,D]
};

/// GSGAN-style InfoNCE pose loss over matched (image, camera) embedding rows
/// (ablation, default OFF in training): L = -log softmax(sim/tau) averaged.
/// Throws std::invalid_argument when tau <= 0.
ContrastiveResult contrastive_pose_loss(const Tensor& image_emb, const Tensor& camera_emb,
                                        double tau);

}  // namespace cgs
