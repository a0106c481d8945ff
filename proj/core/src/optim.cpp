#include "cgs/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cgs {

Adam::Adam(nn::ParamRefs params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (nn::Param* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        nn::Param* p = params_[i];
        const double lr = cfg_.lr * p->lr_mult;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p->value.numel(); ++j) {
            const double g = p->grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p->value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (nn::Param* p : params_) p->zero_grad();
}

std::map<std::string, Tensor> Adam::state() const {
    std::map<std::string, Tensor> out;
    for (size_t i = 0; i < params_.size(); ++i) {
        out[params_[i]->name + ".m"] = m_[i];
        out[params_[i]->name + ".v"] = v_[i];
    }
    return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& state, int64_t steps) {
    for (size_t i = 0; i < params_.size(); ++i) {
        auto im = state.find(params_[i]->name + ".m");
        auto iv = state.find(params_[i]->name + ".v");
        if (im == state.end() || iv == state.end())
            throw std::invalid_argument("Adam::load_state: missing moments for " +
                                        params_[i]->name);
        if (im->second.numel() != m_[i].numel())
            throw std::invalid_argument("Adam::load_state: shape mismatch for " +
                                        params_[i]->name);
        m_[i] = im->second;
        v_[i] = iv->second;
    }
    t_ = steps;
}

void ema_update(nn::ParamRefs ema_params, const nn::ParamRefs& live_params, double beta) {
    if (ema_params.size() != live_params.size())
        throw std::invalid_argument("ema_update: parameter count mismatch");
    for (size_t i = 0; i < ema_params.size(); ++i) {
        Tensor& e = ema_params[i]->value;
        const Tensor& l = live_params[i]->value;
        if (e.numel() != l.numel())
            throw std::invalid_argument("ema_update: shape mismatch at " + ema_params[i]->name);
        for (int64_t j = 0; j < e.numel(); ++j) e[j] = beta * e[j] + (1.0 - beta) * l[j];
    }
}

double ema_beta(int64_t batch_size, double halflife_images) {
    if (halflife_images <= 0.0) return 0.0;
    return std::pow(0.5, static_cast<double>(batch_size) / halflife_images);
}

}  // namespace cgs
