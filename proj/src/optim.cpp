#include "asmlab/optim.hpp"

#include <cmath>

namespace asmlab {

Optimizer::Optimizer(OptimizerConfig config, std::vector<Tensor> params)
    : config_(config), params_(std::move(params)) {
    buf1_.resize(params_.size());
    buf2_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        buf1_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
        if (config_.kind == OptKind::Adam)
            buf2_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
    }
}

void Optimizer::step(double lr) {
    for (auto& p : params_) {
        if (!p.has_grad()) throw UsageError("optimizer_step: parameter missing gradient");
    }
    ++step_count_;
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        double* v = params_[i].data();
        double* g = params_[i].grad().data();
        const std::int64_t n = params_[i].numel();
        if (config_.weight_decay != 0.0) {
            for (std::int64_t j = 0; j < n; ++j) v[j] *= decay;
        }
        if (config_.kind == OptKind::SgdMomentum) {
            double* m = buf1_[i].data();
            for (std::int64_t j = 0; j < n; ++j) {
                m[j] = config_.momentum * m[j] + g[j];
                v[j] -= lr * m[j];
            }
        } else {
            double* m = buf1_[i].data();
            double* s = buf2_[i].data();
            const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
            const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
            for (std::int64_t j = 0; j < n; ++j) {
                m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
                s[j] = config_.beta2 * s[j] + (1.0 - config_.beta2) * g[j] * g[j];
                const double mh = m[j] / bc1;
                const double sh = s[j] / bc2;
                v[j] -= lr * mh / (std::sqrt(sh) + config_.eps);
            }
        }
        check_finite(params_[i], "optimizer_step parameters");
        params_[i].zero_grad();
    }
}

double poly_lr(double base_lr, std::int64_t iter, std::int64_t max_iter, double power) {
    if (max_iter <= 0) throw UsageError("poly_lr: max_iter must be positive");
    if (iter < 0 || iter > max_iter) {
        throw UsageError("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                         std::to_string(max_iter) + "]");
    }
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
    return base_lr * std::pow(frac, power);
}

double clip_gradients(std::vector<Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) throw UsageError("clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (auto& p : params) {
        if (!p.has_grad()) continue;
        const auto& g = p.grad_view();
        for (double x : g) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double k = max_norm / norm;
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (double& x : p.grad()) x *= k;
        }
    }
    return norm;
}

}  // namespace asmlab
