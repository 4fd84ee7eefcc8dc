#pragma once

#include <cstdint>
#include <vector>

#include "asmlab/tensor.hpp"

namespace asmlab {

enum class OptKind { SgdMomentum, Adam };

struct OptimizerConfig {
    OptKind kind = OptKind::Adam;
    double base_lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 0.0;  // decoupled shrinkage: p *= (1 - lr*wd)
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Owns auxiliary buffers for a fixed parameter list. step() applies the update
// rule in place and clears gradients; every parameter must carry a gradient.
class Optimizer {
public:
    Optimizer(OptimizerConfig config, std::vector<Tensor> params);

    void step(double lr);
    std::int64_t step_count() const { return step_count_; }
    const OptimizerConfig& config() const { return config_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    OptimizerConfig config_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> buf1_;  // momentum / first moment
    std::vector<std::vector<double>> buf2_;  // second moment (adam)
    std::int64_t step_count_ = 0;
};

// base_lr * (1 - iter/max_iter)^power
double poly_lr(double base_lr, std::int64_t iter, std::int64_t max_iter, double power = 0.9);

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm; returns the pre-clip norm.
double clip_gradients(std::vector<Tensor>& params, double max_norm);

}  // namespace asmlab
