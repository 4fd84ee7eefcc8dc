#include "asmlab/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace asmlab {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    for (auto d : shape) {
        if (d <= 0) throw ConfigError("tensor: non-positive extent in shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values.assign(static_cast<std::size_t>(shape_numel(t.node_->shape)), value);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ConfigError("tensor: values.len " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

std::vector<double>& Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
}

Tensor Tensor::detached() const {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = node_->shape;
    t.node_->values = node_->values;
    t.node_->requires_grad = false;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t = detached();
    t.node_->requires_grad = node_->requires_grad;
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->values[0];
}

void Tape::record(std::string op_name, std::function<void()> backward_fn,
                  std::vector<Tensor> touched) {
    steps_.push_back(Step{std::move(op_name), std::move(backward_fn), std::move(touched)});
}

void Tape::backward(Tensor& loss) {
    if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
    check_finite(loss, "loss");
    loss.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        it->fn();
        for (auto& t : it->touched) {
            if (t.has_grad()) {
                check_finite(t.grad_view().data(), t.numel(), "backward of " + it->name);
            }
        }
    }
}

void check_finite(const double* p, std::int64_t n, const std::string& where) {
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) {
            throw NumericError("non-finite value in " + where + " at flat index " + std::to_string(i));
        }
    }
}

void check_finite(const Tensor& t, const std::string& where) {
    check_finite(t.data(), t.numel(), where);
}

}  // namespace asmlab
