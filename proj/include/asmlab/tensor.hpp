#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "asmlab/errors.hpp"

namespace asmlab {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
};
}  // namespace detail

// Dense 64-bit float array with value semantics over shared storage.
// 4-D data follows NCHW.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->values.size()); }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }

    double* data() { return node_->values.data(); }
    const double* data() const { return node_->values.data(); }
    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Allocates a zero gradient buffer on first use.
    std::vector<double>& grad();
    const std::vector<double>& grad_view() const { return node_->grad; }
    void zero_grad();
    void drop_grad() { node_->grad.clear(); node_->grad.shrink_to_fit(); }

    // Same storage, detached from any gradient flow.
    Tensor detached() const;
    // Deep copy of values (fresh storage).
    Tensor clone() const;

    double item() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// Records primitive operations in execution order; backward() replays the
// recorded closures in exact reverse order.
class Tape {
public:
    void record(std::string op_name, std::function<void()> backward_fn,
                std::vector<Tensor> touched);

    // Seeds d(loss)=1 and runs all closures in reverse recording order.
    // loss must be a scalar recorded on this tape.
    void backward(Tensor& loss);

    std::size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

private:
    struct Step {
        std::string name;
        std::function<void()> fn;
        std::vector<Tensor> touched;
    };
    std::vector<Step> steps_;
};

// Throws NumericError naming `where` if any value is NaN/Inf.
void check_finite(const double* p, std::int64_t n, const std::string& where);
void check_finite(const Tensor& t, const std::string& where);

}  // namespace asmlab
