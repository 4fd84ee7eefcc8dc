#include "asmlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace asmlab {

double rel_error(double a, double b) {
    const double diff = std::abs(a - b);
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return diff / denom;
}

GradCheckReport grad_check(const std::function<Tensor(Tape*)>& loss_fn,
                           std::vector<Tensor> params, double step, double tolerance,
                           std::int64_t max_probes) {
    GradCheckReport report;
    report.tolerance = tolerance;

    for (auto& p : params) p.zero_grad();
    Tape tape;
    Tensor loss = loss_fn(&tape);
    check_finite(loss, "grad_check loss");
    tape.backward(loss);

    std::int64_t total = 0;
    for (auto& p : params) total += p.numel();
    const std::int64_t budget = std::min<std::int64_t>(max_probes, total);
    // spread probes evenly over the concatenated parameter vector
    const std::int64_t stride = std::max<std::int64_t>(1, total / budget);

    std::int64_t flat = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        const std::int64_t n = p.numel();
        for (std::int64_t j = 0; j < n; ++j, ++flat) {
            if (flat % stride != 0) continue;
            const double analytic = p.has_grad() ? p.grad_view()[static_cast<std::size_t>(j)] : 0.0;
            const double orig = p.data()[j];
            p.data()[j] = orig + step;
            const double fp = loss_fn(nullptr).item();
            p.data()[j] = orig - step;
            const double fm = loss_fn(nullptr).item();
            p.data()[j] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("grad_check: non-finite loss at probe point");
            }
            const double numeric = (fp - fm) / (2.0 * step);
            const double err = rel_error(analytic, numeric);
            ++report.probes;
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_location =
                    "param " + std::to_string(pi) + " elem " + std::to_string(j);
            }
        }
    }
    for (auto& p : params) p.zero_grad();
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace asmlab
