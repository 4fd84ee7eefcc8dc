#pragma once

#include <functional>
#include <string>
#include <vector>

#include "asmlab/tensor.hpp"

namespace asmlab {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_location;
    std::int64_t probes = 0;
    double tolerance = 0.0;
    bool pass = false;
};

// Compares tape gradients of a scalar-valued graph against central finite
// differences over the given parameters. `loss_fn` must rebuild the graph from
// current parameter values; it receives a tape (nullptr for probe evaluations).
// At most `max_probes` elements are perturbed, chosen with a deterministic
// stride over each parameter tensor.
GradCheckReport grad_check(const std::function<Tensor(Tape*)>& loss_fn,
                           std::vector<Tensor> params, double step, double tolerance,
                           std::int64_t max_probes = 256);

double rel_error(double a, double b);

}  // namespace asmlab
