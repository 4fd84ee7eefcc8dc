#pragma once

#include <vector>

#include "asmlab/tensor.hpp"

namespace asmlab {

// Padding for conv2d: "same" keeps ceil(H/stride), explicit pads a fixed ring.
struct Pad {
    enum Kind { Same, Explicit } kind = Same;
    int amount = 0;
    static Pad same() { return Pad{Same, 0}; }
    static Pad fixed(int p) { return Pad{Explicit, p}; }
};

// All primitives compute forward values immediately. When `tape` is non-null
// and any input requires grad, a backward closure is recorded; with a null
// tape they run in inference mode. Every forward output is finiteness-checked.

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, Pad pad, Tape* tape);

Tensor bilinear_upsample(const Tensor& input, int factor, Tape* tape);

Tensor relu(const Tensor& t, Tape* tape);
Tensor sigmoid(const Tensor& t, Tape* tape);
Tensor softplus(const Tensor& t, Tape* tape);
// log(max(x, floor)); derivative 0 in the clamped region
Tensor log_clamped(const Tensor& t, double floor, Tape* tape);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape);
Tensor scale(const Tensor& t, double k, Tape* tape);

Tensor concat_channels(const std::vector<Tensor>& parts, Tape* tape);
Tensor softmax_channels(const Tensor& t, Tape* tape);

// mean over N*H*W of [logsumexp(logits) - sum_c target_c * logit_c];
// target is treated as a constant (per-pixel weights summing to 1).
Tensor softmax_xent_mean(const Tensor& logits, const Tensor& target, Tape* tape);

Tensor global_avg_pool(const Tensor& t, Tape* tape);

Tensor sum_all(const Tensor& t, Tape* tape);
Tensor mean_all(const Tensor& t, Tape* tape);

// Per-pixel unit L2 normalization over the channel axis (norm floored at eps).
Tensor normalize_channels(const Tensor& t, double eps, Tape* tape);

// Per-channel affine normalization over spatial extent (optional layer).
Tensor channel_norm(const Tensor& t, const Tensor& gain, const Tensor& bias,
                    double eps, Tape* tape);

}  // namespace asmlab
