#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "asmlab/netspec.hpp"
#include "asmlab/ops.hpp"
#include "asmlab/tensor.hpp"

namespace asmlab {

enum class Role { Predictor, Analyzer, Regularizer, Discriminator };
std::string role_name(Role role);
Role role_from(const std::string& name);

// Instantiated network: spec plus parameter tensors in declaration order
// (per conv repeat: weight, bias, then norm gain/bias when enabled; heads last).
struct Network {
    NetworkSpec spec;
    Role role = Role::Predictor;
    std::vector<Tensor> params;

    std::vector<Tensor>& parameters() { return params; }
    std::int64_t param_count() const;
    void zero_grads();
};

struct ForwardResult {
    std::map<std::string, Tensor> heads;
    std::map<std::string, Tensor> taps;
    Tensor head() const;  // sole head; throws if ambiguous
};

// Deterministic He-style init from seed (fan-in scaled normal, zero biases).
Network build_network(const NetworkSpec& spec, std::uint64_t seed, Role role);

// Runs the layer graph; returns all heads and the requested tap activations
// (post-activation), recorded on one tape.
ForwardResult forward_with_taps(const Network& net,
                                const std::map<std::string, Tensor>& inputs,
                                const std::vector<std::string>& taps, Tape* tape);
ForwardResult forward_with_taps(const Network& net, const Tensor& input,
                                const std::vector<std::string>& taps, Tape* tape);

// Winner-take-all one-hot over channels; ties break toward the lowest index.
// The result is a constant (no gradient path).
Tensor binarize_wta(const Tensor& prediction);

// Checkpoint bytes: "ASMCKPT1", u64-LE spec text length, spec text (role line
// + network spec), little-endian f64 parameter blob in declaration order.
std::string serialize_network(const Network& net);
Network deserialize_network(const std::string& bytes);
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace asmlab
