#include "asmlab/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "asmlab/rng.hpp"

namespace asmlab {

namespace {
constexpr char kMagic[] = "ASMCKPT1";
constexpr std::size_t kMagicLen = 8;
}  // namespace

std::string role_name(Role role) {
    switch (role) {
        case Role::Predictor: return "predictor";
        case Role::Analyzer: return "analyzer";
        case Role::Regularizer: return "regularizer";
        case Role::Discriminator: return "discriminator";
    }
    return "predictor";
}

Role role_from(const std::string& name) {
    if (name == "predictor") return Role::Predictor;
    if (name == "analyzer") return Role::Analyzer;
    if (name == "regularizer") return Role::Regularizer;
    if (name == "discriminator") return Role::Discriminator;
    throw FormatError("unknown network role '" + name + "'");
}

std::int64_t Network::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
}

void Network::zero_grads() {
    for (auto& p : params) p.zero_grad();
}

Tensor ForwardResult::head() const {
    if (heads.size() != 1) {
        throw UsageError("network has " + std::to_string(heads.size()) +
                         " heads; name one explicitly");
    }
    return heads.begin()->second;
}

Network build_network(const NetworkSpec& spec, std::uint64_t seed, Role role) {
    spec.validate();
    Network net;
    net.spec = spec;
    net.role = role;
    Rng rng(derive_seed(seed, 0xA5));

    auto add_conv = [&](int in_ch, int out_ch, int k) {
        Tensor w = Tensor::zeros({out_ch, in_ch, k, k}, true);
        const double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
        for (std::int64_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.normal(0.0, std);
        net.params.push_back(w);
        net.params.push_back(Tensor::zeros({out_ch}, true));
        if (spec.channel_norm) {
            net.params.push_back(Tensor::full({out_ch}, 1.0, true));
            net.params.push_back(Tensor::zeros({out_ch}, true));
        }
    };

    std::map<std::string, int> ch;
    for (const auto& [name, c] : spec.input_channels) ch[name] = c;
    for (const auto& l : spec.layers) {
        int in_ch = 0;
        for (const auto& in : l.inputs) in_ch += ch.at(in);
        add_conv(in_ch, l.out_channels, l.kernel);
        for (int r = 1; r < l.repeat; ++r) add_conv(l.out_channels, l.out_channels, l.kernel);
        ch[l.name] = l.out_channels;
    }
    for (const auto& h : spec.heads) {
        // heads are plain 1x1 convs, never normalized
        Tensor w = Tensor::zeros({h.channels, ch.at(h.from), 1, 1}, true);
        const double std = std::sqrt(2.0 / static_cast<double>(ch.at(h.from)));
        for (std::int64_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.normal(0.0, std);
        net.params.push_back(w);
        net.params.push_back(Tensor::zeros({h.channels}, true));
    }
    return net;
}

ForwardResult forward_with_taps(const Network& net, const std::map<std::string, Tensor>& inputs,
                                const std::vector<std::string>& taps, Tape* tape) {
    const NetworkSpec& spec = net.spec;
    for (const auto& [name, c] : spec.input_channels) {
        auto it = inputs.find(name);
        if (it == inputs.end()) throw UsageError("missing network input '" + name + "'");
        if (it->second.rank() != 4 || it->second.dim(1) != c) {
            throw ConfigError("input '" + name + "' must be NCHW with " + std::to_string(c) +
                              " channels, got " + shape_str(it->second.shape()));
        }
    }
    for (const auto& t : taps) {
        if (!spec.has_layer(t)) throw UsageError("unknown tap layer '" + t + "'");
    }

    std::map<std::string, Tensor> acts;
    for (const auto& [name, t] : inputs) acts[name] = t;

    std::size_t pi = 0;
    const int per_conv = spec.channel_norm ? 4 : 2;
    for (const auto& l : spec.layers) {
        std::vector<netdetail::Extent> extents;
        std::vector<Tensor> sources;
        for (const auto& in : l.inputs) {
            const Tensor& a = acts.at(in);
            extents.push_back(netdetail::Extent{static_cast<int>(a.dim(1)), a.dim(2), a.dim(3)});
            sources.push_back(a);
        }
        netdetail::GatherPlan plan = netdetail::plan_gather(l, extents);
        for (std::size_t i = 0; i < sources.size(); ++i) {
            if (plan.factors[i] > 1) sources[i] = bilinear_upsample(sources[i], plan.factors[i], tape);
        }
        Tensor x = sources.size() == 1 ? sources[0] : concat_channels(sources, tape);
        for (int r = 0; r < l.repeat; ++r) {
            x = conv2d(x, net.params[pi], net.params[pi + 1], l.stride, Pad::same(), tape);
            if (spec.channel_norm) {
                x = channel_norm(x, net.params[pi + 2], net.params[pi + 3], 1e-5, tape);
            }
            x = relu(x, tape);
            pi += static_cast<std::size_t>(per_conv);
        }
        acts[l.name] = x;
    }

    ForwardResult result;
    for (const auto& h : spec.heads) {
        Tensor src = acts.at(h.from);
        if (spec.gap_heads) src = global_avg_pool(src, tape);
        Tensor y = conv2d(src, net.params[pi], net.params[pi + 1], 1, Pad::same(), tape);
        pi += 2;
        if (h.role == HeadRole::Depth) y = softplus(y, tape);
        result.heads[h.name] = y;
    }
    for (const auto& t : taps) result.taps[t] = acts.at(t);
    return result;
}

ForwardResult forward_with_taps(const Network& net, const Tensor& input,
                                const std::vector<std::string>& taps, Tape* tape) {
    if (net.spec.input_channels.size() != 1) {
        throw UsageError("network takes multiple inputs; pass them by name");
    }
    return forward_with_taps(net, {{net.spec.input_channels.begin()->first, input}}, taps, tape);
}

Tensor binarize_wta(const Tensor& prediction) {
    if (prediction.rank() != 4) throw UsageError("binarize_wta: expected NCHW prediction");
    const std::int64_t n = prediction.dim(0), c = prediction.dim(1);
    const std::int64_t plane = prediction.dim(2) * prediction.dim(3);
    if (c < 2) throw UsageError("binarize_wta: needs >= 2 channels (segmentation only)");
    Tensor out = Tensor::zeros(prediction.shape());
    const double* x = prediction.data();
    double* y = out.data();
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t px = 0; px < plane; ++px) {
            const std::int64_t base = bn * c * plane + px;
            std::int64_t best = 0;
            double best_v = x[base];
            for (std::int64_t ch = 1; ch < c; ++ch) {
                const double v = x[base + ch * plane];
                if (v > best_v) {
                    best_v = v;
                    best = ch;
                }
            }
            y[base + best * plane] = 1.0;
        }
    }
    return out;
}

namespace {

void put_u64_le(std::string& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::string& s, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

void put_f64_le(std::string& s, double d) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
    put_u64_le(s, bits);
}

double get_f64_le(const std::string& s, std::size_t off) {
    return std::bit_cast<double>(get_u64_le(s, off));
}

}  // namespace

std::string serialize_network(const Network& net) {
    std::string text = "role " + role_name(net.role) + "\n" + net.spec.to_text();
    std::string out(kMagic, kMagicLen);
    put_u64_le(out, text.size());
    out += text;
    for (const auto& p : net.params) {
        for (std::int64_t i = 0; i < p.numel(); ++i) put_f64_le(out, p.data()[i]);
    }
    return out;
}

Network deserialize_network(const std::string& bytes) {
    if (bytes.size() < kMagicLen + 8 || bytes.compare(0, kMagicLen, kMagic) != 0) {
        throw FormatError("checkpoint: bad or missing magic (expected ASMCKPT1)");
    }
    const std::uint64_t text_len = get_u64_le(bytes, kMagicLen);
    const std::size_t text_off = kMagicLen + 8;
    if (bytes.size() < text_off + text_len) throw FormatError("checkpoint: truncated spec text");
    const std::string text = bytes.substr(text_off, text_len);

    std::istringstream is(text);
    std::string role_line;
    if (!std::getline(is, role_line) || role_line.rfind("role ", 0) != 0) {
        throw FormatError("checkpoint: missing role line");
    }
    const Role role = role_from(role_line.substr(5));
    std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    NetworkSpec spec = NetworkSpec::from_text(rest);

    Network net = build_network(spec, 0, role);
    std::size_t off = text_off + text_len;
    for (auto& p : net.params) {
        const std::size_t need = static_cast<std::size_t>(p.numel()) * 8;
        if (bytes.size() < off + need) throw FormatError("checkpoint: truncated parameter blob");
        for (std::int64_t i = 0; i < p.numel(); ++i, off += 8) p.data()[i] = get_f64_le(bytes, off);
    }
    if (off != bytes.size()) throw FormatError("checkpoint: trailing bytes after parameter blob");
    return net;
}

void save_network(const Network& net, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + path + "'");
    const std::string bytes = serialize_network(net);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to '" + path + "'");
}

Network load_network(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_network(ss.str());
}

}  // namespace asmlab
