#include "asmlab/ops.hpp"

#include <algorithm>
#include <cmath>

namespace asmlab {

namespace {

bool tracked(Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void require_4d(const Tensor& t, const char* op) {
    if (t.rank() != 4) {
        throw ConfigError(std::string(op) + ": expected 4-D NCHW tensor, got " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
    }
}

struct ConvDims {
    std::int64_t n, ci, h, w, co, k, oh, ow;
    int stride, pad_top, pad_left;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   int stride, Pad pad) {
    require_4d(input, "conv2d");
    require_4d(weight, "conv2d weight");
    ConvDims d{};
    d.n = input.dim(0);
    d.ci = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.co = weight.dim(0);
    d.k = weight.dim(2);
    d.stride = stride;
    if (weight.dim(2) != weight.dim(3)) {
        throw ConfigError("conv2d: non-square kernel " + shape_str(weight.shape()));
    }
    if (d.k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(d.k));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (weight.dim(1) != d.ci) {
        throw ConfigError("conv2d: input has " + std::to_string(d.ci) + " channels, weight expects " +
                          std::to_string(weight.dim(1)));
    }
    if (bias.rank() != 1 || bias.dim(0) != d.co) {
        throw ConfigError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                          std::to_string(d.co) + " output channels");
    }
    if (pad.kind == Pad::Same) {
        d.oh = (d.h + stride - 1) / stride;
        d.ow = (d.w + stride - 1) / stride;
        std::int64_t pt = std::max<std::int64_t>((d.oh - 1) * stride + d.k - d.h, 0);
        std::int64_t pl = std::max<std::int64_t>((d.ow - 1) * stride + d.k - d.w, 0);
        d.pad_top = static_cast<int>(pt / 2);
        d.pad_left = static_cast<int>(pl / 2);
    } else {
        if (pad.amount < 0) throw ConfigError("conv2d: negative padding");
        d.oh = (d.h + 2 * pad.amount - d.k) / stride + 1;
        d.ow = (d.w + 2 * pad.amount - d.k) / stride + 1;
        if (d.oh < 1 || d.ow < 1) {
            throw ConfigError("conv2d: kernel larger than padded input");
        }
        d.pad_top = pad.amount;
        d.pad_left = pad.amount;
    }
    return d;
}

// valid output range [lo, hi) such that 0 <= o*stride - pad + koff < extent
void out_range(std::int64_t extent, std::int64_t out_extent, int stride, int pad,
               std::int64_t koff, std::int64_t& lo, std::int64_t& hi) {
    std::int64_t shift = koff - pad;  // i = o*stride + shift
    lo = shift < 0 ? (-shift + stride - 1) / stride : 0;
    hi = extent - shift;  // o*stride < extent - shift
    hi = hi <= 0 ? 0 : (hi + stride - 1) / stride;
    hi = std::min(hi, out_extent);
    lo = std::min(lo, hi);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, Pad pad, Tape* tape) {
    ConvDims d = conv_dims(input, weight, bias, stride, pad);
    Tensor out = Tensor::zeros({d.n, d.co, d.oh, d.ow});

    const double* in = input.data();
    const double* wt = weight.data();
    const double* bs = bias.data();
    double* o = out.data();

    const std::int64_t in_plane = d.h * d.w;
    const std::int64_t out_plane = d.oh * d.ow;
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t oc = 0; oc < d.co; ++oc) {
            double* op = o + (n * d.co + oc) * out_plane;
            std::fill(op, op + out_plane, bs[oc]);
            for (std::int64_t ic = 0; ic < d.ci; ++ic) {
                const double* ip = in + (n * d.ci + ic) * in_plane;
                const double* wp = wt + (oc * d.ci + ic) * d.k * d.k;
                for (std::int64_t ky = 0; ky < d.k; ++ky) {
                    std::int64_t ylo, yhi;
                    out_range(d.h, d.oh, d.stride, d.pad_top, ky, ylo, yhi);
                    for (std::int64_t kx = 0; kx < d.k; ++kx) {
                        const double wv = wp[ky * d.k + kx];
                        if (wv == 0.0) continue;
                        std::int64_t xlo, xhi;
                        out_range(d.w, d.ow, d.stride, d.pad_left, kx, xlo, xhi);
                        for (std::int64_t oy = ylo; oy < yhi; ++oy) {
                            const std::int64_t iy = oy * d.stride - d.pad_top + ky;
                            const double* irow = ip + iy * d.w - d.pad_left + kx;
                            double* orow = op + oy * d.ow;
                            if (d.stride == 1) {
                                for (std::int64_t ox = xlo; ox < xhi; ++ox) orow[ox] += wv * irow[ox];
                            } else {
                                for (std::int64_t ox = xlo; ox < xhi; ++ox)
                                    orow[ox] += wv * irow[ox * d.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    check_finite(out, "conv2d forward");

    if (tracked(tape, {&input, &weight, &bias})) {
        out.set_requires_grad(true);
        Tensor in_t = input, w_t = weight, b_t = bias, out_t = out;
        tape->record(
            "conv2d",
            [in_t, w_t, b_t, out_t, d]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                const std::int64_t in_plane = d.h * d.w;
                const std::int64_t out_plane = d.oh * d.ow;
                if (b_t.requires_grad()) {
                    double* gb = b_t.grad().data();
                    for (std::int64_t n = 0; n < d.n; ++n)
                        for (std::int64_t oc = 0; oc < d.co; ++oc) {
                            const double* gop = go + (n * d.co + oc) * out_plane;
                            double s = 0.0;
                            for (std::int64_t i = 0; i < out_plane; ++i) s += gop[i];
                            gb[oc] += s;
                        }
                }
                const bool need_gi = in_t.requires_grad();
                const bool need_gw = w_t.requires_grad();
                if (!need_gi && !need_gw) return;
                double* gi = need_gi ? in_t.grad().data() : nullptr;
                double* gw = need_gw ? w_t.grad().data() : nullptr;
                const double* in = in_t.data();
                const double* wt = w_t.data();
                for (std::int64_t n = 0; n < d.n; ++n) {
                    for (std::int64_t oc = 0; oc < d.co; ++oc) {
                        const double* gop = go + (n * d.co + oc) * out_plane;
                        for (std::int64_t ic = 0; ic < d.ci; ++ic) {
                            const std::int64_t ib = (n * d.ci + ic) * in_plane;
                            const std::int64_t wb = (oc * d.ci + ic) * d.k * d.k;
                            for (std::int64_t ky = 0; ky < d.k; ++ky) {
                                std::int64_t ylo, yhi;
                                out_range(d.h, d.oh, d.stride, d.pad_top, ky, ylo, yhi);
                                for (std::int64_t kx = 0; kx < d.k; ++kx) {
                                    std::int64_t xlo, xhi;
                                    out_range(d.w, d.ow, d.stride, d.pad_left, kx, xlo, xhi);
                                    const double wv = wt[wb + ky * d.k + kx];
                                    double acc = 0.0;
                                    for (std::int64_t oy = ylo; oy < yhi; ++oy) {
                                        const std::int64_t iy = oy * d.stride - d.pad_top + ky;
                                        const std::int64_t irow = ib + iy * d.w - d.pad_left + kx;
                                        const double* gorow = gop + oy * d.ow;
                                        for (std::int64_t ox = xlo; ox < xhi; ++ox) {
                                            const double g = gorow[ox];
                                            const std::int64_t ix = irow + ox * d.stride;
                                            if (need_gi) gi[ix] += wv * g;
                                            acc += in[ix] * g;
                                        }
                                    }
                                    if (need_gw) gw[wb + ky * d.k + kx] += acc;
                                }
                            }
                        }
                    }
                }
            },
            {input, weight, bias, out});
    }
    return out;
}

Tensor bilinear_upsample(const Tensor& input, int factor, Tape* tape) {
    require_4d(input, "bilinear_upsample");
    if (factor < 2) throw ConfigError("bilinear_upsample: factor must be >= 2");
    const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::int64_t oh = h * factor, ow = w * factor;

    // half-pixel-center source coordinates, precomputed per output axis
    struct Lerp {
        std::int64_t i0, i1;
        double w1;  // weight of i1; i0 gets (1 - w1)
    };
    auto make_axis = [factor](std::int64_t in_extent, std::int64_t out_extent) {
        std::vector<Lerp> v(static_cast<std::size_t>(out_extent));
        for (std::int64_t o = 0; o < out_extent; ++o) {
            double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
            src = std::min(std::max(src, 0.0), static_cast<double>(in_extent - 1));
            std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
            std::int64_t i1 = std::min(i0 + 1, in_extent - 1);
            v[static_cast<std::size_t>(o)] = Lerp{i0, i1, src - static_cast<double>(i0)};
        }
        return v;
    };
    const auto ys = make_axis(h, oh);
    const auto xs = make_axis(w, ow);

    Tensor out = Tensor::zeros({n, c, oh, ow});
    const double* in = input.data();
    double* o = out.data();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const double* ip = in + nc * h * w;
        double* op = o + nc * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const auto& ly = ys[static_cast<std::size_t>(oy)];
            const double* r0 = ip + ly.i0 * w;
            const double* r1 = ip + ly.i1 * w;
            double* orow = op + oy * ow;
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const auto& lx = xs[static_cast<std::size_t>(ox)];
                const double top = r0[lx.i0] * (1.0 - lx.w1) + r0[lx.i1] * lx.w1;
                const double bot = r1[lx.i0] * (1.0 - lx.w1) + r1[lx.i1] * lx.w1;
                orow[ox] = top * (1.0 - ly.w1) + bot * ly.w1;
            }
        }
    }
    check_finite(out, "bilinear_upsample forward");

    if (tracked(tape, {&input})) {
        out.set_requires_grad(true);
        Tensor in_t = input, out_t = out;
        tape->record(
            "bilinear_upsample",
            [in_t, out_t, ys, xs, n, c, h, w, oh, ow]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                double* gi = in_t.grad().data();
                for (std::int64_t nc = 0; nc < n * c; ++nc) {
                    double* gip = gi + nc * h * w;
                    const double* gop = go + nc * oh * ow;
                    for (std::int64_t oy = 0; oy < oh; ++oy) {
                        const auto& ly = ys[static_cast<std::size_t>(oy)];
                        for (std::int64_t ox = 0; ox < ow; ++ox) {
                            const auto& lx = xs[static_cast<std::size_t>(ox)];
                            const double g = gop[oy * ow + ox];
                            gip[ly.i0 * w + lx.i0] += g * (1.0 - ly.w1) * (1.0 - lx.w1);
                            gip[ly.i0 * w + lx.i1] += g * (1.0 - ly.w1) * lx.w1;
                            gip[ly.i1 * w + lx.i0] += g * ly.w1 * (1.0 - lx.w1);
                            gip[ly.i1 * w + lx.i1] += g * ly.w1 * lx.w1;
                        }
                    }
                }
            },
            {input, out});
    }
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& t, Tape* tape, Fwd fwd, Bwd bwd) {
    Tensor out = Tensor::zeros(t.shape());
    const double* x = t.data();
    double* y = out.data();
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
    check_finite(out, std::string(name) + " forward");
    if (tracked(tape, {&t})) {
        out.set_requires_grad(true);
        Tensor in_t = t, out_t = out;
        tape->record(
            name,
            [in_t, out_t, bwd]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                const double* x = in_t.data();
                const double* y = out_t.data();
                double* gi = in_t.grad().data();
                const std::int64_t n = in_t.numel();
                for (std::int64_t i = 0; i < n; ++i) gi[i] += go[i] * bwd(x[i], y[i]);
            },
            {t, out});
    }
    return out;
}

}  // namespace

Tensor relu(const Tensor& t, Tape* tape) {
    return unary_op(
        "relu", t, tape, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& t, Tape* tape) {
    return unary_op(
        "sigmoid", t, tape,
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& t, Tape* tape) {
    return unary_op(
        "softplus", t, tape,
        [](double x) {
            if (x > 30.0) return x;
            if (x < -30.0) return std::exp(x);
            return std::log1p(std::exp(x));
        },
        [](double x, double) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        });
}

Tensor log_clamped(const Tensor& t, double floor, Tape* tape) {
    return unary_op(
        "log", t, tape, [floor](double x) { return std::log(std::max(x, floor)); },
        [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

namespace {

template <typename FwdAB, typename BwdA, typename BwdB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Tape* tape, FwdAB fwd,
                 BwdA bwd_a, BwdB bwd_b) {
    require_same_shape(a, b, name);
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* y = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) y[i] = fwd(pa[i], pb[i]);
    check_finite(out, std::string(name) + " forward");
    if (tracked(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor at = a, bt = b, out_t = out;
        tape->record(
            name,
            [at, bt, out_t, bwd_a, bwd_b]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                const std::int64_t n = out_t.numel();
                if (at.requires_grad()) {
                    double* ga = at.grad().data();
                    const double* pa = at.data();
                    const double* pb = bt.data();
                    for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i] * bwd_a(pa[i], pb[i]);
                }
                if (bt.requires_grad()) {
                    double* gb = bt.grad().data();
                    const double* pa = at.data();
                    const double* pb = bt.data();
                    for (std::int64_t i = 0; i < n; ++i) gb[i] += go[i] * bwd_b(pa[i], pb[i]);
                }
            },
            {a, b, out});
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_op(
        "add", a, b, tape, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_op(
        "sub", a, b, tape, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_op(
        "mul", a, b, tape, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& t, double k, Tape* tape) {
    return unary_op(
        "scale", t, tape, [k](double x) { return k * x; },
        [k](double, double) { return k; });
}

Tensor concat_channels(const std::vector<Tensor>& parts, Tape* tape) {
    if (parts.empty()) throw ConfigError("concat: no operands");
    require_4d(parts[0], "concat");
    const std::int64_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    std::int64_t c_total = 0;
    for (const auto& p : parts) {
        require_4d(p, "concat");
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw ConfigError("concat: operand shape " + shape_str(p.shape()) +
                              " incompatible with " + shape_str(parts[0].shape()));
        }
        c_total += p.dim(1);
    }
    Tensor out = Tensor::zeros({n, c_total, h, w});
    const std::int64_t plane = h * w;
    double* o = out.data();
    for (std::int64_t bn = 0; bn < n; ++bn) {
        std::int64_t c_off = 0;
        for (const auto& p : parts) {
            const std::int64_t pc = p.dim(1);
            std::copy(p.data() + bn * pc * plane, p.data() + (bn + 1) * pc * plane,
                      o + (bn * c_total + c_off) * plane);
            c_off += pc;
        }
    }

    bool any = false;
    for (const auto& p : parts)
        if (tape && p.requires_grad()) any = true;
    if (any) {
        out.set_requires_grad(true);
        std::vector<Tensor> held = parts;
        Tensor out_t = out;
        std::vector<Tensor> touched = parts;
        touched.push_back(out);
        tape->record(
            "concat",
            [held, out_t, n, c_total, plane]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                for (std::int64_t bn = 0; bn < n; ++bn) {
                    std::int64_t c_off = 0;
                    for (auto& p : held) {
                        const std::int64_t pc = p.dim(1);
                        if (p.requires_grad()) {
                            double* gp = p.grad().data();
                            const double* src = go + (bn * c_total + c_off) * plane;
                            double* dst = gp + bn * pc * plane;
                            for (std::int64_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
                        }
                        c_off += pc;
                    }
                }
            },
            touched);
    }
    return out;
}

Tensor softmax_channels(const Tensor& t, Tape* tape) {
    require_4d(t, "softmax");
    const std::int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
    const std::int64_t plane = h * w;
    Tensor out = Tensor::zeros(t.shape());
    const double* x = t.data();
    double* y = out.data();
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t px = 0; px < plane; ++px) {
            const std::int64_t base = bn * c * plane + px;
            double m = x[base];
            for (std::int64_t ch = 1; ch < c; ++ch) m = std::max(m, x[base + ch * plane]);
            double s = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double e = std::exp(x[base + ch * plane] - m);
                y[base + ch * plane] = e;
                s += e;
            }
            const double inv = 1.0 / s;
            for (std::int64_t ch = 0; ch < c; ++ch) y[base + ch * plane] *= inv;
        }
    }
    check_finite(out, "softmax forward");
    if (tracked(tape, {&t})) {
        out.set_requires_grad(true);
        Tensor in_t = t, out_t = out;
        tape->record(
            "softmax",
            [in_t, out_t, n, c, plane]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                const double* y = out_t.data();
                double* gi = in_t.grad().data();
                for (std::int64_t bn = 0; bn < n; ++bn) {
                    for (std::int64_t px = 0; px < plane; ++px) {
                        const std::int64_t base = bn * c * plane + px;
                        double dot = 0.0;
                        for (std::int64_t ch = 0; ch < c; ++ch)
                            dot += go[base + ch * plane] * y[base + ch * plane];
                        for (std::int64_t ch = 0; ch < c; ++ch) {
                            const std::int64_t i = base + ch * plane;
                            gi[i] += y[i] * (go[i] - dot);
                        }
                    }
                }
            },
            {t, out});
    }
    return out;
}

Tensor softmax_xent_mean(const Tensor& logits, const Tensor& target, Tape* tape) {
    require_4d(logits, "softmax_xent");
    require_same_shape(logits, target, "softmax_xent");
    const std::int64_t n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const std::int64_t plane = h * w;
    const std::int64_t pixels = n * plane;
    Tensor probs = Tensor::zeros(logits.shape());
    const double* x = logits.data();
    const double* tg = target.data();
    double* p = probs.data();
    double total = 0.0;
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t px = 0; px < plane; ++px) {
            const std::int64_t base = bn * c * plane + px;
            double m = x[base];
            for (std::int64_t ch = 1; ch < c; ++ch) m = std::max(m, x[base + ch * plane]);
            double s = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double e = std::exp(x[base + ch * plane] - m);
                p[base + ch * plane] = e;
                s += e;
            }
            const double lse = m + std::log(s);
            const double inv = 1.0 / s;
            double dot = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const std::int64_t i = base + ch * plane;
                p[i] *= inv;
                dot += tg[i] * x[i];
            }
            total += lse - dot;
        }
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(pixels));
    check_finite(out, "softmax_xent forward");
    if (tracked(tape, {&logits})) {
        out.set_requires_grad(true);
        Tensor in_t = logits, tg_t = target, p_t = probs, out_t = out;
        tape->record(
            "softmax_xent",
            [in_t, tg_t, p_t, out_t, pixels]() mutable {
                if (!out_t.has_grad()) return;
                const double g = out_t.grad_view()[0] / static_cast<double>(pixels);
                double* gi = in_t.grad().data();
                const double* p = p_t.data();
                const double* tg = tg_t.data();
                const std::int64_t sz = in_t.numel();
                for (std::int64_t i = 0; i < sz; ++i) gi[i] += g * (p[i] - tg[i]);
            },
            {logits, out});
    }
    return out;
}

Tensor global_avg_pool(const Tensor& t, Tape* tape) {
    require_4d(t, "global_avg_pool");
    const std::int64_t n = t.dim(0), c = t.dim(1), plane = t.dim(2) * t.dim(3);
    Tensor out = Tensor::zeros({n, c, 1, 1});
    const double* x = t.data();
    double* y = out.data();
    for (std::int64_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        const double* px = x + i * plane;
        for (std::int64_t j = 0; j < plane; ++j) s += px[j];
        y[i] = s / static_cast<double>(plane);
    }
    check_finite(out, "global_avg_pool forward");
    if (tracked(tape, {&t})) {
        out.set_requires_grad(true);
        Tensor in_t = t, out_t = out;
        tape->record(
            "global_avg_pool",
            [in_t, out_t, n, c, plane]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                double* gi = in_t.grad().data();
                for (std::int64_t i = 0; i < n * c; ++i) {
                    const double g = go[i] / static_cast<double>(plane);
                    double* gp = gi + i * plane;
                    for (std::int64_t j = 0; j < plane; ++j) gp[j] += g;
                }
            },
            {t, out});
    }
    return out;
}

Tensor sum_all(const Tensor& t, Tape* tape) {
    const double* x = t.data();
    double s = 0.0;
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) s += x[i];
    Tensor out = Tensor::scalar(s);
    check_finite(out, "sum forward");
    if (tracked(tape, {&t})) {
        out.set_requires_grad(true);
        Tensor in_t = t, out_t = out;
        tape->record(
            "sum",
            [in_t, out_t]() mutable {
                if (!out_t.has_grad()) return;
                const double g = out_t.grad_view()[0];
                double* gi = in_t.grad().data();
                const std::int64_t n = in_t.numel();
                for (std::int64_t i = 0; i < n; ++i) gi[i] += g;
            },
            {t, out});
    }
    return out;
}

Tensor mean_all(const Tensor& t, Tape* tape) {
    return scale(sum_all(t, tape), 1.0 / static_cast<double>(t.numel()), tape);
}

Tensor normalize_channels(const Tensor& t, double eps, Tape* tape) {
    require_4d(t, "normalize_channels");
    const std::int64_t n = t.dim(0), c = t.dim(1), plane = t.dim(2) * t.dim(3);
    Tensor out = Tensor::zeros(t.shape());
    const double* x = t.data();
    double* y = out.data();
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t px = 0; px < plane; ++px) {
            const std::int64_t base = bn * c * plane + px;
            double sq = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double v = x[base + ch * plane];
                sq += v * v;
            }
            const double r = std::sqrt(sq);
            const double inv = 1.0 / std::max(r, eps);
            for (std::int64_t ch = 0; ch < c; ++ch) y[base + ch * plane] = x[base + ch * plane] * inv;
        }
    }
    check_finite(out, "normalize_channels forward");
    if (tracked(tape, {&t})) {
        out.set_requires_grad(true);
        Tensor in_t = t, out_t = out;
        tape->record(
            "normalize_channels",
            [in_t, out_t, n, c, plane, eps]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                const double* x = in_t.data();
                const double* y = out_t.data();
                double* gi = in_t.grad().data();
                for (std::int64_t bn = 0; bn < n; ++bn) {
                    for (std::int64_t px = 0; px < plane; ++px) {
                        const std::int64_t base = bn * c * plane + px;
                        double sq = 0.0;
                        for (std::int64_t ch = 0; ch < c; ++ch) {
                            const double v = x[base + ch * plane];
                            sq += v * v;
                        }
                        const double r = std::sqrt(sq);
                        if (r > eps) {
                            double dot = 0.0;
                            for (std::int64_t ch = 0; ch < c; ++ch)
                                dot += go[base + ch * plane] * y[base + ch * plane];
                            for (std::int64_t ch = 0; ch < c; ++ch) {
                                const std::int64_t i = base + ch * plane;
                                gi[i] += (go[i] - y[i] * dot) / r;
                            }
                        } else {
                            for (std::int64_t ch = 0; ch < c; ++ch) {
                                const std::int64_t i = base + ch * plane;
                                gi[i] += go[i] / eps;
                            }
                        }
                    }
                }
            },
            {t, out});
    }
    return out;
}

Tensor channel_norm(const Tensor& t, const Tensor& gain, const Tensor& bias, double eps,
                    Tape* tape) {
    require_4d(t, "channel_norm");
    const std::int64_t n = t.dim(0), c = t.dim(1), plane = t.dim(2) * t.dim(3);
    if (gain.rank() != 1 || gain.dim(0) != c || bias.rank() != 1 || bias.dim(0) != c) {
        throw ConfigError("channel_norm: gain/bias must have one entry per channel");
    }
    Tensor out = Tensor::zeros(t.shape());
    // per (n, c): normalize over spatial extent
    std::vector<double> means(static_cast<std::size_t>(n * c));
    std::vector<double> inv_stds(static_cast<std::size_t>(n * c));
    const double* x = t.data();
    const double* gn = gain.data();
    const double* bs = bias.data();
    double* y = out.data();
    for (std::int64_t i = 0; i < n * c; ++i) {
        const double* px = x + i * plane;
        double m = 0.0;
        for (std::int64_t j = 0; j < plane; ++j) m += px[j];
        m /= static_cast<double>(plane);
        double v = 0.0;
        for (std::int64_t j = 0; j < plane; ++j) {
            const double d = px[j] - m;
            v += d * d;
        }
        v /= static_cast<double>(plane);
        const double inv = 1.0 / std::sqrt(v + eps);
        means[static_cast<std::size_t>(i)] = m;
        inv_stds[static_cast<std::size_t>(i)] = inv;
        const double g = gn[i % c], b = bs[i % c];
        double* py = y + i * plane;
        for (std::int64_t j = 0; j < plane; ++j) py[j] = g * (px[j] - m) * inv + b;
    }
    check_finite(out, "channel_norm forward");
    if (tracked(tape, {&t, &gain, &bias})) {
        out.set_requires_grad(true);
        Tensor in_t = t, g_t = gain, b_t = bias, out_t = out;
        tape->record(
            "channel_norm",
            [in_t, g_t, b_t, out_t, means, inv_stds, n, c, plane]() mutable {
                if (!out_t.has_grad()) return;
                const double* go = out_t.grad_view().data();
                const double* x = in_t.data();
                const double* gn = g_t.data();
                for (std::int64_t i = 0; i < n * c; ++i) {
                    const double m = means[static_cast<std::size_t>(i)];
                    const double inv = inv_stds[static_cast<std::size_t>(i)];
                    const double g = gn[i % c];
                    const double* px = x + i * plane;
                    const double* pg = go + i * plane;
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::int64_t j = 0; j < plane; ++j) {
                        sum_g += pg[j];
                        sum_gx += pg[j] * (px[j] - m) * inv;
                    }
                    if (g_t.requires_grad()) g_t.grad()[static_cast<std::size_t>(i % c)] += sum_gx;
                    if (b_t.requires_grad()) b_t.grad()[static_cast<std::size_t>(i % c)] += sum_g;
                    if (in_t.requires_grad()) {
                        double* gi = in_t.grad().data() + i * plane;
                        const double k = g * inv / static_cast<double>(plane);
                        for (std::int64_t j = 0; j < plane; ++j) {
                            const double xn = (px[j] - m) * inv;
                            gi[j] += k * (static_cast<double>(plane) * pg[j] - sum_g - xn * sum_gx);
                        }
                    }
                }
            },
            {t, gain, bias, out});
    }
    return out;
}

}  // namespace asmlab
