#include <cmath>

#include "asmlab/gradcheck.hpp"
#include "asmlab/optim.hpp"
#include "asmlab/ops.hpp"
#include "asmlab/rng.hpp"
#include "doctest.h"

using namespace asmlab;

TEST_CASE("vanilla sgd step") {
    Tensor p = Tensor::scalar(1.0, true);
    p.grad()[0] = 2.0;
    OptimizerConfig cfg;
    cfg.kind = OptKind::SgdMomentum;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    Optimizer opt(cfg, {p});
    opt.step(0.1);
    CHECK(p.item() == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(opt.step_count() == 1);
    // gradients cleared
    CHECK(p.grad_view()[0] == 0.0);
}

TEST_CASE("adam first step magnitude is about lr") {
    for (double g : {2.0, -0.5, 1e-3}) {
        Tensor p = Tensor::scalar(1.0, true);
        p.grad()[0] = g;
        OptimizerConfig cfg;
        cfg.kind = OptKind::Adam;
        cfg.base_lr = 0.01;
        Optimizer opt(cfg, {p});
        opt.step(0.01);
        // bias-corrected first step: lr * g / (|g| + eps_hat)
        CHECK(std::abs(std::abs(p.item() - 1.0) - 0.01) < 1e-6);
        CHECK((g > 0 ? p.item() < 1.0 : p.item() > 1.0));
    }
}

TEST_CASE("decay-only step shrinks by (1 - lr*wd)") {
    Tensor p = Tensor::scalar(4.0, true);
    p.grad()[0] = 0.0;
    OptimizerConfig cfg;
    cfg.kind = OptKind::SgdMomentum;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.01;
    Optimizer opt(cfg, {p});
    opt.step(0.5);
    CHECK(p.item() == doctest::Approx(4.0 * (1.0 - 0.5 * 0.01)).epsilon(1e-15));
}

TEST_CASE("missing gradient is a usage error") {
    Tensor p = Tensor::scalar(1.0, true);
    Optimizer opt(OptimizerConfig{}, {p});
    CHECK_THROWS_AS(opt.step(0.1), UsageError);
}

TEST_CASE("sgd momentum accumulates velocity") {
    Tensor p = Tensor::scalar(0.0, true);
    OptimizerConfig cfg;
    cfg.kind = OptKind::SgdMomentum;
    cfg.momentum = 0.5;
    Optimizer opt(cfg, {p});
    p.grad()[0] = 1.0;
    opt.step(1.0);  // v=1, p=-1
    p.grad()[0] = 1.0;
    opt.step(1.0);  // v=1.5, p=-2.5
    CHECK(p.item() == doctest::Approx(-2.5).epsilon(1e-15));
}

TEST_CASE("poly_lr schedule") {
    CHECK(poly_lr(0.001, 0, 100) == doctest::Approx(0.001).epsilon(1e-15));
    CHECK(poly_lr(0.001, 100, 100) == doctest::Approx(0.0));
    CHECK(poly_lr(0.001, 50, 100, 0.9) ==
          doctest::Approx(0.001 * std::pow(0.5, 0.9)).epsilon(1e-15));
    CHECK_THROWS_AS(poly_lr(0.001, 101, 100), UsageError);
    CHECK_THROWS_AS(poly_lr(0.001, 5, 0), UsageError);

    // monotone non-increasing in iter
    double prev = poly_lr(0.01, 0, 37, 0.9);
    for (int it = 1; it <= 37; ++it) {
        const double cur = poly_lr(0.01, it, 37, 0.9);
        CHECK(cur <= prev + 1e-18);
        prev = cur;
    }
}

TEST_CASE("clip_gradients") {
    SUBCASE("below threshold is a no-op") {
        Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
        p.grad() = {3.0, 4.0};
        std::vector<Tensor> ps{p};
        CHECK(clip_gradients(ps, 10.0) == doctest::Approx(5.0).epsilon(1e-15));
        CHECK(p.grad_view() == std::vector<double>{3.0, 4.0});
    }
    SUBCASE("scales to max_norm") {
        Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
        p.grad() = {3.0, 4.0};
        std::vector<Tensor> ps{p};
        CHECK(clip_gradients(ps, 1.0) == doctest::Approx(5.0).epsilon(1e-15));
        CHECK(p.grad_view()[0] == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(p.grad_view()[1] == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("global norm across tensors") {
        Tensor a = Tensor::from({2}, {0.0, 0.0}, true);
        Tensor b = Tensor::from({2}, {0.0, 0.0}, true);
        a.grad() = {1.0, 0.0};
        b.grad() = {0.0, 1.0};
        std::vector<Tensor> ps{a, b};
        const double pre = clip_gradients(ps, 1.0);
        CHECK(pre == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
        CHECK(a.grad_view()[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
        CHECK(b.grad_view()[1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
        // never increases the norm
        double post = 0.0;
        for (auto& t : ps)
            for (double g : t.grad_view()) post += g * g;
        CHECK(std::sqrt(post) <= 1.0 + 1e-12);
    }
}

TEST_CASE("grad_check on a 3-layer conv net with relu and L2 loss") {
    Rng rng(41);
    auto rand_t = [&](Shape s, bool rg) {
        Tensor t = Tensor::zeros(s, rg);
        for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.5 * rng.normal();
        return t;
    };
    Tensor x = rand_t({1, 1, 8, 8}, false);
    Tensor w1 = rand_t({4, 1, 3, 3}, true), b1 = rand_t({4}, true);
    Tensor w2 = rand_t({4, 4, 3, 3}, true), b2 = rand_t({4}, true);
    Tensor w3 = rand_t({2, 4, 3, 3}, true), b3 = rand_t({2}, true);
    Tensor target = rand_t({1, 2, 1, 1}, false);
    auto loss = [&](Tape* tape) {
        Tensor h1 = relu(conv2d(x, w1, b1, 1, Pad::same(), tape), tape);
        Tensor h2 = relu(conv2d(h1, w2, b2, 2, Pad::same(), tape), tape);
        Tensor h3 = conv2d(h2, w3, b3, 1, Pad::same(), tape);
        Tensor pooled = global_avg_pool(h3, tape);
        Tensor d = sub(pooled, target, tape);
        return scale(sum_all(mul(d, d, tape), tape), 0.5, tape);
    };
    auto report = grad_check(loss, {w1, b1, w2, b2, w3, b3}, 1e-6, 1e-5);
    CHECK_MESSAGE(report.pass, report.worst_location, " err=", report.max_rel_error);
}
