#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "osakd/loss.hpp"
#include "osakd/selftest.hpp"

using namespace osakd;

namespace {

Tensor random_probs(std::size_t b, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.01, 1.0);
    Tensor p(Shape{b, c});
    for (std::size_t i = 0; i < b; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) {
            p[i * c + j] = unif(rng);
            s += p[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) p[i * c + j] /= s;
    }
    return p;
}

} // namespace

TEST_CASE("cross entropy basics") {
    Tape t;
    // near-perfect prediction -> loss near 0
    Var good = t.leaf(Tensor(Shape{1, 2}, {1.0 - 1e-9, 1e-9}));
    CHECK(t.value(cross_entropy(t, good, {0}))[0] == doctest::Approx(0.0).epsilon(1e-8));

    // uniform probs -> ln C
    Var unif = t.leaf(Tensor(Shape{2, 4}, 0.25));
    CHECK(t.value(cross_entropy(t, unif, {3, 1}))[0] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // hand evaluation
    Var p = t.leaf(Tensor(Shape{2, 2}, {0.7, 0.3, 0.2, 0.8}));
    CHECK(t.value(cross_entropy(t, p, {0, 1}))[0] ==
          doctest::Approx(-(std::log(0.7) + std::log(0.8)) / 2).epsilon(1e-12));
}

TEST_CASE("cross entropy floors zero probability instead of producing NaN") {
    Tape t;
    Var p = t.leaf(Tensor(Shape{1, 2}, {0.0, 1.0}));
    Var loss = cross_entropy(t, p, {0});
    CHECK(std::isfinite(t.value(loss)[0]));
    t.backward(loss);
    CHECK(t.grad(p).all_finite());
}

TEST_CASE("distill_mse basics") {
    std::mt19937_64 rng(3);
    Tape t;
    const Tensor p = random_probs(4, 3, rng);
    Var pv = t.leaf(p);
    SoftLabelSet same{p, 8};
    CHECK(t.value(distill_mse(t, pv, same))[0] == 0.0);

    Var u = t.leaf(Tensor(Shape{1, 2}, {0.5, 0.5}));
    SoftLabelSet onehot{Tensor(Shape{1, 2}, {1.0, 0.0}), 1};
    CHECK(t.value(distill_mse(t, u, onehot))[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("distill_mse equals double-loop reference") {
    std::mt19937_64 rng(4);
    const Tensor p = random_probs(4, 3, rng);
    const Tensor s = random_probs(4, 3, rng);
    double want = 0;
    for (std::size_t i = 0; i < 12; ++i) want += (p[i] - s[i]) * (p[i] - s[i]);
    want /= 12.0;
    Tape t;
    CHECK(t.value(distill_mse(t, t.leaf(p), SoftLabelSet{s, 8}))[0] ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("distill_mse rejects shape mismatch") {
    Tape t;
    Var p = t.leaf(Tensor(Shape{2, 3}));
    CHECK_THROWS_AS(distill_mse(t, p, SoftLabelSet{Tensor(Shape{2, 4}), 8}), DimensionError);
}

TEST_CASE("distill_mse symmetric under class-column permutation") {
    std::mt19937_64 rng(5);
    const Tensor p = random_probs(4, 3, rng);
    const Tensor s = random_probs(4, 3, rng);
    const std::size_t perm[3] = {2, 0, 1};
    Tensor pp(Shape{4, 3}), sp(Shape{4, 3});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            pp[i * 3 + j] = p[i * 3 + perm[j]];
            sp[i * 3 + j] = s[i * 3 + perm[j]];
        }
    Tape t;
    CHECK(t.value(distill_mse(t, t.leaf(p), SoftLabelSet{s, 8}))[0] ==
          t.value(distill_mse(t, t.leaf(pp), SoftLabelSet{sp, 8}))[0]);
}

TEST_CASE("osakd_loss at lambda=1 is bitwise cross entropy with identical gradient") {
    std::mt19937_64 rng(6);
    const Tensor logits = random_tensor_off_kinks({4, 3}, rng);
    const std::vector<int> labels = {0, 2, 1, 1};
    SoftLabelSet soft{random_probs(4, 3, rng), 8};

    Tape t1;
    Var l1 = t1.leaf(logits);
    Var p1 = softmax(t1, l1);
    Var ce = cross_entropy(t1, p1, labels);
    t1.backward(ce);

    Tape t2;
    Var l2 = t2.leaf(logits);
    Var p2 = softmax(t2, l2);
    OsakdLoss combined = osakd_loss(t2, p2, labels, soft, 1.0);
    t2.backward(combined.node);

    CHECK(t2.value(combined.node)[0] == t1.value(ce)[0]);
    for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(t2.grad(l2)[i] == t1.grad(l1)[i]);
}

TEST_CASE("osakd_loss component identity at reference weightings") {
    std::mt19937_64 rng(7);
    const Tensor logits = random_tensor_off_kinks({4, 3}, rng);
    const std::vector<int> labels = {0, 2, 1, 1};
    for (double lambda : {0.9, 0.99}) {
        Tape t;
        Var p = softmax(t, t.leaf(logits));
        SoftLabelSet soft = batch_soft_labels(t.value(p), labels, 3);
        const OsakdLoss got = osakd_loss(t, p, labels, soft, lambda);
        const LossValue& v = got.value;
        CHECK(v.total ==
              doctest::Approx(lambda * v.ce_part + (1 - lambda) * v.sd_part).epsilon(1e-12));
        CHECK(v.total == t.value(got.node)[0]);
    }
}

TEST_CASE("osakd_loss rejects lambda outside [0,1]") {
    Tape t;
    Var p = t.leaf(Tensor(Shape{2, 2}, 0.5));
    SoftLabelSet soft{Tensor(Shape{2, 2}, 0.5), 1};
    CHECK_THROWS_AS(osakd_loss(t, p, {0, 1}, soft, 1.5), ConfigError);
    CHECK_THROWS_AS(osakd_loss(t, p, {0, 1}, soft, -0.1), ConfigError);
}

TEST_CASE("gradient of osakd_loss is the lambda-blend of component gradients") {
    std::mt19937_64 rng(8);
    const Tensor logits = random_tensor_off_kinks({4, 3}, rng);
    const std::vector<int> labels = {1, 0, 2, 1};
    SoftLabelSet soft{random_probs(4, 3, rng), 4};
    const double lambda = 0.7;

    auto grad_of = [&](auto&& loss_builder) {
        Tape t;
        Var l = t.leaf(logits);
        Var p = softmax(t, l);
        t.backward(loss_builder(t, p));
        return t.grad(l);
    };
    const Tensor g_ce = grad_of([&](Tape& t, Var p) { return cross_entropy(t, p, labels); });
    const Tensor g_sd = grad_of([&](Tape& t, Var p) { return distill_mse(t, p, soft); });
    const Tensor g_mix = grad_of(
        [&](Tape& t, Var p) { return osakd_loss(t, p, labels, soft, lambda).node; });
    for (std::size_t i = 0; i < logits.numel(); ++i)
        CHECK(g_mix[i] ==
              doctest::Approx(lambda * g_ce[i] + (1 - lambda) * g_sd[i]).epsilon(1e-12));
}

TEST_CASE("loss gradients pass finite-difference checks") {
    std::mt19937_64 rng(9);
    for (const GradCase& gc : standard_grad_cases()) {
        if (gc.name != "cross_entropy" && gc.name != "distill_mse" && gc.name != "osakd_loss")
            continue;
        for (int i = 0; i < 5; ++i) {
            const GradCheckResult r = run_grad_case(gc, rng);
            CHECK_MESSAGE(r.max_rel_err < 1e-4, gc.name << ": " << r.worst);
        }
    }
}
