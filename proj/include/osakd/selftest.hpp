#ifndef OSAKD_SELFTEST_HPP
#define OSAKD_SELFTEST_HPP

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "osakd/train.hpp"

namespace osakd {

/// Scalar-valued function of a parameter list, rebuilt from scratch on
/// every call so it can be probed by finite differences.
using ScalarFn = std::function<double(const std::vector<Tensor>&)>;

/// Analytic gradients of the same function via one tape recording.
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst; // "param i coord j"
    bool ok(double tol = 1e-4) const { return max_rel_err < tol; }
};

/// Central finite differences (eps=1e-5 by default) against the analytic
/// gradient. Relative error uses max(|analytic|, |numeric|, 1e-3) as the
/// denominator: coordinates above 1e-3 are held to the full relative
/// tolerance, tinier ones to the matching absolute one (the finite-difference
/// noise floor sits near 1e-10 for these losses).
inline GradCheckResult gradient_check(const ScalarFn& f, const GradFn& grad,
                                      std::vector<Tensor> params, double eps = 1e-5) {
    const std::vector<Tensor> analytic = grad(params);
    GradCheckResult res;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t j = 0; j < params[pi].numel(); ++j) {
            const double orig = params[pi][j];
            params[pi][j] = orig + eps;
            const double fp = f(params);
            params[pi][j] = orig - eps;
            const double fm = f(params);
            params[pi][j] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][j];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = "param " + std::to_string(pi) + " coord " + std::to_string(j);
            }
        }
    }
    return res;
}

/// Random values bounded away from zero, so relu/maxpool kinks cannot sit
/// inside the finite-difference stencil.
inline Tensor random_tensor_off_kinks(const Shape& shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    return t;
}

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// A differentiable-op fixture for the gradient suite: builds a scalar from
/// the given parameters on a fresh tape.
struct GradCase {
    std::string name;
    std::vector<Shape> param_shapes;
    // records the op under test and reduces it to a scalar via sum_all
    std::function<Var(Tape&, const std::vector<Var>&)> build;
};

inline std::vector<GradCase> standard_grad_cases() {
    std::vector<GradCase> cases;
    cases.push_back({"matmul",
                     {{3, 4}, {4, 2}},
                     [](Tape& t, const std::vector<Var>& p) {
                         return sum_all(t, matmul(t, p[0], p[1]));
                     }});
    cases.push_back({"conv2d",
                     {{2, 2, 6, 6}, {3, 2, 3, 3}, {3}},
                     [](Tape& t, const std::vector<Var>& p) {
                         return sum_all(t, conv2d(t, p[0], p[1], p[2]));
                     }});
    cases.push_back({"maxpool2d",
                     {{1, 2, 6, 6}},
                     [](Tape& t, const std::vector<Var>& p) {
                         return sum_all(t, maxpool2d(t, p[0]));
                     }});
    cases.push_back({"relu",
                     {{4, 5}},
                     [](Tape& t, const std::vector<Var>& p) {
                         return sum_all(t, relu(t, p[0]));
                     }});
    cases.push_back({"softmax",
                     {{3, 5}, {5, 2}},
                     [](Tape& t, const std::vector<Var>& p) {
                         // project the rows so the gradient is not identically zero
                         return sum_all(t, matmul(t, softmax(t, p[0]), p[1]));
                     }});
    cases.push_back({"add_bias",
                     {{3, 4}, {4}},
                     [](Tape& t, const std::vector<Var>& p) {
                         return sum_all(t, add_bias(t, p[0], p[1]));
                     }});
    cases.push_back({"cross_entropy",
                     {{4, 3}},
                     [](Tape& t, const std::vector<Var>& p) {
                         Var probs = softmax(t, p[0]);
                         return cross_entropy(t, probs, {0, 2, 1, 2});
                     }});
    cases.push_back({"distill_mse",
                     {{4, 3}},
                     [](Tape& t, const std::vector<Var>& p) {
                         Var probs = softmax(t, p[0]);
                         SoftLabelSet soft{Tensor(Shape{4, 3},
                                                  {0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.25, 0.25,
                                                   0.5, 1.0, 0.0, 0.0}),
                                           4};
                         return distill_mse(t, probs, soft);
                     }});
    cases.push_back({"osakd_loss",
                     {{4, 3}},
                     [](Tape& t, const std::vector<Var>& p) {
                         Var probs = softmax(t, p[0]);
                         SoftLabelSet soft{Tensor(Shape{4, 3},
                                                  {0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.25, 0.25,
                                                   0.5, 1.0, 0.0, 0.0}),
                                           4};
                         return osakd_loss(t, probs, {0, 2, 1, 2}, soft, 0.9).node;
                     }});
    return cases;
}

/// Runs gradient_check on one GradCase with the given RNG stream.
inline GradCheckResult run_grad_case(const GradCase& gc, std::mt19937_64& rng) {
    std::vector<Tensor> params;
    for (const Shape& s : gc.param_shapes) params.push_back(random_tensor_off_kinks(s, rng));
    ScalarFn f = [&gc](const std::vector<Tensor>& p) {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& t : p) vars.push_back(tape.leaf(t));
        return tape.value(gc.build(tape, vars)).scalar_value();
    };
    GradFn g = [&gc](const std::vector<Tensor>& p) {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& t : p) vars.push_back(tape.leaf(t));
        tape.backward(gc.build(tape, vars));
        std::vector<Tensor> grads;
        for (Var v : vars) grads.push_back(tape.grad(v));
        return grads;
    };
    return gradient_check(f, g, std::move(params));
}

inline SuiteResult selftest_gradients(std::size_t instances_per_case = 5,
                                      std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    for (const GradCase& gc : standard_grad_cases())
        for (std::size_t i = 0; i < instances_per_case; ++i) {
            const GradCheckResult r = run_grad_case(gc, rng);
            if (!r.ok())
                return {"gradients", false,
                        gc.name + ": max rel err " + std::to_string(r.max_rel_err) + " at " +
                            r.worst};
        }
    return {"gradients", true, ""};
}

/// Brute-force soft labels: full pairwise distance matrix plus full sort.
/// Kept independent of the production k-NN path on purpose.
inline SoftLabelSet brute_force_soft_labels(const Tensor& probs,
                                            const std::vector<int>& hard_labels,
                                            std::size_t k) {
    const std::size_t b = probs.dim(0), c = probs.dim(1);
    SoftLabelSet out{Tensor(Shape{b, c}), k};
    std::vector<double> dist(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t d = 0; d < c; ++d) {
                const double diff = probs[i * c + d] - probs[j * c + d];
                dist[i * b + j] += diff * diff;
            }
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<std::size_t> order;
        for (std::size_t j = 0; j < b; ++j)
            if (j != i) order.push_back(j);
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            if (dist[i * b + x] != dist[i * b + y]) return dist[i * b + x] < dist[i * b + y];
            return x < y;
        });
        for (std::size_t n = 0; n < k; ++n)
            out.targets[i * c + static_cast<std::size_t>(hard_labels[order[n]])] +=
                1.0 / static_cast<double>(k);
    }
    return out;
}

inline SuiteResult selftest_knn_oracle(std::size_t trials = 200, std::uint64_t seed = 11) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t ks[] = {1, 8, 16};
    const std::size_t cs[] = {2, 10};
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t k = ks[t % 3];
        const std::size_t c = cs[t % 2];
        std::uniform_int_distribution<std::size_t> bdist(k + 1, 64);
        const std::size_t b = bdist(rng);
        Tensor probs(Shape{b, c});
        for (std::size_t i = 0; i < probs.numel(); ++i) probs[i] = unif(rng);
        std::vector<int> labels(b);
        std::uniform_int_distribution<int> ldist(0, static_cast<int>(c) - 1);
        for (int& l : labels) l = ldist(rng);
        const SoftLabelSet got = batch_soft_labels(probs, labels, k);
        const SoftLabelSet want = brute_force_soft_labels(probs, labels, k);
        for (std::size_t i = 0; i < got.targets.numel(); ++i)
            if (got.targets[i] != want.targets[i])
                return {"knn_oracle", false,
                        "mismatch at trial " + std::to_string(t) + " entry " +
                            std::to_string(i)};
    }
    return {"knn_oracle", true, ""};
}

inline SuiteResult selftest_loss_identities(std::uint64_t seed = 13) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits(Shape{6, 4});
        for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] = unif(rng);
        std::vector<int> labels = {0, 1, 2, 3, 1, 2};
        Tape tape;
        Var lv = tape.leaf(logits);
        Var probs = softmax(tape, lv);
        SoftLabelSet soft = batch_soft_labels(tape.value(probs), labels, 3);
        const Var ce = cross_entropy(tape, probs, labels);
        const OsakdLoss at1 = osakd_loss(tape, probs, labels, soft, 1.0);
        if (tape.value(at1.node)[0] != tape.value(ce)[0])
            return {"loss_identities", false, "lambda=1 total != cross entropy"};
        const OsakdLoss mixed = osakd_loss(tape, probs, labels, soft, 0.9);
        const LossValue& v = mixed.value;
        if (std::abs(v.total - (v.lambda * v.ce_part + (1 - v.lambda) * v.sd_part)) > 1e-12)
            return {"loss_identities", false, "component identity violated"};
    }
    return {"loss_identities", true, ""};
}

/// Trains the blob MLP on far-separated clusters; both baseline and OSAKD
/// must reach 99% train accuracy within 30 epochs.
inline SuiteResult selftest_blobs_learning() {
    const Dataset train = make_blobs(2, 200, 2, 8.0, 42);
    const ModelSpec spec = blob_mlp(2, 16, 2);
    for (const std::size_t k : {std::size_t{0}, std::size_t{8}}) {
        TrainConfig cfg;
        cfg.model = "blobs";
        cfg.dataset = "blobs";
        cfg.k = k;
        cfg.lambda = 0.9;
        cfg.epochs = 30;
        cfg.batch_size = 64;
        cfg.lr = 0.05;
        cfg.momentum = 0.9;
        cfg.seed = 1;
        ParamSet params = build(spec, cfg.seed);
        Velocity vel = zero_velocity(params);
        double acc = 0.0;
        for (std::size_t e = 0; e < cfg.epochs && acc < 0.99; ++e) {
            train_epoch(cfg, spec, train, params, vel, e);
            acc = evaluate(spec, params, train);
        }
        if (acc < 0.99)
            return {"blobs_learning", false,
                    "k=" + std::to_string(k) + " reached only " + std::to_string(acc)};
    }
    return {"blobs_learning", true, ""};
}

inline std::vector<SuiteResult> run_selftest() {
    return {selftest_gradients(), selftest_knn_oracle(), selftest_loss_identities(),
            selftest_blobs_learning()};
}

} // namespace osakd

#endif
