#ifndef OSAKD_LOSS_HPP
#define OSAKD_LOSS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "osakd/knn.hpp"
#include "osakd/ops.hpp"

namespace osakd {

/// Scalar loss with its component breakdown; total = lambda*ce + (1-lambda)*sd.
struct LossValue {
    double total = 0.0;
    double ce_part = 0.0;
    double sd_part = 0.0;
    double lambda = 1.0;
};

constexpr double kProbFloor = 1e-12;

/// Mean over the batch of -log(prob at the true class). Probabilities are
/// floored at 1e-12 so a zero never produces NaN.
inline Var cross_entropy(Tape& tape, Var probs, const std::vector<int>& hard_labels) {
    const Tensor& p = tape.value(probs);
    if (p.rank() != 2)
        throw DimensionError("cross_entropy: expected BxC probabilities, got " +
                             shape_str(p.shape()));
    const std::size_t b = p.dim(0), c = p.dim(1);
    if (hard_labels.size() != b)
        throw DimensionError("cross_entropy: " + std::to_string(hard_labels.size()) +
                             " labels for batch of " + std::to_string(b));
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const int y = hard_labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw ConfigError("cross_entropy: label " + std::to_string(y) +
                              " outside [0," + std::to_string(c) + ")");
        loss -= std::log(std::max(p[i * c + static_cast<std::size_t>(y)], kProbFloor));
    }
    loss /= static_cast<double>(b);
    const Var v = detail::next_var(tape);
    auto labels = std::make_shared<std::vector<int>>(hard_labels);
    return tape.record(Tensor::scalar(loss), [probs, v, labels, b, c](Tape& t) {
        const double g = t.grad(v)[0];
        const Tensor& p = t.value(probs);
        Tensor& gp = t.grad_buf(probs);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t j = i * c + static_cast<std::size_t>((*labels)[i]);
            gp[j] += g * (-1.0 / (static_cast<double>(b) * std::max(p[j], kProbFloor)));
        }
    });
}

/// Mean over batch and classes of (probs - soft)^2. The soft labels are
/// constants; the gradient reaches probs only.
inline Var distill_mse(Tape& tape, Var probs, const SoftLabelSet& soft) {
    const Tensor& p = tape.value(probs);
    if (!p.same_shape(soft.targets))
        throw DimensionError("distill_mse: probs " + shape_str(p.shape()) +
                             " vs soft labels " + shape_str(soft.targets.shape()));
    const std::size_t n = p.numel();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = p[i] - soft.targets[i];
        loss += d * d;
    }
    loss /= static_cast<double>(n);
    const Var v = detail::next_var(tape);
    auto targets = std::make_shared<Tensor>(soft.targets);
    return tape.record(Tensor::scalar(loss), [probs, v, targets, n](Tape& t) {
        const double g = t.grad(v)[0];
        const Tensor& p = t.value(probs);
        Tensor& gp = t.grad_buf(probs);
        for (std::size_t i = 0; i < n; ++i)
            gp[i] += g * 2.0 * (p[i] - (*targets)[i]) / static_cast<double>(n);
    });
}

struct OsakdLoss {
    Var node;
    LossValue value;
};

/// Combined objective: lambda*CE(hard) + (1-lambda)*MSE(soft). A zero-weight
/// side contributes nothing to the backward pass, so lambda=1 reproduces the
/// pure cross-entropy gradient bit for bit.
inline OsakdLoss osakd_loss(Tape& tape, Var probs, const std::vector<int>& hard_labels,
                            const SoftLabelSet& soft, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("osakd_loss: lambda=" + std::to_string(lambda) +
                          " outside [0,1]");
    const Var ce = cross_entropy(tape, probs, hard_labels);
    const Var sd = distill_mse(tape, probs, soft);
    const double ce_v = tape.value(ce)[0];
    const double sd_v = tape.value(sd)[0];
    const double total = lambda * ce_v + (1.0 - lambda) * sd_v;
    const Var v = detail::next_var(tape);
    Var node = tape.record(Tensor::scalar(total), [ce, sd, v, lambda](Tape& t) {
        const double g = t.grad(v)[0];
        if (lambda != 0.0) t.grad_buf(ce)[0] += lambda * g;
        if (lambda != 1.0) t.grad_buf(sd)[0] += (1.0 - lambda) * g;
    });
    return OsakdLoss{node, LossValue{total, ce_v, sd_v, lambda}};
}

} // namespace osakd

#endif
