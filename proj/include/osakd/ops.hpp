#ifndef OSAKD_OPS_HPP
#define OSAKD_OPS_HPP

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "osakd/tape.hpp"

namespace osakd {

namespace detail {

/// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                  double alpha, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double beta, double* c, std::size_t ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
                static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline Var next_var(const Tape& tape) { return Var{static_cast<int>(tape.size())}; }

} // namespace detail

/// C[MxN] = A[MxK] * B[KxN]; dA = dC*B^T, dB = A^T*dC.
inline Var matmul(Tape& tape, Var a, Var b) {
    const Tensor& ta = tape.value(a);
    const Tensor& tb = tape.value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(ta.shape()) + " and " +
                             shape_str(tb.shape()));
    const std::size_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    Tensor out(Shape{m, n});
    detail::dgemm(false, false, m, n, k, 1.0, ta.data(), k, tb.data(), n, 0.0, out.data(), n);
    const Var v = detail::next_var(tape);
    return tape.record(std::move(out), [a, b, v, m, k, n](Tape& t) {
        const double* g = t.grad(v).data();
        detail::dgemm(false, true, m, k, n, 1.0, g, n, t.value(b).data(), n, 1.0,
                      t.grad_buf(a).data(), k);
        detail::dgemm(true, false, k, n, m, 1.0, t.value(a).data(), k, g, n, 1.0,
                      t.grad_buf(b).data(), n);
    });
}

/// Adds bias[N] to every row of x[MxN].
inline Var add_bias(Tape& tape, Var x, Var bias) {
    const Tensor& tx = tape.value(x);
    const Tensor& tb = tape.value(bias);
    if (tx.rank() != 2 || tb.rank() != 1 || tb.dim(0) != tx.dim(1))
        throw DimensionError("add_bias: shapes " + shape_str(tx.shape()) + " and " +
                             shape_str(tb.shape()) + " do not broadcast");
    const std::size_t m = tx.dim(0), n = tx.dim(1);
    Tensor out(tx.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = tx[i * n + j] + tb[j];
    const Var v = detail::next_var(tape);
    return tape.record(std::move(out), [x, bias, v, m, n](Tape& t) {
        const Tensor& g = t.grad(v);
        Tensor& gx = t.grad_buf(x);
        Tensor& gb = t.grad_buf(bias);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                gx[i * n + j] += g[i * n + j];
                gb[j] += g[i * n + j];
            }
    });
}

/// Valid (no padding), stride-1 cross-correlation of input[BxCinxHxW] with
/// kernel[CoutxCinxKhxKw] plus per-channel bias. Lowered to a single GEMM
/// over an im2col buffer shared with the backward pass.
inline Var conv2d(Tape& tape, Var input, Var kernel, Var bias) {
    const Tensor& in = tape.value(input);
    const Tensor& ker = tape.value(kernel);
    const Tensor& b = tape.value(bias);
    if (in.rank() != 4 || ker.rank() != 4)
        throw DimensionError("conv2d: expected 4-d input and kernel, got " +
                             shape_str(in.shape()) + " and " + shape_str(ker.shape()));
    const std::size_t batch = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t cout = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
    if (ker.dim(1) != cin)
        throw DimensionError("conv2d: kernel expects " + std::to_string(ker.dim(1)) +
                             " input channels, input has " + std::to_string(cin));
    if (kh > h || kw > w)
        throw DimensionError("conv2d: kernel " + shape_str(ker.shape()) +
                             " larger than input " + shape_str(in.shape()));
    if (b.rank() != 1 || b.dim(0) != cout)
        throw DimensionError("conv2d: bias shape " + shape_str(b.shape()) +
                             " does not match " + std::to_string(cout) + " output channels");

    const std::size_t ho = h - kh + 1, wo = w - kw + 1;
    const std::size_t patch = ho * wo;             // spatial positions per image
    const std::size_t krows = cin * kh * kw;       // im2col rows
    const std::size_t cols_n = batch * patch;

    auto cols = std::make_shared<std::vector<double>>(krows * cols_n);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* img = in.data() + bi * cin * h * w;
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t u = 0; u < kh; ++u)
                for (std::size_t vv = 0; vv < kw; ++vv) {
                    const std::size_t row = (ci * kh + u) * kw + vv;
                    double* dst = cols->data() + row * cols_n + bi * patch;
                    const double* src = img + ci * h * w + u * w + vv;
                    for (std::size_t y = 0; y < ho; ++y)
                        for (std::size_t x = 0; x < wo; ++x)
                            dst[y * wo + x] = src[y * w + x];
                }
    }

    // out_r[cout x (batch*patch)] = kernel_mat * cols
    std::vector<double> out_r(cout * cols_n);
    detail::dgemm(false, false, cout, cols_n, krows, 1.0, ker.data(), krows, cols->data(),
                  cols_n, 0.0, out_r.data(), cols_n);

    Tensor out(Shape{batch, cout, ho, wo});
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t co = 0; co < cout; ++co) {
            const double* src = out_r.data() + co * cols_n + bi * patch;
            double* dst = out.data() + (bi * cout + co) * patch;
            const double bv = b[co];
            for (std::size_t p = 0; p < patch; ++p) dst[p] = src[p] + bv;
        }

    const Var v = detail::next_var(tape);
    return tape.record(std::move(out),
                       [input, kernel, bias, v, cols, batch, cin, h, w, cout, kh, kw, ho, wo,
                        patch, krows, cols_n](Tape& t) {
        const Tensor& g = t.grad(v);
        // regroup gradient as [cout x (batch*patch)]
        std::vector<double> g_r(cout * cols_n);
        for (std::size_t bi = 0; bi < batch; ++bi)
            for (std::size_t co = 0; co < cout; ++co) {
                const double* src = g.data() + (bi * cout + co) * patch;
                double* dst = g_r.data() + co * cols_n + bi * patch;
                for (std::size_t p = 0; p < patch; ++p) dst[p] = src[p];
            }

        Tensor& gb = t.grad_buf(bias);
        for (std::size_t co = 0; co < cout; ++co) {
            double s = 0.0;
            const double* row = g_r.data() + co * cols_n;
            for (std::size_t i = 0; i < cols_n; ++i) s += row[i];
            gb[co] += s;
        }

        detail::dgemm(false, true, cout, krows, cols_n, 1.0, g_r.data(), cols_n, cols->data(),
                      cols_n, 1.0, t.grad_buf(kernel).data(), krows);

        std::vector<double> g_cols(krows * cols_n);
        detail::dgemm(true, false, krows, cols_n, cout, 1.0,
                      t.value(kernel).data(), krows, g_r.data(), cols_n, 0.0, g_cols.data(),
                      cols_n);

        Tensor& gin = t.grad_buf(input);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            double* img = gin.data() + bi * cin * h * w;
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t u = 0; u < kh; ++u)
                    for (std::size_t vv = 0; vv < kw; ++vv) {
                        const std::size_t row = (ci * kh + u) * kw + vv;
                        const double* src = g_cols.data() + row * cols_n + bi * patch;
                        double* dst = img + ci * h * w + u * w + vv;
                        for (std::size_t y = 0; y < ho; ++y)
                            for (std::size_t x = 0; x < wo; ++x)
                                dst[y * w + x] += src[y * wo + x];
                    }
        }
    });
}

/// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
/// Ties go to the first element in row-major window order, and the backward
/// pass routes the gradient to that position only.
inline Var maxpool2d(Tape& tape, Var input) {
    const Tensor& in = tape.value(input);
    if (in.rank() != 4)
        throw DimensionError("maxpool2d: expected 4-d input, got " + shape_str(in.shape()));
    const std::size_t batch = in.dim(0), ch = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0)
        throw DimensionError("maxpool2d: input " + shape_str(in.shape()) +
                             " too small for a 2x2 window");

    Tensor out(Shape{batch, ch, ho, wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    std::size_t o = 0;
    for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        const double* plane = in.data() + bc * h * w;
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x, ++o) {
                std::size_t best = (2 * y) * w + 2 * x;
                double bv = plane[best];
                const std::size_t cand[3] = {(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x,
                                             (2 * y + 1) * w + 2 * x + 1};
                for (std::size_t c : cand)
                    if (plane[c] > bv) {
                        bv = plane[c];
                        best = c;
                    }
                out[o] = bv;
                (*argmax)[o] = bc * h * w + best;
            }
    }

    const Var v = detail::next_var(tape);
    return tape.record(std::move(out), [input, v, argmax](Tape& t) {
        const Tensor& g = t.grad(v);
        Tensor& gin = t.grad_buf(input);
        for (std::size_t i = 0; i < g.numel(); ++i) gin[(*argmax)[i]] += g[i];
    });
}

/// Elementwise max(0, x); gradient passes where x > 0.
inline Var relu(Tape& tape, Var input) {
    const Tensor& in = tape.value(input);
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    const Var v = detail::next_var(tape);
    return tape.record(std::move(out), [input, v](Tape& t) {
        const Tensor& g = t.grad(v);
        const Tensor& in = t.value(input);
        Tensor& gin = t.grad_buf(input);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (in[i] > 0.0) gin[i] += g[i];
    });
}

/// Row-wise softmax of logits[BxC] with max subtraction.
inline Var softmax(Tape& tape, Var logits) {
    const Tensor& in = tape.value(logits);
    if (in.rank() != 2)
        throw DimensionError("softmax: expected 2-d logits, got " + shape_str(in.shape()));
    if (!in.all_finite())
        throw NumericError("softmax: non-finite logits");
    const std::size_t rows = in.dim(0), cols = in.dim(1);
    Tensor out(in.shape());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* src = in.data() + i * cols;
        double* dst = out.data() + i * cols;
        double mx = src[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        for (std::size_t j = 0; j < cols; ++j) dst[j] /= sum;
    }
    const Var v = detail::next_var(tape);
    return tape.record(std::move(out), [logits, v, rows, cols](Tape& t) {
        const Tensor& g = t.grad(v);
        const Tensor& p = t.value(v);
        Tensor& gin = t.grad_buf(logits);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* gr = g.data() + i * cols;
            const double* pr = p.data() + i * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * pr[j];
            for (std::size_t j = 0; j < cols; ++j) gin[i * cols + j] += pr[j] * (gr[j] - dot);
        }
    });
}

/// Reshape [B x ...] to [B x prod(rest)].
inline Var flatten(Tape& tape, Var input) {
    const Tensor& in = tape.value(input);
    if (in.rank() < 2)
        throw DimensionError("flatten: expected batched input, got " + shape_str(in.shape()));
    const std::size_t batch = in.dim(0);
    const std::size_t rest = in.numel() / batch;
    Tensor out(Shape{batch, rest}, std::vector<double>(in.data(), in.data() + in.numel()));
    const Var v = detail::next_var(tape);
    return tape.record(std::move(out), [input, v](Tape& t) {
        const Tensor& g = t.grad(v);
        Tensor& gin = t.grad_buf(input);
        for (std::size_t i = 0; i < g.numel(); ++i) gin[i] += g[i];
    });
}

/// Sum of all elements, as a scalar node.
inline Var sum_all(Tape& tape, Var input) {
    const Tensor& in = tape.value(input);
    double s = 0.0;
    for (std::size_t i = 0; i < in.numel(); ++i) s += in[i];
    const Var v = detail::next_var(tape);
    return tape.record(Tensor::scalar(s), [input, v](Tape& t) {
        const double g = t.grad(v)[0];
        Tensor& gin = t.grad_buf(input);
        for (std::size_t i = 0; i < gin.numel(); ++i) gin[i] += g;
    });
}

} // namespace osakd

#endif
