#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "osakd/ops.hpp"
#include "osakd/selftest.hpp"

using namespace osakd;

namespace {

std::mt19937_64 rng(12345);

Tensor random_tensor(const Shape& shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

// reference implementations, kept deliberately naive
Tensor ref_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t l = 0; l < k; ++l) c[i * n + j] += a[i * k + l] * b[l * n + j];
    return c;
}

Tensor ref_conv2d(const Tensor& in, const Tensor& ker, const Tensor& bias) {
    const std::size_t b = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t cout = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
    const std::size_t ho = h - kh + 1, wo = w - kw + 1;
    Tensor out(Shape{b, cout, ho, wo});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x) {
                    double s = bias[co];
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v)
                                s += in[((bi * cin + ci) * h + y + u) * w + x + v] *
                                     ker[((co * cin + ci) * kh + u) * kw + v];
                    out[((bi * cout + co) * ho + y) * wo + x] = s;
                }
    return out;
}

Tensor ref_maxpool(const Tensor& in) {
    const std::size_t b = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t ho = h / 2, wo = w / 2;
    Tensor out(Shape{b, c, ho, wo});
    for (std::size_t bc = 0; bc < b * c; ++bc)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x) {
                double m = in[bc * h * w + 2 * y * w + 2 * x];
                for (std::size_t u = 0; u < 2; ++u)
                    for (std::size_t v = 0; v < 2; ++v)
                        m = std::max(m, in[bc * h * w + (2 * y + u) * w + 2 * x + v]);
                out[(bc * ho + y) * wo + x] = m;
            }
    return out;
}

} // namespace

TEST_CASE("matmul identity and hand cases") {
    Tape t;
    Var id = t.leaf(Tensor(Shape{2, 2}, {1, 0, 0, 1}));
    Var a = t.leaf(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
    const Tensor& out = t.value(matmul(t, id, a));
    CHECK(out[0] == 1);
    CHECK(out[1] == 2);
    CHECK(out[2] == 3);
    CHECK(out[3] == 4);

    Var r = t.leaf(Tensor(Shape{1, 2}, {1, 2}));
    Var c = t.leaf(Tensor(Shape{2, 1}, {3, 4}));
    CHECK(t.value(matmul(t, r, c))[0] == 11.0);
}

TEST_CASE("matmul matches triple-loop reference") {
    const Tensor a = random_tensor({3, 4});
    const Tensor b = random_tensor({4, 2});
    Tape t;
    const Tensor& got = t.value(matmul(t, t.leaf(a), t.leaf(b)));
    const Tensor want = ref_matmul(a, b);
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape t;
    Var a = t.leaf(Tensor(Shape{2, 3}));
    Var b = t.leaf(Tensor(Shape{2, 3}));
    CHECK_THROWS_WITH_AS(matmul(t, a, b),
                         doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("conv2d 1x1 identity kernel") {
    const Tensor in = random_tensor({1, 1, 4, 4});
    Tape t;
    Var k = t.leaf(Tensor(Shape{1, 1, 1, 1}, {1.0}));
    Var b = t.leaf(Tensor(Shape{1}));
    const Tensor& out = t.value(conv2d(t, t.leaf(in), k, b));
    REQUIRE(out.shape() == in.shape());
    for (std::size_t i = 0; i < in.numel(); ++i) CHECK(out[i] == in[i]);
}

TEST_CASE("conv2d output shape per cifar first layer") {
    Tape t;
    Var in = t.leaf(random_tensor({1, 3, 32, 32}));
    Var k = t.leaf(random_tensor({6, 3, 5, 5}));
    Var b = t.leaf(random_tensor({6}));
    CHECK(t.value(conv2d(t, in, k, b)).shape() == Shape{1, 6, 28, 28});
}

TEST_CASE("conv2d matches direct-loop convolution") {
    const Tensor in = random_tensor({2, 2, 5, 6});
    const Tensor ker = random_tensor({3, 2, 3, 3});
    const Tensor bias = random_tensor({3});
    Tape t;
    const Tensor& got = t.value(conv2d(t, t.leaf(in), t.leaf(ker), t.leaf(bias)));
    const Tensor want = ref_conv2d(in, ker, bias);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("conv2d rejects oversized kernels") {
    Tape t;
    Var in = t.leaf(Tensor(Shape{1, 1, 3, 3}));
    Var k = t.leaf(Tensor(Shape{1, 1, 5, 5}));
    Var b = t.leaf(Tensor(Shape{1}));
    CHECK_THROWS_AS(conv2d(t, in, k, b), DimensionError);
}

TEST_CASE("maxpool constant field and single-window gradient") {
    Tape t;
    Var c = t.leaf(Tensor(Shape{1, 1, 4, 4}, 3.5));
    const Tensor& out = t.value(maxpool2d(t, c));
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 3.5);

    Tape t2;
    Var w = t2.leaf(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
    Var pooled = maxpool2d(t2, w);
    CHECK(t2.value(pooled)[0] == 4);
    t2.backward(sum_all(t2, pooled));
    const Tensor& g = t2.grad(w);
    CHECK(g[0] == 0);
    CHECK(g[1] == 0);
    CHECK(g[2] == 0);
    CHECK(g[3] == 1);
}

TEST_CASE("maxpool matches loop reference and drops odd remainder") {
    const Tensor in = random_tensor({1, 1, 6, 6});
    Tape t;
    const Tensor& got = t.value(maxpool2d(t, t.leaf(in)));
    const Tensor want = ref_maxpool(in);
    for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == want[i]);

    Tape t2;
    CHECK(t2.value(maxpool2d(t2, t2.leaf(random_tensor({1, 1, 5, 7})))).shape() ==
          Shape{1, 1, 2, 3});
}

TEST_CASE("relu basics and |x| identity") {
    Tape t;
    const Tensor& out = t.value(relu(t, t.leaf(Tensor(Shape{3}, {-1, 0, 2}))));
    CHECK(out[0] == 0);
    CHECK(out[1] == 0);
    CHECK(out[2] == 2);

    Tape t2;
    Var neg = t2.leaf(Tensor(Shape{4}, {-1, -2, -3, -4}));
    Var r = relu(t2, neg);
    for (std::size_t i = 0; i < 4; ++i) CHECK(t2.value(r)[i] == 0);
    t2.backward(sum_all(t2, r));
    for (std::size_t i = 0; i < 4; ++i) CHECK(t2.grad(neg)[i] == 0);

    const Tensor x = random_tensor({10});
    Tape t3;
    Var xv = t3.leaf(x);
    Tensor negx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) negx[i] = -x[i];
    const Tensor& rp = t3.value(relu(t3, xv));
    const Tensor& rn = t3.value(relu(t3, t3.leaf(negx)));
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(rp[i] + rn[i] == doctest::Approx(std::abs(x[i])).epsilon(1e-15));
}

TEST_CASE("softmax symmetry, shift invariance, direct formula") {
    Tape t;
    const Tensor& u = t.value(softmax(t, t.leaf(Tensor(Shape{1, 3}, {0, 0, 0}))));
    for (int j = 0; j < 3; ++j) CHECK(u[j] == doctest::Approx(1.0 / 3).epsilon(1e-14));

    const Tensor& a = t.value(softmax(t, t.leaf(Tensor(Shape{1, 3}, {1, 2, 3}))));
    const Tensor& b = t.value(softmax(t, t.leaf(Tensor(Shape{1, 3}, {11, 12, 13}))));
    for (int j = 0; j < 3; ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-14));

    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double z = e1 + e2 + e3;
    CHECK(a[0] == doctest::Approx(e1 / z).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(e2 / z).epsilon(1e-12));
    CHECK(a[2] == doctest::Approx(e3 / z).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to 1 with entries in (0,1)") {
    const Tensor logits = random_tensor({8, 10}, -5, 5);
    Tape t;
    const Tensor& p = t.value(softmax(t, t.leaf(logits)));
    for (std::size_t i = 0; i < 8; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 10; ++j) {
            CHECK(p[i * 10 + j] > 0);
            CHECK(p[i * 10 + j] < 1);
            s += p[i * 10 + j];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax rejects non-finite logits") {
    Tape t;
    Tensor bad(Shape{1, 2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(softmax(t, t.leaf(bad)), NumericError);
}

TEST_CASE("backward: sum and quadratic") {
    Tape t;
    Var w = t.leaf(random_tensor({3, 4}));
    t.backward(sum_all(t, w));
    for (std::size_t i = 0; i < 12; ++i) CHECK(t.grad(w)[i] == 1.0);

    // loss = w^T w / 2 -> grad = w
    const Tensor wv = random_tensor({5, 1});
    Tape t2;
    Var w2 = t2.leaf(wv);
    Var wt = t2.leaf(Tensor(Shape{1, 5}, std::vector<double>(wv.data(), wv.data() + 5)));
    Var q = matmul(t2, wt, w2);
    t2.backward(q);
    // d(w^T w)/dw through the column operand only = w^T row values
    for (std::size_t i = 0; i < 5; ++i) CHECK(t2.grad(w2)[i] == doctest::Approx(wv[i]));
}

TEST_CASE("backward contract: scalar loss, single pass") {
    Tape t;
    Var w = t.leaf(random_tensor({2, 2}));
    CHECK_THROWS_AS(t.backward(w), ContractError);

    Tape t2;
    Var w2 = t2.leaf(random_tensor({2, 2}));
    Var s = sum_all(t2, w2);
    t2.backward(s);
    CHECK_THROWS_AS(t2.backward(s), ContractError);
}

TEST_CASE("small recorded net matches finite differences") {
    std::mt19937_64 local(99);
    for (int inst = 0; inst < 3; ++inst) {
        std::vector<Tensor> params = {random_tensor_off_kinks({1, 2, 6, 6}, local),
                                      random_tensor_off_kinks({2, 2, 3, 3}, local),
                                      random_tensor_off_kinks({2}, local),
                                      random_tensor_off_kinks({8, 3}, local)};
        auto build = [](Tape& t, const std::vector<Var>& p) {
            Var x = conv2d(t, p[0], p[1], p[2]); // 1x2x4x4
            x = relu(t, x);
            x = maxpool2d(t, x); // 1x2x2x2
            x = flatten(t, x);   // 1x8
            x = matmul(t, x, p[3]);
            Var probs = softmax(t, x);
            return cross_entropy(t, probs, {1});
        };
        ScalarFn f = [&](const std::vector<Tensor>& p) {
            Tape t;
            std::vector<Var> vs;
            for (const Tensor& tt : p) vs.push_back(t.leaf(tt));
            return t.value(build(t, vs)).scalar_value();
        };
        GradFn g = [&](const std::vector<Tensor>& p) {
            Tape t;
            std::vector<Var> vs;
            for (const Tensor& tt : p) vs.push_back(t.leaf(tt));
            t.backward(build(t, vs));
            std::vector<Tensor> out;
            for (Var v : vs) out.push_back(t.grad(v));
            return out;
        };
        const GradCheckResult r = gradient_check(f, g, params);
        CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
    }
}

TEST_CASE("re-running a tape on identical inputs is bitwise identical") {
    const Tensor in = random_tensor({2, 1, 6, 6});
    const Tensor k = random_tensor({3, 1, 3, 3});
    const Tensor b = random_tensor({3});
    auto run = [&] {
        Tape t;
        Var x = conv2d(t, t.leaf(in), t.leaf(k), t.leaf(b));
        x = flatten(t, maxpool2d(t, relu(t, x)));
        return t.value(softmax(t, x));
    };
    const Tensor a1 = run();
    const Tensor a2 = run();
    for (std::size_t i = 0; i < a1.numel(); ++i) CHECK(a1[i] == a2[i]);
}
