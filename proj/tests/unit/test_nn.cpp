#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "handleforge/error.hpp"
#include "handleforge/nn.hpp"

using namespace handleforge;
using nn::Param;
using nn::ParamStore;

namespace {

Mat randn(RandomStream& rng, int r, int c, double s = 1.0) {
    Mat m(r, c);
    rng.fill_normal(m.data(), m.size(), s);
    return m;
}

double inner(const Mat& a, const Mat& b) {
    REQUIRE(a.same_shape(b));
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// central finite difference of value() w.r.t. every entry of target,
// compared against analytic[i]
void check_grad(Mat& target, const Mat& analytic, const std::function<double()>& value,
                double tol = 1e-5) {
    const double h = 1e-6;
    for (size_t i = 0; i < target.size(); ++i) {
        const double keep = target[i];
        target[i] = keep + h;
        const double up = value();
        target[i] = keep - h;
        const double dn = value();
        target[i] = keep;
        CHECK(analytic[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(tol).scale(1.0));
    }
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("param store basics") {
    ParamStore ps;
    ps.create("a", 2, 3);
    ps.create("b", 1, 4);
    CHECK_THROWS_AS(ps.create("a", 1, 1), Error);
    CHECK_THROWS_AS(ps.at("missing"), Error);
    CHECK(ps.total_values() == 10);
    auto all = ps.all();
    REQUIRE(all.size() == 2);
    CHECK(all[0]->name == "a");
    CHECK(all[1]->name == "b");
    all[0]->grad.fill(2.0);
    ps.zero_grads();
    CHECK(ps.at("a").grad[0] == 0.0);
}

TEST_CASE("linear forward and gradients") {
    RandomStream rng(60);
    ParamStore ps;
    Param& W = ps.create("W", 4, 3);
    Param& b = ps.create("b", 1, 3);
    nn::init_xavier(W, rng);
    nn::init_normal(b, rng, 0.1);
    Mat x = randn(rng, 5, 4);
    Mat C = randn(rng, 5, 3);

    auto value = [&] { return inner(nn::linear(x, W, b), C); };

    ps.zero_grads();
    Mat dx = nn::linear_backward(x, W, b, C);
    check_grad(W.value, W.grad, value);
    check_grad(b.value, b.grad, value);
    check_grad(x, dx, value);
}

TEST_CASE("relu, sigmoid, softmax gradients") {
    RandomStream rng(61);
    Mat x = randn(rng, 4, 5);
    for (size_t i = 0; i < x.size(); ++i)
        if (std::abs(x[i]) < 0.05) x[i] = 0.1;  // keep away from the relu kink
    Mat C = randn(rng, 4, 5);

    Mat dr = nn::relu_backward(x, C);
    check_grad(x, dr, [&] { return inner(nn::relu(x), C); });

    Mat ds = nn::sigmoid_backward(nn::sigmoid(x), C);
    check_grad(x, ds, [&] { return inner(nn::sigmoid(x), C); });

    Mat y = nn::softmax_rows(x);
    Mat dm = nn::softmax_rows_backward(y, C);
    check_grad(x, dm, [&] { return inner(nn::softmax_rows(x), C); });
    for (int r = 0; r < y.rows(); ++r) {
        double total = 0.0;
        for (int c = 0; c < y.cols(); ++c) total += y(r, c);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax is shift-invariant and overflow-safe") {
    Mat x(1, 3);
    x(0, 0) = 1000.0;
    x(0, 1) = 1001.0;
    x(0, 2) = 999.0;
    Mat y = nn::softmax_rows(x);
    CHECK(std::isfinite(y(0, 0)));
    Mat xs = x;
    for (size_t i = 0; i < xs.size(); ++i) xs[i] -= 1000.0;
    Mat ys = nn::softmax_rows(xs);
    for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ys[i]).epsilon(1e-14));
}

TEST_CASE("layer norm gradients") {
    RandomStream rng(62);
    ParamStore ps;
    Param& gain = ps.create("g", 1, 6);
    Param& bias = ps.create("b", 1, 6);
    gain.value.fill(1.0);
    for (int c = 0; c < 6; ++c) gain.value(0, c) += 0.1 * c;
    nn::init_normal(bias, rng, 0.2);
    Mat x = randn(rng, 3, 6);
    Mat C = randn(rng, 3, 6);

    auto value = [&] {
        nn::LayerNormCache cache;
        return inner(nn::layer_norm(x, gain, bias, cache), C);
    };

    nn::LayerNormCache cache;
    nn::layer_norm(x, gain, bias, cache);
    ps.zero_grads();
    Mat dx = nn::layer_norm_backward(cache, gain, gain, bias, C);
    check_grad(gain.value, gain.grad, value);
    check_grad(bias.value, bias.grad, value);
    check_grad(x, dx, value);

    // normalization: unit gain, zero bias gives zero-mean unit-var rows
    Param ug{"ug", Mat::constant(1, 6, 1.0), Mat(1, 6)};
    Param zb{"zb", Mat(1, 6), Mat(1, 6)};
    nn::LayerNormCache c2;
    Mat yn = nn::layer_norm(x, ug, zb, c2);
    for (int r = 0; r < 3; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 6; ++c) mean += yn(r, c);
        mean /= 6;
        for (int c = 0; c < 6; ++c) var += (yn(r, c) - mean) * (yn(r, c) - mean);
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var / 6 == doctest::Approx(1.0).epsilon(1e-4));  // 1e-5 floor shifts it slightly
    }
}

TEST_CASE("multi-head attention gradients, cross with mask") {
    RandomStream rng(63);
    const int d = 8, heads = 2, nq = 3, nkv = 4;
    ParamStore ps;
    Param& Wq = ps.create("Wq", d, d);
    Param& Wk = ps.create("Wk", d, d);
    Param& Wv = ps.create("Wv", d, d);
    Param& Wo = ps.create("Wo", d, d);
    for (auto* p : ps.all()) nn::init_xavier(*p, rng);

    Mat q = randn(rng, nq, d);
    Mat kv = randn(rng, nkv, d);
    Mat mask(nq, nkv);
    for (int r = 0; r < nq; ++r) mask(r, nkv - 1) = -1e9;  // hide the last kv slot
    Mat C = randn(rng, nq, d);

    auto value = [&] {
        nn::MHACache cache;
        return inner(nn::mha(q, kv, heads, Wq, Wk, Wv, Wo, &mask, cache), C);
    };

    nn::MHACache cache;
    Mat y = nn::mha(q, kv, heads, Wq, Wk, Wv, Wo, &mask, cache);
    REQUIRE(y.rows() == nq);
    for (int h = 0; h < heads; ++h)
        for (int r = 0; r < nq; ++r) CHECK(cache.attn[h](r, nkv - 1) < 1e-12);  // masked out

    ps.zero_grads();
    Mat dq(nq, d), dkv(nkv, d);
    nn::mha_backward(cache, heads, Wq, Wk, Wv, Wo, Wq, Wk, Wv, Wo, C, dq, dkv);
    check_grad(Wq.value, Wq.grad, value, 1e-4);
    check_grad(Wk.value, Wk.grad, value, 1e-4);
    check_grad(Wv.value, Wv.grad, value, 1e-4);
    check_grad(Wo.value, Wo.grad, value, 1e-4);
    check_grad(q, dq, value, 1e-4);
    check_grad(kv, dkv, value, 1e-4);
}

TEST_CASE("self-attention accumulates both input paths") {
    RandomStream rng(64);
    const int d = 6, heads = 3, n = 4;
    ParamStore ps;
    Param& Wq = ps.create("Wq", d, d);
    Param& Wk = ps.create("Wk", d, d);
    Param& Wv = ps.create("Wv", d, d);
    Param& Wo = ps.create("Wo", d, d);
    for (auto* p : ps.all()) nn::init_xavier(*p, rng);
    Mat x = randn(rng, n, d);
    Mat C = randn(rng, n, d);

    auto value = [&] {
        nn::MHACache cache;
        return inner(nn::mha(x, x, heads, Wq, Wk, Wv, Wo, nullptr, cache), C);
    };

    nn::MHACache cache;
    nn::mha(x, x, heads, Wq, Wk, Wv, Wo, nullptr, cache);
    ps.zero_grads();
    Mat dx(n, d), dx_kv(n, d);
    nn::mha_backward(cache, heads, Wq, Wk, Wv, Wo, Wq, Wk, Wv, Wo, C, dx, dx_kv);
    dx += dx_kv;  // total derivative: query path + key/value path
    check_grad(x, dx, value, 1e-4);
}

TEST_CASE("sinusoidal embedding structure") {
    Mat e = nn::sinusoidal_embedding({0.0, 1.0, 2.0, 37.0}, 16);
    REQUIRE(e.rows() == 4);
    REQUIRE(e.cols() == 16);
    // position 0: sin=0, cos=1 in every pair
    for (int i = 0; i < 8; ++i) {
        CHECK(e(0, 2 * i) == 0.0);
        CHECK(e(0, 2 * i + 1) == 1.0);
    }
    // unit circle per pair
    for (int r = 0; r < 4; ++r)
        for (int i = 0; i < 8; ++i)
            CHECK(e(r, 2 * i) * e(r, 2 * i) + e(r, 2 * i + 1) * e(r, 2 * i + 1) ==
                  doctest::Approx(1.0).epsilon(1e-12));
    // distinct positions embed distinctly
    double diff = 0.0;
    for (int c = 0; c < 16; ++c) diff += std::abs(e(1, c) - e(2, c));
    CHECK(diff > 0.1);
}

TEST_CASE("optimizers descend a quadratic") {
    // L = 0.5 |p - target|^2
    RandomStream rng(65);
    Mat target = randn(rng, 3, 3);

    ParamStore ps1;
    Param& p1 = ps1.create("p", 3, 3);
    for (int step = 0; step < 200; ++step) {
        ps1.zero_grads();
        for (size_t i = 0; i < p1.value.size(); ++i) p1.grad[i] = p1.value[i] - target[i];
        nn::GD{0.5}.step(ps1);
    }
    for (size_t i = 0; i < p1.value.size(); ++i)
        CHECK(p1.value[i] == doctest::Approx(target[i]).epsilon(1e-8));

    ParamStore ps2;
    Param& p2 = ps2.create("p", 3, 3);
    nn::Adam adam(0.1);
    for (int step = 0; step < 400; ++step) {
        ps2.zero_grads();
        for (size_t i = 0; i < p2.value.size(); ++i) p2.grad[i] = p2.value[i] - target[i];
        adam.step(ps2);
    }
    CHECK(adam.steps_taken() == 400);
    for (size_t i = 0; i < p2.value.size(); ++i)
        CHECK(p2.value[i] == doctest::Approx(target[i]).epsilon(1e-3).scale(1.0));
}

}  // TEST_SUITE
