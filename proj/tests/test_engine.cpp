#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "stylealign/nn.hpp"
#include "stylealign/ops.hpp"
#include "stylealign/rng.hpp"

using namespace stylealign;

namespace {

Tensor<double> randn(Rng& rng, Shape shape, double std = 1.0) {
    Tensor<double> t(std::move(shape));
    rng.fill_normal(t, std);
    return t;
}

} // namespace

TEST_CASE("rng determinism and keyed streams") {
    Rng a = Rng::keyed(7, {1, 2});
    Rng b = Rng::keyed(7, {1, 2});
    Rng c = Rng::keyed(7, {1, 3});
    bool same = true, diff = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        same &= (x == y);
        diff |= (x != z);
    }
    CHECK(same);
    CHECK(diff);
}

TEST_CASE("rng normal moments") {
    Rng rng(123);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("elementwise and matmul gradients") {
    Rng rng(1);
    auto a = make_leaf(randn(rng, {3, 4}), true);
    auto b = make_leaf(randn(rng, {3, 4}), true);
    auto w = make_leaf(randn(rng, {4, 5}), true);

    auto f = [&](const std::vector<Var<double>>& v) {
        auto x = mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.5)));
        auto y = matmul(x, v[2]);
        return sum_all(square(leaky_relu(y, 0.2)));
    };
    CHECK(gradcheck::max_rel_err({a, b, w}, f) < 1e-6);
}

TEST_CASE("matmul_tt flag algebra") {
    Rng rng(2);
    auto a = make_leaf(randn(rng, {4, 3}), true);  // used transposed
    auto b = make_leaf(randn(rng, {5, 4}), true);  // used transposed
    auto f = [&](const std::vector<Var<double>>& v) {
        return sum_all(square(matmul_tt(v[0], v[1], true, true)));
    };
    CHECK(gradcheck::max_rel_err({a, b}, f) < 1e-6);
}

TEST_CASE("reductions broadcasts biases") {
    Rng rng(3);
    auto x = make_leaf(randn(rng, {2, 3, 4, 4}), true);
    auto cb = make_leaf(randn(rng, {3}), true);
    auto s = make_leaf(randn(rng, {2, 3}), true);
    auto f = [&](const std::vector<Var<double>>& v) {
        auto y = add_bias_channel(v[0], v[1]);
        y = mul_channelwise(y, v[2]);
        auto r = sum_hw(y);                      // [2,3]
        auto t = broadcast_hw(r, 2, 2);          // [2,3,2,2]
        return add(sum_all(square(t)), sum_all(square(sum_keep_c(y))));
    };
    CHECK(gradcheck::max_rel_err({x, cb, s}, f) < 1e-6);
}

TEST_CASE("conv2d trio gradients, stride 1 and 2") {
    Rng rng(4);
    for (int stride : {1, 2}) {
        auto x = make_leaf(randn(rng, {2, 3, 8, 8}), true);
        auto w = make_leaf(randn(rng, {4, 3, 3, 3}), true);
        auto f = [&](const std::vector<Var<double>>& v) {
            return mean_all(square(conv2d(v[0], v[1], stride, 1)));
        };
        CHECK(gradcheck::max_rel_err({x, w}, f, 1e-4) < 1e-5);
    }
}

TEST_CASE("pooling upsample noise gradients") {
    Rng rng(5);
    auto x = make_leaf(randn(rng, {2, 2, 4, 4}), true);
    auto st = make_leaf(Tensor<double>::scalar(0.3), true);
    Tensor<double> noise = randn(rng, {4, 4});
    auto f = [&](const std::vector<Var<double>>& v) {
        auto y = add_scaled_hw(v[0], noise, v[1]);
        auto u = upsample2(avgpool2(y));
        return sum_all(square(u));
    };
    CHECK(gradcheck::max_rel_err({x, st}, f) < 1e-6);
}

TEST_CASE("transcendental gradients") {
    Rng rng(6);
    auto x = make_leaf(randn(rng, {3, 3}), true);
    auto f = [&](const std::vector<Var<double>>& v) {
        auto y = add(tanh_op(v[0]), sigmoid(v[0]));
        y = add(y, softplus(v[0]));
        y = add(y, rsqrt_eps(square(v[0]), 1e-3));
        return mean_all(square(y));
    };
    CHECK(gradcheck::max_rel_err({x}, f, 1e-6) < 1e-5);
}

TEST_CASE("softmax cross entropy gradient") {
    Rng rng(7);
    auto logits = make_leaf(randn(rng, {5, 4}), true);
    std::vector<int> labels = {0, 2, 1, 3, 2};
    auto f = [&](const std::vector<Var<double>>& v) {
        return softmax_cross_entropy(v[0], labels);
    };
    CHECK(gradcheck::max_rel_err({logits}, f) < 1e-6);
}

// R1-style double backward: d/dtheta of || dD/dx ||^2 must match finite
// differences of the first-order gradient norm.
TEST_CASE("double backward through conv net") {
    Rng rng(8);
    auto x = make_leaf(randn(rng, {2, 2, 6, 6}), true);
    auto w1 = make_leaf(randn(rng, {3, 2, 3, 3}, 0.5), true);
    auto b1 = make_leaf(randn(rng, {3}, 0.1), true);
    auto w2 = make_leaf(randn(rng, {1, 3 * 3 * 3}, 0.5), true);

    auto penalty_value = [&]() -> double {
        auto h = leaky_relu(add_bias_channel(conv2d(x, w1, 1, 1), b1), 0.2);
        h = avgpool2(h);
        auto flat = reshape(h, {2, 3 * 3 * 3});
        auto logits = matmul_tt(flat, w2, false, true);
        auto score = sum_all(logits);
        auto grads = backward(score, true);
        auto gx = grad_var(grads, x);
        return sum_all(square(gx))->value[0];
    };

    auto h0 = leaky_relu(add_bias_channel(conv2d(x, w1, 1, 1), b1), 0.2);
    h0 = avgpool2(h0);
    auto flat0 = reshape(h0, {2, 3 * 3 * 3});
    auto logits0 = matmul_tt(flat0, w2, false, true);
    auto score0 = sum_all(logits0);
    auto grads0 = backward(score0, true);
    auto gx0 = grad_var(grads0, x);
    auto penalty = sum_all(square(gx0));
    auto pgrads = backward(penalty);

    const double h = 1e-5;
    for (auto& leaf : {w1, w2}) {
        REQUIRE(has_grad(pgrads, leaf));
        const auto& g = grad_of(pgrads, leaf);
        double worst = 0;
        for (int64_t i = 0; i < leaf->value.numel(); i += 5) {
            const double v0 = leaf->value[i];
            leaf->value[i] = v0 + h;
            const double fp = penalty_value();
            leaf->value[i] = v0 - h;
            const double fm = penalty_value();
            leaf->value[i] = v0;
            const double fd = (fp - fm) / (2 * h);
            const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
            worst = std::max(worst, std::abs(fd - g[i]) / denom);
        }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("adam descends a quadratic") {
    ParamList<double> params;
    auto x = new_param(params, "x", Tensor<double>::full({4}, 5.0));
    Adam<double> opt(0.1, 0.9, 0.999);
    opt.attach(params);
    for (int i = 0; i < 400; ++i) {
        auto loss = sum_all(square(x));
        auto grads = backward(loss);
        opt.step(grads);
    }
    auto loss = sum_all(square(x));
    CHECK(loss->value[0] < 1e-3);
}

TEST_CASE("parallel_for is deterministic and covers the range") {
    std::vector<int> hits(1000, 0);
    parallel_for(1000, [&](int64_t i) { hits[static_cast<size_t>(i)]++; }, 7);
    bool ok = true;
    for (int h : hits) ok &= (h == 1);
    CHECK(ok);
}
