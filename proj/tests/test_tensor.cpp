#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ltm/tensor.hpp"

using namespace ltm;

namespace {

// Independent naive triple-loop matmul oracle.
template <class S>
std::vector<S> naive_matmul(const std::vector<S>& a, const std::vector<S>& b, int m, int k,
                            int n) {
    std::vector<S> out(static_cast<size_t>(m * n), S(0));
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            S acc = 0;
            for (int p = 0; p < k; ++p) {
                acc += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
            }
            out[static_cast<size_t>(i * n + j)] = acc;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("matmul identity and annihilator") {
    auto a = Tensor::from_data({2, 2}, {1.f, 2.f, 3.f, 4.f});
    auto eye = Tensor::from_data({2, 2}, {1.f, 0.f, 0.f, 1.f});
    auto zero = Tensor::zeros({2, 2});
    auto ia = matmul(eye, a);
    for (int i = 0; i < 4; ++i) {
        CHECK(ia.data()[i] == doctest::Approx(a.data()[i]));
    }
    auto za = matmul(zero, a);
    for (int i = 0; i < 4; ++i) {
        CHECK(za.data()[i] == 0.0f);
    }
}

TEST_CASE("matmul matches naive oracle") {
    auto a = Tensor::from_data({2, 2}, {1.f, 2.f, 3.f, 4.f});
    auto b = Tensor::from_data({2, 2}, {5.f, 6.f, 7.f, 8.f});
    auto c = matmul(a, b);
    CHECK(c.at({0, 0}) == doctest::Approx(19.f));
    CHECK(c.at({0, 1}) == doctest::Approx(22.f));
    CHECK(c.at({1, 0}) == doctest::Approx(43.f));
    CHECK(c.at({1, 1}) == doctest::Approx(50.f));

    // randomized shapes against the oracle
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 1 + static_cast<int>(rng.uniform_int(8));
        const int k = 1 + static_cast<int>(rng.uniform_int(8));
        const int n = 1 + static_cast<int>(rng.uniform_int(8));
        auto x = Tensor64::randn({m, k}, rng);
        auto y = Tensor64::randn({k, n}, rng);
        auto z = matmul(x, y);
        auto ref = naive_matmul(std::vector<double>(x.data().begin(), x.data().end()),
                                std::vector<double>(y.data().begin(), y.data().end()), m, k, n);
        for (int i = 0; i < m * n; ++i) {
            CHECK(z.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("softmax basics") {
    auto x = Tensor::from_data({2}, {0.f, 0.f});
    auto y = softmax(x, 0);
    CHECK(y.data()[0] == doctest::Approx(0.5f));
    CHECK(y.data()[1] == doctest::Approx(0.5f));

    // [ln 1, ln 3] -> [0.25, 0.75]
    auto z = softmax(Tensor::from_data({2}, {0.f, std::log(3.f)}), 0);
    CHECK(z.data()[0] == doctest::Approx(0.25f).epsilon(1e-6));
    CHECK(z.data()[1] == doctest::Approx(0.75f).epsilon(1e-6));
}

TEST_CASE("softmax shift invariance and row sums") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = Tensor64::randn({4, 6}, rng);
        auto y = softmax(x, 1);
        std::vector<double> shifted(x.data().begin(), x.data().end());
        const double c = rng.normal() * 5.0;
        for (double& v : shifted) {
            v += c;
        }
        auto y2 = softmax(Tensor64::from_data({4, 6}, shifted), 1);
        for (int i = 0; i < 24; ++i) {
            CHECK(y.data()[i] == doctest::Approx(y2.data()[i]).epsilon(1e-10));
            CHECK(y.data()[i] >= 0.0);
        }
        for (int r = 0; r < 4; ++r) {
            double s = 0;
            for (int cidx = 0; cidx < 6; ++cidx) {
                s += y.at({r, cidx});
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("softmax degenerate row throws") {
    const float ninf = -std::numeric_limits<float>::infinity();
    auto x = Tensor::from_data({1, 2}, {ninf, ninf});
    CHECK_THROWS_AS(softmax(x, 1), NumericError);
}

TEST_CASE("cross entropy values") {
    // uniform logits -> ln V
    auto logits = Tensor::zeros({3, 7});
    auto ce = cross_entropy(logits, {0, 3, 6});
    CHECK(ce.item() == doctest::Approx(std::log(7.f)).epsilon(1e-6));

    // dominant correct class -> ~0
    auto big = Tensor::from_data({1, 3}, {50.f, 0.f, 0.f});
    CHECK(cross_entropy(big, {0}).item() == doctest::Approx(0.f).epsilon(1e-3));

    // logits [[0, ln 3]] target 1 -> -ln 0.75
    auto two = Tensor64::from_data({1, 2}, {0.0, std::log(3.0)});
    CHECK(cross_entropy(two, {1}).item() == doctest::Approx(-std::log(0.75)).epsilon(1e-10));

    CHECK_THROWS_AS(cross_entropy(big, {5}), ShapeError);
}

TEST_CASE("token_log_probs sums to -N*cross_entropy") {
    Rng rng(3);
    auto logits = Tensor64::randn({5, 9}, rng);
    std::vector<int32_t> targets = {1, 0, 8, 3, 3};
    auto tlp = token_log_probs(logits, targets);
    double total = 0;
    for (double v : tlp.data()) {
        total += v;
    }
    auto ce = cross_entropy(logits, targets);
    CHECK(total == doctest::Approx(-5.0 * ce.item()).epsilon(1e-10));
}

TEST_CASE("backward simple derivatives") {
    // d/dx (x^2) at 3 -> 6
    auto x = Tensor64::from_data({1}, {3.0}, true);
    auto y = square(x);
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0));

    // d/dx sum(x) -> ones
    auto v = Tensor64::from_data({4}, {1.0, -2.0, 0.5, 9.0}, true);
    auto s = sum(v);
    backward(s);
    for (double g : v.grad()) {
        CHECK(g == doctest::Approx(1.0));
    }
}

TEST_CASE("backward contract errors") {
    auto x = Tensor64::from_data({2}, {1.0, 2.0}, true);
    auto y = square(x);  // non-scalar
    CHECK_THROWS_AS(backward(y), ShapeError);

    auto s = sum(square(x));
    backward(s);
    CHECK_THROWS_AS(backward(s), std::logic_error);

    auto s2 = sum(square(x));
    release_graph(s2);
    CHECK_THROWS_AS(backward(s2), std::logic_error);
}

TEST_CASE("backward linearity is bit-exact in 64-bit") {
    Rng rng(21);
    auto make_x = [&](bool rg) {
        return Tensor64::from_data({3, 3}, {0.1, -0.4, 1.7, 2.0, -0.3, 0.9, 0.2, 0.5, -1.1}, rg);
    };
    auto f = [](const Tensor64& t) { return sum(square(t)); };
    auto g = [](const Tensor64& t) { return sum(silu(t)); };

    auto xa = make_x(true);
    backward(f(xa));
    std::vector<double> ga(xa.grad().begin(), xa.grad().end());
    auto xb = make_x(true);
    backward(g(xb));

    auto xc = make_x(true);
    backward(add(f(xc), g(xc)));
    for (size_t i = 0; i < ga.size(); ++i) {
        CHECK(xc.grad()[i] == ga[i] + xb.grad()[i]);
    }
}

TEST_CASE("grad_check trivial cases") {
    auto x = Tensor64::from_data({3}, {0.3, -0.7, 1.2});
    // constant function
    auto cf = [](const Tensor64& t) { return scale(sum(mul(t, Tensor64::zeros(t.shape()))), 1.0); };
    CHECK(grad_check<double>(cf, x, 1e-5) == doctest::Approx(0.0).epsilon(1e-12));
    // linear function a^T x
    auto a = Tensor64::from_data({3}, {2.0, -1.0, 0.5});
    auto lf = [&](const Tensor64& t) { return sum(mul(t, a)); };
    CHECK(grad_check<double>(lf, x, 1e-5) <= 1e-10);
}

TEST_CASE("grad_check randomized op compositions") {
    Rng rng(5);
    for (int trial = 0; trial < 8; ++trial) {
        const int m = 2 + static_cast<int>(rng.uniform_int(7));
        const int k = 2 + static_cast<int>(rng.uniform_int(7));
        auto w = Tensor64::randn({k, 3}, rng);
        auto x = Tensor64::randn({m, k}, rng);
        std::vector<int32_t> targets;
        for (int i = 0; i < m; ++i) {
            targets.push_back(static_cast<int32_t>(rng.uniform_int(3)));
        }
        auto f = [&](const Tensor64& t) { return cross_entropy(matmul(t, w), targets); };
        CHECK(grad_check<double>(f, x, 1e-5) <= 1e-4);

        auto probe = Tensor64::randn({m, k}, rng);
        auto g = [&](const Tensor64& t) { return sum(mul(softmax(silu(t), 1), probe)); };
        CHECK(grad_check<double>(g, x, 1e-5) <= 1e-4);

        auto h = [&](const Tensor64& t) { return mean(exp(scale(t, 0.3))); };
        CHECK(grad_check<double>(h, x, 1e-5) <= 1e-4);
    }
}

TEST_CASE("matmul softmax cross_entropy composite gradient vs finite differences") {
    Rng rng(13);
    auto w = Tensor64::randn({4, 5}, rng);
    std::vector<int32_t> targets = {2, 0, 4};
    auto x = Tensor64::randn({3, 4}, rng);
    auto f = [&](const Tensor64& t) { return cross_entropy(matmul(t, w), targets); };
    CHECK(grad_check<double>(f, x, 1e-5) <= 1e-4);
}

TEST_CASE("determinism of randn and ops") {
    Rng r1(99), r2(99);
    auto a = Tensor::randn({4, 4}, r1);
    auto b = Tensor::randn({4, 4}, r2);
    for (int i = 0; i < 16; ++i) {
        CHECK(a.data()[i] == b.data()[i]);
    }
    auto s1 = matmul(a, b);
    auto s2 = matmul(a, b);
    for (int i = 0; i < 16; ++i) {
        CHECK(s1.data()[i] == s2.data()[i]);
    }
}

TEST_CASE("finite check mode raises on NaN") {
    set_check_finite(true);
    auto x = Tensor::from_data({2}, {1.f, std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS(exp(x), NumericError);
    set_check_finite(false);
    CHECK_NOTHROW(exp(x));
    CHECK_FALSE(exp(x).all_finite());
}

TEST_CASE("row_block and reshape round trip gradients") {
    auto x = Tensor64::from_data({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    auto blk = row_block(x, 1, 2);
    CHECK(blk.dim(0) == 2);
    CHECK(blk.at({0, 0}) == 3.0);
    auto loss = sum(square(blk));
    backward(loss);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[2] == doctest::Approx(6.0));
    CHECK(x.grad()[7] == 0.0);

    auto y = Tensor64::from_data({6}, {1, 2, 3, 4, 5, 6}, true);
    auto r = reshape(y, {2, 3});
    CHECK(r.at({1, 2}) == 6.0);
    backward(sum(square(r)));
    CHECK(y.grad()[5] == doctest::Approx(12.0));
}

TEST_CASE("embedding lookup and scatter gradient") {
    auto table = Tensor64::from_data({3, 2}, {0, 1, 10, 11, 20, 21}, true);
    auto e = embedding(table, {2, 0, 2});
    CHECK(e.at({0, 1}) == 21.0);
    backward(sum(e));
    CHECK(table.grad()[0] == doctest::Approx(1.0));
    CHECK(table.grad()[2] == doctest::Approx(0.0));
    CHECK(table.grad()[4] == doctest::Approx(2.0));
    CHECK_THROWS_AS(embedding(table, {3}), ShapeError);
}
