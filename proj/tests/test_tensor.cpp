#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "difftts/nn.hpp"
#include "difftts/tensor.hpp"

using namespace difftts;

namespace {

// Central-difference gradient check of `build` (which must produce a scalar
// loss graph from the current values of the given leaves).
void gradcheck(const std::vector<Var>& leaves, const std::function<Var()>& build,
               double tol = 1e-6, double h = 1e-5) {
    Var loss = build();
    for (const auto& leaf : leaves) leaf->zero_grad();
    backward(loss);
    auto eval = [&] { return build()->val[0]; };
    for (const auto& leaf : leaves) {
        auto fd = finite_difference(eval, leaf, h);
        REQUIRE(leaf->grad.size() == fd.size());
        for (size_t i = 0; i < fd.size(); ++i) {
            double denom = std::max({1.0, std::fabs(fd[i]), std::fabs(leaf->grad[i])});
            CHECK(std::fabs(leaf->grad[i] - fd[i]) / denom <= tol);
        }
    }
}

Var randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    return randn_leaf(std::move(shape), rng, scale);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(1);
    Var a = randn({3, 4}, rng);
    Var b = randn({3, 4}, rng);
    gradcheck({a, b}, [&] { return mean_all(mul(add(a, b), sub(a, b))); });
    gradcheck({a}, [&] { return mean_all(tanh_v(a)); });
    gradcheck({a}, [&] { return mean_all(sigmoid_v(a)); });
    gradcheck({a}, [&] { return mean_all(square_v(a)); });
    gradcheck({a}, [&] { return mean_all(exp_v(scale(a, 0.3))); });
    gradcheck({a}, [&] { return mean_all(add_scalar(scale(a, -2.0), 1.5)); });
}

TEST_CASE("relu gradient away from the kink") {
    Rng rng(2);
    Var a = randn({5, 5}, rng);
    for (auto& v : a->val)
        if (std::fabs(v) < 0.05) v += 0.2;  // keep clear of the nondifferentiable point
    gradcheck({a}, [&] { return mean_all(relu_v(a)); });
}

TEST_CASE("log gradient on positive inputs") {
    Rng rng(3);
    Var a = randn({4, 3}, rng);
    for (auto& v : a->val) v = 0.5 + std::fabs(v);
    gradcheck({a}, [&] { return mean_all(log_v(a)); });
}

TEST_CASE("matmul and transpose match finite differences") {
    Rng rng(4);
    Var a = randn({3, 5}, rng);
    Var b = randn({5, 2}, rng);
    gradcheck({a, b}, [&] { return mean_all(matmul(a, b)); });
    gradcheck({a}, [&] { return mean_all(matmul(transpose(a), a)); });
}

TEST_CASE("slices, concat, reshape, repeat_rows") {
    Rng rng(5);
    Var a = randn({4, 6}, rng);
    gradcheck({a}, [&] { return mean_all(slice_cols(a, 1, 4)); });
    gradcheck({a}, [&] { return mean_all(slice_rows(a, 0, 2)); });
    gradcheck({a}, [&] {
        return mean_all(concat_cols({slice_cols(a, 0, 2), slice_cols(a, 2, 6)}));
    });
    gradcheck({a}, [&] {
        return mean_all(concat_rows({slice_rows(a, 2, 4), slice_rows(a, 0, 2)}));
    });
    gradcheck({a}, [&] { return mean_all(reshape(a, {2, 12})); });
    gradcheck({a}, [&] { return mean_all(repeat_rows(a, {2, 0, 3, 1})); });
}

TEST_CASE("broadcast adds and channel scaling") {
    Rng rng(6);
    Var x = randn({3, 7}, rng);
    Var r = randn({7}, rng);
    Var c = randn({3}, rng);
    gradcheck({x, r}, [&] { return mean_all(add_rowvec(x, r)); });
    gradcheck({x, c}, [&] { return mean_all(add_colvec(x, c)); });
    gradcheck({x, c}, [&] { return mean_all(mul_colvec(x, c)); });
}

TEST_CASE("reductions") {
    Rng rng(7);
    Var x = randn({4, 5}, rng);
    gradcheck({x}, [&] { return sum_all(x); });
    gradcheck({x}, [&] { return mean_all(x); });
    gradcheck({x}, [&] { return mean_all(mean_cols(x, 3)); });
    gradcheck({x}, [&] { return mean_all(sum_rows_weighted(x, {0.5, -1.0, 0.0, 2.0})); });
}

TEST_CASE("softmax family") {
    Rng rng(8);
    Var x = randn({3, 6}, rng);
    gradcheck({x}, [&] { return mean_all(softmax_rows(x)); }, 1e-5);
    gradcheck({x}, [&] { return mean_all(log_softmax_rows(x)); }, 1e-5);
    gradcheck({x}, [&] {
        return nll_pick(log_softmax_rows(x), {1, 0, 5}, {0.5, 0.0, 0.5});
    }, 1e-5);

    SUBCASE("softmax rows sum to one") {
        Var y = softmax_rows(x);
        for (int r = 0; r < 3; ++r) {
            double s = 0.0;
            for (int c = 0; c < 6; ++c) s += y->val[static_cast<size_t>(r) * 6 + c];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("layer norm") {
    Rng rng(9);
    Var x = randn({4, 6}, rng);
    Var g = randn({6}, rng, 0.2);
    for (auto& v : g->val) v += 1.0;
    Var b = randn({6}, rng, 0.2);
    gradcheck({x, g, b}, [&] { return mean_all(mul(layer_norm_rows(x, g, b), x)); }, 1e-5);
}

TEST_CASE("embedding gathers rows and scatters gradients") {
    Rng rng(10);
    Var table = randn({7, 4}, rng);
    std::vector<int> ids{2, 2, 0, 6};
    Var out = embedding(table, ids);
    CHECK(out->shape == std::vector<int>{4, 4});
    for (int d = 0; d < 4; ++d)
        CHECK(out->val[static_cast<size_t>(0) * 4 + d] == table->val[static_cast<size_t>(2) * 4 + d]);
    gradcheck({table}, [&] { return mean_all(square_v(embedding(table, ids))); });
    CHECK_THROWS_AS(embedding(table, {7}), std::invalid_argument);
}

TEST_CASE("conv1d with dilation matches finite differences") {
    Rng rng(11);
    for (int dilation : {1, 2, 4}) {
        Var x = randn({2, 9}, rng);
        Var w = randn({3, 2, 3}, rng);
        Var b = randn({3}, rng);
        gradcheck({x, w, b}, [&] { return mean_all(square_v(conv1d(x, w, b, dilation))); });
    }
    SUBCASE("identity kernel reproduces the input") {
        Var x = randn({1, 6}, rng);
        Var w = constant({1, 1, 3}, {0.0, 1.0, 0.0});
        Var b = constant({1}, 0.0);
        Var y = conv1d(x, w, b, 1);
        for (size_t i = 0; i < x->numel(); ++i) CHECK(y->val[i] == doctest::Approx(x->val[i]));
    }
    SUBCASE("even kernels are rejected") {
        Var x = randn({1, 6}, rng);
        Var w = randn({1, 1, 4}, rng);
        Var b = constant({1}, 0.0);
        CHECK_THROWS_AS(conv1d(x, w, b, 1), std::invalid_argument);
    }
}

TEST_CASE("conv2d matches finite differences") {
    Rng rng(12);
    Var x = randn({2, 5, 4}, rng);
    Var w = randn({3, 2, 3, 3}, rng);
    Var b = randn({3}, rng);
    gradcheck({x, w, b}, [&] { return mean_all(square_v(conv2d(x, w, b))); }, 1e-5);
}

TEST_CASE("3D helpers") {
    Rng rng(13);
    Var x = randn({3, 4, 6}, rng);
    Var s = randn({3}, rng);
    gradcheck({x}, [&] { return mean_all(mean_over_w(x, 4)); });
    gradcheck({x}, [&] { return mean_all(square_v(zero_after_w(x, 3))); });
    gradcheck({x, s}, [&] { return mean_all(mul_channel3(x, s)); });
    gradcheck({x}, [&] { return mean_all(mean_hw(x)); });
    gradcheck({x}, [&] { return mean_all(mean_hw_masked(x, 2)); });

    SUBCASE("zero_after_w zeroes the padded region only") {
        Var y = zero_after_w(x, 2);
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 6; ++w) {
                    double expect = w < 2 ? x->val[(static_cast<size_t>(c) * 4 + h) * 6 + w] : 0.0;
                    CHECK(y->val[(static_cast<size_t>(c) * 4 + h) * 6 + w] == expect);
                }
    }
}

TEST_CASE("attention and transformer blocks are differentiable") {
    Rng rng(14);
    nn::ParamRegistry reg;
    nn::SelfAttention attn(reg, "attn", 8, 2, rng);
    Var x = randn({5, 8}, rng);
    std::vector<Var> leaves{x};
    for (auto& [n, p] : reg.params) leaves.push_back(p);
    gradcheck(leaves, [&] { return mean_all(square_v(attn.forward(x, true))); }, 1e-5);

    nn::ParamRegistry reg2;
    nn::TransformerBlock block(reg2, "blk", 8, 2, 16, rng);
    std::vector<Var> leaves2{x};
    for (auto& [n, p] : reg2.params) leaves2.push_back(p);
    gradcheck(leaves2, [&] { return mean_all(square_v(block.forward(x, false))); }, 1e-5);
}

TEST_CASE("SE block gates stay in (0,1) and preserve shape") {
    Rng rng(15);
    nn::ParamRegistry reg;
    nn::SEBlock se(reg, "se", 4, 2, rng);
    Var x = randn({4, 3, 5}, rng);
    Var g = se.gates(x, 5);
    CHECK(g->shape == std::vector<int>{4});
    for (double v : g->val) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    Var y = se.forward(x, 5);
    CHECK(y->shape == x->shape);
    for (size_t i = 0; i < y->numel(); ++i) {
        size_t c = i / 15;
        CHECK(y->val[i] == doctest::Approx(x->val[i] * g->val[c]));
    }
}

TEST_CASE("graph reuse accumulates gradients correctly") {
    Rng rng(16);
    Var a = randn({2, 2}, rng);
    gradcheck({a}, [&] { return mean_all(mul(a, a)); });
    // same leaf feeding two branches
    gradcheck({a}, [&] { return add(mean_all(square_v(a)), sum_all(scale(a, 0.5))); });
}

TEST_CASE("backward requires a scalar root") {
    Rng rng(17);
    Var a = randn({2, 3}, rng);
    CHECK_THROWS_AS(backward(a), std::invalid_argument);
}

TEST_CASE("shape mismatches are rejected") {
    Var a = constant({2, 3}, 1.0);
    Var b = constant({3, 2}, 1.0);
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(repeat_rows(a, {1, 2, 3}), std::invalid_argument);
}
