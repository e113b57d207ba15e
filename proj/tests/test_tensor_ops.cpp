// Copyright 2026 The bdiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "support.hpp"

#include "bdiff/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace bdiff;
using bdiff::testing::project;
using bdiff::testing::random_tensor;

namespace {

std::vector<Parameter> as_params(std::initializer_list<Var> vars) {
    std::vector<Parameter> out;
    int k = 0;
    for (const auto &v : vars) {
        out.push_back({"p" + std::to_string(k++), v});
    }
    return out;
}

double check(const std::function<Var()> &f, std::vector<Parameter> params) {
    return grad_check(f, params, {.eps = 1e-5, .samples = 0, .seed = 1});
}

} // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul by identity returns the operand") {
    const Var a = constant(Tensor(2, 2, {1, 2, 3, 4}));
    const Var out = ops::matmul(a, constant(Tensor::identity(2)));
    CHECK(out->value == Tensor(2, 2, {1, 2, 3, 4}));
}

TEST_CASE("masked key gets zero probability") {
    const Var s = constant(Tensor(1, 2, {0.0, 0.0}));
    const Var p = ops::softmax_with_additive_mask(s, Tensor(1, 2, {0.0, ops::kMaskedLogit}));
    CHECK(p->value[0] == 1.0);
    CHECK(p->value[1] == 0.0);
}

TEST_CASE("uniform logits give ln 4 cross-entropy") {
    const Var z = constant(Tensor(1, 4, 0.0));
    const std::int32_t target = 2;
    const Var nll = ops::cross_entropy_from_logits(z, std::span(&target, 1));
    CHECK(nll->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(std::abs(nll->value[0] - 1.386294) < 1e-6);
}

TEST_CASE("softmax rows sum to one when a key is allowed") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.below(9);
        Tensor mask(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                mask(i, j) = (j == rng.below(n) || rng.uniform() < 0.5) ? 0.0 : ops::kMaskedLogit;
            }
            mask(i, rng.below(n)) = 0.0;
        }
        const Var p = ops::softmax_with_additive_mask(constant(random_tensor(rng, n, n, 5.0)), mask);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (double v : p->value.row(i)) {
                s += v;
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("shape mismatch names both shapes") {
    const Var a = constant(Tensor(2, 3));
    const Var b = constant(Tensor(2, 3));
    try {
        ops::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError &e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("matmul") != std::string::npos);
    }
    CHECK_THROWS_AS(ops::add(constant(Tensor(2, 2)), constant(Tensor(3, 2))), ShapeError);
}

TEST_CASE("non-finite input names op and position") {
    Tensor t(2, 2, 1.0);
    t[3] = std::nan("");
    try {
        ops::gelu(constant(t));
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError &e) {
        CHECK(e.op() == "gelu");
        CHECK(e.index() == 3);
    }
    t[3] = INFINITY;
    CHECK_THROWS_AS(ops::scale(constant(t), 2.0), NonFiniteError);
}

TEST_CASE("grad_check on a quadratic") {
    const Var x = leaf(Tensor(1, 3, {1, 2, 3}));
    std::vector<Parameter> params{{"x", x}};
    auto f = [&] {
        const Var sq = ops::matmul(x, x, true);
        return sq;
    };
    const double err = grad_check(f, params, {.eps = 1e-5});
    CHECK(err < 1e-8);
    CHECK(x->grad[0] == doctest::Approx(2.0));
    CHECK(x->grad[1] == doctest::Approx(4.0));
    CHECK(x->grad[2] == doctest::Approx(6.0));
}

TEST_CASE("grad_check of a constant function is zero") {
    const Var x = leaf(Tensor(1, 3, {1, 2, 3}));
    std::vector<Parameter> params{{"x", x}};
    const double err = grad_check([] { return constant(Tensor::scalar(7.0)); }, params);
    CHECK(err == 0.0);
    for (double g : x->grad.data()) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("grad_check rejects bad eps and non-finite f") {
    const Var x = leaf(Tensor(1, 1, {1.0}));
    std::vector<Parameter> params{{"x", x}};
    auto f = [&] { return ops::scale(x, 1.0); };
    CHECK_THROWS_AS(grad_check(f, params, {.eps = 1e-2}), std::invalid_argument);
    CHECK_THROWS_AS(grad_check(f, params, {.eps = 1e-8}), std::invalid_argument);
    CHECK_THROWS_AS(grad_check([] { return constant(Tensor::scalar(NAN)); }, params), NonFiniteError);
}

TEST_CASE("every primitive passes a finite-difference check") {
    Rng rng(11);
    const Var a = leaf(random_tensor(rng, 3, 4));
    const Var b = leaf(random_tensor(rng, 4, 5));
    const Var c = leaf(random_tensor(rng, 3, 4));
    const Var row = leaf(random_tensor(rng, 1, 4));
    const Var gain = leaf(random_tensor(rng, 1, 4));
    const Var bias = leaf(random_tensor(rng, 1, 4));
    const Var table = leaf(random_tensor(rng, 6, 4));
    const Var bt = leaf(random_tensor(rng, 5, 4));
    const Var sq = leaf(random_tensor(rng, 4, 4));
    const std::vector<std::int32_t> ids{3, 0, 3, 5};
    const std::vector<std::int32_t> targets{1, 3, 0};
    const std::vector<std::int32_t> pos{0, 7, 2};
    Tensor mask(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            mask(i, j) = j <= i ? 0.0 : ops::kMaskedLogit;
        }
    }
    const double tol = 1e-6;
    CHECK(check([&] { return project(ops::matmul(a, b), 1); }, as_params({a, b})) < tol);
    CHECK(check([&] { return project(ops::matmul(a, bt, true), 2); }, as_params({a, bt})) < tol);
    CHECK(check([&] { return project(ops::add(a, c), 3); }, as_params({a, c})) < tol);
    CHECK(check([&] { return project(ops::add(a, row), 4); }, as_params({a, row})) < tol);
    CHECK(check([&] { return project(ops::scale(a, -1.7), 5); }, as_params({a})) < tol);
    CHECK(check([&] { return project(ops::embedding_lookup(table, ids), 6); }, as_params({table})) < tol);
    CHECK(check([&] { return project(ops::layer_norm(a, gain, bias), 7); }, as_params({a, gain, bias})) <
          tol);
    CHECK(check([&] { return project(ops::gelu(a), 8); }, as_params({a})) < tol);
    CHECK(check([&] { return project(ops::softmax_with_additive_mask(sq, mask), 9); }, as_params({sq})) <
          tol);
    CHECK(check([&] { return project(ops::cross_entropy_from_logits(a, targets), 10); }, as_params({a})) <
          tol);
    CHECK(check([&] { return project(ops::concat_rows({a, c, row}), 11); }, as_params({a, c, row})) < tol);
    CHECK(check([&] { return project(ops::slice_rows(ops::concat_rows({a, c}), 2, 3), 12); },
                as_params({a, c})) < tol);
    CHECK(check([&] { return project(ops::concat_cols({a, c}), 13); }, as_params({a, c})) < tol);
    CHECK(check([&] { return project(ops::slice_cols(a, 1, 2), 14); }, as_params({a})) < tol);
    CHECK(check([&] { return project(ops::rotary(a, pos, 10000.0), 15); }, as_params({a})) < tol);
    const std::vector<double> w{0.5, -2.0, 1.25};
    CHECK(check([&] { return ops::weighted_sum(ops::slice_cols(a, 0, 1), w); }, as_params({a})) < tol);
}

TEST_CASE("forward is deterministic") {
    Rng r1(3), r2(3);
    const Tensor x1 = random_tensor(r1, 5, 6), x2 = random_tensor(r2, 5, 6);
    const Var y1 = ops::gelu(ops::matmul(constant(x1), constant(x1), true));
    const Var y2 = ops::gelu(ops::matmul(constant(x2), constant(x2), true));
    CHECK(y1->value == y2->value);
}

TEST_CASE("no graph is recorded under NoGradGuard") {
    const Var x = leaf(Tensor(1, 2, {1, 2}));
    {
        NoGradGuard g;
        CHECK_FALSE(grad_enabled());
        const Var y = ops::scale(x, 2.0);
        CHECK(y->parents.empty());
        CHECK_FALSE(y->backward_fn);
    }
    CHECK(grad_enabled());
}

TEST_CASE("backward rejects non-scalar roots") {
    CHECK_THROWS_AS(backward(leaf(Tensor(2, 1))), ShapeError);
}

TEST_CASE("gradients accumulate through shared subgraphs") {
    const Var x = leaf(Tensor(1, 1, {3.0}));
    const Var y = ops::add(ops::scale(x, 2.0), ops::scale(x, 5.0));
    backward(y);
    CHECK(x->grad[0] == 7.0);
}

} // TEST_SUITE
