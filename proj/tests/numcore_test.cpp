// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "doctest.h"
#include "ifam/numcore/gradcheck.hpp"
#include "ifam/numcore/ops.hpp"
#include "ifam/numcore/rng.hpp"
#include "support/op_cases.hpp"

using namespace ifam::nc;
using ifam::testing::random_tensor;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

TEST_CASE("masked_softmax: identity mask is plain softmax") {
  auto y = masked_softmax(Tensor::from({2}, {0, 0}), Tensor::zeros({2}));
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.5));
}

TEST_CASE("masked_softmax: masked entry removed from the normalizer") {
  auto y = masked_softmax(Tensor::from({3}, {1, 2, 3}),
                          Tensor::from({3}, {0, kNegInf, 0}));
  // Softmax over the sub-vector {1, 3}.
  const double oracle = std::exp(1.0) / (std::exp(1.0) + std::exp(3.0));
  CHECK(y[0] == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(y[0] == doctest::Approx(0.1192).epsilon(1e-3));
  CHECK(y[1] == 0.0);
  CHECK(y[2] == doctest::Approx(0.8808).epsilon(1e-3));
}

TEST_CASE("masked_softmax: single live entry and dead rows") {
  auto y = masked_softmax(Tensor::from({3}, {5, -1, 2}),
                          Tensor::from({3}, {kNegInf, kNegInf, 0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 1.0);

  auto dead = masked_softmax(Tensor::from({2, 2}, {1, 2, 3, 4}),
                             Tensor::from({2, 2}, {kMaskSentinel, kMaskSentinel, 0, 0}));
  CHECK(dead[0] == 0.0);
  CHECK(dead[1] == 0.0);
  CHECK(dead[2] + dead[3] == doctest::Approx(1.0));
}

TEST_CASE("masked_softmax: errors") {
  CHECK_THROWS_AS(masked_softmax(Tensor::zeros({3}), Tensor::zeros({2})),
                  std::invalid_argument);
  CHECK_THROWS_AS(masked_softmax(Tensor::zeros({2}), Tensor::from({2}, {0, -5})),
                  std::invalid_argument);
}

TEST_CASE("masked_softmax: live rows are distributions, plain rows match softmax") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = random_tensor({4, 7}, rng, -20, 20);
    std::vector<double> m(28);
    for (auto& v : m) v = rng.bernoulli(0.4) ? kMaskSentinel : 0.0;
    for (int r = 0; r < 4; ++r) m[r * 7 + r] = 0.0;
    auto y = masked_softmax(logits, Tensor::from({4, 7}, m));
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int c = 0; c < 7; ++c) {
        if (m[r * 7 + c] != 0.0) CHECK(y.at(r, c) == 0.0);
        s += y.at(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }

    auto plain = masked_softmax(logits, Tensor::zeros({4, 7}));
    auto ref = softmax_rows(logits);
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain[i] == ref[i]);
    for (int r = 0; r < 4; ++r) {
      double mx = -1e300;
      for (int c = 0; c < 7; ++c) mx = std::max(mx, logits.at(r, c));
      double z = 0;
      for (int c = 0; c < 7; ++c) z += std::exp(logits.at(r, c) - mx);
      for (int c = 0; c < 7; ++c)
        CHECK(std::abs(plain.at(r, c) - std::exp(logits.at(r, c) - mx) / z) < 1e-12);
    }
  }
}

TEST_CASE("backward: linear function") {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto loss = sum(scale(x, 2.0));
  backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("backward: masked logit gets exactly zero gradient") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto r = random_tensor({5}, rng, -3, 3);
    auto x = Tensor::from({5}, {r.values().begin(), r.values().end()}, true);
    auto m = Tensor::from({5}, {0, kMaskSentinel, 0, kNegInf, 0});
    auto y = masked_softmax(x, m);
    const int k = rng.uniform_int(5);
    backward(reshape(slice_cols(reshape(y, {1, 5}), k, 1), {}));
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[3] == 0.0);
  }
}

TEST_CASE("backward: error paths") {
  auto x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), std::invalid_argument);
  CHECK_THROWS_AS(backward(sum(Tensor::from({2}, {1, 2}))), std::logic_error);
  auto loss = sum(square(x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), std::logic_error);
}

TEST_CASE("backward: gradients accumulate and match leaf shapes") {
  auto w = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto a = sum(w);
  auto b = sum(square(w));
  backward(a);
  backward(b);
  REQUIRE(w.grad().size() == w.size());
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(w.grad()[i] == 1.0 + 2.0 * w[i]);
  w.zero_grad();
  for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward: matmul-softmax chain matches central differences") {
  Rng rng(5);
  auto w = random_tensor({3, 3}, rng);
  auto f = [&](const Tensor& x) {
    return sum(mul(softmax_rows(matmul(x, w)), matmul(x, x)));
  };
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor({3, 3}, rng);
    CHECK(finite_diff_check(f, x, 1e-5) < 1e-6);
  }
}

TEST_CASE("finite_diff_check: polynomial and layer norm") {
  auto sq = [](const Tensor& x) { return sum(square(x)); };
  CHECK(finite_diff_check(sq, Tensor::from({1}, {3.0}), 1e-5) < 1e-9);

  Rng rng(8);
  auto ln = [](const Tensor& x) {
    auto g = Tensor::from({8}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto b = Tensor::zeros({8});
    return sum(mul(layer_norm_rows(x, g, b), layer_norm_rows(x, g, b)));
  };
  CHECK(finite_diff_check(ln, random_tensor({8}, rng), 1e-5) < 1e-6);
  CHECK_THROWS_AS(finite_diff_check(sq, Tensor::from({1}, {3.0}), 0.0),
                  std::invalid_argument);
}

TEST_CASE("finite_diff_check: rejects non-deterministic functions") {
  int calls = 0;
  auto f = [&](const Tensor& x) { return sum(add_scalar(x, ++calls)); };
  CHECK_THROWS_AS(finite_diff_check(f, Tensor::from({1}, {1.0})), std::runtime_error);
}

TEST_CASE("finite_diff_check: straight-through is probed along the soft path") {
  auto f = [](const Tensor& x) {
    std::vector<double> hard(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) hard[i] = x[i] > 0.5 ? 1.0 : 0.0;
    return sum(mul(straight_through(x, hard), x));
  };
  auto x = Tensor::from({3}, {0.2, 0.7, 0.9});
  CHECK(finite_diff_check(f, x) < 1e-8);

  // Outside the scope the forward value is the hard one.
  auto leaf = Tensor::from({3}, {0.2, 0.7, 0.9}, true);
  auto st = straight_through(leaf, {0, 1, 1});
  CHECK(st[0] == 0.0);
  CHECK(st[1] == 1.0);
  backward(sum(scale(st, 3.0)));
  for (double g : leaf.grad()) CHECK(g == 3.0);
}

TEST_CASE("every differentiable op passes finite differences on 20 inputs") {
  for (const auto& c : ifam::testing::differentiable_op_cases()) {
    CAPTURE(c.name);
    Rng rng(1234);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      auto x = random_tensor(c.input_shape, rng, c.lo, c.hi);
      const std::uint64_t seed = 100 + trial;
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& t) { return c.f(t, seed); }, x));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("gumbel_sample") {
  CHECK(gumbel_from_uniform(0.5) == doctest::Approx(0.3665).epsilon(1e-4));
  CHECK(gumbel_from_uniform(0.5) == doctest::Approx(-std::log(-std::log(0.5))));

  Rng a(42);
  Rng b(42);
  auto ga = gumbel_sample({4, 5}, a);
  auto gb = gumbel_sample({4, 5}, b);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == gb[i]);

  Rng big(7);
  auto g = gumbel_sample({100000}, big);
  double m = 0;
  for (double v : g.values()) m += v;
  m /= 100000.0;
  CHECK(std::abs(m - 0.5772156649) < 0.02);
}

TEST_CASE("Rng: reproducible streams and forks") {
  Rng a(99);
  Rng b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng f1 = Rng(99).fork(1);
  Rng f2 = Rng(99).fork(2);
  CHECK(f1.next_u64() != f2.next_u64());
  Rng c(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("Tensor: shape invariants") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), std::invalid_argument);
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == numel(t.shape()));
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(matmul(t, t), std::invalid_argument);
}
