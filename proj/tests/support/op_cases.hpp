// SPDX-License-Identifier: Apache-2.0
// Shared by the numcore unit tests and the acceptance suite: one scalar
// probe per differentiable op, for finite-difference checking.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ifam/numcore/ops.hpp"
#include "ifam/numcore/rng.hpp"

namespace ifam::testing {

struct OpCase {
  std::string name;
  nc::Shape input_shape;
  // Builds a scalar from the input; `seed` fixes any constant operands.
  std::function<nc::Tensor(const nc::Tensor&, std::uint64_t seed)> f;
  // Inputs are drawn from uniform(lo, hi).
  double lo = -1.0;
  double hi = 1.0;
};

inline nc::Tensor random_tensor(const nc::Shape& shape, nc::Rng& rng,
                                double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(nc::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return nc::Tensor::from(shape, std::move(v));
}

// Contracts an arbitrary tensor against fixed random weights so the probe
// sees the full Jacobian rather than just its column sums.
inline nc::Tensor probe(const nc::Tensor& y, std::uint64_t seed) {
  nc::Rng rng(seed ^ 0xABCDEFull);
  return nc::sum(nc::mul(y, random_tensor(y.shape(), rng)));
}

inline std::vector<OpCase> differentiable_op_cases() {
  using nc::Tensor;
  auto constant = [](const nc::Shape& s, std::uint64_t seed, double lo = -1,
                     double hi = 1) {
    nc::Rng rng(seed);
    return random_tensor(s, rng, lo, hi);
  };
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, nc::Shape shape, auto fn,
                      double lo = -1.0, double hi = 1.0) {
    cases.push_back({std::move(name), std::move(shape), fn, lo, hi});
  };

  add_case("add", {3, 4}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::add(x, constant({3, 4}, s)), s);
  });
  add_case("sub", {3, 4}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::sub(constant({3, 4}, s), x), s);
  });
  add_case("mul", {3, 4}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::mul(x, x), s);
  });
  add_case("scale", {5}, [](const Tensor& x, std::uint64_t s) {
    return probe(nc::scale(x, -2.5), s);
  });
  add_case("add_scalar", {5},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::add_scalar(x, 0.7), s); });
  add_case("exp", {5}, [](const Tensor& x, std::uint64_t s) { return probe(nc::exp(x), s); });
  add_case(
      "log", {5}, [](const Tensor& x, std::uint64_t s) { return probe(nc::log(x), s); }, 0.5,
      2.0);
  add_case("abs", {6}, [](const Tensor& x, std::uint64_t s) { return probe(nc::abs(x), s); });
  add_case("square", {6},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::square(x), s); });
  add_case("relu", {6}, [](const Tensor& x, std::uint64_t s) { return probe(nc::relu(x), s); });
  add_case("gelu", {6}, [](const Tensor& x, std::uint64_t s) { return probe(nc::gelu(x), s); },
           -3.0, 3.0);
  add_case(
      "xlogx", {6}, [](const Tensor& x, std::uint64_t s) { return probe(nc::xlogx(x), s); },
      0.05, 1.0);
  add_case(
      "reciprocal", {6},
      [](const Tensor& x, std::uint64_t s) { return probe(nc::reciprocal(x), s); }, 0.5, 2.0);
  add_case("mul_scalar_tensor", {1}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::mul_scalar_tensor(constant({2, 3}, s), nc::reshape(x, {})), s);
  });
  add_case("add_row", {4}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::add_row(constant({3, 4}, s), x), s);
  });
  add_case("mul_row", {3, 4}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::mul_row(x, nc::slice_rows(x, 1, 1)), s);
  });
  add_case("mul_col", {3, 4}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::mul_col(x, nc::reshape(nc::slice_cols(x, 2, 1), {3})), s);
  });
  add_case("sum", {3, 4}, [](const Tensor& x, std::uint64_t) {
    return nc::sum(nc::square(x));
  });
  add_case("mean", {3, 4}, [](const Tensor& x, std::uint64_t) {
    return nc::mean(nc::square(x));
  });
  add_case("sum_rows", {3, 4},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::sum_rows(x), s); });
  add_case("sum_cols", {3, 4},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::sum_cols(x), s); });
  add_case("max_cols", {3, 5},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::max_cols(x), s); });
  add_case("matmul", {3, 3}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::matmul(x, nc::matmul(constant({3, 3}, s), x)), s);
  });
  add_case("matmul_nt", {3, 4}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::matmul_nt(x, nc::add(x, constant({3, 4}, s))), s);
  });
  add_case("transpose", {3, 4},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::transpose(x), s); });
  add_case("reshape", {3, 4},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::reshape(x, {2, 6}), s); });
  add_case("slice_rows", {4, 3},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::slice_rows(x, 1, 2), s); });
  add_case("slice_cols", {3, 4},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::slice_cols(x, 1, 2), s); });
  add_case("concat_rows", {2, 3}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::concat_rows({x, constant({1, 3}, s), nc::square(x)}), s);
  });
  add_case("concat_cols", {2, 3}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::concat_cols({x, constant({2, 2}, s), nc::exp(x)}), s);
  });
  add_case("gather_rows", {4, 3}, [](const Tensor& x, std::uint64_t s) {
    return probe(nc::gather_rows(x, {3, 0, 3, 1}), s);
  });
  add_case("gather_cols", {3, 4}, [](const Tensor& x, std::uint64_t s) {
    return probe(nc::gather_cols(x, {2, 2, 0}), s);
  });
  add_case("layer_norm_rows", {3, 8}, [=](const Tensor& x, std::uint64_t s) {
    return probe(nc::layer_norm_rows(x, nc::add_scalar(constant({8}, s), 1.0),
                                     constant({8}, s + 1)),
                 s);
  });
  add_case("layer_norm_affine", {8}, [=](const Tensor& g, std::uint64_t s) {
    return probe(nc::layer_norm_rows(constant({3, 8}, s), g, nc::scale(g, 0.5)), s);
  });
  add_case("l2_normalize_rows", {3, 4}, [](const Tensor& x, std::uint64_t s) {
    return probe(nc::l2_normalize_rows(x), s);
  });
  add_case("softmax_rows", {3, 4},
           [](const Tensor& x, std::uint64_t s) { return probe(nc::softmax_rows(x), s); });
  add_case("masked_softmax", {3, 4}, [](const Tensor& x, std::uint64_t s) {
    const double m = nc::kMaskSentinel;
    auto mask = Tensor::from({3, 4}, {0, m, 0, 0, m, m, m, 0, 0, 0, 0, 0});
    return probe(nc::masked_softmax(nc::scale(x, 3.0), mask), s);
  });
  add_case("cross_entropy", {3, 4}, [](const Tensor& x, std::uint64_t) {
    return nc::cross_entropy(nc::scale(x, 2.0), {0, 3, 1});
  });
  add_case("straight_through", {6}, [](const Tensor& x, std::uint64_t s) {
    std::vector<double> hard(x.size());
    for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = x[i] > 0 ? 1.0 : 0.0;
    return probe(nc::mul(nc::straight_through(x, hard), nc::exp(x)), s);
  });
  add_case("matmul_softmax_chain", {3, 3}, [=](const Tensor& x, std::uint64_t s) {
    auto w = constant({3, 3}, s);
    return probe(nc::softmax_rows(nc::matmul(nc::matmul(x, w), x)), s);
  });
  return cases;
}

}  // namespace ifam::testing
