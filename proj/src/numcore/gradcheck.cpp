// SPDX-License-Identifier: Apache-2.0
#include "ifam/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ifam/numcore/ops.hpp"

namespace ifam::nc {
namespace {

double eval_at(const ScalarFn& f, const Shape& shape,
               std::vector<double> values) {
  Tensor leaf = Tensor::from(shape, std::move(values));
  Tensor y = f(leaf);
  if (y.size() != 1) throw std::invalid_argument("finite_diff_check: f not scalar");
  return y.item();
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite_diff_check: h must be > 0");
  SurrogateScope surrogate;
  const Shape shape = x.shape();
  const std::vector<double> x0(x.values().begin(), x.values().end());

  if (eval_at(f, shape, x0) != eval_at(f, shape, x0)) {
    throw std::runtime_error("finite_diff_check: f is not deterministic");
  }

  Tensor leaf = Tensor::from(shape, x0, /*requires_grad=*/true);
  Tensor y = f(leaf);
  std::vector<double> analytic(x0.size(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    auto g = leaf.grad();
    analytic.assign(g.begin(), g.end());
  }

  double worst = 0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    auto plus = x0;
    auto minus = x0;
    plus[i] += h;
    minus[i] -= h;
    const double numeric =
        (eval_at(f, shape, plus) - eval_at(f, shape, minus)) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) /
                                std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace ifam::nc
