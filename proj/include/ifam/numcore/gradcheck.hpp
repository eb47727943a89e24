// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "ifam/numcore/tensor.hpp"

namespace ifam::nc {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
///
/// `f` receives a fresh leaf for every evaluation. It is evaluated twice at
/// `x` first; differing outputs raise std::runtime_error. Straight-through
/// ops are checked along their soft surrogate, since the hard forward value
/// is piecewise constant and f itself sees no change under tiny steps.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace ifam::nc
