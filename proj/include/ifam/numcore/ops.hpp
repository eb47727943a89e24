// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ifam/numcore/tensor.hpp"

// Differentiable operations. Matrix ops treat a tensor as [rows, cols]
// (rank-1 tensors are a single row). Every op here has a finite-difference
// test in tests/numcore_test.cpp.
namespace ifam::nc {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
// x * log(x), with 0 log 0 = 0. Input must be >= 0.
Tensor xlogx(const Tensor& a);
// Scalar tensor s times a.
Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s);
Tensor reciprocal(const Tensor& a);

// Broadcasts over rows: x[R,C] op v[C].
Tensor add_row(const Tensor& x, const Tensor& v);
Tensor mul_row(const Tensor& x, const Tensor& v);
// Broadcasts over columns: x[R,C] * v[R].
Tensor mul_col(const Tensor& x, const Tensor& v);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [R,C] -> [C]
Tensor sum_rows(const Tensor& x);
// [R,C] -> [R]
Tensor sum_cols(const Tensor& x);
// [R,C] -> [R]; gradient routed to the first maximal entry of each row.
Tensor max_cols(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
// a[m,k] * b[n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor slice_rows(const Tensor& x, int start, int count);
Tensor slice_cols(const Tensor& x, int start, int count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor gather_cols(const Tensor& x, const std::vector<int>& cols);

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps = 1e-6);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
Tensor softmax_rows(const Tensor& x);

/// Softmax along the last axis with an additive {0, -inf} mask of the same
/// shape. Entries at or below kMaskSentinel (or -inf) are masked. Masked
/// outputs are exactly 0; rows with every entry masked are all-zero.
/// The mask is a constant: it never receives a gradient.
Tensor masked_softmax(const Tensor& logits, const Tensor& mask);

// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Forward value is `hard`; backward passes the incoming gradient to `soft`
/// unchanged. Equivalent to soft + stop_gradient(hard - soft).
Tensor straight_through(const Tensor& soft, const std::vector<double>& hard);

/// While alive, straight_through forwards its soft input instead of the hard
/// value on this thread. Used by finite_diff_check to probe the surrogate.
class SurrogateScope {
 public:
  SurrogateScope();
  ~SurrogateScope();
  SurrogateScope(const SurrogateScope&) = delete;
  SurrogateScope& operator=(const SurrogateScope&) = delete;

  static bool active();

 private:
  bool previous_;
};

}  // namespace ifam::nc
