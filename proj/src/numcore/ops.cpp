// SPDX-License-Identifier: Apache-2.0
#include "ifam/numcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ifam::nc {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct Dims {
  int rows;
  int cols;
};

Dims as_matrix(const Tensor& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw std::invalid_argument(std::string(op) + ": expected rank 1 or 2, got " +
                              shape_str(s));
}

// Last-axis view of an arbitrary tensor.
Dims as_rows(const Tensor& t) {
  const auto& s = t.shape();
  if (s.empty()) return {1, 1};
  int cols = s.back();
  int rows = cols == 0 ? 0 : static_cast<int>(t.size() / cols);
  return {rows, cols};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

// Grad buffer of an input if it participates in backward, else nullptr.
double* grad_of(const Tensor& t) {
  return t.requires_grad() ? t.node()->ensure_grad().data() : nullptr;
}

template <class Fwd, class Dfn>
Tensor unary(const Tensor& a, Fwd fwd, Dfn dfdx) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [a, dfdx](Node& self) {
    double* ga = grad_of(a);
    auto av = a.values();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * dfdx(av[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        ga[i] += self.grad[i] * b[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        gb[i] += self.grad[i] * a[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
               x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor xlogx(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0 ? x * std::log(x) : 0.0; },
      [](double x, double) { return x > 0 ? std::log(x) + 1.0 : 0.0; });
}

Tensor reciprocal(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / x; },
      [](double x, double) { return -1.0 / (x * x); });
}

Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw std::invalid_argument("mul_scalar_tensor: s not scalar");
  const double sv = s.item();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sv;
  return make_result(a.shape(), std::move(out), {a, s}, [a, s](Node& self) {
    const double sv = s.item();
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * sv;
    if (double* gs = grad_of(s)) {
      double acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * a[i];
      gs[0] += acc;
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  auto [r, c] = as_matrix(x, "add_row");
  if (v.size() != static_cast<std::size_t>(c)) {
    throw std::invalid_argument("add_row: vector length mismatch");
  }
  std::vector<double> out(x.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + v[j];
  return make_result(x.shape(), std::move(out), {x, v},
                     [x, v, r, c](Node& self) {
                       if (double* gx = grad_of(x))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           gx[i] += self.grad[i];
                       if (double* gv = grad_of(v))
                         for (int i = 0; i < r; ++i)
                           for (int j = 0; j < c; ++j) gv[j] += self.grad[i * c + j];
                     });
}

Tensor mul_row(const Tensor& x, const Tensor& v) {
  auto [r, c] = as_matrix(x, "mul_row");
  if (v.size() != static_cast<std::size_t>(c)) {
    throw std::invalid_argument("mul_row: vector length mismatch");
  }
  std::vector<double> out(x.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * v[j];
  return make_result(x.shape(), std::move(out), {x, v},
                     [x, v, r, c](Node& self) {
                       double* gx = grad_of(x);
                       double* gv = grad_of(v);
                       for (int i = 0; i < r; ++i)
                         for (int j = 0; j < c; ++j) {
                           const double g = self.grad[i * c + j];
                           if (gx) gx[i * c + j] += g * v[j];
                           if (gv) gv[j] += g * x[i * c + j];
                         }
                     });
}

Tensor mul_col(const Tensor& x, const Tensor& v) {
  auto [r, c] = as_matrix(x, "mul_col");
  if (v.size() != static_cast<std::size_t>(r)) {
    throw std::invalid_argument("mul_col: vector length mismatch");
  }
  std::vector<double> out(x.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * v[i];
  return make_result(x.shape(), std::move(out), {x, v},
                     [x, v, r, c](Node& self) {
                       double* gx = grad_of(x);
                       double* gv = grad_of(v);
                       for (int i = 0; i < r; ++i)
                         for (int j = 0; j < c; ++j) {
                           const double g = self.grad[i * c + j];
                           if (gx) gx[i * c + j] += g * v[i];
                           if (gv) gv[i] += g * x[i * c + j];
                         }
                     });
}

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.values()) s += v;
  return make_result({}, {s}, {a}, [a](Node& self) {
    double* ga = grad_of(a);
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& x) {
  auto [r, c] = as_matrix(x, "sum_rows");
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j] += x[i * c + j];
  return make_result({c}, std::move(out), {x}, [x, r, c](Node& self) {
    double* gx = grad_of(x);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) gx[i * c + j] += self.grad[j];
  });
}

Tensor sum_cols(const Tensor& x) {
  auto [r, c] = as_matrix(x, "sum_cols");
  std::vector<double> out(static_cast<std::size_t>(r), 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i] += x[i * c + j];
  return make_result({r}, std::move(out), {x}, [x, r, c](Node& self) {
    double* gx = grad_of(x);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) gx[i * c + j] += self.grad[i];
  });
}

Tensor max_cols(const Tensor& x) {
  auto [r, c] = as_matrix(x, "max_cols");
  if (c == 0) throw std::invalid_argument("max_cols: empty rows");
  std::vector<double> out(static_cast<std::size_t>(r));
  std::vector<int> arg(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (x[i * c + j] > x[i * c + best]) best = j;
    arg[i] = best;
    out[i] = x[i * c + best];
  }
  return make_result({r}, std::move(out), {x}, [x, arg, c](Node& self) {
    double* gx = grad_of(x);
    for (std::size_t i = 0; i < arg.size(); ++i)
      gx[i * c + arg[i]] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto [m, k] = as_matrix(a, "matmul");
  auto [k2, n] = as_matrix(b, "matmul");
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.values().data(), m, k) * CMapMat(b.values().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](Node& self) {
                       CMapMat g(self.grad.data(), m, n);
                       if (double* ga = grad_of(a))
                         MapMat(ga, m, k).noalias() +=
                             g * CMapMat(b.values().data(), k, n).transpose();
                       if (double* gb = grad_of(b))
                         MapMat(gb, k, n).noalias() +=
                             CMapMat(a.values().data(), m, k).transpose() * g;
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  auto [m, k] = as_matrix(a, "matmul_nt");
  auto [n, k2] = as_matrix(b, "matmul_nt");
  if (k != k2) {
    throw std::invalid_argument("matmul_nt: inner dims " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.values().data(), m, k) *
      CMapMat(b.values().data(), n, k).transpose();
  return make_result({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](Node& self) {
                       CMapMat g(self.grad.data(), m, n);
                       if (double* ga = grad_of(a))
                         MapMat(ga, m, k).noalias() +=
                             g * CMapMat(b.values().data(), n, k);
                       if (double* gb = grad_of(b))
                         MapMat(gb, n, k).noalias() +=
                             g.transpose() * CMapMat(a.values().data(), m, k);
                     });
}

Tensor transpose(const Tensor& x) {
  auto [r, c] = as_matrix(x, "transpose");
  std::vector<double> out(x.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result({c, r}, std::move(out), {x}, [x, r, c](Node& self) {
    double* gx = grad_of(x);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " +
                                shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [x](Node& self) {
    double* gx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  auto [r, c] = as_matrix(x, "slice_rows");
  if (start < 0 || count < 0 || start + count > r) {
    throw std::out_of_range("slice_rows: range out of bounds");
  }
  auto first = x.values().begin() + static_cast<std::ptrdiff_t>(start) * c;
  std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(count) * c);
  return make_result({count, c}, std::move(out), {x},
                     [x, start, c](Node& self) {
                       double* gx = grad_of(x) + static_cast<std::ptrdiff_t>(start) * c;
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         gx[i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& x, int start, int count) {
  auto [r, c] = as_matrix(x, "slice_cols");
  if (start < 0 || count < 0 || start + count > c) {
    throw std::out_of_range("slice_cols: range out of bounds");
  }
  std::vector<double> out(static_cast<std::size_t>(r) * count);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < count; ++j) out[i * count + j] = x[i * c + start + j];
  return make_result({r, count}, std::move(out), {x},
                     [x, r, c, start, count](Node& self) {
                       double* gx = grad_of(x);
                       for (int i = 0; i < r; ++i)
                         for (int j = 0; j < count; ++j)
                           gx[i * c + start + j] += self.grad[i * count + j];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int c = as_matrix(parts[0], "concat_rows").cols;
  int rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    auto d = as_matrix(p, "concat_rows");
    if (d.cols != c) throw std::invalid_argument("concat_rows: column mismatch");
    rows += d.rows;
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_result({rows, c}, std::move(out), parts, [parts](Node& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (double* gp = grad_of(p))
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += self.grad[off + i];
      off += p.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int r = as_matrix(parts[0], "concat_cols").rows;
  int cols = 0;
  for (const auto& p : parts) {
    auto d = as_matrix(p, "concat_cols");
    if (d.rows != r) throw std::invalid_argument("concat_cols: row mismatch");
    cols += d.cols;
  }
  std::vector<double> out(static_cast<std::size_t>(r) * cols);
  int off = 0;
  for (const auto& p : parts) {
    const int pc = as_matrix(p, "concat_cols").cols;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < pc; ++j) out[i * cols + off + j] = p[i * pc + j];
    off += pc;
  }
  return make_result({r, cols}, std::move(out), parts,
                     [parts, r, cols](Node& self) {
                       int off = 0;
                       for (const auto& p : parts) {
                         const int pc = as_matrix(p, "concat_cols").cols;
                         if (double* gp = grad_of(p))
                           for (int i = 0; i < r; ++i)
                             for (int j = 0; j < pc; ++j)
                               gp[i * pc + j] += self.grad[i * cols + off + j];
                         off += pc;
                       }
                     });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  auto [r, c] = as_matrix(x, "gather_rows");
  std::vector<double> out;
  out.reserve(rows.size() * static_cast<std::size_t>(c));
  for (int idx : rows) {
    if (idx < 0 || idx >= r) throw std::out_of_range("gather_rows: index");
    auto first = x.values().begin() + static_cast<std::ptrdiff_t>(idx) * c;
    out.insert(out.end(), first, first + c);
  }
  return make_result({static_cast<int>(rows.size()), c}, std::move(out), {x},
                     [x, rows, c](Node& self) {
                       double* gx = grad_of(x);
                       for (std::size_t i = 0; i < rows.size(); ++i)
                         for (int j = 0; j < c; ++j)
                           gx[rows[i] * c + j] += self.grad[i * c + j];
                     });
}

Tensor gather_cols(const Tensor& x, const std::vector<int>& cols) {
  auto [r, c] = as_matrix(x, "gather_cols");
  const int n = static_cast<int>(cols.size());
  std::vector<double> out(static_cast<std::size_t>(r) * n);
  for (int j = 0; j < n; ++j)
    if (cols[j] < 0 || cols[j] >= c) throw std::out_of_range("gather_cols: index");
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < n; ++j) out[i * n + j] = x[i * c + cols[j]];
  return make_result({r, n}, std::move(out), {x},
                     [x, cols, r, c, n](Node& self) {
                       double* gx = grad_of(x);
                       for (int i = 0; i < r; ++i)
                         for (int j = 0; j < n; ++j)
                           gx[i * c + cols[j]] += self.grad[i * n + j];
                     });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps) {
  auto [r, c] = as_matrix(x, "layer_norm_rows");
  if (gamma.size() != static_cast<std::size_t>(c) ||
      beta.size() != static_cast<std::size_t>(c)) {
    throw std::invalid_argument("layer_norm_rows: affine size mismatch");
  }
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(static_cast<std::size_t>(r));
  std::vector<double> out(x.size());
  for (int i = 0; i < r; ++i) {
    double mu = 0;
    for (int j = 0; j < c; ++j) mu += x[i * c + j];
    mu /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) {
      const double d = x[i * c + j] - mu;
      var += d * d;
    }
    var /= c;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      xhat[i * c + j] = (x[i * c + j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gamma[j] + beta[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), r,
       c](Node& self) {
        double* gx = grad_of(x);
        double* gg = grad_of(gamma);
        double* gb = grad_of(beta);
        for (int i = 0; i < r; ++i) {
          const double* g = self.grad.data() + i * c;
          const double* xh = xhat.data() + i * c;
          if (gg)
            for (int j = 0; j < c; ++j) gg[j] += g[j] * xh[j];
          if (gb)
            for (int j = 0; j < c; ++j) gb[j] += g[j];
          if (gx) {
            double mean_dy = 0;
            double mean_dy_xh = 0;
            for (int j = 0; j < c; ++j) {
              const double dy = g[j] * gamma[j];
              mean_dy += dy;
              mean_dy_xh += dy * xh[j];
            }
            mean_dy /= c;
            mean_dy_xh /= c;
            for (int j = 0; j < c; ++j) {
              const double dy = g[j] * gamma[j];
              gx[i * c + j] += inv_std[i] * (dy - mean_dy - xh[j] * mean_dy_xh);
            }
          }
        }
      });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  auto [r, c] = as_matrix(x, "l2_normalize_rows");
  std::vector<double> norms(static_cast<std::size_t>(r));
  std::vector<double> out(x.size());
  for (int i = 0; i < r; ++i) {
    double s = 0;
    for (int j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (int j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x, norms = std::move(norms), r, c](Node& self) {
                       double* gx = grad_of(x);
                       for (int i = 0; i < r; ++i) {
                         const double* g = self.grad.data() + i * c;
                         const double* y = self.value.data() + i * c;
                         double dot = 0;
                         for (int j = 0; j < c; ++j) dot += g[j] * y[j];
                         for (int j = 0; j < c; ++j)
                           gx[i * c + j] += (g[j] - y[j] * dot) / norms[i];
                       }
                     });
}

Tensor softmax_rows(const Tensor& x) {
  return masked_softmax(x, Tensor::zeros(x.shape()));
}

Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
  if (logits.shape() != mask.shape()) {
    throw std::invalid_argument("masked_softmax: logits " +
                                shape_str(logits.shape()) + " vs mask " +
                                shape_str(mask.shape()));
  }
  auto [r, c] = as_rows(logits);
  std::vector<double> out(logits.size(), 0.0);
  for (int i = 0; i < r; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) {
      const double m = mask[base + j];
      if (m <= kMaskSentinel) continue;
      if (m != 0.0) {
        throw std::invalid_argument(
            "masked_softmax: mask entries must be 0 or -inf");
      }
      mx = std::max(mx, logits[base + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // dead row
    double z = 0;
    for (int j = 0; j < c; ++j) {
      if (mask[base + j] <= kMaskSentinel) continue;
      out[base + j] = std::exp(logits[base + j] - mx);
      z += out[base + j];
    }
    for (int j = 0; j < c; ++j) out[base + j] /= z;
  }
  return make_result(logits.shape(), std::move(out), {logits},
                     [logits, r, c](Node& self) {
                       double* gl = grad_of(logits);
                       for (int i = 0; i < r; ++i) {
                         const std::size_t base = static_cast<std::size_t>(i) * c;
                         double dot = 0;
                         for (int j = 0; j < c; ++j)
                           dot += self.grad[base + j] * self.value[base + j];
                         // Masked entries have value 0, so their grad is 0.
                         for (int j = 0; j < c; ++j)
                           gl[base + j] +=
                               self.value[base + j] * (self.grad[base + j] - dot);
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  auto [r, c] = as_matrix(logits, "cross_entropy");
  if (labels.size() != static_cast<std::size_t>(r)) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  std::vector<double> probs(logits.size());
  double loss = 0;
  for (int i = 0; i < r; ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw std::out_of_range("cross_entropy: label out of range");
    }
    double mx = logits[i * c];
    for (int j = 1; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
    double z = 0;
    for (int j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(logits[i * c + j] - mx);
      z += probs[i * c + j];
    }
    for (int j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss -= logits[i * c + labels[i]] - mx - std::log(z);
  }
  loss /= r;
  return make_result({}, {loss}, {logits},
                     [logits, labels, probs = std::move(probs), r, c](Node& self) {
                       double* gl = grad_of(logits);
                       const double g = self.grad[0] / r;
                       for (int i = 0; i < r; ++i)
                         for (int j = 0; j < c; ++j)
                           gl[i * c + j] += g * (probs[i * c + j] -
                                                 (j == labels[i] ? 1.0 : 0.0));
                     });
}

Tensor straight_through(const Tensor& soft, const std::vector<double>& hard) {
  if (hard.size() != soft.size()) {
    throw std::invalid_argument("straight_through: size mismatch");
  }
  std::vector<double> out = SurrogateScope::active()
                                ? std::vector<double>(soft.values().begin(),
                                                      soft.values().end())
                                : hard;
  return make_result(soft.shape(), std::move(out), {soft}, [soft](Node& self) {
    double* gs = grad_of(soft);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gs[i] += self.grad[i];
  });
}

namespace {
thread_local bool g_surrogate = false;
}

SurrogateScope::SurrogateScope() : previous_(g_surrogate) { g_surrogate = true; }
SurrogateScope::~SurrogateScope() { g_surrogate = previous_; }
bool SurrogateScope::active() { return g_surrogate; }

}  // namespace ifam::nc
