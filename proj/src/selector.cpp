// SPDX-License-Identifier: Apache-2.0
#include "ifam/selector.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <stdexcept>

#include "ifam/numcore/ops.hpp"

namespace ifam {

using nc::Tensor;

namespace {

void require_nonzero_rows(const Tensor& x, const char* what) {
  const int r = x.dim(0);
  const int c = x.dim(1);
  for (int i = 0; i < r; ++i) {
    double s = 0;
    for (int j = 0; j < c; ++j) s += x.at(i, j) * x.at(i, j);
    if (s < 1e-24) {
      throw std::invalid_argument(std::string("assign_parts: zero-norm ") + what + " row " +
                                  std::to_string(i));
    }
  }
}

}  // namespace

int HardTokenMask::live_count() const {
  int n = 0;
  for (auto v : s) n += v;
  return n;
}

void LossWeights::validate() const {
  for (double w : {total_variation, presence, concentration, orthogonality, entropy,
                   background_prior, equivariance, stage1_ce, stage2_ce}) {
    if (!(w >= 0)) throw std::invalid_argument("loss weights must be >= 0");
  }
}

std::vector<int> hard_map(const Tensor& soft) {
  const int parts = soft.dim(0);
  const int n = soft.dim(1);
  std::vector<int> hard(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int k = 1; k < parts; ++k)
      if (soft.at(k, i) > soft.at(best, i)) best = k;
    hard[i] = best;
  }
  return hard;
}

PartAssignment assign_parts(const Tensor& features, const Tensor& prototypes,
                            const Tensor& temperature, bool gumbel, nc::Rng* rng) {
  if (temperature.size() != 1 || !(temperature.item() > 0)) {
    throw std::invalid_argument("assign_parts: temperature must be > 0");
  }
  if (features.rank() != 2 || prototypes.rank() != 2 ||
      features.dim(1) != prototypes.dim(1)) {
    throw std::invalid_argument("assign_parts: feature/prototype width mismatch");
  }
  require_nonzero_rows(features, "feature");
  require_nonzero_rows(prototypes, "prototype");

  Tensor cos = nc::matmul_nt(nc::l2_normalize_rows(features),
                             nc::l2_normalize_rows(prototypes));  // [N, K+1]
  Tensor logits = nc::mul_scalar_tensor(cos, nc::reciprocal(nc::reshape(temperature, {})));
  if (gumbel) {
    if (!rng) throw std::invalid_argument("assign_parts: gumbel noise needs an rng");
    logits = nc::add(logits, nc::gumbel_sample(logits.shape(), *rng));
  }
  PartAssignment out;
  out.soft = nc::transpose(nc::softmax_rows(logits));
  out.hard = hard_map(out.soft);
  out.gumbel = gumbel;
  out.temperature = temperature.item();
  return out;
}

PartAssignment assign_parts(const Tensor& features, const Tensor& prototypes,
                            double temperature, bool gumbel, nc::Rng* rng) {
  return assign_parts(features, prototypes, Tensor::scalar(temperature), gumbel, rng);
}

Tensor ShapingLosses::weighted(const LossWeights& w) const {
  Tensor total = Tensor::scalar(0.0);
  auto term = [&](double weight, const Tensor& t) {
    if (weight != 0.0) total = nc::add(total, nc::scale(t, weight));
  };
  term(w.total_variation, total_variation);
  term(w.presence, presence);
  term(w.concentration, concentration);
  term(w.orthogonality, orthogonality);
  term(w.entropy, entropy);
  term(w.background_prior, background_prior);
  return total;
}

ShapingLosses shaping_losses(const PartAssignment& assignment, const Tensor& prototypes,
                             int grid_h, int grid_w) {
  const Tensor& a = assignment.soft;
  const int parts = a.dim(0);
  const int k = parts - 1;
  const int n = a.dim(1);
  if (n != grid_h * grid_w) throw std::invalid_argument("shaping_losses: grid mismatch");
  ShapingLosses out;

  // 4-neighbour pairs, row-major grid.
  std::vector<int> lhs;
  std::vector<int> rhs;
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      const int i = y * grid_w + x;
      if (x + 1 < grid_w) {
        lhs.push_back(i);
        rhs.push_back(i + 1);
      }
      if (y + 1 < grid_h) {
        lhs.push_back(i);
        rhs.push_back(i + grid_w);
      }
    }
  }
  out.total_variation =
      lhs.empty() ? Tensor::scalar(0.0)
                  : nc::mean(nc::abs(nc::sub(nc::gather_cols(a, lhs), nc::gather_cols(a, rhs))));

  Tensor fg = nc::slice_rows(a, 1, k);  // [K, N]
  out.presence = nc::mean(nc::relu(nc::add_scalar(nc::scale(nc::max_cols(fg), -1.0), 1.0)));

  // Spatial variance of each part's normalized map, coordinates in units of
  // the grid diagonal.
  const double diag = std::sqrt(static_cast<double>(grid_h * grid_h + grid_w * grid_w));
  std::vector<double> ys(static_cast<std::size_t>(n));
  std::vector<double> xs(static_cast<std::size_t>(n));
  std::vector<double> r2(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ys[i] = (i / grid_w) / diag;
    xs[i] = (i % grid_w) / diag;
    r2[i] = ys[i] * ys[i] + xs[i] * xs[i];
  }
  Tensor mass = nc::sum_cols(fg);
  Tensor w = nc::mul_col(fg, nc::reciprocal(nc::add_scalar(mass, 1e-12)));
  Tensor ey = nc::matmul(w, Tensor::from({n, 1}, ys));
  Tensor ex = nc::matmul(w, Tensor::from({n, 1}, xs));
  Tensor er2 = nc::matmul(w, Tensor::from({n, 1}, r2));
  out.concentration = nc::mean(nc::sub(nc::sub(er2, nc::square(ey)), nc::square(ex)));

  if (parts > 1) {
    Tensor pn = nc::l2_normalize_rows(prototypes);
    Tensor gram = nc::matmul_nt(pn, pn);
    std::vector<double> off(static_cast<std::size_t>(parts) * parts, 1.0);
    for (int i = 0; i < parts; ++i) off[i * parts + i] = 0.0;
    out.orthogonality = nc::scale(nc::sum(nc::mul(nc::square(gram),
                                                  Tensor::from({parts, parts}, off))),
                                  1.0 / (parts * (parts - 1)));
  } else {
    out.orthogonality = Tensor::scalar(0.0);
  }

  out.entropy = nc::scale(nc::sum(nc::xlogx(a)), -1.0 / n);

  std::vector<int> ring;
  for (int y = 0; y < grid_h; ++y)
    for (int x = 0; x < grid_w; ++x)
      if (y == 0 || x == 0 || y == grid_h - 1 || x == grid_w - 1) ring.push_back(y * grid_w + x);
  out.background_prior = nc::add_scalar(
      nc::scale(nc::mean(nc::gather_cols(nc::slice_rows(a, 0, 1), ring)), -1.0), 1.0);
  return out;
}

Image roll_image(const Image& image, int dy, int dx) {
  Image out(image.channels, image.height, image.width);
  const int h = image.height;
  const int w = image.width;
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, ((y + dy) % h + h) % h, ((x + dx) % w + w) % w) = image.at(c, y, x);
  return out;
}

Tensor equivariance_loss(const PartAssignment& original, const PartAssignment& rolled, int grid_h,
                         int grid_w, int sy, int sx) {
  const int n = grid_h * grid_w;
  if (original.num_tokens() != n || rolled.num_tokens() != n) {
    throw std::invalid_argument("equivariance_loss: grid mismatch");
  }
  // Column j of the rolled map corresponds to column src[j] of the original.
  std::vector<int> src(static_cast<std::size_t>(n));
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      const int ry = ((y + sy) % grid_h + grid_h) % grid_h;
      const int rx = ((x + sx) % grid_w + grid_w) % grid_w;
      src[ry * grid_w + rx] = y * grid_w + x;
    }
  }
  return nc::mean(nc::square(nc::sub(rolled.soft, nc::gather_cols(original.soft, src))));
}

std::set<int> all_parts(int k) {
  std::set<int> s;
  for (int i = 1; i <= k; ++i) s.insert(i);
  return s;
}

HardTokenMask discretize(const PartAssignment& assignment, const std::set<int>& kept_parts) {
  const int k = assignment.num_parts();
  const int n = assignment.num_tokens();
  if (kept_parts.empty()) throw std::invalid_argument("discretize: no kept parts");
  for (int p : kept_parts) {
    if (p < 1 || p > k) {
      throw std::invalid_argument("discretize: part " + std::to_string(p) + " not in 1.." +
                                  std::to_string(k));
    }
  }
  HardTokenMask out;
  out.kept_parts = kept_parts;
  out.p_fg = nc::sum_rows(
      nc::gather_rows(assignment.soft, std::vector<int>(kept_parts.begin(), kept_parts.end())));
  out.s.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) out.s[i] = kept_parts.count(assignment.hard[i]) ? 1 : 0;
  if (out.live_count() == 0) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (out.p_fg[i] > out.p_fg[best]) best = i;
    out.s[best] = 1;
    out.fallback = true;
    spdlog::debug("discretize: empty foreground, promoted token {}", best);
  }
  std::vector<double> hard(out.s.begin(), out.s.end());
  out.st = nc::straight_through(out.p_fg, hard);
  return out;
}

Tensor stage1_classify(const PartAssignment& assignment, const Tensor& features,
                       const Stage1Head& head, const std::vector<double>& keep) {
  const int k = assignment.num_parts();
  const int n = assignment.num_tokens();
  const int d = features.dim(1);
  if (features.dim(0) != n) throw std::invalid_argument("stage1_classify: token mismatch");
  if (static_cast<int>(keep.size()) != k) {
    throw std::invalid_argument("stage1_classify: keep vector must have K entries");
  }
  Tensor fg = nc::slice_rows(assignment.soft, 1, k);
  Tensor mass = nc::sum_cols(fg);
  bool empty = true;
  for (int i = 0; i < k; ++i) empty = empty && mass[i] < 1e-12;

  Tensor pooled;  // [K, d]
  if (empty) {
    Tensor avg = nc::scale(nc::sum_rows(features), 1.0 / n);
    pooled = nc::concat_rows(std::vector<Tensor>(static_cast<std::size_t>(k),
                                                 nc::reshape(avg, {1, d})));
  } else {
    pooled = nc::mul_col(nc::matmul(fg, features),
                         nc::reciprocal(nc::add_scalar(mass, 1e-12)));
  }
  double kept = 0;
  for (double v : keep) kept += v;
  if (kept <= 0) throw std::invalid_argument("stage1_classify: every part dropped");
  Tensor modulated = nc::mul(pooled, head.modulation);
  Tensor z = nc::scale(nc::sum_rows(nc::mul_col(modulated, Tensor::from({k}, keep))),
                       1.0 / kept);
  return nc::reshape(nc::add_row(nc::matmul(nc::reshape(z, {1, d}), head.weight), head.bias),
                     {head.bias.dim(0)});
}

Selector::Selector(const ModelConfig& config, const ParamSet& params)
    : params_(&params), vit_(config, params, kPrefix) {}

void Selector::init_params(const ModelConfig& c, ParamSet& params, nc::Rng& rng) {
  VisionTransformer::init_params(c, params, kPrefix, rng);
  const std::string p = kPrefix;
  std::vector<double> protos(static_cast<std::size_t>(c.n_parts + 1) * c.embed_dim);
  for (auto& v : protos) v = rng.normal();
  params.add(p + "prototypes", Tensor::from({c.n_parts + 1, c.embed_dim}, protos));
  params.add(p + "log_tau", Tensor::scalar(std::log(0.1)));
  params.add(p + "modulation", Tensor::full({c.n_parts, c.embed_dim}, 1.0));
  std::vector<double> w(static_cast<std::size_t>(c.embed_dim) * c.n_classes);
  for (auto& v : w) v = rng.normal() / std::sqrt(c.embed_dim);
  params.add(p + "head_w", Tensor::from({c.embed_dim, c.n_classes}, w));
  params.add(p + "head_b", Tensor::zeros({c.n_classes}));
}

const Tensor& Selector::prototypes() const {
  return params_->get(std::string(kPrefix) + "prototypes");
}

Tensor Selector::temperature() const {
  return nc::exp(params_->get(std::string(kPrefix) + "log_tau"));
}

Stage1Head Selector::head() const {
  const std::string p = kPrefix;
  return {params_->get(p + "modulation"), params_->get(p + "head_w"),
          params_->get(p + "head_b")};
}

SelectorOutput Selector::run(const Image& image, bool gumbel, nc::Rng* rng) const {
  SelectorOutput out;
  out.vit = vit_.forward(image);
  out.assignment = assign_parts(out.vit.patches, prototypes(), temperature(), gumbel, rng);
  return out;
}

}  // namespace ifam
