// SPDX-License-Identifier: Apache-2.0
#include "ifam/vit.hpp"

#include <cmath>
#include <stdexcept>

#include "ifam/numcore/ops.hpp"

namespace ifam {

using nc::Tensor;

void ModelConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("ModelConfig: ") + what);
  };
  need(image_size > 0 && patch_size > 0, "sizes must be positive");
  need(image_size % patch_size == 0, "image_size not divisible by patch_size");
  need(embed_dim > 0 && n_heads > 0, "embed_dim and n_heads must be positive");
  need(embed_dim % n_heads == 0, "embed_dim not divisible by n_heads");
  need(embed_dim % 4 == 0, "embed_dim must be a multiple of 4");
  need(n_layers >= 0 && mlp_ratio > 0, "bad depth or mlp_ratio");
  need(n_registers >= 0, "negative register count");
  need(n_classes >= 1 && n_parts >= 1 && channels >= 1, "bad class/part/channel count");
}

Tensor TokenGrid::sequence() const {
  if (registers.defined() && registers.dim(0) > 0) {
    return nc::concat_rows({patches, cls, registers});
  }
  return nc::concat_rows({patches, cls});
}

Tensor patchify(const Image& image, const ModelConfig& config) {
  if (image.height != config.image_size || image.width != config.image_size ||
      image.channels != config.channels) {
    throw std::invalid_argument("patchify: image is " + std::to_string(image.channels) +
                                "x" + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + ", model expects " +
                                std::to_string(config.image_size));
  }
  if (image.height % config.patch_size != 0) {
    throw std::invalid_argument("patchify: image size not divisible by patch size");
  }
  const int ps = config.patch_size;
  const int g = config.grid();
  const int pd = config.patch_dim();
  std::vector<double> out(static_cast<std::size_t>(g) * g * pd);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      double* row = out.data() + static_cast<std::size_t>(gy * g + gx) * pd;
      int k = 0;
      for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x)
            row[k++] = image.at(c, gy * ps + y, gx * ps + x) / 127.5 - 1.0;
    }
  }
  return Tensor::from({g * g, pd}, std::move(out));
}

VisionTransformer::VisionTransformer(ModelConfig config, const ParamSet& params,
                                     std::string prefix)
    : config_(config), params_(&params), prefix_(std::move(prefix)) {
  config_.validate();
}

const Tensor& VisionTransformer::p(const std::string& name) const {
  return params_->get(prefix_ + name);
}

namespace {

// Fixed 2D sine-cosine table: the first half of the channels encodes the row,
// the second half the column.
Tensor sincos_2d(int grid, int d) {
  const int quarter = d / 4;
  std::vector<double> v(static_cast<std::size_t>(grid) * grid * d);
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x) {
      double* row = &v[(static_cast<std::size_t>(y) * grid + x) * d];
      for (int i = 0; i < quarter; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / quarter);
        row[i] = std::sin(y * omega);
        row[quarter + i] = std::cos(y * omega);
        row[2 * quarter + i] = std::sin(x * omega);
        row[3 * quarter + i] = std::cos(x * omega);
      }
    }
  return Tensor::from({grid * grid, d}, std::move(v));
}

}  // namespace

void VisionTransformer::init_params(const ModelConfig& c, ParamSet& params,
                                    const std::string& prefix, nc::Rng& rng, PosInit pos) {
  c.validate();
  auto normal = [&](nc::Shape shape, double stddev) {
    std::vector<double> v(nc::numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor::from(std::move(shape), std::move(v));
  };
  const int d = c.embed_dim;
  const int h = d * c.mlp_ratio;
  const double std_in = 0.02;
  params.add(prefix + "patch_w", normal({c.patch_dim(), d}, 1.0 / std::sqrt(c.patch_dim())));
  params.add(prefix + "patch_b", Tensor::zeros({d}));
  params.add(prefix + "pos", pos == PosInit::sincos ? sincos_2d(c.grid(), d)
                                                : normal({c.num_patches(), d}, std_in));
  params.add(prefix + "cls", normal({1, d}, std_in));
  params.add(prefix + "cls_pos", normal({1, d}, std_in));
  params.add(prefix + "reg", normal({c.n_registers, d}, std_in));
  params.add(prefix + "reg_pos", normal({c.n_registers, d}, std_in));
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string b = prefix + "l" + std::to_string(l) + ".";
    params.add(b + "ln1_g", Tensor::full({d}, 1.0));
    params.add(b + "ln1_b", Tensor::zeros({d}));
    params.add(b + "qkv_w", normal({d, 3 * d}, 1.0 / std::sqrt(d)));
    params.add(b + "qkv_b", Tensor::zeros({3 * d}));
    params.add(b + "proj_w", normal({d, d}, 1.0 / std::sqrt(d) / std::sqrt(2.0 * c.n_layers)));
    params.add(b + "proj_b", Tensor::zeros({d}));
    params.add(b + "ln2_g", Tensor::full({d}, 1.0));
    params.add(b + "ln2_b", Tensor::zeros({d}));
    params.add(b + "fc1_w", normal({d, h}, 1.0 / std::sqrt(d)));
    params.add(b + "fc1_b", Tensor::zeros({h}));
    params.add(b + "fc2_w", normal({h, d}, 1.0 / std::sqrt(h) / std::sqrt(2.0 * c.n_layers)));
    params.add(b + "fc2_b", Tensor::zeros({d}));
  }
  params.add(prefix + "lnf_g", Tensor::full({d}, 1.0));
  params.add(prefix + "lnf_b", Tensor::zeros({d}));
}

TokenGrid VisionTransformer::embed(const Image& image) const {
  Tensor patches = patchify(image, config_);
  Tensor tokens = nc::add(nc::add_row(nc::matmul(patches, p("patch_w")), p("patch_b")),
                          p("pos"));
  TokenGrid grid;
  grid.patches = tokens;
  grid.cls = nc::add(p("cls"), p("cls_pos"));
  grid.registers = nc::add(p("reg"), p("reg_pos"));
  grid.grid_h = config_.grid();
  grid.grid_w = config_.grid();
  grid.patch_ids.resize(static_cast<std::size_t>(config_.num_patches()));
  for (int i = 0; i < config_.num_patches(); ++i) grid.patch_ids[i] = i;
  return grid;
}

Tensor VisionTransformer::masked_attention(const Tensor& x, const AttentionMask* mask,
                                           int layer) const {
  const int t = x.dim(0);
  const int d = config_.embed_dim;
  if (x.dim(1) != d) throw std::invalid_argument("masked_attention: width mismatch");
  if (mask && mask->matrix.shape() != nc::Shape{t, t}) {
    throw std::invalid_argument("masked_attention: mask is " +
                                nc::shape_str(mask->matrix.shape()) + " for " +
                                std::to_string(t) + " tokens");
  }
  const std::string b = "l" + std::to_string(layer) + ".";
  const int hd = config_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor qkv = nc::add_row(nc::matmul(x, p(b + "qkv_w")), p(b + "qkv_b"));
  Tensor additive = mask ? mask->matrix : Tensor::zeros({t, t});
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(config_.n_heads));
  for (int h = 0; h < config_.n_heads; ++h) {
    Tensor q = nc::slice_cols(qkv, h * hd, hd);
    Tensor k = nc::slice_cols(qkv, d + h * hd, hd);
    Tensor v = nc::slice_cols(qkv, 2 * d + h * hd, hd);
    Tensor logits = nc::scale(nc::matmul_nt(q, k), inv_sqrt);
    heads.push_back(nc::matmul(nc::masked_softmax(logits, additive), v));
  }
  Tensor out = nc::add_row(nc::matmul(nc::concat_cols(heads), p(b + "proj_w")),
                           p(b + "proj_b"));
  if (mask) {
    auto rows = mask->live_rows();
    out = nc::mul_col(out, Tensor::from({t}, std::move(rows)));
  }
  return out;
}

Tensor VisionTransformer::encode(const Tensor& sequence, const AttentionMask* mask) const {
  Tensor x = sequence;
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string b = "l" + std::to_string(l) + ".";
    Tensor h = nc::layer_norm_rows(x, p(b + "ln1_g"), p(b + "ln1_b"));
    x = nc::add(x, masked_attention(h, mask, l));
    h = nc::layer_norm_rows(x, p(b + "ln2_g"), p(b + "ln2_b"));
    h = nc::gelu(nc::add_row(nc::matmul(h, p(b + "fc1_w")), p(b + "fc1_b")));
    x = nc::add(x, nc::add_row(nc::matmul(h, p(b + "fc2_w")), p(b + "fc2_b")));
  }
  return nc::layer_norm_rows(x, p("lnf_g"), p("lnf_b"));
}

VitOutput VisionTransformer::split_output(const Tensor& encoded, int n_patches) const {
  return VitOutput{nc::reshape(nc::slice_rows(encoded, n_patches, 1), {config_.embed_dim}),
                   nc::slice_rows(encoded, 0, n_patches)};
}

VitOutput VisionTransformer::forward(const Image& image,
                                     const std::vector<std::uint8_t>* live) const {
  TokenGrid grid = embed(image);
  const int n = grid.num_patches();
  if (live) {
    if (static_cast<int>(live->size()) != n) {
      throw std::invalid_argument("forward: mask length does not match patch count");
    }
    AttentionMask mask = build_attention_mask(*live, config_.n_registers);
    return split_output(encode(grid.sequence(), &mask), n);
  }
  return split_output(encode(grid.sequence(), nullptr), n);
}

}  // namespace ifam
