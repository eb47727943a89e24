// SPDX-License-Identifier: Apache-2.0
#include "ifam/params.hpp"

#include <stdexcept>

namespace ifam {

nc::Tensor& ParamSet::add(const std::string& name, nc::Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  if (!value.is_leaf()) throw std::invalid_argument("parameter must be a leaf: " + name);
  value.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

const nc::Tensor& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].second;
}

nc::Tensor& ParamSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].second;
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) {
    auto copy = nc::Tensor::from(t.shape(), {t.values().begin(), t.values().end()});
    out.add(name, copy);
    out.get(name).set_requires_grad(t.requires_grad());
  }
  return out;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  for (auto& [name, t] : entries_) {
    const auto& src = other.get(name);
    if (src.shape() != t.shape()) throw std::invalid_argument("shape mismatch for " + name);
    auto dst = t.mutable_values();
    std::copy(src.values().begin(), src.values().end(), dst.begin());
  }
}

void ParamSet::snap_to_float() {
  for (auto& [name, t] : entries_) {
    for (double& v : t.mutable_values()) v = static_cast<double>(static_cast<float>(v));
  }
}

std::size_t ParamSet::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

}  // namespace ifam
