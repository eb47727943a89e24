// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ifam/numcore/tensor.hpp"

namespace ifam {

/// Named, ordered collection of trainable leaves.
class ParamSet {
 public:
  nc::Tensor& add(const std::string& name, nc::Tensor value);
  const nc::Tensor& get(const std::string& name) const;
  nc::Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  // Deep copy: fresh leaves with the same values and requires_grad flags.
  ParamSet clone() const;
  void copy_values_from(const ParamSet& other);
  // Rounds every value to the nearest 32-bit float.
  void snap_to_float();
  std::size_t total_values() const;

 private:
  std::vector<std::pair<std::string, nc::Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ifam
