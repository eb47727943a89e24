// SPDX-License-Identifier: Apache-2.0
#include "ifam/numcore/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ifam::nc {
namespace {

// SplitMix64 finalizer.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  return mix(mix(seed_) ^ (counter_++ * 0xD1B54A32D192ED03ull));
}

double Rng::uniform() {
  // 53 random bits, centered in their bin so 0 and 1 are unreachable.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(mix(seed_ ^ mix(stream + 0x632BE59BD9B4E019ull)));
}

double gumbel_from_uniform(double u) { return -std::log(-std::log(u)); }

Tensor gumbel_sample(const Shape& shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = gumbel_from_uniform(rng.uniform());
  return Tensor::from(shape, std::move(v));
}

}  // namespace ifam::nc
