#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "illid/tensor.hpp"

namespace illid {

using Rng = std::mt19937_64;

/// Independent child seed for stream `stream` of `seed` (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// [rows x cols] of iid standard normals.
inline ad::Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = n01(rng);
  return ad::Tensor::matrix(rows, cols, std::move(v));
}

inline ad::Tensor uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = u(rng);
  return ad::Tensor::matrix(rows, cols, std::move(v));
}

}  // namespace illid
