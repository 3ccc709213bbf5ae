#pragma once

// Strongly convex input-convex networks and their Brenier maps.
//
//   y_1     = softplus(Wz_0 z + b_0)
//   y_{i+1} = softplus(Wy_i y_i + Wz_i z + b_i)        hidden layers
//   y_k     = Wy_{k-1} y_{k-1} + Wz_{k-1} z + b_{k-1}   scalar output, identity
//   G(z)    = y_k + (L/2) |z|^2
//
// Wy_i = softplus(Wy_raw_i) is entrywise positive, which makes G convex for
// any parameter values and L-strongly convex once the quadratic is added. The
// Brenier map f = grad G is therefore L-inverse Lipschitz:
//   |f(x) - f(y)| >= L |x - y|.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "illid/random.hpp"
#include "illid/tensor.hpp"

namespace illid {

using ad::Tensor;

struct IcnnLayer {
  Tensor wz;      ///< [out x l]
  Tensor b;       ///< [1 x out]
  Tensor wy_raw;  ///< [out x in]; empty on the first layer
};

struct IcnnParams {
  std::size_t input_dim = 0;
  double strong_convexity = 0.0;  ///< L
  std::vector<IcnnLayer> layers;  ///< last layer has width 1

  /// `hidden_layers` softplus layers of `width` units followed by the scalar output layer.
  /// Wz, b ~ U(-1/sqrt(l), 1/sqrt(l)); Wy_raw = softplus^-1(1/fan_in).
  static IcnnParams random(std::size_t input_dim, std::size_t hidden_layers, std::size_t width,
                           double strong_convexity, Rng& rng);
  /// Same architecture with Wz = 0 and b = 0, so G(z) = const + (L/2)|z|^2 and f(z) = L z.
  static IcnnParams zero(std::size_t input_dim, std::size_t hidden_layers, std::size_t width,
                         double strong_convexity);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  /// Throws DimensionError if layer shapes are inconsistent.
  void validate() const;
};

/// G evaluated row-wise: z [B x l] -> [B x 1].
Tensor icnn_eval(const IcnnParams& p, const Tensor& z);
double icnn_eval(const IcnnParams& p, std::span<const double> z);

/// f = grad G evaluated row-wise by the forward Jacobian recursion. Built from
/// differentiable ops, so parameter gradients flow through it. z [B x l] -> [B x l].
Tensor brenier_forward(const IcnnParams& p, const Tensor& z);

class BrenierMap {
 public:
  BrenierMap() = default;
  explicit BrenierMap(IcnnParams params);

  std::size_t dim() const noexcept { return params_.input_dim; }
  double strong_convexity() const noexcept { return params_.strong_convexity; }
  void set_strong_convexity(double L);

  const IcnnParams& params() const noexcept { return params_; }
  IcnnParams& params() noexcept { return params_; }

  Tensor operator()(const Tensor& z) const { return brenier_forward(params_, z); }
  std::vector<double> operator()(std::span<const double> z) const;

 private:
  IcnnParams params_;
};

/// Central-difference Jacobian of f at z with step h, symmetrized as (J + J^T)/2.
Tensor brenier_jacobian(const BrenierMap& m, std::span<const double> z, double h);
/// Step h = 1e-4 (1 + |z|_inf).
Tensor brenier_jacobian(const BrenierMap& m, std::span<const double> z);

/// Central-difference Jacobians of a batched map g: [B x n] -> [B x t] at every
/// row of `points`, with per-row step rel_step * (1 + |z|_inf). Not symmetrized.
/// Each result is [t x n] with entry (i, j) = d g_i / d z_j.
template <class Map>
std::vector<Tensor> finite_difference_jacobians(const Map& g, const Tensor& points, double rel_step = 1e-4);

/// min |f(x) - f(y)| / |x - y| over pairs; pairs closer than 1e-12 are skipped.
/// Throws ContractError if no usable pair remains.
double empirical_inverse_lipschitz(const BrenierMap& m,
                                   const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs);

/// One (input, output) observation pair of a map recorded during training.
struct RecycledPair {
  std::vector<double> x, fx, y, fy;
};
/// Same estimate from already computed outputs; no evaluation of the map.
double empirical_inverse_lipschitz(std::span<const RecycledPair> pairs);

/// B^T embedding R^l -> R^t by zero padding: [B x l] -> [B x t].
Tensor zero_pad(const Tensor& u, std::size_t t);

/// f2(B^T f1(z)) for l <= t.
Tensor composed_decoder(const BrenierMap& f1, const BrenierMap& f2, const Tensor& z);

// ---------------------------------------------------------------------------

template <class Map>
std::vector<Tensor> finite_difference_jacobians(const Map& g, const Tensor& points, double rel_step) {
  const std::size_t n_pts = points.rows();
  const std::size_t n = points.cols();
  std::vector<double> shifted(2 * n * n_pts * n);
  std::vector<double> steps(n_pts);
  for (std::size_t p = 0; p < n_pts; ++p) {
    double inf = 0.0;
    for (std::size_t j = 0; j < n; ++j) inf = std::max(inf, std::abs(points(p, j)));
    steps[p] = rel_step * (1.0 + inf);
    for (std::size_t j = 0; j < n; ++j)
      for (int s = 0; s < 2; ++s) {
        const std::size_t row = (p * n + j) * 2 + s;
        for (std::size_t k = 0; k < n; ++k) shifted[row * n + k] = points(p, k);
        shifted[row * n + j] += s == 0 ? steps[p] : -steps[p];
      }
  }
  const Tensor out = g(Tensor::matrix(2 * n * n_pts, n, std::move(shifted)));
  const std::size_t t = out.cols();
  std::vector<Tensor> result;
  result.reserve(n_pts);
  for (std::size_t p = 0; p < n_pts; ++p) {
    std::vector<double> jac(t * n);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t plus = (p * n + j) * 2, minus = plus + 1;
      for (std::size_t i = 0; i < t; ++i)
        jac[i * n + j] = (out(plus, i) - out(minus, i)) / (2.0 * steps[p]);
    }
    result.push_back(Tensor::matrix(t, n, std::move(jac)));
  }
  return result;
}

}  // namespace illid
