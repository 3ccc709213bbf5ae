#pragma once

// Exponential families EF_T(x | xi) = h(x) exp{T(x)^T xi - A(xi)}.
//
// gaussian(dim, sigma): N(sigma * xi, sigma^2 I) written with T(x) = x / sigma,
//   A(xi) = |xi|^2 / 2, grad A(xi) = xi, log h(x) = -|x|^2/(2 sigma^2) - (m/2) log(2 pi sigma^2).
// bernoulli(dim): independent Bernoulli(sigmoid(xi_i)) with T(x) = x,
//   A(xi) = sum softplus(xi_i), grad A(xi) = sigmoid(xi), h = 1.

#include <cstddef>
#include <span>
#include <vector>

#include "illid/random.hpp"
#include "illid/tensor.hpp"

namespace illid {

class ExpFamily {
 public:
  enum class Kind { gaussian_fixed_var, bernoulli };

  static ExpFamily gaussian(std::size_t dim, double sigma = 1.0);
  static ExpFamily bernoulli(std::size_t dim);

  Kind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  double sigma() const noexcept { return sigma_; }

  std::vector<double> sufficient_statistic(std::span<const double> x) const;
  double log_partition(std::span<const double> xi) const;
  std::vector<double> mean_map(std::span<const double> xi) const;
  double log_base_measure(std::span<const double> x) const;
  /// log h(x) + T(x)^T xi - A(xi)
  double log_density(std::span<const double> x, std::span<const double> xi) const;
  std::vector<double> sample(std::span<const double> xi, Rng& rng) const;

  // Row-wise batch forms. log_density is differentiable in xi: [B x m], [B x t] -> [B x 1].
  ad::Tensor log_density(const ad::Tensor& x, const ad::Tensor& xi) const;
  ad::Tensor sufficient_statistic(const ad::Tensor& x) const;
  ad::Tensor mean_map(const ad::Tensor& xi) const;
  ad::Tensor sample(const ad::Tensor& xi, Rng& rng) const;

 private:
  ExpFamily(Kind kind, std::size_t dim, double sigma) : kind_(kind), dim_(dim), sigma_(sigma) {}
  void check(std::size_t n, const char* what) const;

  Kind kind_;
  std::size_t dim_;
  double sigma_;
};

/// grad_z log p(x | z) = J^T (T(x) - grad A(xi)) for xi = f(z) and J = df/dz ([t x l]).
std::vector<double> score_wrt_latent(const ExpFamily& ef, std::span<const double> x,
                                     std::span<const double> xi, const ad::Tensor& jacobian);

}  // namespace illid
