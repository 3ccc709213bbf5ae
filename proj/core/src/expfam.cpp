#include "illid/expfam.hpp"

#include <cmath>
#include <numbers>

#include "illid/error.hpp"

namespace illid {

using ad::Tensor;

ExpFamily ExpFamily::gaussian(std::size_t dim, double sigma) {
  if (dim == 0) throw DimensionError("exponential family dimension must be positive");
  if (!(sigma > 0.0)) throw ContractError("Gaussian decoder sigma must be positive");
  return ExpFamily(Kind::gaussian_fixed_var, dim, sigma);
}

ExpFamily ExpFamily::bernoulli(std::size_t dim) {
  if (dim == 0) throw DimensionError("exponential family dimension must be positive");
  return ExpFamily(Kind::bernoulli, dim, 1.0);
}

void ExpFamily::check(std::size_t n, const char* what) const {
  if (n != dim_) {
    throw DimensionError(std::string(what) + " has dimension " + std::to_string(n) + ", family expects " +
                         std::to_string(dim_));
  }
}

std::vector<double> ExpFamily::sufficient_statistic(std::span<const double> x) const {
  check(x.size(), "x");
  std::vector<double> t(x.begin(), x.end());
  if (kind_ == Kind::gaussian_fixed_var)
    for (auto& v : t) v /= sigma_;
  return t;
}

double ExpFamily::log_partition(std::span<const double> xi) const {
  check(xi.size(), "xi");
  double a = 0.0;
  for (double v : xi) a += kind_ == Kind::gaussian_fixed_var ? 0.5 * v * v : ad::softplus(v);
  return a;
}

std::vector<double> ExpFamily::mean_map(std::span<const double> xi) const {
  check(xi.size(), "xi");
  std::vector<double> m(xi.begin(), xi.end());
  if (kind_ == Kind::bernoulli)
    for (auto& v : m) v = ad::sigmoid(v);
  return m;
}

double ExpFamily::log_base_measure(std::span<const double> x) const {
  check(x.size(), "x");
  if (kind_ == Kind::bernoulli) return 0.0;
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double m = static_cast<double>(dim_);
  return -sq / (2.0 * sigma_ * sigma_) - 0.5 * m * std::log(2.0 * std::numbers::pi * sigma_ * sigma_);
}

double ExpFamily::log_density(std::span<const double> x, std::span<const double> xi) const {
  const auto t = sufficient_statistic(x);
  check(xi.size(), "xi");
  double dot = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) dot += t[i] * xi[i];
  return log_base_measure(x) + dot - log_partition(xi);
}

std::vector<double> ExpFamily::sample(std::span<const double> xi, Rng& rng) const {
  check(xi.size(), "xi");
  std::vector<double> x(dim_);
  if (kind_ == Kind::gaussian_fixed_var) {
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t i = 0; i < dim_; ++i) x[i] = sigma_ * (xi[i] + n01(rng));
  } else {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < dim_; ++i) x[i] = u(rng) < ad::sigmoid(xi[i]) ? 1.0 : 0.0;
  }
  return x;
}

Tensor ExpFamily::log_density(const Tensor& x, const Tensor& xi) const {
  if (x.rank() != 2 || xi.rank() != 2 || x.shape() != xi.shape()) {
    throw DimensionError("log_density: x " + ad::to_string(x.shape()) + " vs xi " + ad::to_string(xi.shape()));
  }
  check(x.cols(), "x");
  if (kind_ == Kind::gaussian_fixed_var) {
    const double m = static_cast<double>(dim_);
    const double log_norm = -0.5 * m * std::log(2.0 * std::numbers::pi * sigma_ * sigma_);
    return ad::add_scalar(ad::scale(ad::row_sum(ad::square(ad::scale(x, 1.0 / sigma_) - xi)), -0.5), log_norm);
  }
  return ad::row_sum(x * xi - ad::softplus(xi));
}

Tensor ExpFamily::sufficient_statistic(const Tensor& x) const {
  check(x.cols(), "x");
  return kind_ == Kind::gaussian_fixed_var ? ad::scale(x.detached(), 1.0 / sigma_) : x.detached();
}

Tensor ExpFamily::mean_map(const Tensor& xi) const {
  check(xi.cols(), "xi");
  return kind_ == Kind::gaussian_fixed_var ? xi.detached() : ad::sigmoid(xi.detached());
}

Tensor ExpFamily::sample(const Tensor& xi, Rng& rng) const {
  check(xi.cols(), "xi");
  std::vector<double> out;
  out.reserve(xi.size());
  for (std::size_t r = 0; r < xi.rows(); ++r) {
    const auto row = sample(xi.data().subspan(r * dim_, dim_), rng);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::matrix(xi.rows(), dim_, std::move(out));
}

std::vector<double> score_wrt_latent(const ExpFamily& ef, std::span<const double> x,
                                     std::span<const double> xi, const Tensor& jacobian) {
  const auto t = ef.sufficient_statistic(x);
  const auto mu = ef.mean_map(xi);
  if (jacobian.rank() != 2 || jacobian.rows() != ef.dim()) {
    throw DimensionError("score_wrt_latent: Jacobian " + ad::to_string(jacobian.shape()) +
                         " does not have " + std::to_string(ef.dim()) + " rows");
  }
  const std::size_t l = jacobian.cols();
  std::vector<double> s(l, 0.0);
  for (std::size_t i = 0; i < ef.dim(); ++i) {
    const double r = t[i] - mu[i];
    for (std::size_t j = 0; j < l; ++j) s[j] += jacobian(i, j) * r;
  }
  return s;
}

}  // namespace illid
