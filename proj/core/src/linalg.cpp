#include "illid/linalg.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "illid/error.hpp"

namespace illid {

namespace {

Eigen::MatrixXd to_eigen(const ad::Tensor& m) {
  if (m.rank() != 2) throw DimensionError("expected a matrix, got " + ad::to_string(m.shape()));
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
  return out;
}

void require_square(const ad::Tensor& m) {
  if (m.rank() != 2 || m.rows() != m.cols()) {
    throw DimensionError("expected a square matrix, got " + ad::to_string(m.shape()));
  }
}

}  // namespace

std::vector<double> symmetric_eigenvalues(const ad::Tensor& m) {
  require_square(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(to_eigen(m), Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

double min_eigenvalue(const ad::Tensor& m) { return symmetric_eigenvalues(m).front(); }

double frobenius_norm(const ad::Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

std::vector<double> solve_spd(const ad::Tensor& a, const std::vector<double>& b) {
  require_square(a);
  if (b.size() != a.rows()) throw DimensionError("solve_spd: right-hand side length mismatch");
  const Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
  const Eigen::VectorXd x = to_eigen(a).ldlt().solve(rhs);
  return {x.data(), x.data() + x.size()};
}

}  // namespace illid
