#pragma once

#include <vector>

#include "illid/tensor.hpp"

namespace illid {

/// Eigenvalues of a symmetric [n x n] matrix, ascending.
std::vector<double> symmetric_eigenvalues(const ad::Tensor& m);
double min_eigenvalue(const ad::Tensor& m);

/// |A|_F
double frobenius_norm(const ad::Tensor& a);

/// Solution x of A x = b for symmetric positive definite A.
std::vector<double> solve_spd(const ad::Tensor& a, const std::vector<double>& b);

}  // namespace illid
