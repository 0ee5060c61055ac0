#pragma once

#include <memory>

#include "deepca/tensor.hpp"

namespace deepca {

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const Tensor& spd);  // throws NumericalError if not SPD
  std::size_t dim() const { return n_; }
  Tensor solve(const Tensor& rhs) const;       // A x = rhs via forward/back substitution

 private:
  std::size_t n_;
  Tensor lower_;
};

// B^T B + rho I for a dense matrix B (rows x cols); result is cols x cols.
Tensor gram_ridge(const Tensor& matrix, double rho);

// Factorization of B^T B + rho I, shared across ADMM sweeps of one
// inference call and reused by the backward pass.
std::shared_ptr<const CholeskyFactor> make_ridge_factor(const Tensor& matrix, double rho);

// Orthonormalizes the rows of a matrix in place (modified Gram-Schmidt,
// two passes). Requires rows <= cols; afterwards B B^T = I to machine
// precision, i.e. the operator is a Parseval tight frame.
void orthonormalize_rows(Tensor& matrix);

}  // namespace deepca
