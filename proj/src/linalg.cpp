#include "deepca/linalg.hpp"

#include <cmath>

#include "deepca/errors.hpp"

namespace deepca {

CholeskyFactor::CholeskyFactor(const Tensor& spd) {
  if (spd.rank() != 2 || spd.dims()[0] != spd.dims()[1]) {
    throw DimensionError("cholesky: matrix must be square");
  }
  n_ = spd.dims()[0];
  lower_ = Tensor({n_, n_});
  const double* a = spd.data();
  double* l = lower_.data();
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = a[i * n_ + j];
      for (std::size_t k = 0; k < j; ++k) acc -= l[i * n_ + k] * l[j * n_ + k];
      if (i == j) {
        if (acc <= 0.0) throw NumericalError("cholesky: matrix not positive definite");
        l[i * n_ + i] = std::sqrt(acc);
      } else {
        l[i * n_ + j] = acc / l[j * n_ + j];
      }
    }
  }
}

Tensor CholeskyFactor::solve(const Tensor& rhs) const {
  if (rhs.size() != n_) throw DimensionError("cholesky solve: rhs size mismatch");
  const double* l = lower_.data();
  Tensor y(rhs.dims());
  for (std::size_t i = 0; i < n_; ++i) {
    double acc = rhs[i];
    for (std::size_t k = 0; k < i; ++k) acc -= l[i * n_ + k] * y[k];
    y[i] = acc / l[i * n_ + i];
  }
  Tensor x(rhs.dims());
  for (std::size_t ir = n_; ir-- > 0;) {
    double acc = y[ir];
    for (std::size_t k = ir + 1; k < n_; ++k) acc -= l[k * n_ + ir] * x[k];
    x[ir] = acc / l[ir * n_ + ir];
  }
  return x;
}

Tensor gram_ridge(const Tensor& matrix, double rho) {
  if (matrix.rank() != 2) throw DimensionError("gram_ridge: needs a rank-2 matrix");
  const std::size_t rows = matrix.dims()[0], cols = matrix.dims()[1];
  Tensor g({cols, cols});
  const double* m = matrix.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m + r * cols;
    for (std::size_t i = 0; i < cols; ++i) {
      const double mi = row[i];
      if (mi == 0.0) continue;
      double* gi = g.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) gi[j] += mi * row[j];
    }
  }
  for (std::size_t i = 0; i < cols; ++i) g[i * cols + i] += rho;
  return g;
}

std::shared_ptr<const CholeskyFactor> make_ridge_factor(const Tensor& matrix, double rho) {
  return std::make_shared<const CholeskyFactor>(gram_ridge(matrix, rho));
}

void orthonormalize_rows(Tensor& matrix) {
  if (matrix.rank() != 2) throw DimensionError("orthonormalize_rows: needs a rank-2 matrix");
  const std::size_t rows = matrix.dims()[0], cols = matrix.dims()[1];
  if (rows > cols) throw DimensionError("orthonormalize_rows: requires rows <= cols");
  double* m = matrix.data();
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < rows; ++i) {
      double* ri = m + i * cols;
      for (std::size_t k = 0; k < i; ++k) {
        const double* rk = m + k * cols;
        double proj = 0.0;
        for (std::size_t j = 0; j < cols; ++j) proj += ri[j] * rk[j];
        for (std::size_t j = 0; j < cols; ++j) ri[j] -= proj * rk[j];
      }
      double nrm = 0.0;
      for (std::size_t j = 0; j < cols; ++j) nrm += ri[j] * ri[j];
      nrm = std::sqrt(nrm);
      if (nrm < 1e-12) throw NumericalError("orthonormalize_rows: rank-deficient rows");
      for (std::size_t j = 0; j < cols; ++j) ri[j] /= nrm;
    }
  }
}

}  // namespace deepca
