#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace deepca {

// Dense row-major array of doubles; the universal value type for data,
// activations, and parameters. Shape is fixed at construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);  // zero-filled
  Tensor(std::vector<std::size_t> dims, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other);
  static Tensor full(std::vector<std::size_t> dims, double value);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return values_.size(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  bool all_finite() const;
  std::string shape_string() const;  // e.g. "[2,3]"

  // Same data under new extents; element count must be unchanged.
  Tensor reshaped(std::vector<std::size_t> new_dims) const;

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> values_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor hadamard(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double norm1(const Tensor& a);
double max_value(const Tensor& a);
// Number of entries with |x| > eps.
std::size_t count_nonzero(const Tensor& a, double eps);

}  // namespace deepca
