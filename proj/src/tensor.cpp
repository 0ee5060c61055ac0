#include "deepca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "deepca/errors.hpp"

namespace deepca {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& dims) {
  if (dims.empty()) throw DimensionError("tensor rank must be at least 1");
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw DimensionError("tensor extents must be positive");
    if (n > (std::size_t{1} << 40) / d) throw CapacityError("tensor too large");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  values_.assign(checked_numel(dims_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
  if (checked_numel(dims_) != values_.size()) {
    throw DimensionError("tensor data length does not match extents");
  }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.dims_); }

Tensor Tensor::full(std::vector<std::size_t> dims, double value) {
  Tensor t(std::move(dims));
  std::fill(t.values_.begin(), t.values_.end(), value);
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

std::string Tensor::shape_string() const {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out << ',';
    out << dims_[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_dims) const {
  Tensor out(std::move(new_dims), values_);
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

double norm1(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i]);
  return acc;
}

double max_value(const Tensor& a) {
  double m = a[0];
  for (std::size_t i = 1; i < a.size(); ++i) m = std::max(m, a[i]);
  return m;
}

std::size_t count_nonzero(const Tensor& a, double eps) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::fabs(a[i]) > eps) ++n;
  }
  return n;
}

}  // namespace deepca
