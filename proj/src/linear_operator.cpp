#include "deepca/linear_operator.hpp"

#include <numeric>

#include "deepca/errors.hpp"

namespace deepca {

namespace {

void require_shape(const Tensor& t, const std::vector<std::size_t>& dims, const char* what) {
  if (t.dims() != dims) {
    Tensor probe(dims);
    throw DimensionError(std::string(what) + ": expected " + probe.shape_string() + ", got " +
                         t.shape_string());
  }
}

}  // namespace

Tensor dense_apply(const Tensor& matrix, const Tensor& code) {
  const std::size_t rows = matrix.dims()[0], cols = matrix.dims()[1];
  if (code.size() != cols) throw DimensionError("dense_apply: argument size mismatch");
  Tensor out({rows});
  const double* m = matrix.data();
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    const double* row = m + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * code[j];
    out[i] = acc;
  }
  return out;
}

Tensor dense_apply_adjoint(const Tensor& matrix, const Tensor& data) {
  const std::size_t rows = matrix.dims()[0], cols = matrix.dims()[1];
  if (data.size() != rows) throw DimensionError("dense_apply_adjoint: argument size mismatch");
  Tensor out({cols});
  const double* m = matrix.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = m + i * cols;
    const double v = data[i];
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j] * v;
  }
  return out;
}

Tensor conv2d_apply(const Tensor& kernel, const Conv2dGeometry& g, const Tensor& code) {
  if (code.size() != g.code_size()) throw DimensionError("conv2d_apply: argument size mismatch");
  Tensor out({g.data_channels, g.data_h, g.data_w});
  const std::size_t kplane = g.kernel_h * g.kernel_w;
  for (std::size_t oc = 0; oc < g.code_channels; ++oc) {
    for (std::size_t y = 0; y < g.code_h; ++y) {
      for (std::size_t x = 0; x < g.code_w; ++x) {
        const double c = code[(oc * g.code_h + y) * g.code_w + x];
        if (c == 0.0) continue;
        for (std::size_t ic = 0; ic < g.data_channels; ++ic) {
          const double* kw = kernel.data() + ((oc * g.data_channels + ic) * kplane);
          for (std::size_t u = 0; u < g.kernel_h; ++u) {
            const std::ptrdiff_t a =
                static_cast<std::ptrdiff_t>(y * g.stride + u) - static_cast<std::ptrdiff_t>(g.pad);
            if (a < 0 || a >= static_cast<std::ptrdiff_t>(g.data_h)) continue;
            for (std::size_t v = 0; v < g.kernel_w; ++v) {
              const std::ptrdiff_t b = static_cast<std::ptrdiff_t>(x * g.stride + v) -
                                       static_cast<std::ptrdiff_t>(g.pad);
              if (b < 0 || b >= static_cast<std::ptrdiff_t>(g.data_w)) continue;
              out[(ic * g.data_h + a) * g.data_w + b] += kw[u * g.kernel_w + v] * c;
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_apply_adjoint(const Tensor& kernel, const Conv2dGeometry& g, const Tensor& data) {
  if (data.size() != g.data_size()) {
    throw DimensionError("conv2d_apply_adjoint: argument size mismatch");
  }
  Tensor out({g.code_channels, g.code_h, g.code_w});
  const std::size_t kplane = g.kernel_h * g.kernel_w;
  for (std::size_t oc = 0; oc < g.code_channels; ++oc) {
    for (std::size_t y = 0; y < g.code_h; ++y) {
      for (std::size_t x = 0; x < g.code_w; ++x) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < g.data_channels; ++ic) {
          const double* kw = kernel.data() + ((oc * g.data_channels + ic) * kplane);
          for (std::size_t u = 0; u < g.kernel_h; ++u) {
            const std::ptrdiff_t a =
                static_cast<std::ptrdiff_t>(y * g.stride + u) - static_cast<std::ptrdiff_t>(g.pad);
            if (a < 0 || a >= static_cast<std::ptrdiff_t>(g.data_h)) continue;
            for (std::size_t v = 0; v < g.kernel_w; ++v) {
              const std::ptrdiff_t b = static_cast<std::ptrdiff_t>(x * g.stride + v) -
                                       static_cast<std::ptrdiff_t>(g.pad);
              if (b < 0 || b >= static_cast<std::ptrdiff_t>(g.data_w)) continue;
              acc += kw[u * g.kernel_w + v] * data[(ic * g.data_h + a) * g.data_w + b];
            }
          }
        }
        out[(oc * g.code_h + y) * g.code_w + x] = acc;
      }
    }
  }
  return out;
}

Tensor conv2d_kernel_grad(const Tensor& code_side, const Tensor& data_side,
                          const Conv2dGeometry& g) {
  Tensor out(g.kernel_shape());
  const std::size_t kplane = g.kernel_h * g.kernel_w;
  for (std::size_t oc = 0; oc < g.code_channels; ++oc) {
    for (std::size_t y = 0; y < g.code_h; ++y) {
      for (std::size_t x = 0; x < g.code_w; ++x) {
        const double c = code_side[(oc * g.code_h + y) * g.code_w + x];
        if (c == 0.0) continue;
        for (std::size_t ic = 0; ic < g.data_channels; ++ic) {
          double* kw = out.data() + ((oc * g.data_channels + ic) * kplane);
          for (std::size_t u = 0; u < g.kernel_h; ++u) {
            const std::ptrdiff_t a =
                static_cast<std::ptrdiff_t>(y * g.stride + u) - static_cast<std::ptrdiff_t>(g.pad);
            if (a < 0 || a >= static_cast<std::ptrdiff_t>(g.data_h)) continue;
            for (std::size_t v = 0; v < g.kernel_w; ++v) {
              const std::ptrdiff_t b = static_cast<std::ptrdiff_t>(x * g.stride + v) -
                                       static_cast<std::ptrdiff_t>(g.pad);
              if (b < 0 || b >= static_cast<std::ptrdiff_t>(g.data_w)) continue;
              kw[u * g.kernel_w + v] += c * data_side[(ic * g.data_h + a) * g.data_w + b];
            }
          }
        }
      }
    }
  }
  return out;
}

LinearOperator LinearOperator::dense(Tensor matrix, std::vector<std::size_t> input_shape,
                                     std::vector<std::size_t> output_shape) {
  if (matrix.rank() != 2) throw DimensionError("dense operator needs a rank-2 matrix");
  LinearOperator op;
  op.kind_ = Kind::Dense;
  op.input_shape_ = input_shape.empty() ? std::vector<std::size_t>{matrix.dims()[0]}
                                        : std::move(input_shape);
  op.output_shape_ = output_shape.empty() ? std::vector<std::size_t>{matrix.dims()[1]}
                                          : std::move(output_shape);
  std::size_t in_n = 1, out_n = 1;
  for (std::size_t d : op.input_shape_) in_n *= d;
  for (std::size_t d : op.output_shape_) out_n *= d;
  if (in_n != matrix.dims()[0] || out_n != matrix.dims()[1]) {
    throw DimensionError("dense operator shape metadata does not match matrix extents");
  }
  op.weights_ = std::move(matrix);
  return op;
}

LinearOperator LinearOperator::conv2d(Tensor kernel, std::size_t stride, std::size_t pad,
                                      std::size_t data_h, std::size_t data_w) {
  if (kernel.rank() != 4) {
    throw DimensionError("conv2d kernel must be rank 4 (code_ch, data_ch, kh, kw)");
  }
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  Conv2dGeometry g;
  g.code_channels = kernel.dims()[0];
  g.data_channels = kernel.dims()[1];
  g.kernel_h = kernel.dims()[2];
  g.kernel_w = kernel.dims()[3];
  g.stride = stride;
  g.pad = pad;
  g.data_h = data_h;
  g.data_w = data_w;
  const std::size_t eff_h = data_h + 2 * pad, eff_w = data_w + 2 * pad;
  if (eff_h < g.kernel_h || eff_w < g.kernel_w) {
    throw DimensionError("conv2d kernel larger than padded input");
  }
  // Exact divisibility keeps the two directions shape-inverse of each other.
  if ((eff_h - g.kernel_h) % stride != 0 || (eff_w - g.kernel_w) % stride != 0) {
    throw DimensionError("conv2d geometry does not tile: (size + 2*pad - k) % stride != 0");
  }
  g.code_h = (eff_h - g.kernel_h) / stride + 1;
  g.code_w = (eff_w - g.kernel_w) / stride + 1;

  LinearOperator op;
  op.kind_ = Kind::Conv2d;
  op.geom_ = g;
  op.input_shape_ = g.data_shape();
  op.output_shape_ = g.code_shape();
  op.weights_ = std::move(kernel);
  return op;
}

std::size_t LinearOperator::input_size() const {
  std::size_t n = 1;
  for (std::size_t d : input_shape_) n *= d;
  return n;
}

std::size_t LinearOperator::output_size() const {
  std::size_t n = 1;
  for (std::size_t d : output_shape_) n *= d;
  return n;
}

Tensor LinearOperator::forward(const Tensor& code) const {
  require_shape(code, output_shape_, "apply_forward");
  if (kind_ == Kind::Conv2d) return conv2d_apply(weights_, geom_, code);
  Tensor out = dense_apply(weights_, code);
  return input_shape_.size() == 1 ? out : out.reshaped(input_shape_);
}

Tensor LinearOperator::adjoint(const Tensor& data) const {
  require_shape(data, input_shape_, "apply_adjoint");
  if (kind_ == Kind::Conv2d) return conv2d_apply_adjoint(weights_, geom_, data);
  Tensor out = dense_apply_adjoint(weights_, data);
  return output_shape_.size() == 1 ? out : out.reshaped(output_shape_);
}

Tensor LinearOperator::materialize(std::size_t max_entries) const {
  const std::size_t rows = input_size(), cols = output_size();
  if (rows * cols > max_entries) {
    throw CapacityError("materialize: " + std::to_string(rows * cols) + " entries exceeds cap of " +
                        std::to_string(max_entries));
  }
  if (kind_ == Kind::Dense) {
    Tensor m({rows, cols});
    for (std::size_t i = 0; i < rows * cols; ++i) m[i] = weights_[i];
    return m;
  }
  Tensor m({rows, cols});
  Tensor basis(output_shape_);
  for (std::size_t j = 0; j < cols; ++j) {
    basis[j] = 1.0;
    const Tensor col = forward(basis);
    basis[j] = 0.0;
    for (std::size_t i = 0; i < rows; ++i) m[i * cols + j] = col[i];
  }
  return m;
}

}  // namespace deepca
