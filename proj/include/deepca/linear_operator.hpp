#pragma once

#include <cstddef>
#include <vector>

#include "deepca/tensor.hpp"

namespace deepca {

// Geometry of a strided, zero-padded 2-D convolution between a data grid
// (channels, height, width) and a code grid. The adjoint direction
// (data -> code) is an ordinary strided convolution; the forward direction
// (code -> data) is the matching transposed convolution.
struct Conv2dGeometry {
  std::size_t data_channels = 0, data_h = 0, data_w = 0;
  std::size_t code_channels = 0, code_h = 0, code_w = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, pad = 0;

  std::vector<std::size_t> data_shape() const { return {data_channels, data_h, data_w}; }
  std::vector<std::size_t> code_shape() const { return {code_channels, code_h, code_w}; }
  std::vector<std::size_t> kernel_shape() const {
    return {code_channels, data_channels, kernel_h, kernel_w};
  }
  std::size_t data_size() const { return data_channels * data_h * data_w; }
  std::size_t code_size() const { return code_channels * code_h * code_w; }
};

// Raw kernels shared by the eager path and the autodiff tape, so recorded
// node values match eager results bit for bit.
Tensor dense_apply(const Tensor& matrix, const Tensor& code);           // B w
Tensor dense_apply_adjoint(const Tensor& matrix, const Tensor& data);   // B^T v
Tensor conv2d_apply(const Tensor& kernel, const Conv2dGeometry& g, const Tensor& code);
Tensor conv2d_apply_adjoint(const Tensor& kernel, const Conv2dGeometry& g, const Tensor& data);
// Kernel cotangent of either conv direction: correlation of a code-side
// factor with a data-side factor over the same index set as the conv loops.
Tensor conv2d_kernel_grad(const Tensor& code_side, const Tensor& data_side,
                          const Conv2dGeometry& g);

// Linear map B between a code space and a data space, in the reconstruction
// orientation: forward(w) lives where the previous layer's activations do.
// Dense carries the matrix B (data_dim x code_dim); conv2d carries a kernel
// whose forward application is a strided transposed convolution.
class LinearOperator {
 public:
  enum class Kind { Dense, Conv2d };

  LinearOperator() = default;  // empty; assign from dense()/conv2d()

  // Optional shapes let a dense layer sit inside a conv chain: the matrix
  // is (numel(input_shape) x numel(output_shape)) and applications carry
  // the given shapes. Defaults are the flat {rows} / {cols}.
  static LinearOperator dense(Tensor matrix, std::vector<std::size_t> input_shape = {},
                              std::vector<std::size_t> output_shape = {});
  static LinearOperator conv2d(Tensor kernel, std::size_t stride, std::size_t pad,
                               std::size_t data_h, std::size_t data_w);

  Kind kind() const { return kind_; }
  bool is_dense() const { return kind_ == Kind::Dense; }
  const Conv2dGeometry& geometry() const { return geom_; }

  // Shape of the space being reconstructed (w_{j-1} side).
  const std::vector<std::size_t>& input_shape() const { return input_shape_; }
  // Shape of the coefficient space (w_j side).
  const std::vector<std::size_t>& output_shape() const { return output_shape_; }
  std::size_t input_size() const;
  std::size_t output_size() const;

  Tensor forward(const Tensor& code) const;   // B w, code -> data space
  Tensor adjoint(const Tensor& data) const;   // B^T v, data -> code space

  const Tensor& weights() const { return weights_; }
  Tensor& mutable_weights() { return weights_; }

  // Dense matrix of this operator (input_size x output_size), built column
  // by column. Throws CapacityError above max_entries.
  Tensor materialize(std::size_t max_entries = 100000) const;

 private:
  Kind kind_ = Kind::Dense;
  Tensor weights_;
  Conv2dGeometry geom_;
  std::vector<std::size_t> input_shape_;
  std::vector<std::size_t> output_shape_;
};

}  // namespace deepca
