#pragma once

#include <cstddef>
#include <vector>

#include "deepca/tensor.hpp"

namespace deepca {

enum class PenaltyKind { None, Nonneg, NonnegL1, Simplex, Equality };

const char* penalty_kind_name(PenaltyKind kind);
PenaltyKind penalty_kind_from_name(const std::string& name);

// Tagged penalty description selecting a proximal operator:
//   none      - zero penalty, prox is the identity
//   nonneg    - indicator of the nonnegative orthant, prox is ReLU
//   nonneg_l1 - nonnegativity plus weighted l1; prox is nonnegative
//               soft-thresholding max(0, v - b), the biased ReLU
//   simplex   - indicator of the probability simplex
//   equality  - indicator of {w : w[S] = y} for an index set S
class PenaltySpec {
 public:
  PenaltySpec() = default;

  static PenaltySpec none();
  static PenaltySpec nonneg();
  static PenaltySpec nonneg_l1(Tensor bias, bool learnable = false);
  static PenaltySpec simplex();
  static PenaltySpec equality(std::vector<std::size_t> indices, Tensor values);

  PenaltyKind kind() const { return kind_; }
  const Tensor& bias() const { return bias_; }
  Tensor& mutable_bias() { return bias_; }
  bool bias_learnable() const { return bias_learnable_; }
  void set_bias_learnable(bool on) { bias_learnable_ = on; }
  const std::vector<std::size_t>& equality_indices() const { return eq_indices_; }
  const Tensor& equality_values() const { return eq_values_; }

  // Checks internal invariants plus compatibility with a layer dimension.
  void validate(std::size_t dim) const;

 private:
  PenaltyKind kind_ = PenaltyKind::None;
  Tensor bias_;
  bool bias_learnable_ = false;
  std::vector<std::size_t> eq_indices_;
  Tensor eq_values_;
};

// argmin_u 1/2 ||v - u||^2 + Phi(u). The nonneg_l1 bias is owned by the
// spec, so the biased-ReLU activation step is exactly prox(spec, w).
Tensor prox(const PenaltySpec& spec, const Tensor& v);

// Same computation with the bias supplied externally (used by the autodiff
// tape when the bias is itself a differentiable parameter). bias may be
// null for kinds that have none.
Tensor prox_apply(PenaltyKind kind, const Tensor& v, const Tensor* bias,
                  const std::vector<std::size_t>& eq_indices, const Tensor& eq_values);

// Phi(w); indicator penalties return 0 or +inf.
double penalty_value(const PenaltySpec& spec, const Tensor& w);

// Euclidean projection onto {u >= 0, sum u = 1} by sorting and
// thresholding; sort ties are broken by index order.
Tensor project_simplex(const Tensor& v);

}  // namespace deepca
