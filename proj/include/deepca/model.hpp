#pragma once

#include <cstddef>
#include <vector>

#include "deepca/linear_operator.hpp"
#include "deepca/prox.hpp"

namespace deepca {

// Which linear system solve backs the pre-activation update: the exact
// regularized least-squares solve, or the tight-frame approximation that
// only needs operator applications.
enum class UpdateRule { Auto, Exact, Parseval };

struct Layer {
  LinearOperator op;
  PenaltySpec penalty;
};

// Ordered layers with reconstruction chain semantics: op_j maps layer-j
// coefficients into the space of layer j-1, with w_0 = x.
class Model {
 public:
  std::vector<Layer> layers;
  std::size_t iterations = 1;  // unroll depth T
  double rho = 1.0;
  UpdateRule update_rule = UpdateRule::Auto;

  std::size_t layer_count() const { return layers.size(); }
  const std::vector<std::size_t>& input_shape() const { return layers.front().op.input_shape(); }
  const std::vector<std::size_t>& output_shape() const { return layers.back().op.output_shape(); }

  // True if layer j uses the exact ridge solve for its pre-activation
  // update. Conv layers never do; a dense solve there is impractical.
  bool exact_update(std::size_t j) const;

  // Checks the layer shape chain, T >= 1, rho > 0, and penalty shapes.
  void validate() const;
};

// Per-layer iterate triple plus the input. `pre` are the pre-activation
// coefficients, `act` the auxiliary activations the proximal operator
// produces, `dual` the multipliers on the splitting constraint pre == act.
struct InferenceState {
  Tensor input;
  std::vector<Tensor> pre;
  std::vector<Tensor> act;
  std::vector<Tensor> dual;

  const Tensor& output() const { return act.back(); }
};

// Sum_j 1/2 ||w_{j-1} - B_j w_j||^2 + Phi_j(w_j) with w_0 = x. Returns
// +inf when an indicator penalty is violated.
double objective(const Model& model, const Tensor& x, const std::vector<Tensor>& coeffs);

// Augmented Lagrangian of the split problem at the given state:
// Sum_j 1/2 ||z_{j-1} - B_j w_j||^2 + Phi_j(z_j) + lambda_j^T (w_j - z_j)
//       + rho/2 ||w_j - z_j||^2, with z_0 = x.
double augmented_lagrangian(const Model& model, const InferenceState& state);

// Dense block-bidiagonal form of the whole objective: operator
// [[B1, 0, ...], [-I, B2, ...], ...] and target [x; 0; ...; 0] such that
// the multilayer objective equals the stacked least squares plus the sum
// of penalties. Used by oracles; capped at max_entries.
struct StackedSystem {
  Tensor op;                              // (p0+...+p_{l-1}) x (p1+...+pl)
  std::vector<std::size_t> block_dims;    // p1..pl, for splitting coefficients
  Tensor target(const Tensor& x) const;   // [x; 0; ...; 0]
  std::vector<Tensor> split(const Tensor& stacked) const;
  Tensor stack(const std::vector<Tensor>& coeffs) const;
};

StackedSystem build_stacked_system(const Model& model, std::size_t max_entries = 10000);

}  // namespace deepca
