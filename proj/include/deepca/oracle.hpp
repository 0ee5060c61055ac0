#pragma once

#include <functional>
#include <vector>

#include "deepca/model.hpp"

// Slow-but-sure reference solvers and checkers used by tests and acceptance
// runs. Everything here is implemented independently of the inference and
// autodiff paths it verifies; only tensor primitives are shared. Speed is a
// non-goal.
namespace deepca::oracle {

// Largest eigenvalue of A^T A (squared spectral norm) by power iteration.
double power_iteration_sq_norm(const Tensor& a, std::size_t iters = 100,
                               std::uint64_t seed = 12345);

struct ProxGradResult {
  std::vector<Tensor> coefficients;
  std::vector<double> objective_trace;  // objective after each step, index 0 = start
};

// ISTA on the stacked block-bidiagonal form of the whole objective, with
// its own inline proximal steps. step_size <= 0 selects 1 / (1.1 * L) with
// L estimated by power iteration, which guarantees monotone descent.
ProxGradResult proximal_gradient_solve(const Model& model, const Tensor& x, std::size_t steps,
                                       double step_size = 0.0, std::size_t max_entries = 10000);

// Objective of the stacked form evaluated independently of objective().
double stacked_objective(const Model& model, const Tensor& x, const std::vector<Tensor>& coeffs,
                         std::size_t max_entries = 10000);

// Dense Gaussian elimination with partial pivoting; A square nonsingular.
Tensor reference_ls_solve(const Tensor& a, const Tensor& b);

// Exhaustive grid minimizer of 1/2 ||v - u||^2 + Phi(u). Separable kinds
// decompose into per-coordinate 1-D grids (dim <= 4); the simplex kind
// enumerates the feasible simplex grid (dim <= 3).
Tensor prox_grid_oracle(const PenaltySpec& spec, const Tensor& v, double grid_step);

// Simplex projection by exhaustive KKT support enumeration (dim <= 16).
Tensor simplex_projection_enumerated(const Tensor& v);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& theta,
                              double h);

// Plain feed-forward evaluation of the layer chain (adjoint apply then
// activation), coded without the inference machinery; activations applied
// inline. Returns all layer activations; back() is the network output.
std::vector<Tensor> feed_forward_reference(const Model& model, const Tensor& x,
                                           const PenaltySpec* output_penalty = nullptr);

// Gather-form conv loops (one accumulator per output element), structured
// differently from the production scatter-form kernels.
Tensor conv2d_reference_forward(const Tensor& kernel, const Conv2dGeometry& g, const Tensor& code);
Tensor conv2d_reference_adjoint(const Tensor& kernel, const Conv2dGeometry& g, const Tensor& data);

struct ExplainingAwayStats {
  double ff_sparsity = 0.0;   // mean nonzero count, feed-forward thresholding
  double opt_sparsity = 0.0;  // mean nonzero count, optimized codes
  double ff_error = 0.0;      // mean reconstruction error
  double opt_error = 0.0;
};

// Compares feed-forward nonnegative soft-thresholding codes against
// proximal-gradient-optimized nonnegative-l1 codes for each image, at the
// shared l1 weight vector b. Dictionary columns must be unit norm.
ExplainingAwayStats explaining_away_stats(const Tensor& dictionary,
                                          const std::vector<Tensor>& images, const Tensor& bias,
                                          std::size_t opt_steps = 4000);

struct ExplainingAwayTrial {
  std::size_t ff_nonzeros = 0;
  std::size_t opt_nonzeros = 0;
  double ff_error = 0.0;
  double opt_error = 0.0;
};
ExplainingAwayTrial explaining_away_single(const Tensor& dictionary, const Tensor& image,
                                           const Tensor& bias, std::size_t opt_steps = 4000);

}  // namespace deepca::oracle
