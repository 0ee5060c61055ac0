#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "deepca/linalg.hpp"
#include "deepca/model.hpp"

namespace deepca {

// Per-layer ridge factorizations (B^T B + rho I), computed once per
// inference call (or once per training step) and shared across sweeps.
// Entries are null for layers that use the tight-frame update.
using SolveCache = std::vector<std::shared_ptr<const CholeskyFactor>>;
SolveCache make_solve_cache(const Model& model);

struct InferOptions {
  std::size_t iterations = 0;                    // 0: use model.iterations
  const PenaltySpec* output_penalty = nullptr;   // per-call override for the last layer
  double stop_tolerance = -1.0;    // >0: stop sweeping once max primal residual drops below
  std::ostream* trace = nullptr;   // per-sweep CSV rows (see write_trace_header)
  const SolveCache* solve_cache = nullptr;
};

// Single pass of pre-activation + proximal activation per layer with zero
// duals; equals a plain feed-forward network when penalties are biased
// ReLUs, and is the initializer for the recurrent sweeps.
InferenceState feed_forward_init(const Model& model, const Tensor& x,
                                 const PenaltySpec* output_penalty = nullptr);

// Exact pre-activation update: (B^T B + rho I)^{-1}(B^T z_{j-1} + rho z_j - lambda_j).
Tensor w_update_exact(const Model& model, std::size_t layer, const InferenceState& state,
                      double rho);

// Tight-frame update: with zt = z_j - lambda_j/rho,
// zt + 1/(rho+1) B^T (z_{j-1} - B zt); equals the exact update when B B^T = I.
Tensor w_update_parseval(const Model& model, std::size_t layer, const InferenceState& state,
                         double rho);

// Proximal activation update (feedback-blended except at the last layer).
Tensor z_update(const Model& model, std::size_t layer, const InferenceState& state, double rho,
                const PenaltySpec* output_penalty = nullptr);

// lambda_j + rho (w_j - z_j).
Tensor dual_update(const Model& model, std::size_t layer, const InferenceState& state, double rho);

// Feed-forward initialization followed by T-1 sweeps; act.back() of the
// returned state is the model output. Reentrant; one state per call.
InferenceState infer(const Model& model, const Tensor& x, const InferOptions& opts = {});

struct LayerResiduals {
  double primal;          // ||w_j - z_j||
  double reconstruction;  // ||z_{j-1} - B_j w_j||
};
std::vector<LayerResiduals> residuals(const Model& model, const InferenceState& state);

// Trace rows are `t,layer,primal_residual,recon_residual,objective` with
// t = 1 for the feed-forward state and one block per completed sweep.
void write_trace_header(std::ostream& out);

}  // namespace deepca
