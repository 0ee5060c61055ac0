#pragma once

#include <cstddef>
#include <vector>

// Update algebra of the unrolled alternating-direction sweeps, written once
// over an executor so the eager tensor path and the autodiff tape replay
// the exact same sequence of arithmetic. An executor provides:
//   using Val;
//   std::size_t layer_count();  double rho();  bool exact_update(j);
//   Val forward(j, v); Val adjoint(j, v); Val ridge_solve(j, rhs);
//   Val prox(j, v);  Val add(a, b); Val sub(a, b); Val scale(a, c);
//   Val zero_code(j);
// and a state holds members: input, pre[], act[], dual[] of type Val.

namespace deepca::admm_detail {

template <class E>
typename E::Val dual_step(E& ex, const typename E::Val& pre, const typename E::Val& act,
                          const typename E::Val& dual) {
  return ex.add(dual, ex.scale(ex.sub(pre, act), ex.rho()));
}

template <class E>
typename E::Val pre_step_exact(E& ex, std::size_t j, const typename E::Val& act_prev,
                               const typename E::Val& act, const typename E::Val& dual) {
  const double rho = ex.rho();
  auto rhs = ex.sub(ex.add(ex.adjoint(j, act_prev), ex.scale(act, rho)), dual);
  return ex.ridge_solve(j, rhs);
}

template <class E>
typename E::Val pre_step_parseval(E& ex, std::size_t j, const typename E::Val& act_prev,
                                  const typename E::Val& act, const typename E::Val& dual) {
  const double rho = ex.rho();
  auto shifted = ex.sub(act, ex.scale(dual, 1.0 / rho));
  auto correction = ex.adjoint(j, ex.sub(act_prev, ex.forward(j, shifted)));
  return ex.add(shifted, ex.scale(correction, 1.0 / (rho + 1.0)));
}

// j < l-1 blends feedback from the next layer with the current coefficients;
// the last layer has no feedback term.
template <class E>
typename E::Val act_step(E& ex, std::size_t j, const typename E::Val& pre,
                         const typename E::Val& dual, const typename E::Val* pre_next) {
  const double rho = ex.rho();
  auto carried = ex.add(pre, ex.scale(dual, 1.0 / rho));
  if (pre_next == nullptr) {
    return ex.prox(j, carried);
  }
  auto feedback = ex.scale(ex.forward(j + 1, *pre_next), 1.0 / (rho + 1.0));
  return ex.prox(j, ex.add(feedback, ex.scale(carried, rho / (rho + 1.0))));
}

template <class E, class State>
void feed_forward(E& ex, State& s) {
  const std::size_t l = ex.layer_count();
  s.pre.clear();
  s.act.clear();
  s.dual.clear();
  const typename E::Val* prev = &s.input;
  for (std::size_t j = 0; j < l; ++j) {
    s.pre.push_back(ex.adjoint(j, *prev));
    s.act.push_back(ex.prox(j, s.pre[j]));
    s.dual.push_back(ex.zero_code(j));
    prev = &s.act[j];
  }
}

// One full sweep over the layers in order: dual ascent, pre-activation
// solve, then the proximal activation update, each reading whatever the
// state currently holds (layer j's activation step sees the next layer's
// pre-activation from the previous sweep).
template <class E, class State>
void sweep(E& ex, State& s) {
  const std::size_t l = ex.layer_count();
  for (std::size_t j = 0; j < l; ++j) {
    s.dual[j] = dual_step(ex, s.pre[j], s.act[j], s.dual[j]);
    const typename E::Val& act_prev = (j == 0) ? s.input : s.act[j - 1];
    s.pre[j] = ex.exact_update(j)
                   ? pre_step_exact(ex, j, act_prev, s.act[j], s.dual[j])
                   : pre_step_parseval(ex, j, act_prev, s.act[j], s.dual[j]);
    const typename E::Val* pre_next = (j + 1 < l) ? &s.pre[j + 1] : nullptr;
    s.act[j] = act_step(ex, j, s.pre[j], s.dual[j], pre_next);
  }
}

}  // namespace deepca::admm_detail
