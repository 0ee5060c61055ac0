#include "deepca/admm.hpp"

#include <algorithm>
#include <ostream>

#include "deepca/admm_unroll.hpp"
#include "deepca/errors.hpp"

namespace deepca {

namespace {

// Tensor-valued executor for the shared update algebra.
class EagerExec {
 public:
  using Val = Tensor;

  EagerExec(const Model& model, const PenaltySpec* output_penalty, const SolveCache* cache)
      : model_(model), output_penalty_(output_penalty), external_cache_(cache) {
    if (external_cache_ == nullptr) local_cache_.resize(model.layer_count());
  }

  std::size_t layer_count() const { return model_.layer_count(); }
  double rho() const { return model_.rho; }
  bool exact_update(std::size_t j) const { return model_.exact_update(j); }

  Tensor forward(std::size_t j, const Tensor& v) { return model_.layers[j].op.forward(v); }
  Tensor adjoint(std::size_t j, const Tensor& v) { return model_.layers[j].op.adjoint(v); }

  Tensor ridge_solve(std::size_t j, const Tensor& rhs) { return factor(j)->solve(rhs); }

  Tensor prox(std::size_t j, const Tensor& v) { return deepca::prox(penalty(j), v); }

  Tensor add(const Tensor& a, const Tensor& b) { return deepca::add(a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) { return deepca::sub(a, b); }
  Tensor scale(const Tensor& a, double c) { return deepca::scale(a, c); }

  Tensor zero_code(std::size_t j) { return Tensor(model_.layers[j].op.output_shape()); }

  const PenaltySpec& penalty(std::size_t j) const {
    if (output_penalty_ != nullptr && j + 1 == model_.layer_count()) return *output_penalty_;
    return model_.layers[j].penalty;
  }

 private:
  std::shared_ptr<const CholeskyFactor> factor(std::size_t j) {
    if (external_cache_ != nullptr) {
      const auto& f = (*external_cache_)[j];
      if (!f) throw UsageError("solve cache missing factor for exact-update layer");
      return f;
    }
    if (!local_cache_[j]) {
      local_cache_[j] = make_ridge_factor(model_.layers[j].op.weights(), model_.rho);
    }
    return local_cache_[j];
  }

  const Model& model_;
  const PenaltySpec* output_penalty_;
  const SolveCache* external_cache_;
  SolveCache local_cache_;
};

void check_state(const Model& model, const InferenceState& state, std::size_t layer) {
  if (layer >= model.layer_count()) throw UsageError("layer index out of range");
  if (state.pre.size() != model.layer_count()) {
    throw DimensionError("inference state does not match model layer count");
  }
}

}  // namespace

SolveCache make_solve_cache(const Model& model) {
  SolveCache cache(model.layer_count());
  for (std::size_t j = 0; j < model.layer_count(); ++j) {
    if (model.exact_update(j)) {
      cache[j] = make_ridge_factor(model.layers[j].op.weights(), model.rho);
    }
  }
  return cache;
}

InferenceState feed_forward_init(const Model& model, const Tensor& x,
                                 const PenaltySpec* output_penalty) {
  model.validate();
  EagerExec ex(model, output_penalty, nullptr);
  InferenceState state;
  state.input = x;
  admm_detail::feed_forward(ex, state);
  return state;
}

Tensor w_update_exact(const Model& model, std::size_t layer, const InferenceState& state,
                      double rho) {
  check_state(model, state, layer);
  if (!model.layers[layer].op.is_dense()) {
    throw UsageError("w_update_exact requires a dense layer");
  }
  Model scoped = model;
  scoped.rho = rho;
  scoped.update_rule = UpdateRule::Exact;
  EagerExec ex(scoped, nullptr, nullptr);
  const Tensor& act_prev = layer == 0 ? state.input : state.act[layer - 1];
  return admm_detail::pre_step_exact(ex, layer, act_prev, state.act[layer], state.dual[layer]);
}

Tensor w_update_parseval(const Model& model, std::size_t layer, const InferenceState& state,
                         double rho) {
  check_state(model, state, layer);
  Model scoped = model;
  scoped.rho = rho;
  EagerExec ex(scoped, nullptr, nullptr);
  const Tensor& act_prev = layer == 0 ? state.input : state.act[layer - 1];
  return admm_detail::pre_step_parseval(ex, layer, act_prev, state.act[layer], state.dual[layer]);
}

Tensor z_update(const Model& model, std::size_t layer, const InferenceState& state, double rho,
                const PenaltySpec* output_penalty) {
  check_state(model, state, layer);
  Model scoped = model;
  scoped.rho = rho;
  EagerExec ex(scoped, output_penalty, nullptr);
  const Tensor* pre_next = layer + 1 < model.layer_count() ? &state.pre[layer + 1] : nullptr;
  return admm_detail::act_step(ex, layer, state.pre[layer], state.dual[layer], pre_next);
}

Tensor dual_update(const Model& model, std::size_t layer, const InferenceState& state, double rho) {
  check_state(model, state, layer);
  Model scoped = model;
  scoped.rho = rho;
  EagerExec ex(scoped, nullptr, nullptr);
  return admm_detail::dual_step(ex, state.pre[layer], state.act[layer], state.dual[layer]);
}

InferenceState infer(const Model& model, const Tensor& x, const InferOptions& opts) {
  model.validate();
  const std::size_t iterations = opts.iterations == 0 ? model.iterations : opts.iterations;
  if (iterations < 1) throw UsageError("infer: iteration count must be >= 1");

  EagerExec ex(model, opts.output_penalty, opts.solve_cache);
  InferenceState state;
  state.input = x;
  admm_detail::feed_forward(ex, state);

  auto emit_trace = [&](std::size_t t) {
    if (opts.trace == nullptr) return;
    const auto res = residuals(model, state);
    // Objective on the activation iterates, with the override penalty if set.
    double obj = 0.0;
    const Tensor* prev = &state.input;
    for (std::size_t j = 0; j < model.layer_count(); ++j) {
      const Tensor r = sub(*prev, model.layers[j].op.forward(state.act[j]));
      obj += 0.5 * dot(r, r) + penalty_value(ex.penalty(j), state.act[j]);
      prev = &state.act[j];
    }
    for (std::size_t j = 0; j < res.size(); ++j) {
      *opts.trace << t << ',' << j + 1 << ',' << res[j].primal << ',' << res[j].reconstruction
                  << ',' << obj << '\n';
    }
  };
  emit_trace(1);

  for (std::size_t t = 1; t < iterations; ++t) {
    admm_detail::sweep(ex, state);
    emit_trace(t + 1);
    if (opts.stop_tolerance > 0.0) {
      double max_primal = 0.0;
      for (std::size_t j = 0; j < model.layer_count(); ++j) {
        max_primal = std::max(max_primal, norm2(sub(state.pre[j], state.act[j])));
      }
      if (max_primal < opts.stop_tolerance) break;
    }
  }
  return state;
}

std::vector<LayerResiduals> residuals(const Model& model, const InferenceState& state) {
  std::vector<LayerResiduals> out(model.layer_count());
  const Tensor* prev = &state.input;
  for (std::size_t j = 0; j < model.layer_count(); ++j) {
    out[j].primal = norm2(sub(state.pre[j], state.act[j]));
    out[j].reconstruction = norm2(sub(*prev, model.layers[j].op.forward(state.pre[j])));
    prev = &state.act[j];
  }
  return out;
}

void write_trace_header(std::ostream& out) {
  out << "t,layer,primal_residual,recon_residual,objective\n";
}

}  // namespace deepca
