#include "deepca/model.hpp"

#include <string>

#include "deepca/errors.hpp"

namespace deepca {

bool Model::exact_update(std::size_t j) const {
  if (!layers[j].op.is_dense()) return false;
  switch (update_rule) {
    case UpdateRule::Exact: return true;
    case UpdateRule::Parseval: return false;
    case UpdateRule::Auto: return true;
  }
  return true;
}

void Model::validate() const {
  if (layers.empty()) throw UsageError("model has no layers");
  if (iterations < 1) throw UsageError("model iteration count must be >= 1");
  if (!(rho > 0.0)) throw UsageError("model rho must be positive");
  for (std::size_t j = 0; j < layers.size(); ++j) {
    layers[j].penalty.validate(layers[j].op.output_size());
    if (j > 0 && layers[j].op.input_shape() != layers[j - 1].op.output_shape()) {
      throw DimensionError("layer " + std::to_string(j) +
                           " input shape does not chain with previous layer output");
    }
  }
}

double objective(const Model& model, const Tensor& x, const std::vector<Tensor>& coeffs) {
  if (coeffs.size() != model.layer_count()) {
    throw DimensionError("objective: coefficient count does not match layer count");
  }
  double total = 0.0;
  const Tensor* prev = &x;
  for (std::size_t j = 0; j < model.layer_count(); ++j) {
    const Tensor recon = model.layers[j].op.forward(coeffs[j]);
    const Tensor r = sub(*prev, recon);
    total += 0.5 * dot(r, r);
    total += penalty_value(model.layers[j].penalty, coeffs[j]);
    prev = &coeffs[j];
  }
  return total;
}

double augmented_lagrangian(const Model& model, const InferenceState& state) {
  const std::size_t l = model.layer_count();
  if (state.pre.size() != l || state.act.size() != l || state.dual.size() != l) {
    throw DimensionError("augmented_lagrangian: state does not match model");
  }
  double total = 0.0;
  const Tensor* prev = &state.input;
  for (std::size_t j = 0; j < l; ++j) {
    const Tensor recon = model.layers[j].op.forward(state.pre[j]);
    const Tensor r = sub(*prev, recon);
    total += 0.5 * dot(r, r);
    total += penalty_value(model.layers[j].penalty, state.act[j]);
    const Tensor gap = sub(state.pre[j], state.act[j]);
    total += dot(state.dual[j], gap);
    total += 0.5 * model.rho * dot(gap, gap);
    prev = &state.act[j];
  }
  return total;
}

Tensor StackedSystem::target(const Tensor& x) const {
  const std::size_t rows = op.dims()[0];
  if (x.size() > rows) throw DimensionError("stacked target: input larger than first block");
  Tensor t({rows});
  for (std::size_t i = 0; i < x.size(); ++i) t[i] = x[i];
  return t;
}

std::vector<Tensor> StackedSystem::split(const Tensor& stacked) const {
  std::vector<Tensor> out;
  std::size_t offset = 0;
  for (std::size_t d : block_dims) {
    Tensor block({d});
    for (std::size_t i = 0; i < d; ++i) block[i] = stacked[offset + i];
    out.push_back(std::move(block));
    offset += d;
  }
  if (offset != stacked.size()) throw DimensionError("stacked split: size mismatch");
  return out;
}

Tensor StackedSystem::stack(const std::vector<Tensor>& coeffs) const {
  if (coeffs.size() != block_dims.size()) throw DimensionError("stack: block count mismatch");
  std::size_t total = 0;
  for (std::size_t d : block_dims) total += d;
  Tensor out({total});
  std::size_t offset = 0;
  for (std::size_t j = 0; j < coeffs.size(); ++j) {
    if (coeffs[j].size() != block_dims[j]) throw DimensionError("stack: block size mismatch");
    for (std::size_t i = 0; i < block_dims[j]; ++i) out[offset + i] = coeffs[j][i];
    offset += block_dims[j];
  }
  return out;
}

StackedSystem build_stacked_system(const Model& model, std::size_t max_entries) {
  const std::size_t l = model.layer_count();
  std::size_t rows = 0, cols = 0;
  for (std::size_t j = 0; j < l; ++j) {
    rows += model.layers[j].op.input_size();
    cols += model.layers[j].op.output_size();
  }
  if (rows * cols > max_entries) {
    throw CapacityError("build_stacked_system: " + std::to_string(rows * cols) +
                        " entries exceeds cap of " + std::to_string(max_entries));
  }

  StackedSystem sys;
  sys.op = Tensor({rows, cols});
  std::size_t row_offset = 0, col_offset = 0;
  for (std::size_t j = 0; j < l; ++j) {
    const std::size_t pj_prev = model.layers[j].op.input_size();
    const std::size_t pj = model.layers[j].op.output_size();
    sys.block_dims.push_back(pj);
    // Diagonal block: the layer operator itself (conv materialized).
    const Tensor bj = model.layers[j].op.materialize(max_entries);
    for (std::size_t r = 0; r < pj_prev; ++r) {
      for (std::size_t c = 0; c < pj; ++c) {
        sys.op[(row_offset + r) * cols + (col_offset + c)] = bj[r * pj + c];
      }
    }
    // Sub-diagonal block: -I coupling w_j into the next layer's residual.
    if (j + 1 < l) {
      const std::size_t next_rows = row_offset + pj_prev;
      for (std::size_t r = 0; r < pj; ++r) {
        sys.op[(next_rows + r) * cols + (col_offset + r)] = -1.0;
      }
    }
    row_offset += pj_prev;
    col_offset += pj;
  }
  return sys;
}

}  // namespace deepca
