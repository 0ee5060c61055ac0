#include "deepca/adnn_tape.hpp"

#include "deepca/admm_unroll.hpp"
#include "deepca/errors.hpp"

namespace deepca {

namespace {

class TapeExec {
 public:
  using Val = NodeId;

  TapeExec(Tape& tape, const Model& model, const PenaltySpec* output_penalty,
           const SolveCache* cache)
      : tape_(tape), model_(model), output_penalty_(output_penalty), external_cache_(cache) {
    weights_.reserve(model.layer_count());
    biases_.assign(model.layer_count(), kNoNode);
    for (std::size_t j = 0; j < model.layer_count(); ++j) {
      weights_.push_back(tape_.leaf(model.layers[j].op.weights()));
      const PenaltySpec& pen = penalty(j);
      if (pen.kind() == PenaltyKind::NonnegL1 && pen.bias_learnable()) {
        biases_[j] = tape_.leaf(pen.bias());
      }
    }
    if (external_cache_ == nullptr) local_cache_.resize(model.layer_count());
  }

  std::size_t layer_count() const { return model_.layer_count(); }
  double rho() const { return model_.rho; }
  bool exact_update(std::size_t j) const { return model_.exact_update(j); }

  NodeId forward(std::size_t j, NodeId v) {
    const auto& op = model_.layers[j].op;
    if (!op.is_dense()) return tape_.conv_forward(weights_[j], v, op.geometry());
    NodeId out = tape_.dense_forward(weights_[j], v);
    if (op.input_shape().size() != 1) out = tape_.reshape(out, op.input_shape());
    return out;
  }

  NodeId adjoint(std::size_t j, NodeId v) {
    const auto& op = model_.layers[j].op;
    if (!op.is_dense()) return tape_.conv_adjoint(weights_[j], v, op.geometry());
    NodeId out = tape_.dense_adjoint(weights_[j], v);
    if (op.output_shape().size() != 1) out = tape_.reshape(out, op.output_shape());
    return out;
  }

  NodeId ridge_solve(std::size_t j, NodeId rhs) {
    return tape_.ridge_solve(weights_[j], rhs, model_.rho, factor(j));
  }

  NodeId prox(std::size_t j, NodeId v) { return tape_.prox(v, penalty(j), biases_[j]); }

  NodeId add(NodeId a, NodeId b) { return tape_.add(a, b); }
  NodeId sub(NodeId a, NodeId b) { return tape_.sub(a, b); }
  NodeId scale(NodeId a, double c) { return tape_.scale(a, c); }

  NodeId zero_code(std::size_t j) {
    return tape_.leaf(Tensor(model_.layers[j].op.output_shape()));
  }

  const PenaltySpec& penalty(std::size_t j) const {
    if (output_penalty_ != nullptr && j + 1 == model_.layer_count()) return *output_penalty_;
    return model_.layers[j].penalty;
  }

  const std::vector<NodeId>& weight_nodes() const { return weights_; }
  const std::vector<NodeId>& bias_nodes() const { return biases_; }

 private:
  std::shared_ptr<const CholeskyFactor> factor(std::size_t j) {
    if (external_cache_ != nullptr) return (*external_cache_)[j];
    if (!local_cache_[j]) {
      local_cache_[j] = make_ridge_factor(model_.layers[j].op.weights(), model_.rho);
    }
    return local_cache_[j];
  }

  Tape& tape_;
  const Model& model_;
  const PenaltySpec* output_penalty_;
  const SolveCache* external_cache_;
  SolveCache local_cache_;
  std::vector<NodeId> weights_;
  std::vector<NodeId> biases_;
};

struct TapedState {
  NodeId input = kNoNode;
  std::vector<NodeId> pre, act, dual;
};

}  // namespace

TapedInference record_unrolled_inference(Tape& tape, const Model& model, const Tensor& x,
                                         std::size_t iterations,
                                         const PenaltySpec* output_penalty,
                                         const SolveCache* solve_cache) {
  model.validate();
  if (iterations == 0) iterations = model.iterations;
  TapeExec ex(tape, model, output_penalty, solve_cache);
  TapedState state;
  state.input = tape.leaf(x);
  admm_detail::feed_forward(ex, state);
  for (std::size_t t = 1; t < iterations; ++t) admm_detail::sweep(ex, state);

  TapedInference rec;
  rec.input = state.input;
  rec.pre = std::move(state.pre);
  rec.act = std::move(state.act);
  rec.dual = std::move(state.dual);
  rec.weight_nodes = ex.weight_nodes();
  rec.bias_nodes = ex.bias_nodes();
  return rec;
}

NodeId record_decode_chain(Tape& tape, const TapedInference& rec, const Model& model, NodeId code,
                           std::size_t from_layer) {
  if (from_layer == 0 || from_layer > model.layer_count()) {
    throw UsageError("record_decode_chain: layer out of range");
  }
  NodeId current = code;
  for (std::size_t j = from_layer; j-- > 0;) {
    const auto& op = model.layers[j].op;
    if (op.is_dense()) {
      current = tape.dense_forward(rec.weight_nodes[j], current);
      if (op.input_shape().size() != 1) current = tape.reshape(current, op.input_shape());
    } else {
      current = tape.conv_forward(rec.weight_nodes[j], current, op.geometry());
    }
  }
  return current;
}

}  // namespace deepca
