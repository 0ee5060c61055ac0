#pragma once

#include "deepca/admm.hpp"
#include "deepca/autodiff.hpp"
#include "deepca/model.hpp"

namespace deepca {

// Node handles for one recorded unrolled inference. weight_nodes[j] is the
// leaf holding layer j's matrix/kernel; bias_nodes[j] is the leaf for a
// learnable nonneg_l1 bias (kNoNode otherwise).
struct TapedInference {
  NodeId input = kNoNode;
  std::vector<NodeId> pre;
  std::vector<NodeId> act;
  std::vector<NodeId> dual;
  std::vector<NodeId> weight_nodes;
  std::vector<NodeId> bias_nodes;

  NodeId output() const { return act.back(); }
};

// Records feed-forward initialization plus T-1 sweeps onto the tape. Node
// values equal the eager infer() iterates bit for bit.
TapedInference record_unrolled_inference(Tape& tape, const Model& model, const Tensor& x,
                                         std::size_t iterations,
                                         const PenaltySpec* output_penalty = nullptr,
                                         const SolveCache* solve_cache = nullptr);

// Applies the reconstruction chain B_1(B_2(...(B_l code))) on the tape,
// mapping a layer-j coefficient node back to the input space. from_layer
// is the layer whose code space `code` lives in (1-based count, so l for
// the model output).
NodeId record_decode_chain(Tape& tape, const TapedInference& rec, const Model& model, NodeId code,
                           std::size_t from_layer);

}  // namespace deepca
