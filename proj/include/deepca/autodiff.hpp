#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <variant>
#include <vector>

#include "deepca/linalg.hpp"
#include "deepca/linear_operator.hpp"
#include "deepca/prox.hpp"
#include "deepca/tensor.hpp"

namespace deepca {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

// Reverse-mode tape over tensor operations. Forward values are computed
// eagerly at record time with the same kernels the eager inference path
// uses, so recorded values match eager results bit for bit. One tape per
// inference/training call; tapes are single-threaded.
class Tape {
 public:
  enum class Op {
    Leaf,
    Add,
    Sub,
    Scale,
    Reshape,
    DenseForward,   // B w
    DenseAdjoint,   // B^T v
    ConvForward,    // transposed convolution, code -> data
    ConvAdjoint,    // strided convolution, data -> code
    RidgeSolve,     // (B^T B + rho I)^{-1} rhs
    Prox,
    SquaredError,
    SoftmaxCrossEntropy,
  };

  NodeId leaf(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId reshape(NodeId a, std::vector<std::size_t> dims);

  NodeId dense_forward(NodeId weights, NodeId code);
  NodeId dense_adjoint(NodeId weights, NodeId data);
  NodeId conv_forward(NodeId kernel, NodeId code, const Conv2dGeometry& g);
  NodeId conv_adjoint(NodeId kernel, NodeId data, const Conv2dGeometry& g);

  // factor may be shared across sweeps/examples; when null it is computed
  // from the weight values at record time.
  NodeId ridge_solve(NodeId weights, NodeId rhs, double rho,
                     std::shared_ptr<const CholeskyFactor> factor = nullptr);

  // bias != kNoNode routes the nonneg_l1 bias through the graph so it can
  // be learned; otherwise the spec's own bias tensor is used.
  NodeId prox(NodeId v, const PenaltySpec& spec, NodeId bias = kNoNode);

  NodeId squared_error(NodeId prediction, Tensor target);
  NodeId softmax_cross_entropy(NodeId prediction, std::size_t label);

  // Derivative conventions at nondifferentiable points: ReLU-style kinks
  // use subgradient 0; the simplex projection uses the support-restricted
  // Jacobian (identity minus uniform averaging over the active support);
  // equality projections pass zero gradient at constrained indices.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  // Zero tensor if the node was not reached by the last backward().
  Tensor gradient(NodeId id) const;

  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return nodes_.at(id).op; }

  // Smallest distance of any recorded proximal-operator input to its
  // nondifferentiable set (ReLU threshold, simplex support boundary).
  // Finite-difference checks resample when this is tiny, since the
  // subgradient convention is not comparable there.
  double min_prox_kink_margin() const;

 private:
  struct ScaleP { double factor; };
  struct ConvP { Conv2dGeometry geom; };
  struct SolveP {
    double rho;
    std::shared_ptr<const CholeskyFactor> factor;
  };
  struct ProxP {
    PenaltySpec spec;
    bool bias_from_parent;
  };
  struct SqErrP { Tensor target; };
  struct CeP { std::size_t label; };
  using Payload = std::variant<std::monostate, ScaleP, ConvP, SolveP, ProxP, SqErrP, CeP>;

  struct Node {
    Op op;
    NodeId parent0 = kNoNode;
    NodeId parent1 = kNoNode;
    Tensor value;
    Tensor grad;  // empty until backward touches it
    Payload payload;
  };

  NodeId push(Node node);
  void check_parent(NodeId id) const;
  void accumulate(NodeId id, const Tensor& g);

  std::vector<Node> nodes_;
};

}  // namespace deepca
