#include "deepca/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "deepca/errors.hpp"

namespace deepca {

namespace {

Tensor outer(const Tensor& u, const Tensor& v) {
  Tensor out({u.size(), v.size()});
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double ui = u[i];
    double* row = out.data() + i * v.size();
    for (std::size_t j = 0; j < v.size(); ++j) row[j] = ui * v[j];
  }
  return out;
}

Tensor softmax(const Tensor& scores) {
  Tensor out(scores.dims());
  const double m = max_value(scores);
  double denom = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    denom += out[i];
  }
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] /= denom;
  return out;
}

}  // namespace

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::check_parent(NodeId id) const {
  // Parents must already be recorded; this is what keeps the graph acyclic.
  if (id >= nodes_.size()) {
    throw std::logic_error("tape: parent node recorded out of order");
  }
}

NodeId Tape::leaf(Tensor value) {
  return push({Op::Leaf, kNoNode, kNoNode, std::move(value), {}, std::monostate{}});
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_parent(a);
  check_parent(b);
  return push({Op::Add, a, b, deepca::add(nodes_[a].value, nodes_[b].value), {}, std::monostate{}});
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_parent(a);
  check_parent(b);
  return push({Op::Sub, a, b, deepca::sub(nodes_[a].value, nodes_[b].value), {}, std::monostate{}});
}

NodeId Tape::scale(NodeId a, double factor) {
  check_parent(a);
  return push({Op::Scale, a, kNoNode, deepca::scale(nodes_[a].value, factor), {}, ScaleP{factor}});
}

NodeId Tape::reshape(NodeId a, std::vector<std::size_t> dims) {
  check_parent(a);
  return push({Op::Reshape, a, kNoNode, nodes_[a].value.reshaped(std::move(dims)), {},
               std::monostate{}});
}

NodeId Tape::dense_forward(NodeId weights, NodeId code) {
  check_parent(weights);
  check_parent(code);
  return push({Op::DenseForward, weights, code,
               dense_apply(nodes_[weights].value, nodes_[code].value), {}, std::monostate{}});
}

NodeId Tape::dense_adjoint(NodeId weights, NodeId data) {
  check_parent(weights);
  check_parent(data);
  return push({Op::DenseAdjoint, weights, data,
               dense_apply_adjoint(nodes_[weights].value, nodes_[data].value), {},
               std::monostate{}});
}

NodeId Tape::conv_forward(NodeId kernel, NodeId code, const Conv2dGeometry& g) {
  check_parent(kernel);
  check_parent(code);
  return push({Op::ConvForward, kernel, code,
               conv2d_apply(nodes_[kernel].value, g, nodes_[code].value), {}, ConvP{g}});
}

NodeId Tape::conv_adjoint(NodeId kernel, NodeId data, const Conv2dGeometry& g) {
  check_parent(kernel);
  check_parent(data);
  return push({Op::ConvAdjoint, kernel, data,
               conv2d_apply_adjoint(nodes_[kernel].value, g, nodes_[data].value), {}, ConvP{g}});
}

NodeId Tape::ridge_solve(NodeId weights, NodeId rhs, double rho,
                         std::shared_ptr<const CholeskyFactor> factor) {
  check_parent(weights);
  check_parent(rhs);
  if (!factor) factor = make_ridge_factor(nodes_[weights].value, rho);
  Tensor value = factor->solve(nodes_[rhs].value);
  return push({Op::RidgeSolve, weights, rhs, std::move(value), {}, SolveP{rho, std::move(factor)}});
}

NodeId Tape::prox(NodeId v, const PenaltySpec& spec, NodeId bias) {
  check_parent(v);
  const bool bias_from_parent = bias != kNoNode;
  const Tensor* bias_tensor = nullptr;
  if (bias_from_parent) {
    check_parent(bias);
    bias_tensor = &nodes_[bias].value;
  } else if (spec.kind() == PenaltyKind::NonnegL1) {
    bias_tensor = &spec.bias();
  }
  Tensor value = prox_apply(spec.kind(), nodes_[v].value, bias_tensor, spec.equality_indices(),
                            spec.equality_values());
  return push({Op::Prox, v, bias_from_parent ? bias : kNoNode, std::move(value), {},
               ProxP{spec, bias_from_parent}});
}

NodeId Tape::squared_error(NodeId prediction, Tensor target) {
  check_parent(prediction);
  require_same_shape(nodes_[prediction].value, target, "squared_error");
  const Tensor r = deepca::sub(nodes_[prediction].value, target);
  return push({Op::SquaredError, prediction, kNoNode, Tensor::scalar(0.5 * dot(r, r)), {},
               SqErrP{std::move(target)}});
}

NodeId Tape::softmax_cross_entropy(NodeId prediction, std::size_t label) {
  check_parent(prediction);
  const Tensor& scores = nodes_[prediction].value;
  if (label >= scores.size()) throw UsageError("softmax_cross_entropy: class index out of range");
  const double m = max_value(scores);
  double denom = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) denom += std::exp(scores[i] - m);
  const double value = std::log(denom) + m - scores[label];
  return push({Op::SoftmaxCrossEntropy, prediction, kNoNode, Tensor::scalar(value), {}, CeP{label}});
}

double Tape::min_prox_kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const Node& n : nodes_) {
    if (n.op != Op::Prox) continue;
    const auto& p = std::get<ProxP>(n.payload);
    const Tensor& v = nodes_[n.parent0].value;
    switch (p.spec.kind()) {
      case PenaltyKind::None:
      case PenaltyKind::Equality:
        break;  // affine, no kink
      case PenaltyKind::Nonneg:
        for (std::size_t i = 0; i < v.size(); ++i) margin = std::min(margin, std::fabs(v[i]));
        break;
      case PenaltyKind::NonnegL1: {
        const Tensor& b = p.bias_from_parent ? nodes_[n.parent1].value : p.spec.bias();
        for (std::size_t i = 0; i < v.size(); ++i) {
          margin = std::min(margin, std::fabs(v[i] - b[i]));
        }
        break;
      }
      case PenaltyKind::Simplex: {
        // Distance of each coordinate to the support threshold.
        std::vector<double> sorted(v.values());
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        double prefix = 0.0;
        double tau = 0.0;
        for (std::size_t k = 0; k < sorted.size(); ++k) {
          prefix += sorted[k];
          const double candidate = (prefix - 1.0) / static_cast<double>(k + 1);
          if (sorted[k] - candidate > 0.0) {
            tau = candidate;
          } else {
            break;
          }
        }
        for (std::size_t i = 0; i < v.size(); ++i) {
          margin = std::min(margin, std::fabs(v[i] - tau));
        }
        break;
      }
    }
  }
  return margin;
}

Tensor Tape::gradient(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.size() == 0) return Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::accumulate(NodeId id, const Tensor& g) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(NodeId loss) {
  if (loss >= nodes_.size()) throw UsageError("backward: unknown node");
  if (nodes_[loss].value.size() != 1) throw UsageError("backward: loss must be scalar");
  for (Node& n : nodes_) n.grad = Tensor();
  nodes_[loss].grad = Tensor::scalar(1.0);

  // Creation order is a topological order, so one reverse pass suffices.
  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add:
        accumulate(n.parent0, g);
        accumulate(n.parent1, g);
        break;
      case Op::Sub:
        accumulate(n.parent0, g);
        accumulate(n.parent1, deepca::scale(g, -1.0));
        break;
      case Op::Scale:
        accumulate(n.parent0, deepca::scale(g, std::get<ScaleP>(n.payload).factor));
        break;
      case Op::Reshape:
        accumulate(n.parent0, g.reshaped(nodes_[n.parent0].value.dims()));
        break;
      case Op::DenseForward: {
        const Tensor& w = nodes_[n.parent0].value;
        const Tensor& code = nodes_[n.parent1].value;
        accumulate(n.parent0, outer(g, code));
        accumulate(n.parent1, dense_apply_adjoint(w, g));
        break;
      }
      case Op::DenseAdjoint: {
        const Tensor& w = nodes_[n.parent0].value;
        const Tensor& data = nodes_[n.parent1].value;
        accumulate(n.parent0, outer(data, g));
        accumulate(n.parent1, dense_apply(w, g));
        break;
      }
      case Op::ConvForward: {
        const auto& geom = std::get<ConvP>(n.payload).geom;
        const Tensor& k = nodes_[n.parent0].value;
        const Tensor& code = nodes_[n.parent1].value;
        accumulate(n.parent0, conv2d_kernel_grad(code, g, geom));
        accumulate(n.parent1, conv2d_apply_adjoint(k, geom, g));
        break;
      }
      case Op::ConvAdjoint: {
        const auto& geom = std::get<ConvP>(n.payload).geom;
        const Tensor& k = nodes_[n.parent0].value;
        const Tensor& data = nodes_[n.parent1].value;
        accumulate(n.parent0, conv2d_kernel_grad(g, data, geom));
        accumulate(n.parent1, conv2d_apply(k, geom, g));
        break;
      }
      case Op::RidgeSolve: {
        // w = M^{-1} r with M = B^T B + rho I. With s = M^{-1} g:
        //   dL/dr = s,  dL/dB = -(B s) w^T - (B w) s^T.
        const auto& p = std::get<SolveP>(n.payload);
        const Tensor& weights = nodes_[n.parent0].value;
        const Tensor s = p.factor->solve(g);
        accumulate(n.parent1, s);
        const Tensor bs = dense_apply(weights, s);
        const Tensor bw = dense_apply(weights, n.value);
        Tensor wgrad = outer(bs, n.value);
        const Tensor wgrad2 = outer(bw, s);
        for (std::size_t i = 0; i < wgrad.size(); ++i) wgrad[i] = -(wgrad[i] + wgrad2[i]);
        accumulate(n.parent0, wgrad);
        break;
      }
      case Op::Prox: {
        const auto& p = std::get<ProxP>(n.payload);
        const Tensor& out = n.value;
        switch (p.spec.kind()) {
          case PenaltyKind::None:
            accumulate(n.parent0, g);
            break;
          case PenaltyKind::Nonneg:
          case PenaltyKind::NonnegL1: {
            Tensor gin(g.dims());
            for (std::size_t i = 0; i < g.size(); ++i) gin[i] = out[i] > 0.0 ? g[i] : 0.0;
            if (p.bias_from_parent) {
              accumulate(n.parent1, deepca::scale(gin, -1.0));
            }
            accumulate(n.parent0, gin);
            break;
          }
          case PenaltyKind::Simplex: {
            double sum = 0.0;
            std::size_t active = 0;
            for (std::size_t i = 0; i < g.size(); ++i) {
              if (out[i] > 0.0) {
                sum += g[i];
                ++active;
              }
            }
            Tensor gin(g.dims());
            if (active > 0) {
              const double mean = sum / static_cast<double>(active);
              for (std::size_t i = 0; i < g.size(); ++i) {
                gin[i] = out[i] > 0.0 ? g[i] - mean : 0.0;
              }
            }
            accumulate(n.parent0, gin);
            break;
          }
          case PenaltyKind::Equality: {
            Tensor gin = g;
            for (std::size_t idx : p.spec.equality_indices()) gin[idx] = 0.0;
            accumulate(n.parent0, gin);
            break;
          }
        }
        break;
      }
      case Op::SquaredError: {
        const auto& p = std::get<SqErrP>(n.payload);
        const Tensor& pred = nodes_[n.parent0].value;
        Tensor gin(pred.dims());
        for (std::size_t i = 0; i < pred.size(); ++i) gin[i] = g[0] * (pred[i] - p.target[i]);
        accumulate(n.parent0, gin);
        break;
      }
      case Op::SoftmaxCrossEntropy: {
        const auto& p = std::get<CeP>(n.payload);
        Tensor gin = softmax(nodes_[n.parent0].value);
        gin[p.label] -= 1.0;
        for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= g[0];
        accumulate(n.parent0, gin);
        break;
      }
    }
  }
}

}  // namespace deepca
