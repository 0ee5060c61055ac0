#include "deepca/prox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "deepca/errors.hpp"

namespace deepca {

const char* penalty_kind_name(PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::None: return "none";
    case PenaltyKind::Nonneg: return "nonneg";
    case PenaltyKind::NonnegL1: return "nonneg_l1";
    case PenaltyKind::Simplex: return "simplex";
    case PenaltyKind::Equality: return "equality";
  }
  return "?";
}

PenaltyKind penalty_kind_from_name(const std::string& name) {
  if (name == "none") return PenaltyKind::None;
  if (name == "nonneg") return PenaltyKind::Nonneg;
  if (name == "nonneg_l1") return PenaltyKind::NonnegL1;
  if (name == "simplex") return PenaltyKind::Simplex;
  if (name == "equality") return PenaltyKind::Equality;
  throw FormatError("unknown penalty kind: " + name);
}

PenaltySpec PenaltySpec::none() { return PenaltySpec(); }

PenaltySpec PenaltySpec::nonneg() {
  PenaltySpec s;
  s.kind_ = PenaltyKind::Nonneg;
  return s;
}

PenaltySpec PenaltySpec::nonneg_l1(Tensor bias, bool learnable) {
  PenaltySpec s;
  s.kind_ = PenaltyKind::NonnegL1;
  for (std::size_t i = 0; i < bias.size(); ++i) {
    if (!(bias[i] >= 0.0)) throw UsageError("nonneg_l1 bias must be elementwise >= 0");
  }
  s.bias_ = std::move(bias);
  s.bias_learnable_ = learnable;
  return s;
}

PenaltySpec PenaltySpec::simplex() {
  PenaltySpec s;
  s.kind_ = PenaltyKind::Simplex;
  return s;
}

PenaltySpec PenaltySpec::equality(std::vector<std::size_t> indices, Tensor values) {
  PenaltySpec s;
  s.kind_ = PenaltyKind::Equality;
  for (std::size_t i = 1; i < indices.size(); ++i) {
    if (indices[i] <= indices[i - 1]) {
      throw UsageError("equality indices must be strictly increasing");
    }
  }
  if (indices.size() != values.size()) {
    throw DimensionError("equality index/value count mismatch");
  }
  s.eq_indices_ = std::move(indices);
  s.eq_values_ = std::move(values);
  return s;
}

void PenaltySpec::validate(std::size_t dim) const {
  switch (kind_) {
    case PenaltyKind::NonnegL1:
      if (bias_.size() != dim) {
        throw DimensionError("nonneg_l1 bias size " + std::to_string(bias_.size()) +
                             " does not match layer dimension " + std::to_string(dim));
      }
      break;
    case PenaltyKind::Equality:
      if (!eq_indices_.empty() && eq_indices_.back() >= dim) {
        throw DimensionError("equality index out of range for layer dimension " +
                             std::to_string(dim));
      }
      break;
    default:
      break;
  }
}

Tensor project_simplex(const Tensor& v) {
  const std::size_t n = v.size();
  // Feasible points (to the output tolerance of the projection itself)
  // pass through untouched, which makes the projection exactly idempotent.
  {
    double sum = 0.0;
    bool nonneg = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (v[i] < 0.0) {
        nonneg = false;
        break;
      }
      sum += v[i];
    }
    if (nonneg && std::fabs(sum - 1.0) <= 1e-12) return v;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  double prefix = 0.0;
  double tau = 0.0;
  std::size_t support = 0;
  for (std::size_t k = 0; k < n; ++k) {
    prefix += v[order[k]];
    const double candidate = (prefix - 1.0) / static_cast<double>(k + 1);
    if (v[order[k]] - candidate > 0.0) {
      tau = candidate;
      support = k + 1;
    } else {
      break;
    }
  }
  (void)support;
  Tensor out(v.dims());
  for (std::size_t i = 0; i < n; ++i) out[i] = std::max(0.0, v[i] - tau);
  return out;
}

Tensor prox_apply(PenaltyKind kind, const Tensor& v, const Tensor* bias,
                  const std::vector<std::size_t>& eq_indices, const Tensor& eq_values) {
  switch (kind) {
    case PenaltyKind::None:
      return v;
    case PenaltyKind::Nonneg: {
      Tensor out(v.dims());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i]);
      return out;
    }
    case PenaltyKind::NonnegL1: {
      if (bias == nullptr) throw UsageError("nonneg_l1 prox needs a bias");
      require_same_shape(v, *bias, "prox(nonneg_l1)");
      Tensor out(v.dims());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i] - (*bias)[i]);
      return out;
    }
    case PenaltyKind::Simplex:
      return project_simplex(v);
    case PenaltyKind::Equality: {
      Tensor out = v;
      for (std::size_t i = 0; i < eq_indices.size(); ++i) out[eq_indices[i]] = eq_values[i];
      return out;
    }
  }
  throw UsageError("prox: unknown penalty kind");
}

Tensor prox(const PenaltySpec& spec, const Tensor& v) {
  spec.validate(v.size());
  const Tensor* bias = spec.kind() == PenaltyKind::NonnegL1 ? &spec.bias() : nullptr;
  return prox_apply(spec.kind(), v, bias, spec.equality_indices(), spec.equality_values());
}

double penalty_value(const PenaltySpec& spec, const Tensor& w) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  spec.validate(w.size());
  switch (spec.kind()) {
    case PenaltyKind::None:
      return 0.0;
    case PenaltyKind::Nonneg: {
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0.0) return kInf;
      }
      return 0.0;
    }
    case PenaltyKind::NonnegL1: {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0.0) return kInf;
        acc += spec.bias()[i] * std::fabs(w[i]);
      }
      return acc;
    }
    case PenaltyKind::Simplex: {
      double sum = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0.0) return kInf;
        sum += w[i];
      }
      return std::fabs(sum - 1.0) <= 1e-12 ? 0.0 : kInf;
    }
    case PenaltyKind::Equality: {
      const auto& idx = spec.equality_indices();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (w[idx[i]] != spec.equality_values()[i]) return kInf;
      }
      return 0.0;
    }
  }
  throw UsageError("penalty_value: unknown penalty kind");
}

}  // namespace deepca
