#include "deepca/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepca/errors.hpp"
#include "deepca/rng.hpp"

namespace deepca::oracle {

namespace {

// Oracle-local proximal step for step * Phi; deliberately separate from the
// production prox so the two sides of every cross-check stay independent.
Tensor oracle_prox_block(const PenaltySpec& pen, const Tensor& y, double step) {
  Tensor out(y.dims());
  switch (pen.kind()) {
    case PenaltyKind::None:
      out = y;
      break;
    case PenaltyKind::Nonneg:
      for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] > 0.0 ? y[i] : 0.0;
      break;
    case PenaltyKind::NonnegL1:
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double t = y[i] - step * pen.bias()[i];
        out[i] = t > 0.0 ? t : 0.0;
      }
      break;
    case PenaltyKind::Simplex:
      out = simplex_projection_enumerated(y);
      break;
    case PenaltyKind::Equality: {
      out = y;
      const auto& idx = pen.equality_indices();
      for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = pen.equality_values()[i];
      break;
    }
  }
  return out;
}

double oracle_penalty_term(const PenaltySpec& pen, const Tensor& w) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  switch (pen.kind()) {
    case PenaltyKind::None:
      return 0.0;
    case PenaltyKind::Nonneg:
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0.0) return kInf;
      }
      return 0.0;
    case PenaltyKind::NonnegL1: {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0.0) return kInf;
        acc += pen.bias()[i] * std::fabs(w[i]);
      }
      return acc;
    }
    case PenaltyKind::Simplex: {
      double sum = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0.0) return kInf;
        sum += w[i];
      }
      return std::fabs(sum - 1.0) <= 1e-9 ? 0.0 : kInf;
    }
    case PenaltyKind::Equality: {
      const auto& idx = pen.equality_indices();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (w[idx[i]] != pen.equality_values()[i]) return kInf;
      }
      return 0.0;
    }
  }
  return kInf;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  const std::size_t rows = a.dims()[0], cols = a.dims()[1];
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += a[i * cols + j] * x[j];
    out[i] = acc;
  }
  return out;
}

Tensor matvec_t(const Tensor& a, const Tensor& y) {
  const std::size_t rows = a.dims()[0], cols = a.dims()[1];
  Tensor out({cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j] += a[i * cols + j] * y[i];
  }
  return out;
}

}  // namespace

double power_iteration_sq_norm(const Tensor& a, std::size_t iters, std::uint64_t seed) {
  const std::size_t cols = a.dims()[1];
  Rng rng(seed);
  Tensor v({cols});
  for (std::size_t i = 0; i < cols; ++i) v[i] = rng.normal();
  double lambda = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Tensor w = matvec_t(a, matvec(a, v));
    const double nrm = norm2(w);
    if (nrm == 0.0) return 0.0;
    for (std::size_t i = 0; i < cols; ++i) v[i] = w[i] / nrm;
    lambda = nrm;
  }
  return lambda;
}

double stacked_objective(const Model& model, const Tensor& x, const std::vector<Tensor>& coeffs,
                         std::size_t max_entries) {
  const StackedSystem sys = build_stacked_system(model, max_entries);
  const Tensor w = sys.stack(coeffs);
  const Tensor r = sub(sys.target(x), matvec(sys.op, w));
  double obj = 0.5 * dot(r, r);
  for (std::size_t j = 0; j < coeffs.size(); ++j) {
    obj += oracle_penalty_term(model.layers[j].penalty, coeffs[j]);
  }
  return obj;
}

ProxGradResult proximal_gradient_solve(const Model& model, const Tensor& x, std::size_t steps,
                                       double step_size, std::size_t max_entries) {
  const StackedSystem sys = build_stacked_system(model, max_entries);
  const Tensor b = sys.target(x);
  if (step_size <= 0.0) {
    const double lipschitz = 1.1 * power_iteration_sq_norm(sys.op);
    step_size = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
  }

  const std::size_t n = sys.op.dims()[1];
  Tensor w({n});
  // Start from the zero vector projected to feasibility so indicator
  // penalties are finite from step 0.
  {
    auto blocks = sys.split(w);
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      blocks[j] = oracle_prox_block(model.layers[j].penalty, blocks[j], step_size);
    }
    w = sys.stack(blocks);
  }

  ProxGradResult result;
  auto objective_at = [&](const Tensor& stacked) {
    const Tensor r = sub(b, matvec(sys.op, stacked));
    double obj = 0.5 * dot(r, r);
    auto blocks = sys.split(stacked);
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      obj += oracle_penalty_term(model.layers[j].penalty, blocks[j]);
    }
    return obj;
  };
  result.objective_trace.push_back(objective_at(w));

  for (std::size_t step = 0; step < steps; ++step) {
    const Tensor residual = sub(matvec(sys.op, w), b);
    const Tensor grad = matvec_t(sys.op, residual);
    Tensor y({n});
    for (std::size_t i = 0; i < n; ++i) y[i] = w[i] - step_size * grad[i];
    auto blocks = sys.split(y);
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      blocks[j] = oracle_prox_block(model.layers[j].penalty, blocks[j], step_size);
    }
    w = sys.stack(blocks);
    result.objective_trace.push_back(objective_at(w));
  }
  result.coefficients = sys.split(w);
  return result;
}

Tensor reference_ls_solve(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dims()[0] != a.dims()[1]) {
    throw DimensionError("reference_ls_solve: matrix must be square");
  }
  const std::size_t n = a.dims()[0];
  if (b.size() != n) throw DimensionError("reference_ls_solve: rhs size mismatch");
  // Augmented working copy.
  std::vector<double> m(n * (n + 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i * (n + 1) + j] = a[i * n + j];
    m[i * (n + 1) + n] = b[i];
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    double best = std::fabs(m[col * (n + 1) + col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double cand = std::fabs(m[r * (n + 1) + col]);
      if (cand > best) {
        best = cand;
        pivot = r;
      }
    }
    if (best < 1e-14) throw NumericalError("reference_ls_solve: singular matrix");
    if (pivot != col) {
      for (std::size_t j = 0; j <= n; ++j) std::swap(m[pivot * (n + 1) + j], m[col * (n + 1) + j]);
    }
    const double d = m[col * (n + 1) + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = m[r * (n + 1) + col] / d;
      if (factor == 0.0) continue;
      for (std::size_t j = col; j <= n; ++j) m[r * (n + 1) + j] -= factor * m[col * (n + 1) + j];
    }
  }
  Tensor x({n});
  for (std::size_t i = n; i-- > 0;) {
    double acc = m[i * (n + 1) + n];
    for (std::size_t j = i + 1; j < n; ++j) acc -= m[i * (n + 1) + j] * x[j];
    x[i] = acc / m[i * (n + 1) + i];
  }
  return x;
}

namespace {

double prox_objective_1d(double v, double u, PenaltyKind kind, double bias) {
  double phi = 0.0;
  if (kind == PenaltyKind::Nonneg || kind == PenaltyKind::NonnegL1) {
    if (u < 0.0) return std::numeric_limits<double>::infinity();
    if (kind == PenaltyKind::NonnegL1) phi = bias * std::fabs(u);
  }
  const double d = v - u;
  return 0.5 * d * d + phi;
}

}  // namespace

Tensor prox_grid_oracle(const PenaltySpec& spec, const Tensor& v, double grid_step) {
  const std::size_t dim = v.size();
  const PenaltyKind kind = spec.kind();
  if (kind == PenaltyKind::Simplex) {
    if (dim > 3) throw CapacityError("prox_grid_oracle: simplex grid capped at dim 3");
    // Enumerate the simplex grid; the last coordinate absorbs the remainder.
    const std::size_t ticks = static_cast<std::size_t>(std::round(1.0 / grid_step));
    Tensor best(v.dims());
    double best_obj = std::numeric_limits<double>::infinity();
    auto consider = [&](const Tensor& u) {
      const Tensor d = sub(v, u);
      const double obj = 0.5 * dot(d, d);
      if (obj < best_obj) {
        best_obj = obj;
        best = u;
      }
    };
    if (dim == 1) {
      consider(Tensor({1}, {1.0}));
    } else if (dim == 2) {
      for (std::size_t i = 0; i <= ticks; ++i) {
        const double u0 = static_cast<double>(i) / static_cast<double>(ticks);
        consider(Tensor({2}, {u0, 1.0 - u0}));
      }
    } else {
      for (std::size_t i = 0; i <= ticks; ++i) {
        const double u0 = static_cast<double>(i) / static_cast<double>(ticks);
        for (std::size_t j = 0; i + j <= ticks; ++j) {
          const double u1 = static_cast<double>(j) / static_cast<double>(ticks);
          consider(Tensor({3}, {u0, u1, 1.0 - u0 - u1}));
        }
      }
    }
    return best;
  }

  if (dim > 4) throw CapacityError("prox_grid_oracle: dimension cap exceeded");
  // Separable kinds: independent 1-D grids per coordinate.
  Tensor out(v.dims());
  std::vector<bool> fixed(dim, false);
  if (kind == PenaltyKind::Equality) {
    const auto& idx = spec.equality_indices();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out[idx[i]] = spec.equality_values()[i];
      fixed[idx[i]] = true;
    }
  }
  for (std::size_t i = 0; i < dim; ++i) {
    if (fixed[i]) continue;
    double lo, hi;
    if (kind == PenaltyKind::Nonneg || kind == PenaltyKind::NonnegL1) {
      lo = 0.0;
      hi = std::max(v[i], 0.0) + 1.0;
    } else {
      lo = v[i] - 1.0;
      hi = v[i] + 1.0;
    }
    const double bias = kind == PenaltyKind::NonnegL1 ? spec.bias()[i] : 0.0;
    double best_u = lo;
    double best_obj = std::numeric_limits<double>::infinity();
    const std::size_t ticks = static_cast<std::size_t>(std::ceil((hi - lo) / grid_step));
    for (std::size_t t = 0; t <= ticks; ++t) {
      const double u = lo + static_cast<double>(t) * grid_step;
      const double obj = prox_objective_1d(v[i], u, kind, bias);
      if (obj < best_obj) {
        best_obj = obj;
        best_u = u;
      }
    }
    out[i] = best_u;
  }
  return out;
}

Tensor simplex_projection_enumerated(const Tensor& v) {
  const std::size_t n = v.size();
  if (n > 16) throw CapacityError("simplex_projection_enumerated: dim cap exceeded");
  Tensor best(v.dims());
  double best_obj = std::numeric_limits<double>::infinity();
  // Try every nonempty support: on support A the minimizer is
  // v_A - (sum(v_A) - 1)/|A|; keep feasible candidates, take the best.
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) {
        sum += v[i];
        ++count;
      }
    }
    const double tau = (sum - 1.0) / static_cast<double>(count);
    Tensor u(v.dims());
    bool feasible = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) {
        u[i] = v[i] - tau;
        if (u[i] < 0.0) {
          feasible = false;
          break;
        }
      }
    }
    if (!feasible) continue;
    const Tensor d = sub(v, u);
    const double obj = 0.5 * dot(d, d);
    if (obj < best_obj) {
      best_obj = obj;
      best = u;
    }
  }
  return best;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& theta,
                              double h) {
  Tensor grad(theta.dims());
  Tensor probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    const double hi = f(probe);
    probe[i] = theta[i] - h;
    const double lo = f(probe);
    probe[i] = theta[i];
    grad[i] = (hi - lo) / (2.0 * h);
  }
  return grad;
}

std::vector<Tensor> feed_forward_reference(const Model& model, const Tensor& x,
                                           const PenaltySpec* output_penalty) {
  std::vector<Tensor> activations;
  const Tensor* current = &x;
  for (std::size_t j = 0; j < model.layer_count(); ++j) {
    const auto& op = model.layers[j].op;
    Tensor pre = op.is_dense() ? dense_apply_adjoint(op.weights(), *current)
                               : conv2d_apply_adjoint(op.weights(), op.geometry(), *current);
    const PenaltySpec& pen = (output_penalty != nullptr && j + 1 == model.layer_count())
                                 ? *output_penalty
                                 : model.layers[j].penalty;
    Tensor act(pre.dims());
    switch (pen.kind()) {
      case PenaltyKind::None:
        act = pre;
        break;
      case PenaltyKind::Nonneg:
        for (std::size_t i = 0; i < pre.size(); ++i) act[i] = std::max(0.0, pre[i]);
        break;
      case PenaltyKind::NonnegL1:
        for (std::size_t i = 0; i < pre.size(); ++i) act[i] = std::max(0.0, pre[i] - pen.bias()[i]);
        break;
      case PenaltyKind::Simplex:
        act = simplex_projection_enumerated(pre);
        break;
      case PenaltyKind::Equality: {
        act = pre;
        const auto& idx = pen.equality_indices();
        for (std::size_t i = 0; i < idx.size(); ++i) act[idx[i]] = pen.equality_values()[i];
        break;
      }
    }
    activations.push_back(std::move(act));
    current = &activations.back();
  }
  return activations;
}

Tensor conv2d_reference_forward(const Tensor& kernel, const Conv2dGeometry& g, const Tensor& code) {
  Tensor out({g.data_channels, g.data_h, g.data_w});
  const std::size_t kplane = g.kernel_h * g.kernel_w;
  for (std::size_t ic = 0; ic < g.data_channels; ++ic) {
    for (std::size_t a = 0; a < g.data_h; ++a) {
      for (std::size_t bcol = 0; bcol < g.data_w; ++bcol) {
        double acc = 0.0;
        for (std::size_t oc = 0; oc < g.code_channels; ++oc) {
          for (std::size_t y = 0; y < g.code_h; ++y) {
            for (std::size_t x = 0; x < g.code_w; ++x) {
              for (std::size_t u = 0; u < g.kernel_h; ++u) {
                for (std::size_t w = 0; w < g.kernel_w; ++w) {
                  const std::ptrdiff_t ra = static_cast<std::ptrdiff_t>(y * g.stride + u) -
                                            static_cast<std::ptrdiff_t>(g.pad);
                  const std::ptrdiff_t rb = static_cast<std::ptrdiff_t>(x * g.stride + w) -
                                            static_cast<std::ptrdiff_t>(g.pad);
                  if (ra != static_cast<std::ptrdiff_t>(a) ||
                      rb != static_cast<std::ptrdiff_t>(bcol)) {
                    continue;
                  }
                  acc += kernel[(oc * g.data_channels + ic) * kplane + u * g.kernel_w + w] *
                         code[(oc * g.code_h + y) * g.code_w + x];
                }
              }
            }
          }
        }
        out[(ic * g.data_h + a) * g.data_w + bcol] = acc;
      }
    }
  }
  return out;
}

Tensor conv2d_reference_adjoint(const Tensor& kernel, const Conv2dGeometry& g, const Tensor& data) {
  Tensor out({g.code_channels, g.code_h, g.code_w});
  const std::size_t kplane = g.kernel_h * g.kernel_w;
  for (std::size_t oc = 0; oc < g.code_channels; ++oc) {
    for (std::size_t y = 0; y < g.code_h; ++y) {
      for (std::size_t x = 0; x < g.code_w; ++x) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < g.data_channels; ++ic) {
          for (std::size_t u = 0; u < g.kernel_h; ++u) {
            for (std::size_t w = 0; w < g.kernel_w; ++w) {
              const std::ptrdiff_t a = static_cast<std::ptrdiff_t>(y * g.stride + u) -
                                       static_cast<std::ptrdiff_t>(g.pad);
              const std::ptrdiff_t b = static_cast<std::ptrdiff_t>(x * g.stride + w) -
                                       static_cast<std::ptrdiff_t>(g.pad);
              if (a < 0 || a >= static_cast<std::ptrdiff_t>(g.data_h) || b < 0 ||
                  b >= static_cast<std::ptrdiff_t>(g.data_w)) {
                continue;
              }
              acc += kernel[(oc * g.data_channels + ic) * kplane + u * g.kernel_w + w] *
                     data[(ic * g.data_h + a) * g.data_w + b];
            }
          }
        }
        out[(oc * g.code_h + y) * g.code_w + x] = acc;
      }
    }
  }
  return out;
}

ExplainingAwayTrial explaining_away_single(const Tensor& dictionary, const Tensor& image,
                                           const Tensor& bias, std::size_t opt_steps) {
  const std::size_t k = dictionary.dims()[1];
  // Feed-forward code: one thresholded analysis pass.
  const Tensor analysis = matvec_t(dictionary, image);
  Tensor ff_code({k});
  for (std::size_t i = 0; i < k; ++i) ff_code[i] = std::max(0.0, analysis[i] - bias[i]);

  Model single;
  single.layers.push_back({LinearOperator::dense(dictionary), PenaltySpec::nonneg_l1(bias)});
  const auto solved = proximal_gradient_solve(single, image, opt_steps, 0.0,
                                              dictionary.size() + 16);
  const Tensor& opt_code = solved.coefficients[0];

  ExplainingAwayTrial trial;
  trial.ff_nonzeros = count_nonzero(ff_code, 1e-8);
  trial.opt_nonzeros = count_nonzero(opt_code, 1e-8);
  trial.ff_error = norm2(sub(image, matvec(dictionary, ff_code)));
  trial.opt_error = norm2(sub(image, matvec(dictionary, opt_code)));
  return trial;
}

ExplainingAwayStats explaining_away_stats(const Tensor& dictionary,
                                          const std::vector<Tensor>& images, const Tensor& bias,
                                          std::size_t opt_steps) {
  ExplainingAwayStats stats;
  for (const Tensor& image : images) {
    const auto trial = explaining_away_single(dictionary, image, bias, opt_steps);
    stats.ff_sparsity += static_cast<double>(trial.ff_nonzeros);
    stats.opt_sparsity += static_cast<double>(trial.opt_nonzeros);
    stats.ff_error += trial.ff_error;
    stats.opt_error += trial.opt_error;
  }
  const double n = static_cast<double>(images.size());
  stats.ff_sparsity /= n;
  stats.opt_sparsity /= n;
  stats.ff_error /= n;
  stats.opt_error /= n;
  return stats;
}

}  // namespace deepca::oracle
