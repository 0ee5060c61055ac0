#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "deepca/adnn_tape.hpp"
#include "deepca/autodiff.hpp"
#include "deepca/errors.hpp"
#include "deepca/experiments.hpp"
#include "deepca/learning.hpp"
#include "deepca/oracle.hpp"
#include "deepca/rng.hpp"

using namespace deepca;

TEST_CASE("record computes eager values") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor({1}, {1.0}));
  const NodeId y = tape.leaf(Tensor({1}, {2.0}));
  const NodeId s = tape.add(x, y);
  CHECK(tape.value(s)[0] == 3.0);

  // Three chained ops -> three non-leaf nodes.
  const NodeId t = tape.scale(s, 2.0);
  const NodeId u = tape.sub(t, x);
  CHECK(tape.value(u)[0] == 5.0);
  std::size_t non_leaf = 0;
  for (NodeId id = 0; id < tape.size(); ++id) {
    if (tape.op(id) != Tape::Op::Leaf) ++non_leaf;
  }
  CHECK(non_leaf == 3);

  Tensor m({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tape tape2;
  const NodeId w = tape2.leaf(m);
  const NodeId v = tape2.leaf(Tensor({2}, {1.0, 1.0}));
  const NodeId mv = tape2.dense_forward(w, v);
  const Tensor eager = dense_apply(m, tape2.value(v));
  CHECK(tape2.value(mv)[0] == eager[0]);
  CHECK(tape2.value(mv)[1] == eager[1]);
}

TEST_CASE("backward: x^2 at 3 gives 6") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor({1}, {3.0}));
  // x^2 = squared_error(x, 0) * 2
  const NodeId half_sq = tape.squared_error(x, Tensor({1}, {0.0}));
  const NodeId sq = tape.scale(half_sq, 2.0);
  tape.backward(sq);
  CHECK(tape.gradient(x)[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor({2}, {3.0, 1.0}));
  CHECK_THROWS_AS(tape.backward(x), UsageError);
}

TEST_CASE("gradient of ||ReLU(Wx - b)||^2 matches finite differences") {
  Rng rng(7);
  const std::size_t rows = 5, cols = 4;
  Tensor w_mat({rows, cols});
  for (std::size_t i = 0; i < w_mat.size(); ++i) w_mat[i] = rng.normal();
  Tensor x({rows});
  for (std::size_t i = 0; i < rows; ++i) x[i] = rng.normal();
  Tensor bias({cols});
  for (std::size_t i = 0; i < cols; ++i) bias[i] = rng.uniform(0.05, 0.3);
  const Tensor target({cols});

  const PenaltySpec pen = PenaltySpec::nonneg_l1(bias, true);

  Tape tape;
  const NodeId wn = tape.leaf(w_mat);
  const NodeId xn = tape.leaf(x);
  const NodeId bn = tape.leaf(bias);
  const NodeId pre = tape.dense_adjoint(wn, xn);
  const NodeId act = tape.prox(pre, pen, bn);
  const NodeId loss = tape.squared_error(act, target);
  tape.backward(loss);
  const Tensor grad_w = tape.gradient(wn);
  const Tensor grad_b = tape.gradient(bn);

  const Tensor fd_w = oracle::finite_difference_grad(
      [&](const Tensor& theta) {
        const Tensor pre_v = dense_apply_adjoint(theta, x);
        const Tensor act_v = prox(pen, pre_v);
        return 0.5 * dot(act_v, act_v);
      },
      w_mat, 1e-5);
  for (std::size_t i = 0; i < fd_w.size(); ++i) {
    CHECK(std::fabs(grad_w[i] - fd_w[i]) <= 1e-5 * (1.0 + std::fabs(fd_w[i])));
  }
  const Tensor fd_b = oracle::finite_difference_grad(
      [&](const Tensor& theta) {
        const Tensor pre_v = dense_apply_adjoint(w_mat, x);
        const Tensor act_v = prox(PenaltySpec::nonneg_l1(theta), pre_v);
        return 0.5 * dot(act_v, act_v);
      },
      bias, 1e-5);
  for (std::size_t i = 0; i < fd_b.size(); ++i) {
    CHECK(std::fabs(grad_b[i] - fd_b[i]) <= 1e-5 * (1.0 + std::fabs(fd_b[i])));
  }
}

TEST_CASE("every op's vector-Jacobian product matches finite differences") {
  Rng rng(11);

  SUBCASE("ridge solve") {
    const std::size_t rows = 4, cols = 3;
    Tensor w_mat({rows, cols});
    for (std::size_t i = 0; i < w_mat.size(); ++i) w_mat[i] = rng.normal();
    Tensor rhs({cols});
    for (std::size_t i = 0; i < cols; ++i) rhs[i] = rng.normal();
    const Tensor target({cols});
    const double rho = 1.0;

    Tape tape;
    const NodeId wn = tape.leaf(w_mat);
    const NodeId rn = tape.leaf(rhs);
    const NodeId solved = tape.ridge_solve(wn, rn, rho);
    const NodeId loss = tape.squared_error(solved, target);
    tape.backward(loss);

    auto eval = [&](const Tensor& weights, const Tensor& r) {
      const Tensor sol = make_ridge_factor(weights, rho)->solve(r);
      return 0.5 * dot(sol, sol);
    };
    const Tensor fd_w = oracle::finite_difference_grad(
        [&](const Tensor& theta) { return eval(theta, rhs); }, w_mat, 1e-6);
    const Tensor ad_w = tape.gradient(wn);
    for (std::size_t i = 0; i < fd_w.size(); ++i) {
      CHECK(std::fabs(ad_w[i] - fd_w[i]) <= 1e-5 * (1.0 + std::fabs(fd_w[i])));
    }
    const Tensor fd_r = oracle::finite_difference_grad(
        [&](const Tensor& theta) { return eval(w_mat, theta); }, rhs, 1e-6);
    const Tensor ad_r = tape.gradient(rn);
    for (std::size_t i = 0; i < fd_r.size(); ++i) {
      CHECK(std::fabs(ad_r[i] - fd_r[i]) <= 1e-5 * (1.0 + std::fabs(fd_r[i])));
    }
  }

  SUBCASE("conv forward and adjoint") {
    Tensor kernel({2, 1, 3, 3});
    for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] = rng.normal();
    auto conv = LinearOperator::conv2d(kernel, 1, 1, 4, 4);
    const auto& g = conv.geometry();

    Tensor code(conv.output_shape());
    for (std::size_t i = 0; i < code.size(); ++i) code[i] = rng.normal();
    const Tensor dtarget(conv.input_shape());

    Tape tape;
    const NodeId kn = tape.leaf(kernel);
    const NodeId cn = tape.leaf(code);
    const NodeId data = tape.conv_forward(kn, cn, g);
    const NodeId loss = tape.squared_error(data, dtarget);
    tape.backward(loss);

    const Tensor fd_k = oracle::finite_difference_grad(
        [&](const Tensor& theta) {
          const Tensor out = conv2d_apply(theta, g, code);
          return 0.5 * dot(out, out);
        },
        kernel, 1e-6);
    const Tensor ad_k = tape.gradient(kn);
    for (std::size_t i = 0; i < fd_k.size(); ++i) {
      CHECK(std::fabs(ad_k[i] - fd_k[i]) <= 1e-5 * (1.0 + std::fabs(fd_k[i])));
    }
    const Tensor fd_c = oracle::finite_difference_grad(
        [&](const Tensor& theta) {
          const Tensor out = conv2d_apply(kernel, g, theta);
          return 0.5 * dot(out, out);
        },
        code, 1e-6);
    const Tensor ad_c = tape.gradient(cn);
    for (std::size_t i = 0; i < fd_c.size(); ++i) {
      CHECK(std::fabs(ad_c[i] - fd_c[i]) <= 1e-5 * (1.0 + std::fabs(fd_c[i])));
    }

    Tape tape2;
    const NodeId kn2 = tape2.leaf(kernel);
    Tensor dval(conv.input_shape());
    for (std::size_t i = 0; i < dval.size(); ++i) dval[i] = rng.normal();
    const NodeId dn = tape2.leaf(dval);
    const NodeId code_out = tape2.conv_adjoint(kn2, dn, g);
    const NodeId loss2 = tape2.squared_error(code_out, Tensor(conv.output_shape()));
    tape2.backward(loss2);
    const Tensor fd_k2 = oracle::finite_difference_grad(
        [&](const Tensor& theta) {
          const Tensor out = conv2d_apply_adjoint(theta, g, dval);
          return 0.5 * dot(out, out);
        },
        kernel, 1e-6);
    const Tensor ad_k2 = tape2.gradient(kn2);
    for (std::size_t i = 0; i < fd_k2.size(); ++i) {
      CHECK(std::fabs(ad_k2[i] - fd_k2[i]) <= 1e-5 * (1.0 + std::fabs(fd_k2[i])));
    }
  }

  SUBCASE("simplex and equality prox") {
    Tensor v({4}, {0.9, 0.4, -0.2, 0.1});
    const PenaltySpec simplex = PenaltySpec::simplex();
    Tape tape;
    const NodeId vn = tape.leaf(v);
    const NodeId pn = tape.prox(vn, simplex);
    Tensor target({4}, {0.1, 0.2, 0.3, 0.4});
    const NodeId loss = tape.squared_error(pn, target);
    tape.backward(loss);
    const Tensor fd = oracle::finite_difference_grad(
        [&](const Tensor& theta) {
          const Tensor out = prox(simplex, theta);
          const Tensor d = sub(out, target);
          return 0.5 * dot(d, d);
        },
        v, 1e-6);
    const Tensor ad = tape.gradient(vn);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      CHECK(std::fabs(ad[i] - fd[i]) <= 1e-5 * (1.0 + std::fabs(fd[i])));
    }

    const PenaltySpec eq = PenaltySpec::equality({1, 3}, Tensor({2}, {0.5, -0.5}));
    Tape tape2;
    const NodeId vn2 = tape2.leaf(v);
    const NodeId pn2 = tape2.prox(vn2, eq);
    const NodeId loss2 = tape2.squared_error(pn2, target);
    tape2.backward(loss2);
    const Tensor ad2 = tape2.gradient(vn2);
    const Tensor fd2 = oracle::finite_difference_grad(
        [&](const Tensor& theta) {
          const Tensor out = prox(eq, theta);
          const Tensor d = sub(out, target);
          return 0.5 * dot(d, d);
        },
        v, 1e-6);
    for (std::size_t i = 0; i < fd2.size(); ++i) {
      CHECK(std::fabs(ad2[i] - fd2[i]) <= 1e-5 * (1.0 + std::fabs(fd2[i])));
    }
    // Constrained indices receive no gradient.
    CHECK(ad2[1] == 0.0);
    CHECK(ad2[3] == 0.0);
  }

  SUBCASE("softmax cross entropy") {
    Tensor scores({4}, {0.2, -0.3, 0.8, 0.1});
    Tape tape;
    const NodeId sn = tape.leaf(scores);
    const NodeId loss = tape.softmax_cross_entropy(sn, 2);
    tape.backward(loss);
    const Tensor fd = oracle::finite_difference_grad(
        [&](const Tensor& theta) {
          return loss_value(LossKind::SoftmaxCrossEntropy, theta, Tensor({1}, {2.0}));
        },
        scores, 1e-6);
    const Tensor ad = tape.gradient(sn);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      CHECK(std::fabs(ad[i] - fd[i]) <= 1e-6 * (1.0 + std::fabs(fd[i])));
    }
  }
}

TEST_CASE("gradient through unrolled sweeps matches finite differences") {
  Rng rng(2024);
  experiments::RandomModelOptions opts;
  opts.allow_conv = false;
  opts.learnable_bias = true;
  for (int trial = 0; trial < 6; ++trial) {
    Model model = experiments::make_random_model(rng, opts);
    Tensor x = experiments::random_input(rng, model);
    Tensor target(model.output_shape());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.normal();

    const std::size_t iterations = 3;
    Tape probe;
    auto rec = record_unrolled_inference(probe, model, x, iterations);
    int guard = 0;
    while (probe.min_prox_kink_margin() < 1e-4 && guard++ < 100) {
      x = experiments::random_input(rng, model);
      probe = Tape();
      rec = record_unrolled_inference(probe, model, x, iterations);
    }
    REQUIRE(guard < 100);

    Tape tape;
    rec = record_unrolled_inference(tape, model, x, iterations);
    const NodeId loss = tape.squared_error(rec.output(), target);
    tape.backward(loss);

    auto params = trainable_parameters(model);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Model scratch = model;
      auto scratch_params = trainable_parameters(scratch);
      const Tensor fd = oracle::finite_difference_grad(
          [&](const Tensor& theta) {
            *scratch_params[p].tensor = theta;
            const InferenceState state = infer(scratch, x, {.iterations = iterations});
            return loss_value(LossKind::SquaredError, state.output(), target);
          },
          *params[p].tensor, 1e-5);
      Tensor analytic;
      std::size_t cursor = 0;
      for (std::size_t j = 0; j < model.layer_count(); ++j) {
        if (cursor == p) analytic = tape.gradient(rec.weight_nodes[j]);
        ++cursor;
        if (rec.bias_nodes[j] != kNoNode) {
          if (cursor == p) analytic = tape.gradient(rec.bias_nodes[j]);
          ++cursor;
        }
      }
      for (std::size_t i = 0; i < fd.size(); ++i) {
        CHECK(std::fabs(analytic[i] - fd[i]) <= 1e-4 * (1.0 + std::fabs(fd[i])));
      }
    }
  }
}

TEST_CASE("minibatch gradient linearity") {
  Rng rng(66);
  Tensor w_mat({3, 4});
  for (std::size_t i = 0; i < w_mat.size(); ++i) w_mat[i] = rng.normal();
  Model model;
  model.layers.push_back({LinearOperator::dense(w_mat), PenaltySpec::nonneg()});

  std::vector<Tensor> xs, targets;
  for (int i = 0; i < 3; ++i) {
    Tensor x({3}), t({4});
    for (std::size_t j = 0; j < 3; ++j) x[j] = rng.normal();
    for (std::size_t j = 0; j < 4; ++j) t[j] = rng.normal();
    xs.push_back(x);
    targets.push_back(t);
  }

  // Sum of per-example gradients...
  Tensor sum_grad({3, 4});
  for (int i = 0; i < 3; ++i) {
    Tape tape;
    const auto rec = record_unrolled_inference(tape, model, xs[i], 2);
    tape.backward(tape.squared_error(rec.output(), targets[i]));
    const Tensor g = tape.gradient(rec.weight_nodes[0]);
    for (std::size_t j = 0; j < g.size(); ++j) sum_grad[j] += g[j];
  }
  // ...equals the gradient of the summed loss.
  Tape tape;
  NodeId total = kNoNode;
  std::vector<NodeId> weight_nodes;
  for (int i = 0; i < 3; ++i) {
    const auto rec = record_unrolled_inference(tape, model, xs[i], 2);
    const NodeId loss = tape.squared_error(rec.output(), targets[i]);
    weight_nodes.push_back(rec.weight_nodes[0]);
    total = total == kNoNode ? loss : tape.add(total, loss);
  }
  tape.backward(total);
  Tensor batch_grad({3, 4});
  for (const NodeId wn : weight_nodes) {
    const Tensor g = tape.gradient(wn);
    for (std::size_t j = 0; j < g.size(); ++j) batch_grad[j] += g[j];
  }
  for (std::size_t j = 0; j < sum_grad.size(); ++j) {
    CHECK(std::fabs(sum_grad[j] - batch_grad[j]) <= 1e-10 * (1.0 + std::fabs(sum_grad[j])));
  }
}

TEST_CASE("identical seeds give bit-identical gradients") {
  auto run = [] {
    Rng rng(99);
    experiments::RandomModelOptions opts;
    Model model = experiments::make_random_model(rng, opts);
    const Tensor x = experiments::random_input(rng, model);
    Tensor target(model.output_shape());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.normal();
    Tape tape;
    const auto rec = record_unrolled_inference(tape, model, x, 2);
    tape.backward(tape.squared_error(rec.output(), target));
    return tape.gradient(rec.weight_nodes[0]);
  };
  const Tensor a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
