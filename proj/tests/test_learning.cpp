#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "deepca/errors.hpp"
#include "deepca/learning.hpp"
#include "deepca/linalg.hpp"
#include "deepca/oracle.hpp"
#include "deepca/rng.hpp"

using namespace deepca;

namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / name;
}

// Hand-coded single-layer feed-forward reconstruction trainer:
// z = max(0, B^T x - b), prediction B z, loss 1/2 ||pred - x||^2, SGD with
// momentum, bias clamped at zero. Gradient terms are accumulated in the
// same order the reverse-mode pass visits them so trajectories are
// comparable bit for bit.
struct FeedForwardTrainerOracle {
  Tensor weights;  // (d, k)
  Tensor bias;     // (k)
  Tensor vel_w, vel_b;
  double lr, mu;
  Rng rng;

  FeedForwardTrainerOracle(Tensor w, Tensor b, double lr_, double mu_, std::uint64_t seed)
      : weights(std::move(w)),
        bias(std::move(b)),
        vel_w(Tensor::zeros_like(weights)),
        vel_b(Tensor::zeros_like(bias)),
        lr(lr_),
        mu(mu_),
        rng(seed) {}

  std::vector<double> run(const std::vector<Tensor>& xs, std::size_t epochs) {
    const std::size_t d = weights.dims()[0], k = weights.dims()[1];
    std::vector<double> epoch_losses;
    for (std::size_t e = 0; e < epochs; ++e) {
      std::vector<std::size_t> order(xs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      double epoch_loss = 0.0;
      for (const std::size_t idx : order) {
        const Tensor& x = xs[idx];
        const Tensor pre = dense_apply_adjoint(weights, x);
        Tensor act({k});
        for (std::size_t i = 0; i < k; ++i) act[i] = std::max(0.0, pre[i] - bias[i]);
        const Tensor pred = dense_apply(weights, act);
        const Tensor residual = sub(pred, x);
        const double loss = 0.5 * dot(residual, residual);
        epoch_loss += loss;

        // dL/dpred = residual; decode stage: W grad outer(residual, act),
        // act grad B^T residual.
        Tensor grad_w({d, k});
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < k; ++j) grad_w[i * k + j] = residual[i] * act[j];
        }
        const Tensor act_grad = dense_apply_adjoint(weights, residual);
        Tensor pre_grad({k}), bias_grad({k});
        for (std::size_t i = 0; i < k; ++i) {
          pre_grad[i] = act[i] > 0.0 ? act_grad[i] : 0.0;
          bias_grad[i] = -pre_grad[i];
        }
        // Encode stage adds outer(x, pre_grad) to the weight gradient.
        Tensor grad_w2({d, k});
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < k; ++j) grad_w2[i * k + j] = x[i] * pre_grad[j];
        }
        for (std::size_t i = 0; i < grad_w.size(); ++i) grad_w[i] += grad_w2[i];

        const double inv = 1.0;
        for (std::size_t i = 0; i < grad_w.size(); ++i) {
          vel_w[i] = mu * vel_w[i] + grad_w[i] * inv;
          weights[i] -= lr * vel_w[i];
        }
        for (std::size_t i = 0; i < k; ++i) {
          vel_b[i] = mu * vel_b[i] + bias_grad[i] * inv;
          bias[i] -= lr * vel_b[i];
        }
        for (std::size_t i = 0; i < k; ++i) bias[i] = std::max(0.0, bias[i]);
      }
      epoch_losses.push_back(epoch_loss / static_cast<double>(xs.size()));
    }
    return epoch_losses;
  }
};

}  // namespace

TEST_CASE("loss values") {
  CHECK(loss_value(LossKind::SquaredError, Tensor({2}, {1.0, 2.0}), Tensor({2}, {1.0, 2.0})) ==
        0.0);
  CHECK(loss_value(LossKind::SquaredError, Tensor({1}, {2.0}), Tensor({1}, {0.0})) == 2.0);
  const Tensor uniform({4}, {0.7, 0.7, 0.7, 0.7});
  CHECK(loss_value(LossKind::SoftmaxCrossEntropy, uniform, Tensor({1}, {1.0})) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_value(LossKind::SoftmaxCrossEntropy, uniform, Tensor({1}, {4.0})),
                  UsageError);
  CHECK_THROWS_AS(loss_value(LossKind::SoftmaxCrossEntropy, uniform, Tensor({1}, {1.5})),
                  UsageError);
}

TEST_CASE("convex least-squares training reaches near-zero loss") {
  // Consistent linear system: targets generated by a planted matrix.
  Rng rng(2);
  const std::size_t d = 6, k = 4;
  Tensor planted({d, k});
  for (std::size_t i = 0; i < planted.size(); ++i) planted[i] = rng.normal();

  Dataset data;
  for (int i = 0; i < 12; ++i) {
    Tensor x({d});
    for (std::size_t j = 0; j < d; ++j) x[j] = rng.normal();
    Example ex;
    ex.input = x;
    ex.target = dense_apply_adjoint(planted, x);
    data.examples.push_back(std::move(ex));
  }

  Tensor init({d, k});
  for (std::size_t i = 0; i < init.size(); ++i) init[i] = rng.normal(0.0, 0.3);
  Model model;
  model.layers.push_back({LinearOperator::dense(init), PenaltySpec::none()});

  TrainConfig cfg;
  cfg.epochs = 250;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.9;
  cfg.iterations = 1;
  cfg.seed = 3;
  Trainer trainer(model, cfg);
  const auto metrics = trainer.run(data, nullptr);
  CHECK(metrics.size() == 250);
  CHECK(metrics.back().loss < 1e-6);
}

TEST_CASE("T=1 training matches the feed-forward trainer oracle bit for bit") {
  Rng rng(17);
  const std::size_t d = 5, k = 8;
  Tensor weights({d, k});
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.normal(0.0, 0.4);
  Tensor bias = Tensor::full({k}, 0.1);

  std::vector<Tensor> xs;
  Dataset data;
  for (int i = 0; i < 9; ++i) {
    Tensor x({d});
    for (std::size_t j = 0; j < d; ++j) x[j] = rng.normal();
    xs.push_back(x);
    Example ex;
    ex.input = x;
    ex.target = x;
    data.examples.push_back(std::move(ex));
  }

  const double lr = 0.02, mu = 0.9;
  const std::uint64_t seed = 12345;
  const std::size_t epochs = 5;

  Model model;
  model.layers.push_back({LinearOperator::dense(weights), PenaltySpec::nonneg_l1(bias, true)});
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 1;
  cfg.learning_rate = lr;
  cfg.momentum = mu;
  cfg.seed = seed;
  cfg.iterations = 1;
  cfg.bias_learnable = true;
  cfg.decode_output = true;
  Trainer trainer(model, cfg);
  const auto metrics = trainer.run(data, nullptr);

  FeedForwardTrainerOracle reference(weights, bias, lr, mu, seed);
  const auto oracle_losses = reference.run(xs, epochs);

  REQUIRE(metrics.size() == epochs);
  for (std::size_t e = 0; e < epochs; ++e) {
    CHECK(metrics[e].loss == oracle_losses[e]);
  }
  const Tensor& trained_w = trainer.model().layers[0].op.weights();
  const Tensor& trained_b = trainer.model().layers[0].penalty.bias();
  for (std::size_t i = 0; i < trained_w.size(); ++i) CHECK(trained_w[i] == reference.weights[i]);
  for (std::size_t i = 0; i < trained_b.size(); ++i) CHECK(trained_b[i] == reference.bias[i]);
}

TEST_CASE("seeded determinism of metric streams") {
  auto run = [](std::size_t threads) {
    Rng rng(5);
    const std::size_t d = 4, k = 6;
    Tensor w({d, k});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
    Model model;
    model.layers.push_back({LinearOperator::dense(w), PenaltySpec::nonneg_l1(Tensor::full({k}, 0.05))});
    Dataset data;
    for (int i = 0; i < 8; ++i) {
      Tensor x({d});
      for (std::size_t j = 0; j < d; ++j) x[j] = rng.normal();
      Example ex;
      ex.input = x;
      ex.target = x;
      data.examples.push_back(std::move(ex));
    }
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.03;
    cfg.seed = 7;
    cfg.iterations = 2;
    cfg.decode_output = true;
    cfg.threads = threads;
    Trainer trainer(model, cfg);
    return trainer.run(data, nullptr);
  };
  const auto a = run(1), b = run(1), c = run(4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].loss == b[i].loss);
    CHECK(a[i].loss == c[i].loss);  // fixed-order reduction: threads do not matter
    for (std::size_t j = 0; j < a[i].sparsity.size(); ++j) {
      CHECK(a[i].sparsity[j] == b[i].sparsity[j]);
      CHECK(a[i].sparsity[j] == c[i].sparsity[j]);
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(23);
  Model model;
  Tensor w({4, 6});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
  model.layers.push_back({LinearOperator::dense(w), PenaltySpec::nonneg_l1(Tensor::full({6}, 0.1))});
  Tensor kern({2, 1, 2, 2});
  for (std::size_t i = 0; i < kern.size(); ++i) kern[i] = rng.normal();
  // Second chain: conv feeding from the dense layer is not shape-compatible
  // here, so keep a single-layer model plus velocities for the format test.
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 11;
  cfg.iterations = 4;
  cfg.bias_learnable = true;

  Trainer trainer(model, cfg);
  const auto p1 = temp_file("deepca_ck1.dcac");
  trainer.save(p1);

  Trainer loaded = Trainer::load(p1);
  const auto p2 = temp_file("deepca_ck2.dcac");
  loaded.save(p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  const Checkpoint ck = load_checkpoint(p1);
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(ck.model.layers[0].op.weights()[i] == trainer.model().layers[0].op.weights()[i]);
  }
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("corrupted magic byte raises a format error") {
  Model model;
  model.layers.push_back({LinearOperator::dense(Tensor({2, 2}, {1, 0, 0, 1})), PenaltySpec::none()});
  TrainConfig cfg;
  Trainer trainer(model, cfg);
  const auto path = temp_file("deepca_ck_corrupt.dcac");
  trainer.save(path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  fs::remove(path);
}

TEST_CASE("resume reproduces the uninterrupted trajectory") {
  Rng rng(29);
  const std::size_t d = 4, k = 5;
  Tensor w({d, k});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
  Dataset data;
  for (int i = 0; i < 6; ++i) {
    Tensor x({d});
    for (std::size_t j = 0; j < d; ++j) x[j] = rng.normal();
    Example ex;
    ex.input = x;
    ex.target = x;
    data.examples.push_back(std::move(ex));
  }
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 2;
  cfg.learning_rate = 0.02;
  cfg.seed = 31;
  cfg.iterations = 2;
  cfg.decode_output = true;

  Model model;
  model.layers.push_back({LinearOperator::dense(w), PenaltySpec::nonneg_l1(Tensor::full({k}, 0.05))});

  Trainer straight(model, cfg);
  const auto all_metrics = straight.run(data, nullptr, 6);

  Trainer part(model, cfg);
  part.run(data, nullptr, 3);
  const auto path = temp_file("deepca_resume.dcac");
  part.save(path);
  Trainer resumed = Trainer::load(path);
  CHECK(resumed.epoch() == 3);
  const auto tail = resumed.run(data, nullptr, 3);

  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(tail[e].loss == all_metrics[3 + e].loss);
    CHECK(tail[e].epoch == all_metrics[3 + e].epoch);
  }
  const Tensor& a = resumed.model().layers[0].op.weights();
  const Tensor& b = straight.model().layers[0].op.weights();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  fs::remove(path);
}

TEST_CASE("parameter section size is independent of the unroll depth") {
  Rng rng(37);
  Tensor w({4, 6});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();

  auto sized = [&](std::size_t iterations) {
    Model model;
    model.layers.push_back(
        {LinearOperator::dense(w), PenaltySpec::nonneg_l1(Tensor::full({6}, 0.1))});
    TrainConfig cfg;
    cfg.iterations = iterations;
    cfg.bias_learnable = true;
    Trainer trainer(model, cfg);
    const auto path = temp_file("deepca_paramsize_T" + std::to_string(iterations) + ".dcac");
    trainer.save(path);
    const std::size_t bytes = checkpoint_parameter_section_bytes(path);
    fs::remove(path);
    return bytes;
  };
  CHECK(sized(1) == sized(20));
}

TEST_CASE("divergence guard aborts with a diagnostic") {
  Model model;
  model.layers.push_back(
      {LinearOperator::dense(Tensor({1, 1}, {1.0})), PenaltySpec::none()});
  Dataset data;
  Example ex;
  ex.input = Tensor({1}, {1.0});
  ex.target = Tensor({1}, {0.0});
  data.examples.push_back(ex);
  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.learning_rate = 1e6;  // guaranteed blow-up
  cfg.iterations = 1;
  Trainer trainer(model, cfg);
  CHECK_THROWS_AS(trainer.run(data, nullptr), NumericalError);
}

TEST_CASE("empty dataset is rejected") {
  Model model;
  model.layers.push_back(
      {LinearOperator::dense(Tensor({1, 1}, {1.0})), PenaltySpec::none()});
  Trainer trainer(model, TrainConfig{});
  Dataset empty;
  CHECK_THROWS_AS(trainer.run(empty, nullptr), UsageError);
}

TEST_CASE("learnable biases stay nonnegative") {
  Rng rng(41);
  const std::size_t d = 4, k = 6;
  Tensor w({d, k});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, 1.0 / std::sqrt(d));
  Model model;
  model.layers.push_back(
      {LinearOperator::dense(w), PenaltySpec::nonneg_l1(Tensor::full({k}, 0.01))});
  Dataset data;
  for (int i = 0; i < 6; ++i) {
    Tensor x({d});
    for (std::size_t j = 0; j < d; ++j) x[j] = rng.normal();
    Example ex;
    ex.input = x;
    ex.target = x;
    data.examples.push_back(std::move(ex));
  }
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.02;
  cfg.seed = 43;
  cfg.iterations = 1;
  cfg.bias_learnable = true;
  cfg.decode_output = true;
  Trainer trainer(model, cfg);
  trainer.run(data, nullptr);
  const Tensor& b = trainer.model().layers[0].penalty.bias();
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] >= 0.0);
}
