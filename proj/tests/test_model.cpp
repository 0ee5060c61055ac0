#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "deepca/errors.hpp"
#include "deepca/model.hpp"
#include "deepca/oracle.hpp"
#include "deepca/rng.hpp"

using namespace deepca;

namespace {

Model random_dense_model(Rng& rng, std::size_t layer_count, std::size_t max_dim) {
  Model model;
  std::size_t prev = 2 + rng.index(max_dim - 1);
  for (std::size_t j = 0; j < layer_count; ++j) {
    const std::size_t cols = 2 + rng.index(max_dim - 1);
    Tensor m({prev, cols});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
    Layer layer;
    layer.op = LinearOperator::dense(std::move(m));
    layer.penalty = PenaltySpec::none();
    model.layers.push_back(std::move(layer));
    prev = cols;
  }
  return model;
}

}  // namespace

TEST_CASE("objective trivial cases") {
  Model model;
  model.layers.push_back(
      {LinearOperator::dense(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0})), PenaltySpec::none()});

  const Tensor x({2}, {1.0, 0.0});
  CHECK(objective(model, x, {x}) == 0.0);
  CHECK(objective(model, x, {Tensor({2}, {0.0, 0.0})}) == 0.5);
}

TEST_CASE("objective equals the stacked least-squares form") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    Model model = random_dense_model(rng, 1 + rng.index(3), 8);
    Tensor x(model.input_shape());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    std::vector<Tensor> coeffs;
    for (const auto& layer : model.layers) {
      Tensor w(layer.op.output_shape());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
      coeffs.push_back(std::move(w));
    }
    const double direct = objective(model, x, coeffs);
    const double stacked = oracle::stacked_objective(model, x, coeffs);
    CHECK(std::fabs(direct - stacked) <= 1e-10 * (1.0 + std::fabs(direct)));
  }
}

TEST_CASE("stacked system shapes") {
  // l = 1 reduces to the dictionary itself.
  Model single;
  single.layers.push_back(
      {LinearOperator::dense(Tensor({2, 3}, {1, 2, 3, 4, 5, 6})), PenaltySpec::none()});
  const StackedSystem sys = build_stacked_system(single);
  CHECK(sys.op.dims()[0] == 2);
  CHECK(sys.op.dims()[1] == 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(sys.op[i] == single.layers[0].op.weights()[i]);
  const Tensor target = sys.target(Tensor({2}, {7.0, 8.0}));
  CHECK(target[0] == 7.0);
  CHECK(target[1] == 8.0);

  // l = 2: (p0 + p1) x (p1 + p2) with -I coupling.
  Model two;
  two.layers.push_back(
      {LinearOperator::dense(Tensor({2, 2}, {1, 0, 0, 1})), PenaltySpec::none()});
  two.layers.push_back(
      {LinearOperator::dense(Tensor({2, 2}, {2, 0, 0, 2})), PenaltySpec::none()});
  const StackedSystem sys2 = build_stacked_system(two);
  CHECK(sys2.op.dims()[0] == 4);
  CHECK(sys2.op.dims()[1] == 4);
  CHECK(sys2.op[2 * 4 + 0] == -1.0);  // -I block under the first diagonal
  CHECK(sys2.op[3 * 4 + 1] == -1.0);
  CHECK(sys2.op[2 * 4 + 2] == 2.0);   // B2 block
}

TEST_CASE("stacked system capacity cap") {
  Model model;
  model.layers.push_back({LinearOperator::dense(Tensor({120, 120})), PenaltySpec::none()});
  CHECK_THROWS_AS(build_stacked_system(model, 10000), CapacityError);
}

TEST_CASE("augmented lagrangian") {
  Model model;
  model.layers.push_back(
      {LinearOperator::dense(Tensor({1, 1}, {1.0})), PenaltySpec::none()});
  model.rho = 1.0;

  // Scalar hand-computed case.
  InferenceState state;
  state.input = Tensor({1}, {1.0});
  state.pre = {Tensor({1}, {1.0})};
  state.act = {Tensor({1}, {0.5})};
  state.dual = {Tensor({1}, {0.0})};
  CHECK(augmented_lagrangian(model, state) == doctest::Approx(0.125).epsilon(1e-15));

  // With pre == act and zero duals the coupling terms vanish exactly.
  Rng rng(5);
  Model m2 = random_dense_model(rng, 2, 5);
  InferenceState s2;
  s2.input = Tensor(m2.input_shape());
  for (std::size_t i = 0; i < s2.input.size(); ++i) s2.input[i] = rng.normal();
  for (const auto& layer : m2.layers) {
    Tensor w(layer.op.output_shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
    s2.pre.push_back(w);
    s2.act.push_back(w);
    s2.dual.push_back(Tensor(layer.op.output_shape()));
  }
  CHECK(augmented_lagrangian(m2, s2) == objective(m2, s2.input, s2.act));
}

TEST_CASE("model validation") {
  Model model;
  model.layers.push_back(
      {LinearOperator::dense(Tensor({2, 3})), PenaltySpec::none()});
  model.layers.push_back(
      {LinearOperator::dense(Tensor({4, 2})), PenaltySpec::none()});  // 3 != 4
  CHECK_THROWS_AS(model.validate(), DimensionError);

  Model ok;
  ok.layers.push_back({LinearOperator::dense(Tensor({2, 3})), PenaltySpec::none()});
  ok.iterations = 0;
  CHECK_THROWS_AS(ok.validate(), UsageError);
  ok.iterations = 1;
  ok.rho = -1.0;
  CHECK_THROWS_AS(ok.validate(), UsageError);
  ok.rho = 1.0;
  CHECK_NOTHROW(ok.validate());

  Model bad_penalty;
  bad_penalty.layers.push_back(
      {LinearOperator::dense(Tensor({2, 3})), PenaltySpec::nonneg_l1(Tensor({2}, {0.1, 0.1}))});
  CHECK_THROWS_AS(bad_penalty.validate(), DimensionError);
}
