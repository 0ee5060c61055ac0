#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "deepca/errors.hpp"
#include "deepca/oracle.hpp"
#include "deepca/prox.hpp"
#include "deepca/rng.hpp"

using namespace deepca;

namespace {

double prox_objective(const PenaltySpec& spec, const Tensor& v, const Tensor& u) {
  const Tensor d = sub(v, u);
  return 0.5 * dot(d, d) + penalty_value(spec, u);
}

PenaltySpec random_spec(Rng& rng, std::size_t dim, PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::None: return PenaltySpec::none();
    case PenaltyKind::Nonneg: return PenaltySpec::nonneg();
    case PenaltyKind::NonnegL1: {
      Tensor bias({dim});
      for (std::size_t i = 0; i < dim; ++i) bias[i] = rng.uniform(0.0, 0.8);
      return PenaltySpec::nonneg_l1(std::move(bias));
    }
    case PenaltyKind::Simplex: return PenaltySpec::simplex();
    case PenaltyKind::Equality: {
      const std::size_t idx = rng.index(dim);
      return PenaltySpec::equality({idx}, Tensor({1}, {rng.normal()}));
    }
  }
  return PenaltySpec::none();
}

}  // namespace

TEST_CASE("nonneg_l1 prox equals biased ReLU and the grid oracle") {
  const PenaltySpec spec = PenaltySpec::nonneg_l1(Tensor({3}, {1.0, 1.0, 1.0}));
  const Tensor v({3}, {3.0, -1.0, 0.5});
  const Tensor out = prox(spec, v);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 0.0);
  const Tensor grid = oracle::prox_grid_oracle(spec, v, 1e-3);
  CHECK(prox_objective(spec, v, out) <= prox_objective(spec, v, grid) + 1e-6);
}

TEST_CASE("simplex projection pins the stated cases") {
  const PenaltySpec spec = PenaltySpec::simplex();
  {
    const Tensor out = prox(spec, Tensor({2}, {2.0, 0.0}));
    CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-14));
  }
  {
    const Tensor out = prox(spec, Tensor({2}, {0.3, 0.7}));
    CHECK(out[0] == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(0.7).epsilon(1e-14));
  }
  {
    // Support-enumeration oracle agrees on the tie-heavy case.
    const Tensor v({3}, {0.6, 0.6, 0.1});
    const Tensor out = prox(spec, v);
    CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(0.0).epsilon(1e-12));
    const Tensor enumerated = oracle::simplex_projection_enumerated(v);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(out[i] == doctest::Approx(enumerated[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("equality prox overwrites constrained positions") {
  const PenaltySpec spec = PenaltySpec::equality({1}, Tensor({1}, {9.0}));
  const Tensor out = prox(spec, Tensor({3}, {1.0, 2.0, 3.0}));
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 9.0);
  CHECK(out[2] == 3.0);
  CHECK_THROWS_AS(PenaltySpec::equality({2, 1}, Tensor({2}, {1.0, 2.0})), UsageError);
  // Runtime slot: no indices constrained yet.
  const PenaltySpec slot = PenaltySpec::equality({}, Tensor());
  const Tensor pass = prox(slot, Tensor({2}, {4.0, 5.0}));
  CHECK(pass[0] == 4.0);
  CHECK(pass[1] == 5.0);
}

TEST_CASE("penalty values") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(penalty_value(PenaltySpec::nonneg_l1(Tensor({2}, {1.0, 0.5})), Tensor({2}, {1.0, 2.0})) ==
        2.0);
  CHECK(penalty_value(PenaltySpec::nonneg_l1(Tensor({2}, {1.0, 0.5})),
                      Tensor({2}, {-0.1, 0.0})) == inf);
  const PenaltySpec eq = PenaltySpec::equality({0}, Tensor({1}, {2.0}));
  CHECK(penalty_value(eq, Tensor({2}, {2.0, 5.0})) == 0.0);
  CHECK(penalty_value(eq, Tensor({2}, {2.1, 5.0})) == inf);
  CHECK(penalty_value(PenaltySpec::none(), Tensor({2}, {-3.0, 4.0})) == 0.0);
  CHECK(penalty_value(PenaltySpec::nonneg(), Tensor({2}, {0.0, 4.0})) == 0.0);
  CHECK(penalty_value(PenaltySpec::simplex(), Tensor({2}, {0.25, 0.75})) == 0.0);
  CHECK(penalty_value(PenaltySpec::simplex(), Tensor({2}, {0.5, 0.75})) == inf);
}

TEST_CASE("bias must be nonnegative") {
  CHECK_THROWS_AS(PenaltySpec::nonneg_l1(Tensor({2}, {0.5, -0.1})), UsageError);
}

TEST_CASE("prox minimizer property against the grid oracle, all kinds") {
  Rng rng(1001);
  const PenaltyKind kinds[] = {PenaltyKind::None, PenaltyKind::Nonneg, PenaltyKind::NonnegL1,
                               PenaltyKind::Simplex, PenaltyKind::Equality};
  for (const PenaltyKind kind : kinds) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t dim =
          kind == PenaltyKind::Simplex ? 1 + rng.index(3) : 1 + rng.index(4);
      const PenaltySpec spec = random_spec(rng, dim, kind);
      Tensor v({dim});
      for (std::size_t i = 0; i < dim; ++i) v[i] = rng.uniform(-1.0, 1.0);
      const Tensor p = prox(spec, v);
      const Tensor g = oracle::prox_grid_oracle(spec, v, 1e-3);
      CHECK(prox_objective(spec, v, p) <= prox_objective(spec, v, g) + 1e-6);
    }
  }
}

TEST_CASE("nonexpansiveness of every prox") {
  Rng rng(2002);
  const PenaltyKind kinds[] = {PenaltyKind::None, PenaltyKind::Nonneg, PenaltyKind::NonnegL1,
                               PenaltyKind::Simplex, PenaltyKind::Equality};
  for (const PenaltyKind kind : kinds) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t dim = 1 + rng.index(4);
      const PenaltySpec spec = random_spec(rng, dim, kind);
      Tensor a({dim}), b({dim});
      for (std::size_t i = 0; i < dim; ++i) {
        a[i] = rng.uniform(-2.0, 2.0);
        b[i] = rng.uniform(-2.0, 2.0);
      }
      const double lhs = norm2(sub(prox(spec, a), prox(spec, b)));
      const double rhs = norm2(sub(a, b));
      CHECK(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
    }
  }
}

TEST_CASE("projection prox operators are idempotent") {
  Rng rng(3003);
  const PenaltyKind kinds[] = {PenaltyKind::Nonneg, PenaltyKind::Simplex, PenaltyKind::Equality};
  for (const PenaltyKind kind : kinds) {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t dim = 1 + rng.index(4);
      const PenaltySpec spec = random_spec(rng, dim, kind);
      Tensor v({dim});
      for (std::size_t i = 0; i < dim; ++i) v[i] = rng.uniform(-2.0, 2.0);
      const Tensor once = prox(spec, v);
      const Tensor twice = prox(spec, once);
      for (std::size_t i = 0; i < dim; ++i) CHECK(once[i] == twice[i]);
    }
  }
}

TEST_CASE("simplex output sums to one and stays nonnegative") {
  Rng rng(4004);
  const PenaltySpec spec = PenaltySpec::simplex();
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t dim = 1 + rng.index(6);
    Tensor v({dim});
    for (std::size_t i = 0; i < dim; ++i) v[i] = rng.uniform(-3.0, 3.0);
    const Tensor u = prox(spec, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      CHECK(u[i] >= 0.0);
      sum += u[i];
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("grid oracle boundary cases") {
  // Feasible v maps to itself; the origin stays at the origin.
  const PenaltySpec nn = PenaltySpec::nonneg();
  const Tensor feasible({2}, {0.4, 0.7});
  const Tensor g = oracle::prox_grid_oracle(nn, feasible, 1e-3);
  const Tensor p = prox(nn, feasible);
  CHECK(prox_objective(nn, feasible, p) <= prox_objective(nn, feasible, g) + 1e-6);

  const Tensor zero({2}, {0.0, 0.0});
  CHECK(prox(nn, zero)[0] == 0.0);
  CHECK(prox(PenaltySpec::nonneg_l1(Tensor({2}, {0.3, 0.3})), zero)[1] == 0.0);
}
