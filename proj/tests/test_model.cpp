#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "epilna/model.hpp"
#include "epilna/rng.hpp"
#include "helpers.hpp"

using namespace epilna;

TEST_CASE("SIR stoichiometry and rates match the canonical example") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(2e-3, 1.0, 999.0, 1.0, 0.0, 1.0, 4, &theta);

  Eigen::MatrixXd want(2, 3);
  want << -1, 1, 0, 0, -1, 1;
  REQUIRE(m.stoich == want);

  Eigen::VectorXd X(3);
  X << 999.0, 1.0, 0.0;
  const Eigen::VectorXd lam = m.rates(X, theta, 0.0);
  CHECK(lam[0] == Catch::Approx(1.998).epsilon(1e-14));
  CHECK(lam[1] == Catch::Approx(1.0).epsilon(1e-14));

  // absorbing state: no infectives, no events
  X << 1000.0, 0.0, 0.0;
  CHECK(m.rates(X, theta, 0.0).isZero(0.0));

  // undershoot clamp: slightly negative volumes never yield negative rates
  X << 999.0, -1e-9, 1e-9;
  const Eigen::VectorXd lam2 = m.rates(X, theta, 0.0);
  CHECK(lam2[0] == 0.0);
  CHECK(lam2[1] == 0.0);
}

TEST_CASE("initial volumes come from parameter expressions") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(2e-3, 1.0, 1999.0, 1.0, 0.0, 1.0, 4, &theta);
  const Eigen::VectorXd x0 = m.initial_volumes(theta);
  CHECK(x0[0] == 1999.0);
  CHECK(x0[1] == 1.0);
  CHECK(x0[2] == 0.0);
}

TEST_CASE("gates switch rates on and off over absolute time windows") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(2e-3, 1.0, 999.0, 1.0, 0.0, 1.0, 20, &theta);
  GateWindow g;
  g.on = 5.0;
  g.off = 10.0;
  m.transitions[0].gates = {g};

  Eigen::VectorXd X(3);
  X << 999.0, 1.0, 0.0;
  CHECK(m.rates(X, theta, 0.0)[0] == 0.0);
  CHECK(m.rates(X, theta, 4.999)[0] == 0.0);
  CHECK(m.rates(X, theta, 5.0)[0] == Catch::Approx(1.998));  // on is inclusive
  CHECK(m.rates(X, theta, 9.999)[0] == Catch::Approx(1.998));
  CHECK(m.rates(X, theta, 10.0)[0] == 0.0);  // off is exclusive
  CHECK(m.rates(X, theta, 5.0)[1] == Catch::Approx(1.0));  // other transition ungated

  CHECK(m.transitions[0].active_at(7.0));
  CHECK_FALSE(m.transitions[0].active_at(12.0));

  // two windows
  GateWindow g2;
  g2.on = 15.0;
  g2.off = 16.0;
  m.transitions[0].gates.push_back(g2);
  CHECK(m.rates(X, theta, 15.5)[0] == Catch::Approx(1.998));
  CHECK(m.rates(X, theta, 12.0)[0] == 0.0);
}

TEST_CASE("structural validation rejects malformed models") {
  CompartmentalModel m = testutil::make_sir(0.0, 1.0, 10);
  m.strata[0].population = 1000.0;
  m.validate();  // baseline is fine

  SECTION("self-loop transition") {
    m.transitions[0].to = m.transitions[0].from;
    CHECK_THROWS_AS(m.build_stoichiometry(), ModelError);
  }
  SECTION("gate with off <= on") {
    GateWindow g;
    g.on = 3.0;
    g.off = 3.0;
    m.transitions[0].gates = {g};
    CHECK_THROWS_AS(m.validate(), ModelError);
  }
  SECTION("missing initial-volume expression") {
    m.x0_exprs.pop_back();
    CHECK_THROWS_AS(m.validate(), ModelError);
  }
  SECTION("empty schedule") {
    m.schedule.times.clear();
    CHECK_THROWS_AS(m.validate(), ModelError);
  }
  SECTION("non-increasing schedule") {
    m.schedule.times = {1.0, 1.0, 2.0};
    CHECK_THROWS_AS(m.validate(), ModelError);
  }
  SECTION("compartment references missing stratum") {
    m.compartments[1].stratum = 3;
    CHECK_THROWS_AS(m.validate(), ModelError);
  }
  SECTION("doctored stoichiometry row must sum to zero") {
    m.stoich(0, 2) = 1.0;
    CHECK_THROWS_AS(m.validate(), ModelError);
  }
}

TEST_CASE("volume box check uses the stratum population cap") {
  CompartmentalModel m = testutil::make_sir(0.0, 1.0, 10);
  m.strata[0].population = 1000.0;

  Eigen::VectorXd X(3);
  X << 900.0, 50.0, 50.0;
  CHECK(m.volumes_valid(X));
  X << -1e-9, 500.0, 500.0;
  CHECK(m.volumes_valid(X));  // within tolerance
  X << -1.0, 500.0, 501.0;
  CHECK_FALSE(m.volumes_valid(X));
  X << 500.0, 1000.5, 0.0;
  CHECK_FALSE(m.volumes_valid(X));
  X << 500.0, 1000.0 + 1e-7, 0.0;
  CHECK(m.volumes_valid(X, 1e-6));  // loosened cap tolerance
}

TEST_CASE("rate jacobian matches central finite differences") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(2e-3, 1.3, 999.0, 1.0, 0.0, 1.0, 4, &theta);
  CompiledRates cr = m.compile_rates(theta);

  Rng rng(17);
  Eigen::VectorXd lam;
  Eigen::MatrixXd jac;
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd X(3);
    X << rng.uniform(1.0, 900.0), rng.uniform(1.0, 90.0), rng.uniform(0.0, 10.0);
    cr.rates_and_jacobian(X.data(), 0.0, 3, lam, jac);
    for (int k = 0; k < 2; ++k) {
      CHECK(lam[k] == Catch::Approx(cr.rate(k, X.data(), 0.0)).margin(1e-12));
      for (int j = 0; j < 3; ++j) {
        const double h = 1e-6 * std::max(1.0, std::fabs(X[j]));
        Eigen::VectorXd Xp = X, Xm = X;
        Xp[j] += h;
        Xm[j] -= h;
        const double fd = (cr.rate(k, Xp.data(), 0.0) - cr.rate(k, Xm.data(), 0.0)) / (2.0 * h);
        CHECK(jac(k, j) == Catch::Approx(fd).margin(1e-4));
      }
    }
  }

  // at a clamped coordinate the jacobian is one-sided zero
  Eigen::VectorXd X(3);
  X << 999.0, 0.0, 0.0;
  cr.rates_and_jacobian(X.data(), 0.0, 3, lam, jac);
  CHECK(jac(0, 1) == 0.0);
  CHECK(jac(1, 1) == 0.0);
}

TEST_CASE("observation schedule indexing and validation") {
  ObservationSchedule s;
  s.t0 = 2.0;
  s.times = {3.0, 4.5, 7.0};
  s.validate();
  CHECK(s.n_intervals() == 3);
  CHECK(s.t(0) == 2.0);
  CHECK(s.t(1) == 3.0);
  CHECK(s.t(3) == 7.0);

  s.times = {1.0};  // not after t0
  CHECK_THROWS_AS(s.validate(), ModelError);
}
