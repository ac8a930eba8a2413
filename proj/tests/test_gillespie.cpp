#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "epilna/gillespie.hpp"
#include "epilna/rng.hpp"
#include "helpers.hpp"

using namespace epilna;

TEST_CASE("an absorbing start produces an empty event log") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(2e-3, 1.0, 1000.0, 0.0, 0.0, 1.0, 10, &theta);
  Rng rng(1);
  const EventLog log = gillespie_direct(m, m.initial_volumes(theta), theta, 0.0, 10.0, rng);
  CHECK(log.times.empty());
  CHECK(log.events.empty());
}

TEST_CASE("pure-death extinction time matches the harmonic-sum expectation") {
  // Recovery only: with I0 individuals leaving independently at rate mu, the
  // extinction time is a sum of exponentials with means 1/(mu k), k = I0..1.
  using testutil::make_sir;
  Eigen::VectorXd theta;
  CompartmentalModel m = make_sir(0.0, 1.0, 0.0, 100.0, 0.0, 1.0, 30, &theta);

  double want = 0.0, want_var = 0.0;
  for (int k = 1; k <= 100; ++k) {
    want += 1.0 / k;
    want_var += 1.0 / (static_cast<double>(k) * k);
  }

  Rng rng(7);
  const int n = 10000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const EventLog log = gillespie_direct(m, m.initial_volumes(theta), theta, 0.0, 30.0, rng);
    REQUIRE(log.times.size() == 100);  // every individual recovers
    s += log.times.back();
  }
  const double mean = s / n;
  CHECK(std::fabs(mean - want) < 3.0 * std::sqrt(want_var / n));
}

TEST_CASE("event log conserves the population after every event") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(2e-3, 1.0, 995.0, 5.0, 0.0, 1.0, 8, &theta);
  Rng rng(21);
  const Eigen::VectorXd x0 = m.initial_volumes(theta);
  const EventLog log = gillespie_direct(m, x0, theta, 0.0, 8.0, rng);
  REQUIRE(!log.times.empty());

  Eigen::VectorXd x = x0;
  double prev_t = 0.0;
  for (size_t i = 0; i < log.times.size(); ++i) {
    REQUIRE(log.times[i] > prev_t);
    prev_t = log.times[i];
    x += m.stoich.row(log.events[static_cast<size_t>(i)]).transpose();
    REQUIRE(x.sum() == 1000.0);
    REQUIRE(x.minCoeff() >= 0.0);
  }
  // the log's own reconstruction agrees
  const Eigen::VectorXd xe = log.volumes_at(m, log.times.back());
  CHECK(xe == x);
}

TEST_CASE("binned incidence partitions the event log") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(2e-3, 1.0, 995.0, 5.0, 0.0, 1.0, 8, &theta);
  Rng rng(5);
  const EventLog log = gillespie_direct(m, m.initial_volumes(theta), theta, 0.0, 8.0, rng);
  const Eigen::MatrixXd dn = bin_incidence(log, m.schedule);
  REQUIRE(dn.rows() == 8);
  REQUIRE(dn.cols() == 2);

  Eigen::VectorXd totals = Eigen::VectorXd::Zero(2);
  for (int e : log.events) totals[e] += 1.0;
  CHECK(dn.colwise().sum().transpose() == totals);

  // an empty log bins to zero
  EventLog empty;
  empty.n_trans = 2;
  empty.x0 = m.initial_volumes(theta);
  CHECK(bin_incidence(empty, m.schedule).isZero(0.0));

  // a single event lands in exactly its own interval: (t_2, t_3] holds t = 2.5
  EventLog one;
  one.n_trans = 2;
  one.x0 = empty.x0;
  one.times = {2.5};
  one.events = {0};
  const Eigen::MatrixXd d1 = bin_incidence(one, m.schedule);
  CHECK(d1.sum() == 1.0);
  CHECK(d1(2, 0) == 1.0);
}

TEST_CASE("gated transitions produce no events outside their windows") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(4e-3, 0.1, 990.0, 10.0, 0.0, 1.0, 12, &theta);
  GateWindow g;
  g.on = 5.0;
  g.off = 9.0;
  m.transitions[0].gates = {g};

  Rng rng(11);
  bool saw_infection = false;
  for (int rep = 0; rep < 20; ++rep) {
    const EventLog log = gillespie_direct(m, m.initial_volumes(theta), theta, 0.0, 12.0, rng);
    for (size_t i = 0; i < log.times.size(); ++i) {
      if (log.events[i] == 0) {
        saw_infection = true;
        REQUIRE(log.times[i] >= 5.0);
        REQUIRE(log.times[i] < 9.0);
      }
    }
  }
  CHECK(saw_infection);
}

TEST_CASE("truncation rule A cuts after a run of low weeks") {
  TruncationConfig cfg;
  cfg.rule = TruncationConfig::Rule::A;

  Eigen::VectorXd y(20);

  SECTION("all weeks busy keeps everything up to the cap") {
    y.setConstant(9.0);
    CHECK(truncated_length(y, cfg) == 20);
    Eigen::VectorXd longer = Eigen::VectorXd::Constant(60, 9.0);
    CHECK(truncated_length(longer, cfg) == 52);
  }
  SECTION("four consecutive low weeks end the series") {
    y.setConstant(9.0);
    y.segment(14, 4).setConstant(4.0);
    CHECK(truncated_length(y, cfg) == 18);
  }
  SECTION("a broken run does not trigger") {
    y.setConstant(9.0);
    y[14] = y[15] = y[16] = 0.0;
    y[17] = 6.0;
    y[18] = y[19] = 0.0;
    CHECK(truncated_length(y, cfg) == 20);
  }
  SECTION("minimum length floor applies") {
    y.setConstant(0.0);
    CHECK(truncated_length(y, cfg) == 12);
  }
  SECTION("threshold is exclusive by default, inclusive on request") {
    y.setConstant(9.0);
    y.segment(14, 4).setConstant(5.0);
    CHECK(truncated_length(y, cfg) == 20);
    cfg.inclusive_threshold = true;
    CHECK(truncated_length(y, cfg) == 18);
  }
}

TEST_CASE("truncation rule B cuts after eight zero weeks") {
  TruncationConfig cfg;
  cfg.rule = TruncationConfig::Rule::B;

  Eigen::VectorXd y = Eigen::VectorXd::Constant(60, 0.0);
  SECTION("all-zero series keeps the first zero run") { CHECK(truncated_length(y, cfg) == 8); }
  SECTION("cases reset the run") {
    y.setZero();
    for (int i = 0; i < 60; i += 7) y[i] = 2.0;  // never 8 zeros in a row
    CHECK(truncated_length(y, cfg) == 52);
  }
  SECTION("zero run in the middle") {
    y.setConstant(3.0);
    y.segment(20, 8).setZero();
    CHECK(truncated_length(y, cfg) == 28);
  }
  SECTION("no rule keeps the full series") {
    TruncationConfig none;
    CHECK(truncated_length(y, none) == 60);
  }
}

TEST_CASE("dataset truncation keeps leading rows and the schedule prefix") {
  Dataset d = Dataset::empty({0.0, {1, 2, 3, 4, 5}}, {"cases"});
  d.counts << 1, 2, 3, 4, 5;
  d.observed.setConstant(5, 1, true);
  Dataset t = truncate_dataset(d, 3);
  CHECK(t.schedule.n_intervals() == 3);
  CHECK(t.counts.rows() == 3);
  CHECK(t.counts(2, 0) == 3.0);
}

TEST_CASE("simulated datasets are reproducible and respect the case floor") {
  Eigen::VectorXd theta;
  CompartmentalModel m = testutil::make_sir(1.5e-3, 1.0, 1995.0, 5.0, 0.0, 1.0, 20, &theta);
  SeriesSpec sp;
  sp.name = "cases";
  sp.transition = 0;
  sp.family = EmissionFamily::neg_binomial;
  sp.rho_value = 0.5;
  sp.phi_value = 10.0;
  EmissionSpec emission{sp};
  TruncationConfig trunc;
  trunc.rule = TruncationConfig::Rule::A;

  Rng r1(13), r2(13);
  const SimulatedDataset a =
      simulate_dataset(m, theta, emission, m.schedule, trunc, 15, r1, 1000);
  const SimulatedDataset b =
      simulate_dataset(m, theta, emission, m.schedule, trunc, 15, r2, 1000);
  CHECK(a.data.counts == b.data.counts);
  CHECK(a.attempts == b.attempts);
  CHECK(a.true_incidence.col(0).sum() >= 15.0);
  CHECK(a.data.schedule.n_intervals() == a.data.counts.rows());
  CHECK(a.data.counts.minCoeff() >= 0.0);

  // an unreachable case floor exhausts the resimulation budget
  Rng r3(13);
  CHECK_THROWS_AS(simulate_dataset(m, theta, emission, m.schedule, trunc, 100000, r3, 3),
                  ResimulationBudgetExceeded);
}

TEST_CASE("final size solves the classic fixed point") {
  CHECK(final_size_solve(0.8) == 0.0);
  CHECK(final_size_solve(1.0) == 0.0);

  const double pi2 = final_size_solve(2.0);
  CHECK(std::fabs(pi2 - (1.0 - std::exp(-2.0 * pi2))) < 1e-10);
  CHECK(pi2 == Catch::Approx(0.796812).margin(5e-6));

  for (double r0 : {1.05, 1.25, 1.8, 3.5, 8.0}) {
    const double pi = final_size_solve(r0);
    REQUIRE(pi > 0.0);
    REQUIRE(pi < 1.0);
    REQUIRE(std::fabs(pi - (1.0 - std::exp(-r0 * pi))) < 1e-10);
  }
}

TEST_CASE("effective population size reproduces the elicitation table row") {
  // R0 = 1.25, detection 0.4, observed total 3627 -> about 14 400
  const double peff = effective_population(1.25, 0.4, 3627.0);
  CHECK(std::fabs(peff - 14400.0) / 14400.0 < 0.02);

  // definitional identity: rho * pi(R0) * Peff = observed total
  const double pi = final_size_solve(1.25);
  CHECK(0.4 * pi * peff == Catch::Approx(3627.0).epsilon(1e-9));
}
