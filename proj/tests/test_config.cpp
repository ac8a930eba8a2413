#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include "epilna/model_config.hpp"
#include "helpers.hpp"

using namespace epilna;
using nlohmann::json;

TEST_CASE("bundled single-population SIR configuration loads") {
  ModelConfig cfg = load_model_config(testutil::model_path("sir_regime1.json"));
  CHECK(cfg.name == "sir_regime1");
  CHECK(cfg.model.n_comp() == 3);
  CHECK(cfg.model.n_trans() == 2);
  CHECK(cfg.model.schedule.n_intervals() == 52);
  CHECK(cfg.params.n_free == 4);
  CHECK(cfg.params.names[0] == "R0");
  CHECK(cfg.params.priors.size() == 4);
  REQUIRE(cfg.has_truth);

  // truth vector carries the full natural-scale parameter set
  const int i_r0 = cfg.params.index_of("R0");
  const int i_rho = cfg.params.index_of("rho");
  CHECK(cfg.truth[i_r0] == 2.0);
  CHECK(cfg.truth[i_rho] == 0.5);

  // initial volumes at truth: S = P - I0, I = I0, R = 0
  const Eigen::VectorXd x0 = cfg.model.initial_volumes(cfg.truth);
  CHECK(x0[cfg.model.compartment_index("S")] == 1999.0);
  CHECK(x0[cfg.model.compartment_index("I")] == 1.0);
  CHECK(x0[cfg.model.compartment_index("R")] == 0.0);

  // emission binds rho/phi to parameter slots
  REQUIRE(cfg.emission.size() == 1);
  CHECK(cfg.emission[0].transition == cfg.model.transition_index("infection"));
  CHECK(cfg.emission[0].family == EmissionFamily::neg_binomial);
  CHECK(cfg.emission[0].rho_param == i_rho);
  CHECK(cfg.emission[0].rho(cfg.truth) == 0.5);
  CHECK(cfg.emission[0].phi(cfg.truth) == 5.68);

  CHECK(cfg.truncation.rule == TruncationConfig::Rule::A);
  CHECK(cfg.truncation.inclusive_threshold);
  CHECK(cfg.min_cases == 15);
  CHECK(cfg.fit.n_chains == 5);
  CHECK(cfg.fit.n_adapt == 25000);
  CHECK(cfg.fit.n_sample == 50000);
  CHECK(cfg.fit.kernel == McmcConfig::Kernel::garwm);

  // rate coefficients at truth: beta = R0/(inv_mu*P), recovery 1/inv_mu
  Eigen::VectorXd X(3);
  X << 1999.0, 1.0, 0.0;
  const Eigen::VectorXd lam = cfg.model.rates(X, cfg.truth, 0.0);
  CHECK(lam[0] == Catch::Approx(2.0 / 2000.0 * 1999.0));
  CHECK(lam[1] == Catch::Approx(1.0));
}

TEST_CASE("bundled SEIR scenario observes symptom onset") {
  ModelConfig cfg = load_model_config(testutil::model_path("seir_scenario.json"));
  CHECK(cfg.model.n_comp() == 4);
  CHECK(cfg.model.n_trans() == 3);
  REQUIRE(cfg.emission.size() == 1);
  CHECK(cfg.emission[0].transition == cfg.model.transition_index("onset"));
  CHECK(cfg.params.n_free == 5);
  REQUIRE(cfg.has_truth);
  CHECK(cfg.truth[cfg.params.index_of("R0")] == 1.8);
  CHECK(cfg.truth[cfg.params.index_of("phi")] == 36.0);
  CHECK(cfg.fit.n_adapt == 25000);
  CHECK(cfg.fit.n_sample == 50000);
}

TEST_CASE("bundled Poisson benchmark uses a fixed-rho Poisson emission") {
  ModelConfig cfg = load_model_config(testutil::model_path("sir_poisson_benchmark.json"));
  REQUIRE(cfg.emission.size() == 1);
  CHECK(cfg.emission[0].family == EmissionFamily::poisson);
  CHECK(cfg.model.schedule.n_intervals() == 16);
}

TEST_CASE("bundled multi-country model wires strata, gates and blocks") {
  ModelConfig cfg = load_model_config(testutil::model_path("ebola_three_country.json"));
  CHECK(cfg.model.n_strata() == 3);
  CHECK(cfg.model.n_comp() == 12);
  CHECK(cfg.emission.size() == 3);
  CHECK(cfg.params.n_free >= 6);
  CHECK(!cfg.fit.blocks.empty());
  CHECK(cfg.fit.kernel == McmcConfig::Kernel::mvnss);

  // gated transmission: the gated transitions are inactive at t0
  bool found_gate = false;
  for (const auto& tr : cfg.model.transitions)
    if (!tr.gates.empty()) {
      found_gate = true;
      CHECK_FALSE(tr.active_at(cfg.model.schedule.t0));
      CHECK(tr.active_at(tr.gates[0].on));
    }
  CHECK(found_gate);

  // per-stratum population caps are the effective population sizes
  for (const auto& st : cfg.model.strata) CHECK(st.population > 0.0);

  REQUIRE(cfg.has_truth);
  const Eigen::VectorXd x0 = cfg.model.initial_volumes(cfg.truth);
  double total = x0.sum();
  double cap_total = 0.0;
  for (const auto& st : cfg.model.strata) cap_total += st.population;
  CHECK(total == Catch::Approx(cap_total));
  CHECK(cfg.model.volumes_valid(x0));
}

namespace {

json minimal_config() {
  return json::parse(R"json({
    "name": "tiny",
    "population": 100,
    "compartments": ["S", "I", "R"],
    "parameters": {
      "free": ["beta", "mu"],
      "estimation": ["log(beta)", "log(mu)"],
      "priors": [
        {"quantity": "beta", "family": "lognormal", "a": 0.0, "b": 1.0},
        {"quantity": "mu", "family": "lognormal", "a": 0.0, "b": 1.0}
      ]
    },
    "transitions": [
      {"name": "infection", "from": "S", "to": "I", "multiplier": "I",
       "rate": {"linear": {"S": "beta"}}},
      {"name": "recovery", "from": "I", "to": "R", "multiplier": "I",
       "rate": {"constant": "mu"}}
    ],
    "initial": {"S": 99, "I": 1, "R": 0},
    "schedule": {"t0": 0, "dt": 1, "n": 4},
    "observation": [
      {"name": "cases", "transition": "infection", "family": "poisson"}
    ]
  })json");
}

}  // namespace

TEST_CASE("config parser accepts the minimal document") {
  ModelConfig cfg = parse_model_config(minimal_config());
  CHECK(cfg.model.n_comp() == 3);
  CHECK(cfg.params.n_free == 2);
  CHECK_FALSE(cfg.has_truth);
  CHECK(cfg.emission[0].rho_param == -1);
  CHECK(cfg.emission[0].rho_value == 1.0);
}

TEST_CASE("config parser reports malformed documents as configuration errors") {
  SECTION("missing population and strata") {
    json j = minimal_config();
    j.erase("population");
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("unknown compartment in a transition") {
    json j = minimal_config();
    j["transitions"][0]["from"] = "Q";
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("unknown parameter in a rate expression") {
    json j = minimal_config();
    j["transitions"][1]["rate"]["constant"] = "zeta";
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("unknown prior family") {
    json j = minimal_config();
    j["parameters"]["priors"][0]["family"] = "cauchy";
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("estimation list shorter than free list") {
    json j = minimal_config();
    j["parameters"]["estimation"] = {"log(beta)"};
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("unsupported estimation transform") {
    json j = minimal_config();
    j["parameters"]["estimation"] = {"log(beta) + 1", "log(mu)"};
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("missing initial volume") {
    json j = minimal_config();
    j["initial"].erase("R");
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("truth values must cover every free parameter") {
    json j = minimal_config();
    j["values"] = {{"beta", 0.5}};
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("observation must reference a transition") {
    json j = minimal_config();
    j["observation"][0]["transition"] = "nothing";
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("unknown fit kernel") {
    json j = minimal_config();
    j["fit"] = {{"kernel", "nuts"}};
    CHECK_THROWS_AS(parse_model_config(j), ConfigError);
  }
  SECTION("unreadable file") {
    CHECK_THROWS_AS(load_model_config("/nonexistent/model.json"), ConfigError);
  }
}
