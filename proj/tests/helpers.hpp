#pragma once
// Shared fixtures for the test suite: a programmatic SIR model and lookup of
// the bundled model configurations (EPILNA_MODELS_DIR is set by ctest; a
// source-relative fallback covers manual runs from the build tree).

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "epilna/model.hpp"

namespace testutil {

inline std::string models_dir() {
  if (const char* env = std::getenv("EPILNA_MODELS_DIR")) return env;
  return "../models";
}

inline std::string model_path(const std::string& name) { return models_dir() + "/" + name; }

// theta layout: (beta, mu, S0, I0); infection rate beta*S*I, recovery mu*I.
inline epilna::CompartmentalModel make_sir(double t0, double dt, int n_intervals) {
  using namespace epilna;
  CompartmentalModel m;
  m.strata = {{"pop", 0.0}};
  m.compartments = {{"S", 0}, {"I", 0}, {"R", 0}};
  const std::map<std::string, int> table{{"beta", 0}, {"mu", 1}, {"S0", 2}, {"I0", 3}};

  TransitionSpec infection;
  infection.name = "infection";
  infection.from = 0;
  infection.to = 1;
  infection.multiplier = 1;  // I
  infection.linear.emplace_back(0, Expr("beta", table));
  TransitionSpec recovery;
  recovery.name = "recovery";
  recovery.from = 1;
  recovery.to = 2;
  recovery.multiplier = 1;  // I
  recovery.constant = Expr("mu", table);
  m.transitions = {infection, recovery};

  m.x0_exprs = {Expr("S0", table), Expr("I0", table), Expr("0", table)};
  m.schedule.t0 = t0;
  for (int i = 1; i <= n_intervals; ++i) m.schedule.times.push_back(t0 + dt * i);
  m.build_stoichiometry();
  return m;
}

// Fills in the stratum population cap from theta and validates.
inline epilna::CompartmentalModel make_sir(double beta, double mu, double S0, double I0,
                                           double t0, double dt, int n_intervals,
                                           Eigen::VectorXd* theta_out = nullptr) {
  epilna::CompartmentalModel m = make_sir(t0, dt, n_intervals);
  m.strata[0].population = S0 + I0;
  m.validate();
  if (theta_out) {
    theta_out->resize(4);
    *theta_out << beta, mu, S0, I0;
  }
  return m;
}

}  // namespace testutil
