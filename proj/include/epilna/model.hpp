#pragma once
// Compartmental model specification: strata, compartments, transitions with
// gated rates, stoichiometry, observation schedule.
//
// Every transition rate has the bilinear form
//     lambda_k(X, t) = gate_k(t) * X_m * (c_0(theta) + sum_j c_j(theta) X_j)
// with the X_m factor optional. This covers mass-action infection (beta*S*I),
// linear flows (mu*I, omega*E), importation-style terms ((alpha + beta*I)*S)
// and cross-stratum force of infection (beta*(I_A + a_BA*I_B + a_CA*I_C)*S_A).
// Gates switch rates on/off over absolute time windows, e.g. transmission in
// a country commencing several weeks into the study period.

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "epilna/expr.hpp"

namespace epilna {

struct ModelError : std::runtime_error {
  enum class Code {
    unknown_compartment,
    unknown_parameter,
    non_conservative,
    unsupported_rate_form,
    bad_schedule,
    bad_gate,
    bad_initial_volumes,
  };
  Code code;
  ModelError(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

struct GateWindow {
  double on = 0.0;
  double off = std::numeric_limits<double>::infinity();
};

struct TransitionSpec {
  std::string name;
  int from = -1;
  int to = -1;
  int multiplier = -1;                       // compartment index of the X_m factor; -1 = none
  Expr constant;                             // c_0(theta); empty means 0
  std::vector<std::pair<int, Expr>> linear;  // (compartment j, coefficient c_j(theta))
  std::vector<GateWindow> gates;             // empty = always active

  bool active_at(double t) const {
    if (gates.empty()) return true;
    for (const auto& g : gates)
      if (t >= g.on && t < g.off) return true;
    return false;
  }
};

struct StratumSpec {
  std::string name;
  double population = 0.0;  // box cap for validity checks and conservation reference
};

struct CompartmentSpec {
  std::string name;
  int stratum = 0;
};

struct ObservationSchedule {
  double t0 = 0.0;
  std::vector<double> times;  // t_1 < t_2 < ... < t_L, all > t0

  int n_intervals() const { return static_cast<int>(times.size()); }
  double t(int ell) const { return ell == 0 ? t0 : times[ell - 1]; }  // ell in 0..L

  void validate() const {
    double prev = t0;
    for (double ti : times) {
      if (!(ti > prev))
        throw ModelError(ModelError::Code::bad_schedule,
                         "observation times must be strictly increasing and later than t0");
      prev = ti;
    }
    if (times.empty())
      throw ModelError(ModelError::Code::bad_schedule, "observation schedule is empty");
  }
};

// Fixed coefficients of all rates for one value of theta. Rate-coefficient
// expressions are evaluated once per parameter value, not once per ODE step.
struct CompiledRates {
  struct Row {
    int mult = -1;
    double c0 = 0.0;
    std::vector<std::pair<int, double>> linear;
    const std::vector<GateWindow>* gates = nullptr;
  };
  std::vector<Row> rows;

  bool active(int k, double t) const {
    const auto* g = rows[k].gates;
    if (!g || g->empty()) return true;
    for (const auto& w : *g)
      if (t >= w.on && t < w.off) return true;
    return false;
  }

  // lambda_k; negative compartment values are treated as 0 (tiny transient
  // undershoots from the continuous approximations must not produce negative
  // rates; genuine constraint violations are caught by the path validity
  // indicators, not here).
  double rate(int k, const double* X, double t) const {
    if (!active(k, t)) return 0.0;
    const Row& r = rows[k];
    double base = r.c0;
    for (auto [j, c] : r.linear) base += c * std::max(X[j], 0.0);
    double lam = (r.mult >= 0) ? std::max(X[r.mult], 0.0) * base : base;
    return std::max(lam, 0.0);
  }

  // lambda_k and d lambda_k / dX, one transition per row of jac.
  void rates_and_jacobian(const double* X, double t, int n_comp, Eigen::VectorXd& lam,
                          Eigen::MatrixXd& jac) const {
    const int K = static_cast<int>(rows.size());
    lam.setZero(K);
    jac.setZero(K, n_comp);
    for (int k = 0; k < K; ++k) {
      if (!active(k, t)) continue;
      const Row& r = rows[k];
      double base = r.c0;
      for (auto [j, c] : r.linear) base += c * std::max(X[j], 0.0);
      if (r.mult >= 0) {
        const double xm = std::max(X[r.mult], 0.0);
        lam[k] = xm * base;
        if (lam[k] < 0.0) {
          lam[k] = 0.0;
          continue;
        }
        if (X[r.mult] > 0.0) jac(k, r.mult) += base;
        for (auto [j, c] : r.linear)
          if (X[j] > 0.0) jac(k, j) += c * xm;
      } else {
        lam[k] = base;
        if (lam[k] < 0.0) {
          lam[k] = 0.0;
          continue;
        }
        for (auto [j, c] : r.linear)
          if (X[j] > 0.0) jac(k, j) += c;
      }
    }
  }
};

struct CompartmentalModel {
  std::vector<StratumSpec> strata;
  std::vector<CompartmentSpec> compartments;
  std::vector<TransitionSpec> transitions;
  Eigen::MatrixXd stoich;        // K x C; row k: -1 at from, +1 at to
  std::vector<Expr> x0_exprs;    // initial volumes as functions of theta, one per compartment
  ObservationSchedule schedule;

  int n_comp() const { return static_cast<int>(compartments.size()); }
  int n_trans() const { return static_cast<int>(transitions.size()); }
  int n_strata() const { return static_cast<int>(strata.size()); }

  int compartment_index(const std::string& name) const {
    for (int i = 0; i < n_comp(); ++i)
      if (compartments[i].name == name) return i;
    throw ModelError(ModelError::Code::unknown_compartment, "unknown compartment '" + name + "'");
  }

  int transition_index(const std::string& name) const {
    for (int k = 0; k < n_trans(); ++k)
      if (transitions[k].name == name) return k;
    throw ModelError(ModelError::Code::unknown_compartment, "unknown transition '" + name + "'");
  }

  void build_stoichiometry() {
    stoich.setZero(n_trans(), n_comp());
    for (int k = 0; k < n_trans(); ++k) {
      const auto& tr = transitions[k];
      if (tr.from < 0 || tr.from >= n_comp() || tr.to < 0 || tr.to >= n_comp() || tr.from == tr.to)
        throw ModelError(ModelError::Code::non_conservative,
                         "transition '" + tr.name + "' must move between two distinct compartments");
      stoich(k, tr.from) = -1.0;
      stoich(k, tr.to) = 1.0;
    }
  }

  void validate() const {
    if (strata.empty() || compartments.empty() || transitions.empty())
      throw ModelError(ModelError::Code::unsupported_rate_form, "model is structurally empty");
    for (const auto& c : compartments)
      if (c.stratum < 0 || c.stratum >= n_strata())
        throw ModelError(ModelError::Code::unknown_compartment,
                         "compartment '" + c.name + "' references a missing stratum");
    if (stoich.rows() != n_trans() || stoich.cols() != n_comp())
      throw ModelError(ModelError::Code::non_conservative, "stoichiometry has wrong shape");
    for (int k = 0; k < n_trans(); ++k) {
      if (std::fabs(stoich.row(k).sum()) > 0.0)
        throw ModelError(ModelError::Code::non_conservative,
                         "stoichiometry row for '" + transitions[k].name + "' does not sum to zero");
      for (const auto& g : transitions[k].gates)
        if (!(g.off > g.on))
          throw ModelError(ModelError::Code::bad_gate,
                           "gate window for '" + transitions[k].name + "' has off <= on");
    }
    if (static_cast<int>(x0_exprs.size()) != n_comp())
      throw ModelError(ModelError::Code::bad_initial_volumes,
                       "need one initial-volume expression per compartment");
    schedule.validate();
  }

  CompiledRates compile_rates(const Eigen::VectorXd& theta) const {
    CompiledRates cr;
    cr.rows.resize(n_trans());
    for (int k = 0; k < n_trans(); ++k) {
      const auto& tr = transitions[k];
      auto& row = cr.rows[k];
      row.mult = tr.multiplier;
      row.c0 = tr.constant.empty() ? 0.0 : tr.constant(theta.data());
      row.linear.clear();
      for (const auto& [j, e] : tr.linear) row.linear.emplace_back(j, e(theta.data()));
      row.gates = &tr.gates;
    }
    return cr;
  }

  // All transition rates at volumes X, parameters theta, time t.
  Eigen::VectorXd rates(const Eigen::VectorXd& X, const Eigen::VectorXd& theta, double t) const {
    CompiledRates cr = compile_rates(theta);
    Eigen::VectorXd lam(n_trans());
    for (int k = 0; k < n_trans(); ++k) lam[k] = cr.rate(k, X.data(), t);
    return lam;
  }

  Eigen::VectorXd initial_volumes(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd x0(n_comp());
    for (int c = 0; c < n_comp(); ++c) x0[c] = x0_exprs[c](theta.data());
    return x0;
  }

  // Box + conservation validity of a volume vector. cap_tol loosens the cap
  // for accumulated floating point error along a path.
  bool volumes_valid(const Eigen::VectorXd& X, double tol = 1e-8) const {
    for (int c = 0; c < n_comp(); ++c) {
      const double cap = strata[compartments[c].stratum].population;
      if (!(X[c] >= -tol) || !(X[c] <= cap + tol * std::max(1.0, cap))) return false;
    }
    return true;
  }
};

}  // namespace epilna
