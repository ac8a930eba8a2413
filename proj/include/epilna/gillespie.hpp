#pragma once
// Exact simulation of the transition-count MJP (direct method), incidence
// binning over an observation schedule, dataset synthesis with the outbreak
// truncation rules, and the final-size fixed point used for prior elicitation.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "epilna/emission.hpp"
#include "epilna/model.hpp"
#include "epilna/rng.hpp"

namespace epilna {

struct ResimulationBudgetExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Event sequence (t_i, k_i) with strictly increasing times; the counting
// process N(t) and volumes X(t) = x0 + A^T N(t) are step functions of it.
struct EventLog {
  std::vector<double> times;
  std::vector<int> events;  // transition indices
  int n_trans = 0;
  Eigen::VectorXd x0;

  Eigen::VectorXd counts_at(double t) const {
    Eigen::VectorXd n = Eigen::VectorXd::Zero(n_trans);
    for (std::size_t i = 0; i < times.size() && times[i] <= t; ++i) n[events[i]] += 1.0;
    return n;
  }
  Eigen::VectorXd volumes_at(const CompartmentalModel& model, double t) const {
    Eigen::VectorXd x = x0;
    x.noalias() += model.stoich.transpose() * counts_at(t);
    return x;
  }
};

// Gillespie's direct method. Rates are constant between events except at gate
// boundaries, so waiting times are redrawn whenever a gate switches before
// the sampled event time (valid by memorylessness of the exponential).
inline EventLog gillespie_direct(const CompartmentalModel& model, const Eigen::VectorXd& x0,
                                 const Eigen::VectorXd& theta, double t0, double t_max, Rng& rng) {
  const int K = model.n_trans();
  EventLog log;
  log.n_trans = K;
  log.x0 = x0;

  std::vector<double> boundaries;
  for (const auto& tr : model.transitions)
    for (const auto& g : tr.gates) {
      if (g.on > t0 && g.on < t_max) boundaries.push_back(g.on);
      if (g.off > t0 && g.off < t_max) boundaries.push_back(g.off);
    }
  std::sort(boundaries.begin(), boundaries.end());
  boundaries.erase(std::unique(boundaries.begin(), boundaries.end()), boundaries.end());

  CompiledRates cr = model.compile_rates(theta);
  Eigen::VectorXd x = x0;
  Eigen::VectorXd lam(K);
  double t = t0;
  std::size_t bi = 0;
  while (t < t_max) {
    while (bi < boundaries.size() && boundaries[bi] <= t) ++bi;
    const double seg_end = bi < boundaries.size() ? boundaries[bi] : t_max;
    double total = 0.0;
    for (int k = 0; k < K; ++k) total += lam[k] = cr.rate(k, x.data(), t);
    if (total <= 0.0) {
      if (seg_end >= t_max) break;  // absorbing until the horizon
      t = seg_end;
      continue;
    }
    const double wait = rng.exponential(total);
    if (t + wait >= seg_end) {
      t = seg_end;  // rate regime changes first; redraw in the next segment
      continue;
    }
    t += wait;
    double u = rng.uniform() * total;
    int k = 0;
    while (k + 1 < K && u > lam[k]) u -= lam[k++];
    log.times.push_back(t);
    log.events.push_back(k);
    x += model.stoich.row(k).transpose();
  }
  return log;
}

// Count events per transition per interval (t_{l-1}, t_l]. Events outside the
// schedule horizon are dropped; within it the binning is an exact partition.
inline Eigen::MatrixXd bin_incidence(const EventLog& log, const ObservationSchedule& schedule) {
  const int L = schedule.n_intervals();
  Eigen::MatrixXd dn = Eigen::MatrixXd::Zero(L, log.n_trans);
  int ell = 1;
  for (std::size_t i = 0; i < log.times.size(); ++i) {
    const double t = log.times[i];
    if (t <= schedule.t0) continue;
    while (ell <= L && t > schedule.t(ell)) ++ell;
    if (ell > L) break;
    dn(ell - 1, log.events[i]) += 1.0;
  }
  return dn;
}

struct TruncationConfig {
  enum class Rule { none, A, B };
  Rule rule = Rule::none;
  // Rule A: keep at least min_weeks, cut after run_a consecutive weeks below
  // low_threshold ("< 5"; inclusive_threshold switches to "<= 5"), cap weeks.
  // Rule B: cap weeks or the end of the first run of run_b all-zero weeks.
  bool inclusive_threshold = false;
  int cap = 52;
  int min_weeks = 12;
  double low_threshold = 5.0;
  int run_a = 4;
  int run_b = 8;
};

// Number of leading intervals retained, as a pure function of the per-interval
// observed totals.
inline int truncated_length(const Eigen::VectorXd& weekly_totals, const TruncationConfig& cfg) {
  const int L = static_cast<int>(weekly_totals.size());
  if (cfg.rule == TruncationConfig::Rule::none) return L;
  int len = std::min(L, cfg.cap);
  int run = 0;
  if (cfg.rule == TruncationConfig::Rule::A) {
    for (int ell = 0; ell < len; ++ell) {
      const double y = weekly_totals[ell];
      const bool low = cfg.inclusive_threshold ? y <= cfg.low_threshold : y < cfg.low_threshold;
      run = low ? run + 1 : 0;
      if (run >= cfg.run_a) {
        len = std::max(cfg.min_weeks, ell + 1);
        break;
      }
    }
    return std::min(len, std::min(L, cfg.cap));
  }
  for (int ell = 0; ell < len; ++ell) {
    run = weekly_totals[ell] == 0.0 ? run + 1 : 0;
    if (run >= cfg.run_b) return ell + 1;
  }
  return len;
}

inline Dataset truncate_dataset(const Dataset& full, int len) {
  Dataset d = full;
  d.schedule.times.resize(len);
  d.counts = full.counts.topRows(len).eval();
  d.observed = full.observed.topRows(len).eval();
  return d;
}

struct SimulatedDataset {
  Dataset data;
  EventLog log;
  Eigen::MatrixXd true_incidence;  // full-schedule binned events, L x K
  int attempts = 1;
};

// Simulate an outbreak, sample its surveillance counts, truncate. Outbreaks
// whose true case count (events of the observed transitions over the full
// schedule) falls below min_cases are discarded and redrawn, up to `budget`
// attempts.
inline SimulatedDataset simulate_dataset(const CompartmentalModel& model,
                                         const Eigen::VectorXd& theta,
                                         const EmissionSpec& emission,
                                         const ObservationSchedule& schedule,
                                         const TruncationConfig& truncation, int min_cases,
                                         Rng& rng, int budget = 1000) {
  std::vector<int> observed_transitions;
  for (const auto& sp : emission)
    if (std::find(observed_transitions.begin(), observed_transitions.end(), sp.transition) ==
        observed_transitions.end())
      observed_transitions.push_back(sp.transition);

  const Eigen::VectorXd x0 = model.initial_volumes(theta);
  const int L = schedule.n_intervals();
  for (int attempt = 1; attempt <= budget; ++attempt) {
    EventLog log = gillespie_direct(model, x0, theta, schedule.t0, schedule.t(L), rng);
    Eigen::MatrixXd dn = bin_incidence(log, schedule);
    double total_true = 0.0;
    for (int k : observed_transitions) total_true += dn.col(k).sum();
    if (total_true < min_cases) continue;

    LatentPath path = LatentPath::zeros(L, model.n_trans(), model.n_comp());
    path.incidence = dn;
    path.valid = true;
    Dataset full = sample_observations(path, schedule, emission, theta, rng);
    const int len = truncated_length(full.counts.rowwise().sum(), truncation);
    SimulatedDataset out;
    out.data = truncate_dataset(full, len);
    out.log = std::move(log);
    out.true_incidence = std::move(dn);
    out.attempts = attempt;
    return out;
  }
  throw ResimulationBudgetExceeded("no outbreak reached " + std::to_string(min_cases) +
                                   " cases in " + std::to_string(budget) + " attempts");
}

// Largest root of pi = 1 - exp(-R0 * pi); 0 at or below the threshold R0 = 1.
inline double final_size_solve(double r0) {
  if (r0 <= 1.0) return 0.0;
  double lo = 1e-12, hi = 1.0;
  // f(pi) = pi - 1 + exp(-r0 pi) is negative just above 0 and positive at 1
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    const double f = mid - 1.0 + std::exp(-r0 * mid);
    (f < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Back-solve the effective population size from a final observed case total,
// a detection probability, and an assumed reproduction number. Matches the
// elicitation table convention total = rho * (1 - pi) * P_eff.
inline double effective_population(double r0, double rho, double total_observed) {
  const double pi = final_size_solve(r0);
  return total_observed / (rho * (1.0 - pi));
}

}  // namespace epilna
