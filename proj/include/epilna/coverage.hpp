#pragma once
// Replicated simulation-based calibration: simulate a dataset from known
// parameters, fit it, and score per-parameter interval coverage, scaled
// median absolute deviation, and scaled interval width across replicates.

#include <atomic>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "epilna/diagnostics.hpp"
#include "epilna/emission.hpp"
#include "epilna/gillespie.hpp"
#include "epilna/mcmc.hpp"
#include "epilna/model.hpp"
#include "epilna/rng.hpp"
#include "epilna/transforms.hpp"

namespace epilna {

struct CoverageScenario {
  CompartmentalModel model;
  ParameterSpace params;
  EmissionSpec emission;
  Eigen::VectorXd truth;  // full natural vector used to simulate
  TruncationConfig truncation;
  int min_cases = 15;
  int sim_budget = 1000;
};

struct CoverageOptions {
  int n_replicates = 100;
  std::uint64_t seed = 1;
  int threads = 1;
  bool redraw_truth = false;  // draw each replicate's truth from the prior
  double mass = 0.95;
};

// Natural-scale posterior draws for one simulated dataset. Swappable so the
// harness itself can be validated against an exact prior-draw "fitter".
using FitFn = std::function<Eigen::MatrixXd(const CoverageScenario&, const Dataset&,
                                            std::uint64_t fit_seed)>;

struct ReplicateResult {
  int replicate = 0;
  bool ok = false;
  std::string error;
  int dataset_weeks = 0;
  int sim_attempts = 0;
  Eigen::VectorXd truth;   // free-parameter natural truth for this replicate
  Eigen::VectorXd median;  // posterior medians, natural scale
  Eigen::VectorXd lo, hi;  // equal-tailed interval bounds
  std::vector<int> covered;
};

struct CoverageTable {
  std::vector<std::string> params;  // free-parameter names
  std::vector<ReplicateResult> replicates;
  int n_ok = 0;
  Eigen::VectorXd coverage;           // fraction of ok replicates covering truth
  Eigen::VectorXd mean_scaled_dev;    // mean |median - truth| / |truth|
  Eigen::VectorXd mean_scaled_width;  // mean (hi - lo) / |truth|
};

inline FitFn mcmc_fitter(const McmcConfig& base) {
  return [base](const CoverageScenario& sc, const Dataset& data, std::uint64_t fit_seed) {
    McmcConfig cfg = base;
    cfg.seed = fit_seed;
    MultiChainSample ms = run_chains(sc.model, sc.params, sc.emission, data, cfg);
    return ms.nat;
  };
}

namespace detail {

inline ReplicateResult run_replicate(const CoverageScenario& sc, const CoverageOptions& opt,
                                     const FitFn& fit, int r) {
  ReplicateResult out;
  out.replicate = r;
  const int d = sc.params.n_free;
  out.covered.assign(d, 0);
  try {
    Rng sim_rng = Rng::stream(opt.seed, {kStreamReplicate, static_cast<std::uint64_t>(r)});
    Eigen::VectorXd theta = sc.truth;
    if (opt.redraw_truth) theta = sc.params.to_natural(sc.params.draw_start(sim_rng, 1.0));
    out.truth = theta.head(d);

    SimulatedDataset sim = simulate_dataset(sc.model, theta, sc.emission, sc.model.schedule,
                                            sc.truncation, sc.min_cases, sim_rng, sc.sim_budget);
    out.dataset_weeks = sim.data.schedule.n_intervals();
    out.sim_attempts = sim.attempts;

    const std::uint64_t fit_seed =
        Rng::derive_seed(opt.seed, {kStreamReplicate, static_cast<std::uint64_t>(r), 1});
    Eigen::MatrixXd nat = fit(sc, sim.data, fit_seed);
    if (nat.rows() == 0 || nat.cols() != d) throw std::runtime_error("fitter returned no draws");

    out.median.resize(d);
    out.lo.resize(d);
    out.hi.resize(d);
    for (int j = 0; j < d; ++j) {
      out.median[j] = quantile(nat.col(j), 0.5);
      CredibleInterval ci = credible_interval(nat.col(j), opt.mass);
      out.lo[j] = ci.lo;
      out.hi[j] = ci.hi;
      out.covered[j] = (out.truth[j] >= ci.lo && out.truth[j] <= ci.hi) ? 1 : 0;
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace detail

inline CoverageTable coverage_harness(const CoverageScenario& sc, const CoverageOptions& opt,
                                      const FitFn& fit) {
  const int d = sc.params.n_free;
  CoverageTable table;
  table.params.assign(sc.params.names.begin(), sc.params.names.begin() + d);
  table.replicates.resize(opt.n_replicates);

  const int workers = std::max(1, std::min(opt.threads, opt.n_replicates));
  if (workers == 1) {
    for (int r = 0; r < opt.n_replicates; ++r)
      table.replicates[r] = detail::run_replicate(sc, opt, fit, r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int r = next.fetch_add(1); r < opt.n_replicates; r = next.fetch_add(1))
          table.replicates[r] = detail::run_replicate(sc, opt, fit, r);
      });
    for (auto& t : pool) t.join();
  }

  table.coverage = Eigen::VectorXd::Zero(d);
  table.mean_scaled_dev = Eigen::VectorXd::Zero(d);
  table.mean_scaled_width = Eigen::VectorXd::Zero(d);
  for (const auto& rep : table.replicates) {
    if (!rep.ok) continue;
    ++table.n_ok;
    for (int j = 0; j < d; ++j) {
      const double scale = std::abs(rep.truth[j]);
      table.coverage[j] += rep.covered[j];
      if (scale > 0) {
        table.mean_scaled_dev[j] += std::abs(rep.median[j] - rep.truth[j]) / scale;
        table.mean_scaled_width[j] += (rep.hi[j] - rep.lo[j]) / scale;
      }
    }
  }
  if (table.n_ok > 0) {
    table.coverage /= table.n_ok;
    table.mean_scaled_dev /= table.n_ok;
    table.mean_scaled_width /= table.n_ok;
  }
  return table;
}

inline CoverageTable coverage_harness(const CoverageScenario& sc, const CoverageOptions& opt,
                                      const McmcConfig& fit_cfg) {
  return coverage_harness(sc, opt, mcmc_fitter(fit_cfg));
}

inline void write_coverage_csv(std::ostream& out, const CoverageTable& t) {
  out << "parameter,coverage,mean_scaled_dev,mean_scaled_width,n_ok,n_failed\n";
  const int failed = static_cast<int>(t.replicates.size()) - t.n_ok;
  for (std::size_t j = 0; j < t.params.size(); ++j) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%d,%d\n", t.params[j].c_str(),
                  t.coverage[j], t.mean_scaled_dev[j], t.mean_scaled_width[j], t.n_ok, failed);
    out << buf;
  }
}

}  // namespace epilna
