#pragma once
// MCMC orchestration: chain initialization from shrunk prior draws, path
// warm-up, alternating latent/parameter updates targeting the joint posterior
//     p(theta, Z | Y)  ~  prior(theta) * N(Z; 0, I) * L(Y | path(theta, Z)),
// Robbins-Monro adaptation with a hard freeze, bracket retuning, multi-chain
// runs on split RNG streams, checkpointable chain state, and posterior
// predictive simulation.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "epilna/diagnostics.hpp"
#include "epilna/emission.hpp"
#include "epilna/lna.hpp"
#include "epilna/model.hpp"
#include "epilna/rng.hpp"
#include "epilna/samplers.hpp"
#include "epilna/transforms.hpp"

namespace epilna {

// Stream ids hung off the master seed; every consumer of randomness gets its
// own stable stream so runs are reproducible across platforms and thread counts.
constexpr std::uint64_t kStreamSimulate = 0;
constexpr std::uint64_t kStreamChain = 1;
constexpr std::uint64_t kStreamReplicate = 2;
constexpr std::uint64_t kStreamPredict = 3;

struct McmcConfig {
  int n_chains = 5;
  int n_adapt = 5000;
  int n_sample = 10000;
  int thin = 1;
  std::uint64_t seed = 1;

  bool use_ode = false;  // deterministic-limit path; no latent draws
  bool z_first = true;   // latent block before the parameter block
  int z_repeats = 1;
  int theta_repeats = 1;

  enum class Kernel { auto_select, garwm, mvnss };
  Kernel kernel = Kernel::auto_select;
  std::vector<std::vector<int>> blocks;  // proposal covariance blocks (estimation coords)

  double elliptss_omega = kTwoPi;
  int retune_at = 5000;  // iteration at which the bracket is retuned; 0 = never

  MvnssConfig mvnss;
  bool mvnss_anneal_iso = true;   // isotropic direction weight 0.001 (1 + 0.01 n)^{-0.99}
  double mvnss_iso_weight = 0.0;  // fixed weight used when annealing is off
  double garwm_target_accept = 0.234;

  OdeSolverConfig solver;
  int warmup_max = 10000;
  int start_attempts = 20;
  double start_shrink = 4.0;
  std::optional<Eigen::VectorXd> init_est;  // explicit start, estimation scale

  bool estimate_init_volumes = false;
  InitialVolumePrior init_prior;

  int checkpoint_every = 0;
  int threads = 1;
};

struct KernelStats {
  long long theta_updates = 0;
  long long theta_accepts = 0;
  long long stepouts = 0;
  long long theta_contractions = 0;
  long long z_updates = 0;
  long long z_moves = 0;
  long long z_contractions = 0;
  int warmup_iters = 0;
  int start_attempts_used = 1;
};

// Everything needed to continue a chain exactly where it stopped.
struct ChainState {
  int chain_id = 0;
  long long iteration = 0;  // completed iterations
  Eigen::VectorXd e;        // estimation-scale parameters
  Eigen::VectorXd z;        // flat latent block (path, then initial volumes)
  double log_scale = 0.0;   // random-walk scale (log of squared multiplier)
  AdaptationState adapt;
  ElliptSSState ess;
  std::array<std::uint64_t, 4> rng_state{};
  KernelStats stats;
  // retained draws so far
  std::vector<double> kept_est, kept_nat, kept_log_post;
  std::vector<long long> kept_iter;
};

struct PosteriorSample {
  int chain_id = 0;
  std::vector<std::string> est_names, nat_names;
  Eigen::MatrixXd est;       // kept x n_free, estimation scale
  Eigen::MatrixXd nat;       // kept x n_free, natural scale
  Eigen::VectorXd log_post;  // kept
  std::vector<long long> iterations;
  KernelStats stats;
  double final_omega = kTwoPi;
  double final_log_scale = 0.0;
};

struct MultiChainSample {
  std::vector<PosteriorSample> chains;
  Eigen::MatrixXd est, nat;  // concatenated
  Eigen::VectorXd log_post;
  PsrfResult psrf_est;  // on estimation-scale draws, when >= 2 chains

  int n_free() const { return static_cast<int>(est.cols()); }
};

using CheckpointFn = std::function<void(const ChainState&)>;

namespace detail {

inline Eigen::MatrixXd blocked(const Eigen::MatrixXd& cov,
                               const std::vector<std::vector<int>>& blocks) {
  if (blocks.empty()) return cov;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
  for (const auto& blk : blocks)
    for (int i : blk)
      for (int j : blk) out(i, j) = cov(i, j);
  return out;
}

// Likelihood evaluator holding the fitting-time schedule, workspaces, and the
// latent layout: z = [vec(Z path), z_x0?].
struct Target {
  const CompartmentalModel* model;
  const ParameterSpace* ps;
  const EmissionSpec* emission;
  const Dataset* data;
  const McmcConfig* cfg;
  CompartmentalModel fit_model;  // model with the dataset's schedule
  LnaWorkspace work;
  int L = 0, K = 0, C = 0;

  Target(const CompartmentalModel& m, const ParameterSpace& p, const EmissionSpec& em,
         const Dataset& d, const McmcConfig& c)
      : model(&m), ps(&p), emission(&em), data(&d), cfg(&c), fit_model(m) {
    fit_model.schedule = d.schedule;
    L = fit_model.schedule.n_intervals();
    K = fit_model.n_trans();
    C = fit_model.n_comp();
  }

  int z_dim() const {
    if (cfg->use_ode) return 0;
    return L * K + (cfg->estimate_init_volumes ? C : 0);
  }

  LatentPath path_of(const Eigen::VectorXd& theta, const CompiledRates& cr,
                     const Eigen::VectorXd& z) {
    Eigen::VectorXd x0;
    try {
      x0 = cfg->estimate_init_volumes ? cfg->init_prior.map(z.tail(C))
                                      : fit_model.initial_volumes(theta);
    } catch (const std::exception&) {
      LatentPath p = LatentPath::zeros(L, K, C);
      p.failure = LatentPath::Failure::volumes_outside;
      return p;
    }
    if (cfg->use_ode) return ode_limit_path(fit_model, cr, x0, cfg->solver, work);
    Eigen::Map<const Eigen::MatrixXd> zmat(z.data(), L, K);
    return do_lna(fit_model, cr, x0, zmat, cfg->solver, work);
  }

  double loglik(const Eigen::VectorXd& theta, const Eigen::VectorXd& z) {
    CompiledRates cr;
    try {
      cr = fit_model.compile_rates(theta);
    } catch (const std::exception&) {
      return neg_inf();
    }
    LatentPath path = path_of(theta, cr, z);
    return observed_data_loglik(*data, path, theta, *emission);
  }

  bool path_valid(const Eigen::VectorXd& theta, const CompiledRates& cr,
                  const Eigen::VectorXd& z) {
    return path_of(theta, cr, z).valid;
  }
};

}  // namespace detail

// One full chain. `resume` continues a checkpointed state; the checkpoint
// callback receives the complete chain state every cfg.checkpoint_every
// iterations (and once more at the end).
inline PosteriorSample run_chain(const CompartmentalModel& model, const ParameterSpace& ps,
                                 const EmissionSpec& emission, const Dataset& data,
                                 const McmcConfig& cfg, int chain_id,
                                 const ChainState* resume = nullptr,
                                 const CheckpointFn& checkpoint = {}) {
  if (ps.n_free < 1) throw std::invalid_argument("no free parameters to sample");
  detail::Target target(model, ps, emission, data, cfg);
  const int d = ps.n_free;
  const int zd = target.z_dim();

  const bool use_garwm = cfg.kernel == McmcConfig::Kernel::garwm ||
                         (cfg.kernel == McmcConfig::Kernel::auto_select && d <= 8);

  ChainState st;
  Rng rng = Rng::stream(cfg.seed, {kStreamChain, static_cast<std::uint64_t>(chain_id)});
  Eigen::VectorXd theta;      // natural scale, full vector
  CompiledRates cr;           // compiled at the current theta
  double cur_prior = 0.0, cur_ll = 0.0;

  if (resume) {
    st = *resume;
    rng.set_state(st.rng_state);
    theta = ps.to_natural(st.e);
    cr = target.fit_model.compile_rates(theta);
    cur_prior = ps.log_prior(st.e);
    cur_ll = target.loglik(theta, st.z);
  } else {
    st.chain_id = chain_id;
    st.adapt = use_garwm ? AdaptationState::for_garwm(d) : AdaptationState::for_mvnss(d);
    st.log_scale = 2.0 * std::log(2.38) - std::log(static_cast<double>(d));
    st.ess.omega = cfg.elliptss_omega;

    bool ready = false;
    for (int attempt = 1; attempt <= cfg.start_attempts && !ready; ++attempt) {
      st.stats.start_attempts_used = attempt;
      try {
        st.e = (cfg.init_est && attempt == 1) ? *cfg.init_est
                                              : ps.draw_start(rng, cfg.start_shrink);
        cur_prior = ps.log_prior(st.e);
        if (cur_prior == neg_inf()) continue;
        theta = ps.to_natural(st.e);
        cr = target.fit_model.compile_rates(theta);
        st.z.resize(zd);
        for (int i = 0; i < zd; ++i) st.z[i] = rng.normal();
        if (zd > 0) {
          st.stats.warmup_iters += warm_up_path(
              st.z, [&](const Eigen::VectorXd& zz) { return target.path_valid(theta, cr, zz); },
              cfg.warmup_max, rng);
        } else if (!target.path_valid(theta, cr, st.z)) {
          continue;
        }
        cur_ll = target.loglik(theta, st.z);
        if (cur_ll == neg_inf()) continue;
        ready = true;
      } catch (const WarmupFailed&) {
        continue;
      } catch (const DomainError&) {
        continue;
      }
    }
    if (!ready)
      throw WarmupFailed("chain " + std::to_string(chain_id) + ": no valid starting state in " +
                         std::to_string(cfg.start_attempts) + " attempts");
  }

  // stash filled by the parameter-block target so accepted proposals can
  // update the caches without re-evaluating
  double eval_prior = 0.0, eval_ll = 0.0;
  Eigen::VectorXd eval_theta;
  auto theta_target = [&](const Eigen::VectorXd& ee) -> double {
    double pr = ps.log_prior(ee);
    if (pr == neg_inf()) return neg_inf();
    Eigen::VectorXd th;
    try {
      th = ps.to_natural(ee);
    } catch (const DomainError&) {
      return neg_inf();
    }
    const double ll = target.loglik(th, st.z);
    if (ll == neg_inf()) return neg_inf();
    eval_prior = pr;
    eval_ll = ll;
    eval_theta = std::move(th);
    return pr + ll;
  };

  const long long total_iters = cfg.n_adapt + cfg.n_sample;
  const long long n_kept_total = (cfg.n_sample + cfg.thin - 1) / cfg.thin;
  st.kept_est.reserve(static_cast<std::size_t>(n_kept_total) * d);
  st.kept_nat.reserve(static_cast<std::size_t>(n_kept_total) * d);

  auto update_z = [&]() {
    SliceResult r = elliptss_update(
        st.z, cur_ll,
        [&](const Eigen::VectorXd& zz) {
          LatentPath p = target.path_of(theta, cr, zz);
          return observed_data_loglik(*target.data, p, theta, emission);
        },
        st.ess.omega, rng);
    st.ess.record(r);
    ++st.stats.z_updates;
    st.stats.z_contractions += r.contractions;
    if (r.moved) ++st.stats.z_moves;
  };

  auto update_theta = [&](bool adapting, long long it) {
    Eigen::MatrixXd pcov = detail::blocked(st.adapt.proposal_cov(), cfg.blocks);
    auto chol = cholesky_with_jitter(pcov);
    if (!chol) chol = Eigen::MatrixXd::Identity(d, d);
    double cur_post = cur_prior + cur_ll;
    ++st.stats.theta_updates;
    if (use_garwm) {
      GarwmResult r = garwm_update(st.e, cur_post, theta_target, *chol, st.log_scale, rng);
      if (r.accepted) {
        ++st.stats.theta_accepts;
        theta = eval_theta;
        cr = target.fit_model.compile_rates(theta);
        cur_prior = eval_prior;
        cur_ll = eval_ll;
      }
      if (adapting) {
        const double g = st.adapt.next_gamma();
        robbins_monro_adapt(st.adapt, st.e);
        st.log_scale += g * (r.alpha - cfg.garwm_target_accept);
      }
    } else {
      const double iso = adapting ? (cfg.mvnss_anneal_iso
                                         ? 0.001 * std::pow(1.0 + 0.01 * it, -0.99)
                                         : cfg.mvnss_iso_weight)
                                  : 0.0;
      MvnssResult r = mvnss_update(st.e, cur_post, theta_target, *chol, iso, cfg.mvnss, rng);
      st.stats.stepouts += r.stepouts;
      st.stats.theta_contractions += r.contractions;
      if (r.moved) {
        ++st.stats.theta_accepts;
        theta = eval_theta;
        cr = target.fit_model.compile_rates(theta);
        cur_prior = eval_prior;
        cur_ll = eval_ll;
      }
      if (adapting) robbins_monro_adapt(st.adapt, st.e);
    }
  };

  for (long long it = st.iteration + 1; it <= total_iters; ++it) {
    const bool adapting = it <= cfg.n_adapt;
    for (int pass = 0; pass < 2; ++pass) {
      const bool do_z = (pass == 0) == cfg.z_first;
      if (do_z) {
        if (zd > 0)
          for (int r = 0; r < cfg.z_repeats; ++r) update_z();
      } else {
        for (int r = 0; r < cfg.theta_repeats; ++r) update_theta(adapting, it);
      }
    }
    if (it == cfg.n_adapt) st.adapt.frozen = true;
    if (cfg.retune_at > 0 && it == cfg.retune_at && zd > 0) {
      try {
        st.ess.omega = tune_bracket(st.ess.angles);
        st.ess.angles.clear();
      } catch (const InsufficientHistory&) {
      }
    }
    if (!adapting && (it - cfg.n_adapt - 1) % cfg.thin == 0) {
      for (int i = 0; i < d; ++i) st.kept_est.push_back(st.e[i]);
      for (int i = 0; i < d; ++i) st.kept_nat.push_back(theta[i]);
      st.kept_log_post.push_back(cur_prior + cur_ll);
      st.kept_iter.push_back(it);
    }
    st.iteration = it;
    if (checkpoint && cfg.checkpoint_every > 0 &&
        (it % cfg.checkpoint_every == 0 || it == total_iters)) {
      st.rng_state = rng.state();
      checkpoint(st);
    }
  }

  PosteriorSample out;
  out.chain_id = chain_id;
  out.est_names = ps.est_names;
  out.nat_names.assign(ps.names.begin(), ps.names.begin() + d);
  const long long kept = static_cast<long long>(st.kept_log_post.size());
  out.est = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                           Eigen::RowMajor>>(st.kept_est.data(), kept, d);
  out.nat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                           Eigen::RowMajor>>(st.kept_nat.data(), kept, d);
  out.log_post = Eigen::Map<const Eigen::VectorXd>(st.kept_log_post.data(), kept);
  out.iterations = st.kept_iter;
  out.stats = st.stats;
  out.final_omega = st.ess.omega;
  out.final_log_scale = st.log_scale;
  return out;
}

// Independent chains on split streams, optionally across threads. Chains are
// deterministic functions of (seed, chain id), so the thread count never
// affects the result.
inline MultiChainSample run_chains(const CompartmentalModel& model, const ParameterSpace& ps,
                                   const EmissionSpec& emission, const Dataset& data,
                                   const McmcConfig& cfg,
                                   const std::vector<ChainState>* resume = nullptr,
                                   const CheckpointFn& checkpoint = {}) {
  MultiChainSample multi;
  multi.chains.resize(cfg.n_chains);
  std::vector<std::exception_ptr> errors(cfg.n_chains);

  auto run_one = [&](int c) {
    try {
      const ChainState* rs = nullptr;
      if (resume)
        for (const auto& s : *resume)
          if (s.chain_id == c) rs = &s;
      multi.chains[c] = run_chain(model, ps, emission, data, cfg, c, rs, checkpoint);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };

  if (cfg.threads > 1) {
    std::vector<std::thread> pool;
    for (int c = 0; c < cfg.n_chains; ++c) pool.emplace_back(run_one, c);
    for (auto& t : pool) t.join();
  } else {
    for (int c = 0; c < cfg.n_chains; ++c) run_one(c);
  }
  for (int c = 0; c < cfg.n_chains; ++c)
    if (errors[c]) {
      try {
        std::rethrow_exception(errors[c]);
      } catch (const WarmupFailed&) {
        throw;  // run_chain's message already names the chain
      } catch (const std::exception& e) {
        throw std::runtime_error("chain " + std::to_string(c) + ": " + e.what());
      }
    }

  const int d = ps.n_free;
  long long total = 0;
  for (const auto& c : multi.chains) total += c.est.rows();
  multi.est.resize(total, d);
  multi.nat.resize(total, d);
  multi.log_post.resize(total);
  long long at = 0;
  for (const auto& c : multi.chains) {
    multi.est.middleRows(at, c.est.rows()) = c.est;
    multi.nat.middleRows(at, c.nat.rows()) = c.nat;
    multi.log_post.segment(at, c.log_post.size()) = c.log_post;
    at += c.est.rows();
  }
  if (cfg.n_chains >= 2 && multi.chains[0].est.rows() >= 2) {
    std::vector<Eigen::MatrixXd> mats;
    for (const auto& c : multi.chains) mats.push_back(c.est);
    multi.psrf_est = psrf(mats);
  }
  return multi;
}

constexpr std::array<double, 7> kPredictiveLevels = {0.025, 0.10, 0.25, 0.50, 0.75, 0.90, 0.975};

struct PredictiveSummary {
  ObservationSchedule schedule;
  std::vector<std::string> series;
  // quantiles[q] is L x S at kPredictiveLevels[q]
  std::array<Eigen::MatrixXd, 7> quantiles;
  Eigen::MatrixXd rep_mean;  // L x S predictive mean
  Eigen::MatrixXd ppp;       // L x S, NaN where no observation was supplied
  int draws_used = 0;
  int draws_skipped = 0;  // posterior draws with no valid fresh-Z path
};

// Posterior predictive: for evenly thinned posterior draws, map fresh latent
// noise through the path and emission models; summarize counts pointwise and
// score observed cells by P(rep < y) + P(rep = y)/2.
inline PredictiveSummary posterior_predict(const CompartmentalModel& model,
                                           const ParameterSpace& ps, const EmissionSpec& emission,
                                           const Eigen::MatrixXd& nat_draws,
                                           const ObservationSchedule& schedule,
                                           const Dataset* data, int n_rep, Rng& rng,
                                           const McmcConfig& cfg = {}) {
  if (nat_draws.rows() == 0) throw std::invalid_argument("posterior_predict: empty posterior");
  CompartmentalModel m = model;
  m.schedule = schedule;
  const int L = schedule.n_intervals();
  const int K = m.n_trans();
  const int C = m.n_comp();
  const int S = static_cast<int>(emission.size());
  LnaWorkspace work;

  PredictiveSummary out;
  out.schedule = schedule;
  for (const auto& sp : emission) out.series.push_back(sp.name);

  std::vector<Eigen::MatrixXd> reps;
  reps.reserve(n_rep);
  for (int r = 0; r < n_rep; ++r) {
    const long long row =
        (nat_draws.rows() == 1 || n_rep == 1)
            ? 0
            : (static_cast<long long>(r) * (nat_draws.rows() - 1)) / (n_rep - 1);
    const Eigen::VectorXd theta = ps.full_theta(nat_draws.row(row).transpose());
    CompiledRates cr;
    try {
      cr = m.compile_rates(theta);
    } catch (const std::exception&) {
      ++out.draws_skipped;
      continue;
    }
    LatentPath path;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Eigen::VectorXd x0;
      try {
        if (cfg.estimate_init_volumes) {
          Eigen::VectorXd zx0(C);
          for (int i = 0; i < C; ++i) zx0[i] = rng.normal();
          x0 = cfg.init_prior.map(zx0);
        } else {
          x0 = m.initial_volumes(theta);
        }
      } catch (const std::exception&) {
        break;
      }
      if (cfg.use_ode) {
        path = ode_limit_path(m, cr, x0, cfg.solver, work);
      } else {
        Eigen::MatrixXd zmat(L, K);
        for (int i = 0; i < L; ++i)
          for (int k = 0; k < K; ++k) zmat(i, k) = rng.normal();
        path = do_lna(m, cr, x0, zmat, cfg.solver, work);
      }
      ok = path.valid;
      if (cfg.use_ode) break;  // deterministic given theta; retries change nothing
    }
    if (!ok) {
      ++out.draws_skipped;
      continue;
    }
    Dataset rep = sample_observations(path, schedule, emission, theta, rng);
    reps.push_back(rep.counts);
  }
  out.draws_used = static_cast<int>(reps.size());
  if (reps.empty()) throw std::runtime_error("posterior_predict: no valid predictive draws");

  for (auto& q : out.quantiles) q.resize(L, S);
  out.rep_mean.setZero(L, S);
  out.ppp.setConstant(L, S, std::numeric_limits<double>::quiet_NaN());
  Eigen::VectorXd cell(static_cast<int>(reps.size()));
  for (int ell = 0; ell < L; ++ell)
    for (int s = 0; s < S; ++s) {
      for (std::size_t r = 0; r < reps.size(); ++r) cell[static_cast<int>(r)] = reps[r](ell, s);
      for (std::size_t q = 0; q < kPredictiveLevels.size(); ++q)
        out.quantiles[q](ell, s) = quantile(cell, kPredictiveLevels[q]);
      out.rep_mean(ell, s) = cell.mean();
      if (data && ell < data->counts.rows() && s < data->counts.cols() && data->observed(ell, s)) {
        const double y = data->counts(ell, s);
        const double below = (cell.array() < y).count();
        const double ties = (cell.array() == y).count();
        out.ppp(ell, s) = (below + 0.5 * ties) / static_cast<double>(cell.size());
      }
    }
  return out;
}

}  // namespace epilna
