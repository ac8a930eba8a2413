#pragma once
// Centered-parameterization benchmark sampler. The latent state is the
// log-scale path itself rather than standardized draws: each interval's
// increment vector carries a Gaussian transition density whose moments depend
// on the previous interval's end volumes, so a parameter move must fight the
// fixed path and a latent move at interval l must drag every downstream
// transition density along (O(L - l) moment integrations per evaluation).
// Exists to quantify exactly that cost against the standardized scheme; not a
// production fitting mode.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epilna/emission.hpp"
#include "epilna/lna.hpp"
#include "epilna/mcmc.hpp"
#include "epilna/model.hpp"
#include "epilna/rng.hpp"
#include "epilna/samplers.hpp"
#include "epilna/transforms.hpp"

namespace epilna {

struct CpConfig {
  int n_adapt = 50000;
  int n_sample = 50000;
  std::uint64_t seed = 1;
  OdeSolverConfig solver;
  double target_accept = 0.234;
  int start_attempts = 20;
  double start_shrink = 4.0;
  int init_retries = 100;  // per-interval rejection draws when building the first path
};

struct CpSample {
  std::vector<std::string> est_names, nat_names;
  Eigen::MatrixXd est, nat;  // kept x n_free
  Eigen::VectorXd log_post;
  KernelStats stats;
};

namespace detail {

// Per-interval Gaussian pieces of the centered target, cached so that slice
// evaluations only integrate the intervals a move actually disturbs.
struct CpCache {
  std::vector<Eigen::VectorXd> mu;    // L entries, K each
  std::vector<Eigen::MatrixXd> chol;  // lower factors of the interval covariances
  std::vector<double> logdet;
  Eigen::MatrixXd volumes;  // (L+1) x C end volumes
  bool valid = false;
};

inline double log_mvn(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                      const Eigen::MatrixXd& chol, double logdet) {
  const Eigen::VectorXd y = chol.triangularView<Eigen::Lower>().solve(x - mu);
  return -0.5 * (x.size() * std::log(kTwoPi) + logdet + y.squaredNorm());
}

}  // namespace detail

// Single chain targeting the centered posterior; parameters move by adaptive
// random-walk Metropolis, the path by per-interval elliptical slice updates
// against the conditional Gaussian at that interval.
inline CpSample run_cp_chain(const CompartmentalModel& model, const ParameterSpace& ps,
                             const EmissionSpec& emission, const Dataset& data,
                             const CpConfig& cfg) {
  const int L = data.schedule.n_intervals();
  const int K = model.n_trans();
  const int d = ps.n_free;
  if (L < 1) throw std::invalid_argument("cp: empty schedule");

  CompartmentalModel fit_model = model;
  fit_model.schedule = data.schedule;
  const ObservationSchedule& sched = fit_model.schedule;

  Rng rng = Rng::stream(cfg.seed, {kStreamChain, 0});
  LnaWorkspace work;

  // fill cache entries j0..L-1 given Ntil and volumes(j0); emission terms are
  // excluded (they do not depend on the moments)
  auto refresh = [&](detail::CpCache& c, const Eigen::MatrixXd& ntil, const CompiledRates& rates,
                     int j0) -> double {
    double lat = 0.0;
    for (int j = j0; j < L; ++j) {
      const double t0 = j == 0 ? sched.t0 : sched.times[j - 1];
      LnaMoments mom = integrate_interval(fit_model, rates, c.volumes.row(j).transpose(), t0,
                                          sched.times[j], cfg.solver, work);
      if (mom.status != OdeStatus::ok) return neg_inf();
      auto chol = cholesky_with_jitter(mom.sigma);
      if (!chol) return neg_inf();
      c.mu[j] = mom.mu;
      c.chol[j] = *chol;
      c.logdet[j] = 2.0 * chol->diagonal().array().log().sum();
      lat += detail::log_mvn(ntil.row(j).transpose(), c.mu[j], c.chol[j], c.logdet[j]);

      Eigen::VectorXd x = c.volumes.row(j).transpose();
      for (int k = 0; k < K; ++k) {
        const double dn = std::expm1(ntil(j, k));
        if (dn < -kIncrementTol) return neg_inf();
        x += fit_model.stoich.row(k).transpose() * std::max(dn, 0.0);
      }
      if (!fit_model.volumes_valid(x)) return neg_inf();
      c.volumes.row(j + 1) = x.transpose();
    }
    return lat;
  };

  auto emission_at = [&](const Eigen::MatrixXd& ntil, const Eigen::VectorXd& theta, int ell) {
    double ll = 0.0;
    for (int s = 0; s < static_cast<int>(emission.size()); ++s) {
      if (!data.observed(ell, s)) continue;
      const SeriesSpec& sp = emission[s];
      const double rho = sp.rho(theta);
      if (!sp.rho_in_domain(rho)) return neg_inf();
      const double phi = sp.phi(theta);
      if (sp.family == EmissionFamily::neg_binomial && !(phi > 0.0)) return neg_inf();
      const double dn = std::max(std::expm1(ntil(ell, sp.transition)), 0.0);
      ll += log_emission(data.counts(ell, s), dn, rho, phi, sp.family);
      if (ll == neg_inf()) return neg_inf();
    }
    return ll;
  };

  auto emission_total = [&](const Eigen::MatrixXd& ntil, const Eigen::VectorXd& theta) {
    double ll = 0.0;
    for (int ell = 0; ell < L && ll != neg_inf(); ++ell) ll += emission_at(ntil, theta, ell);
    return ll;
  };

  // ---- initialization: parameters from shrunk prior draws, then a path
  // built interval by interval with rejection against the support
  Eigen::VectorXd e;
  Eigen::VectorXd theta;
  Eigen::MatrixXd ntil(L, K);
  detail::CpCache cache;
  cache.mu.resize(L);
  cache.chol.resize(L);
  cache.logdet.resize(L);
  cache.volumes.resize(L + 1, fit_model.n_comp());

  bool ready = false;
  for (int attempt = 0; attempt < cfg.start_attempts && !ready; ++attempt) {
    try {
      e = cfg.start_shrink > 0 ? ps.draw_start(rng, cfg.start_shrink) : ps.draw_start(rng);
    } catch (const DomainError&) {
      continue;
    }
    theta = ps.to_natural(e);
    if (ps.log_prior(e) == neg_inf()) continue;
    Eigen::VectorXd x0 = fit_model.initial_volumes(theta);
    if (!fit_model.volumes_valid(x0)) continue;
    CompiledRates rates = fit_model.compile_rates(theta);
    cache.volumes.row(0) = x0.transpose();
    bool ok = true;
    for (int j = 0; j < L && ok; ++j) {
      const double t0 = j == 0 ? sched.t0 : sched.times[j - 1];
      LnaMoments mom = integrate_interval(fit_model, rates, cache.volumes.row(j).transpose(), t0,
                                          sched.times[j], cfg.solver, work);
      if (mom.status != OdeStatus::ok) {
        ok = false;
        break;
      }
      auto chol = cholesky_with_jitter(mom.sigma);
      if (!chol) {
        ok = false;
        break;
      }
      bool placed = false;
      for (int r = 0; r <= cfg.init_retries && !placed; ++r) {
        Eigen::VectorXd v(K);
        if (r < cfg.init_retries)
          for (int k = 0; k < K; ++k) v[k] = rng.normal();
        else
          v.setZero();  // drift path as the last resort
        Eigen::VectorXd cand = mom.mu + (*chol).triangularView<Eigen::Lower>() * v;
        Eigen::VectorXd x = cache.volumes.row(j).transpose();
        bool good = true;
        for (int k = 0; k < K && good; ++k) {
          const double dn = std::expm1(cand[k]);
          if (dn < -kIncrementTol) good = false;
          x += fit_model.stoich.row(k).transpose() * std::max(dn, 0.0);
        }
        if (good && fit_model.volumes_valid(x)) {
          ntil.row(j) = cand.transpose();
          cache.volumes.row(j + 1) = x.transpose();
          placed = true;
        }
      }
      if (!placed) ok = false;
    }
    if (!ok) continue;
    ready = true;
  }
  if (!ready) throw WarmupFailed("cp: no valid starting state found");

  CompiledRates rates = fit_model.compile_rates(theta);
  double lat_total = refresh(cache, ntil, rates, 0);
  if (lat_total == neg_inf()) throw WarmupFailed("cp: starting path lost validity");
  double cur_lp = ps.log_prior(e) + lat_total + emission_total(ntil, theta);

  // ---- adaptive RWM state for the parameter block
  AdaptationState adapt = AdaptationState::for_garwm(d);
  double log_scale = 2.0 * std::log(2.38) - std::log(static_cast<double>(d));
  KernelStats stats;
  const long long total_iters =
      static_cast<long long>(cfg.n_adapt) + static_cast<long long>(cfg.n_sample);
  const int keep = cfg.n_sample;

  CpSample out;
  out.est_names = ps.est_names;
  out.nat_names.assign(ps.names.begin(), ps.names.begin() + d);
  out.est.resize(keep, d);
  out.nat.resize(keep, d);
  out.log_post.resize(keep);

  detail::CpCache scratch = cache;
  Eigen::MatrixXd ntil_scratch = ntil;
  int kept = 0;

  for (long long it = 1; it <= total_iters; ++it) {
    // path sweep: one elliptical slice update per interval
    for (int ell = 0; ell < L; ++ell) {
      // whiten the current interval against its conditional Gaussian
      Eigen::VectorXd v = cache.chol[ell].triangularView<Eigen::Lower>().solve(
          ntil.row(ell).transpose() - cache.mu[ell]);
      double slice_ll = emission_at(ntil, theta, ell);
      if (slice_ll != neg_inf())
        for (int j = ell + 1; j < L; ++j)
          slice_ll += detail::log_mvn(ntil.row(j).transpose(), cache.mu[j], cache.chol[j],
                                      cache.logdet[j]);

      auto slice_fn = [&](const Eigen::VectorXd& vc) {
        ntil_scratch = ntil;
        ntil_scratch.row(ell) =
            (cache.mu[ell] + cache.chol[ell].triangularView<Eigen::Lower>() * vc).transpose();
        scratch.volumes.row(ell) = cache.volumes.row(ell);
        // moments at ell itself are conditioned on volumes(ell); only the
        // increment and everything downstream move
        scratch.mu[ell] = cache.mu[ell];
        scratch.chol[ell] = cache.chol[ell];
        scratch.logdet[ell] = cache.logdet[ell];
        Eigen::VectorXd x = cache.volumes.row(ell).transpose();
        for (int k = 0; k < K; ++k) {
          const double dn = std::expm1(ntil_scratch(ell, k));
          if (dn < -kIncrementTol) return neg_inf();
          x += fit_model.stoich.row(k).transpose() * std::max(dn, 0.0);
        }
        if (!fit_model.volumes_valid(x)) return neg_inf();
        scratch.volumes.row(ell + 1) = x.transpose();
        const double em = emission_at(ntil_scratch, theta, ell);
        if (em == neg_inf()) return neg_inf();
        const double lat = refresh(scratch, ntil_scratch, rates, ell + 1);
        if (lat == neg_inf()) return neg_inf();
        return em + lat;
      };

      SliceResult r = elliptss_update(v, slice_ll, slice_fn, kTwoPi, rng);
      ++stats.z_updates;
      stats.z_contractions += r.contractions;
      if (r.moved) {
        ++stats.z_moves;
        ntil.row(ell) = ntil_scratch.row(ell);
        for (int j = ell + 1; j < L; ++j) {
          cache.mu[j] = scratch.mu[j];
          cache.chol[j] = scratch.chol[j];
          cache.logdet[j] = scratch.logdet[j];
        }
        cache.volumes.bottomRows(L - ell) = scratch.volumes.bottomRows(L - ell);
      }
    }

    // parameter block against the full centered density at the fresh path
    double lat_cur = 0.0;
    for (int j = 0; j < L; ++j)
      lat_cur +=
          detail::log_mvn(ntil.row(j).transpose(), cache.mu[j], cache.chol[j], cache.logdet[j]);
    cur_lp = ps.log_prior(e) + lat_cur + emission_total(ntil, theta);

    auto theta_fn = [&](const Eigen::VectorXd& ec) {
      const double prior = ps.log_prior(ec);
      if (prior == neg_inf()) return neg_inf();
      Eigen::VectorXd th;
      try {
        th = ps.to_natural(ec);
      } catch (const DomainError&) {
        return neg_inf();
      }
      Eigen::VectorXd x0 = fit_model.initial_volumes(th);
      if (!fit_model.volumes_valid(x0)) return neg_inf();
      CompiledRates rc = fit_model.compile_rates(th);
      scratch.volumes.row(0) = x0.transpose();
      const double lat = refresh(scratch, ntil, rc, 0);
      if (lat == neg_inf()) return neg_inf();
      const double em = emission_total(ntil, th);
      if (em == neg_inf()) return neg_inf();
      return prior + lat + em;
    };

    Eigen::MatrixXd prop_cov = adapt.proposal_cov();
    auto chol_cov = cholesky_with_jitter(prop_cov);
    Eigen::MatrixXd chol_mat =
        chol_cov ? *chol_cov : Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d));
    GarwmResult g = garwm_update(e, cur_lp, theta_fn, chol_mat, log_scale, rng);
    ++stats.theta_updates;
    if (g.accepted) {
      ++stats.theta_accepts;
      theta = ps.to_natural(e);
      rates = fit_model.compile_rates(theta);
      if (cur_lp == neg_inf()) {
        // degenerate-ratio acceptance: the proposal evaluation bailed early,
        // so rebuild the caches from scratch instead of trusting them
        cache.volumes.row(0) = fit_model.initial_volumes(theta).transpose();
        refresh(cache, ntil, rates, 0);
      } else {
        cache.mu = scratch.mu;
        cache.chol = scratch.chol;
        cache.logdet = scratch.logdet;
        cache.volumes = scratch.volumes;
      }
    }
    if (!adapt.frozen) {
      const double gain = adapt.next_gamma();
      robbins_monro_adapt(adapt, e);
      log_scale += gain * (g.alpha - cfg.target_accept);
    }
    if (it == cfg.n_adapt) adapt.frozen = true;

    if (it > cfg.n_adapt && kept < keep) {
      out.est.row(kept) = e.transpose();
      out.nat.row(kept) = theta.head(d).transpose();
      out.log_post[kept] = cur_lp;
      ++kept;
    }
  }
  out.stats = stats;
  return out;
}

}  // namespace epilna
