#pragma once
// MCMC kernels:
//   - elliptical slice sampling on N(0, I) latent blocks (width-limited
//     bracket, zero-containing, shrinkage toward the current state),
//   - bracket-width tuning from accepted-angle spread (full width at one
//     tenth of the maximum of a fitted normal),
//   - multivariate-normal slice sampling along adapted random directions
//     with optional stepping out,
//   - global adaptive random-walk Metropolis,
//   - Robbins-Monro recursions for the empirical mean/covariance,
//   - the truncated-normal initial-volume prior map,
//   - indicator-likelihood path warm-up.
// Every kernel takes its target as a callable returning a log-density and
// mutates the state vector in place, returning per-update statistics.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "epilna/rng.hpp"

namespace epilna {

struct InsufficientHistory : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct WarmupFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AdaptationFrozen : std::logic_error {
  using std::logic_error::logic_error;
};

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

struct SliceResult {
  bool moved = false;
  double angle = 0.0;  // accepted rotation angle (0 when the update kept the current state)
  int contractions = 0;
  double loglik = 0.0;
};

// One elliptical slice update of z against `loglik`, with bracket width
// omega <= 2*pi. The bracket [-psi, omega - psi], psi ~ U(0, omega), contains
// the current state at angle 0, so shrinkage terminates: if the bracket
// collapses numerically the current state is returned unchanged (this is also
// what makes the update safe when the current log-likelihood is -inf, as in
// warm-up).
template <class LogLik>
SliceResult elliptss_update(Eigen::VectorXd& z, double& cur_ll, LogLik&& loglik, double omega,
                            Rng& rng) {
  const int n = static_cast<int>(z.size());
  Eigen::VectorXd nu(n);
  for (int i = 0; i < n; ++i) nu[i] = rng.normal();
  const double threshold = cur_ll + std::log(rng.uniform());

  const double psi = omega * rng.uniform();
  double lo = -psi, hi = omega - psi;
  SliceResult res;
  Eigen::VectorXd prop(n);
  while (true) {
    if (hi - lo < 1e-15) {
      res.loglik = cur_ll;
      return res;  // bracket collapsed onto the current state
    }
    const double phi = lo + (hi - lo) * rng.uniform();
    prop = z * std::cos(phi) + nu * std::sin(phi);
    const double ll = loglik(prop);
    if (ll > threshold) {
      z.swap(prop);
      cur_ll = ll;
      res.moved = true;
      res.angle = phi;
      res.loglik = ll;
      return res;
    }
    ++res.contractions;
    (phi < 0.0 ? lo : hi) = phi;
  }
}

// Bracket width from the spread of accepted angles: the full width at one
// tenth maximum of a normal with that standard deviation, capped at 2*pi.
inline double tune_bracket(const std::vector<double>& angles) {
  if (angles.size() < 100)
    throw InsufficientHistory("bracket tuning needs at least 100 accepted angles, have " +
                              std::to_string(angles.size()));
  double mean = 0.0;
  for (double a : angles) mean += a;
  mean /= static_cast<double>(angles.size());
  double ss = 0.0;
  for (double a : angles) ss += (a - mean) * (a - mean);
  const double sd = std::sqrt(ss / static_cast<double>(angles.size() - 1));
  return std::min(kTwoPi, 2.0 * std::sqrt(2.0 * std::log(10.0)) * sd);
}

struct ElliptSSState {
  double omega = kTwoPi;
  std::vector<double> angles;      // accepted angles since the last retune
  long long contractions = 0;      // running total
  long long updates = 0;

  void record(const SliceResult& r) {
    ++updates;
    contractions += r.contractions;
    if (r.moved) angles.push_back(r.angle);
  }
};

struct MvnssConfig {
  double omega = 2.0;        // initial bracket width along the direction
  bool step_out = true;      // grow the bracket until both ends leave the slice
  int max_stepout = 50;      // per end
  int max_contractions = 200;
};

struct MvnssResult {
  bool moved = false;
  int contractions = 0;
  int stepouts = 0;
  double loglik = 0.0;
};

// Slice sample along a random direction xi = normalize(chol_dir * z), blended
// with the isotropic direction z/|z| with weight iso_weight (annealed during
// adaptation, 0 afterwards). The bracket [-omega*u, omega*(1-u)] straddles the
// current point; both ends are stepped out while they remain inside the slice.
template <class LogDensity>
MvnssResult mvnss_update(Eigen::VectorXd& theta, double& cur_lp, LogDensity&& f,
                         const Eigen::MatrixXd& chol_dir, double iso_weight,
                         const MvnssConfig& cfg, Rng& rng) {
  const int d = static_cast<int>(theta.size());
  Eigen::VectorXd z(d);
  for (int i = 0; i < d; ++i) z[i] = rng.normal();
  Eigen::VectorXd xi = chol_dir.triangularView<Eigen::Lower>() * z;
  double nrm = xi.norm();
  if (nrm == 0.0) xi = z; else xi /= nrm;
  if (iso_weight > 0.0 && z.norm() > 0.0) {
    xi = (1.0 - iso_weight) * xi + iso_weight * (z / z.norm());
    xi /= xi.norm();
  }

  const double threshold = cur_lp + std::log(rng.uniform());
  const double u = rng.uniform();
  double lo = -cfg.omega * u;
  double hi = lo + cfg.omega;

  MvnssResult res;
  Eigen::VectorXd prop(d);
  if (cfg.step_out) {
    for (int m = 0; m < cfg.max_stepout; ++m) {
      prop = theta + lo * xi;
      if (!(f(prop) > threshold)) break;
      lo -= cfg.omega;
      ++res.stepouts;
    }
    for (int m = 0; m < cfg.max_stepout; ++m) {
      prop = theta + hi * xi;
      if (!(f(prop) > threshold)) break;
      hi += cfg.omega;
      ++res.stepouts;
    }
  }

  while (res.contractions < cfg.max_contractions && hi - lo > 1e-15 * cfg.omega) {
    const double c = lo + (hi - lo) * rng.uniform();
    prop = theta + c * xi;
    const double lp = f(prop);
    if (lp > threshold) {
      theta.swap(prop);
      cur_lp = lp;
      res.moved = true;
      res.loglik = lp;
      return res;
    }
    ++res.contractions;
    (c < 0.0 ? lo : hi) = c;
  }
  res.loglik = cur_lp;
  return res;  // kept the current state
}

struct GarwmResult {
  bool accepted = false;
  double alpha = 0.0;  // realized acceptance probability, drives scale adaptation
};

// Random-walk Metropolis with proposal covariance e^{log_scale} * L L^T.
template <class LogDensity>
GarwmResult garwm_update(Eigen::VectorXd& theta, double& cur_lp, LogDensity&& f,
                         const Eigen::MatrixXd& chol_cov, double log_scale, Rng& rng) {
  const int d = static_cast<int>(theta.size());
  Eigen::VectorXd z(d);
  for (int i = 0; i < d; ++i) z[i] = rng.normal();
  Eigen::VectorXd step = chol_cov.triangularView<Eigen::Lower>() * z;
  Eigen::VectorXd prop = theta + std::exp(0.5 * log_scale) * step;
  const double lp = f(prop);

  GarwmResult res;
  if (lp == neg_inf() && cur_lp == neg_inf())
    res.alpha = 1.0;  // degenerate ratio; keep the chain moving
  else
    res.alpha = std::min(1.0, std::exp(lp - cur_lp));
  if (rng.uniform() < res.alpha) {
    theta.swap(prop);
    cur_lp = lp;
    res.accepted = true;
  }
  return res;
}

// Robbins-Monro running mean/covariance with gain gamma_n = C (1 + p n)^{-a}.
struct AdaptationState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  long long n = 0;
  double gain_c = 1.0;
  double gain_p = 1.0;
  double gain_alpha = 2.0 / 3.0;
  double nugget = 1e-5;
  bool frozen = false;

  double gamma(long long k) const { return gain_c * std::pow(1.0 + gain_p * k, -gain_alpha); }
  double next_gamma() const { return gamma(n + 1); }

  // Covariance handed to the proposal: the nugget keeps it usable while the
  // empirical estimate is still degenerate; the frozen matrix is used as-is.
  Eigen::MatrixXd proposal_cov() const {
    if (frozen) return cov;
    return cov + nugget * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  }

  static AdaptationState for_garwm(int dim) {
    AdaptationState s;
    s.mean = Eigen::VectorXd::Zero(dim);
    s.cov = Eigen::MatrixXd::Identity(dim, dim);
    return s;  // gamma_n = (1 + n)^{-2/3}
  }
  static AdaptationState for_mvnss(int dim) {
    AdaptationState s;
    s.mean = Eigen::VectorXd::Zero(dim);
    s.cov = Eigen::MatrixXd::Identity(dim, dim);
    s.gain_c = 0.5;
    s.gain_p = 0.01;
    s.gain_alpha = 0.9;
    return s;
  }
};

// One recursion step. The deviation is taken about the pre-update mean in
// both outer-product factors, which keeps every update PSD.
inline void robbins_monro_adapt(AdaptationState& s, const Eigen::VectorXd& theta_new) {
  if (s.frozen) throw AdaptationFrozen("adaptation state is frozen");
  s.n += 1;
  const double g = s.gamma(s.n);
  const Eigen::VectorXd d = theta_new - s.mean;
  s.cov += g * (d * d.transpose() - s.cov);
  s.mean += g * d;
}

// Truncated-normal approximation of a multinomial over initial volumes:
// mean M = P p, covariance V = alpha P (diag(p) - p p^T). V annihilates the
// ones vector, so mapped draws keep the population total exactly; the map
// cleans up the residual floating-point drift and box truncation is enforced
// by the posterior's validity indicators.
struct InitialVolumePrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd sqrt_cov;  // U D^{1/2} from the SVD of cov
  double total = 0.0;

  static InitialVolumePrior multinomial(double population, const Eigen::VectorXd& fractions,
                                        double alpha) {
    InitialVolumePrior pr;
    const int c = static_cast<int>(fractions.size());
    pr.total = population;
    pr.mean = population * fractions;
    pr.cov = alpha * population *
             (Eigen::MatrixXd(fractions.asDiagonal()) - fractions * fractions.transpose());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(pr.cov, Eigen::ComputeFullU);
    pr.sqrt_cov = svd.matrixU() * svd.singularValues().cwiseSqrt().asDiagonal();
    // pin the mean's total so that map(0) returns it unchanged
    pr.mean.array() -= (pr.mean.sum() - population) / c;
    int j;
    pr.mean.maxCoeff(&j);
    pr.mean[j] += population - pr.mean.sum();
    return pr;
  }

  Eigen::VectorXd map(const Eigen::VectorXd& z) const {
    Eigen::VectorXd x = mean + sqrt_cov * z;
    x.array() -= (x.sum() - total) / static_cast<double>(x.size());
    int j;
    x.maxCoeff(&j);
    x[j] += total - x.sum();
    return x;
  }
};

// Elliptical slice updates against the indicator likelihood (0 when the
// mapped path is valid, -inf otherwise) until a valid draw is found. Returns
// the number of updates used; 0 when the input is already valid.
template <class IsValid>
int warm_up_path(Eigen::VectorXd& z, IsValid&& valid, int max_iters, Rng& rng) {
  auto indicator = [&](const Eigen::VectorXd& zz) { return valid(zz) ? 0.0 : neg_inf(); };
  double cur_ll = indicator(z);
  if (cur_ll == 0.0) return 0;
  for (int i = 1; i <= max_iters; ++i) {
    elliptss_update(z, cur_ll, indicator, kTwoPi, rng);
    if (cur_ll == 0.0) return i;
  }
  throw WarmupFailed("no valid latent path found in " + std::to_string(max_iters) +
                     " warm-up updates");
}

}  // namespace epilna
