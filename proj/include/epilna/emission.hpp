#pragma once
// Observation model: each observed series is a negative-binomial (or Poisson)
// sample of one transition's per-interval increment,
//     Y_l ~ NegBinom(mean = rho * dN_l, size = phi),  Var = mu + mu^2/phi,
// independent across series and intervals given the latent path. Missing
// cells contribute nothing to the likelihood.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "epilna/lna.hpp"
#include "epilna/model.hpp"
#include "epilna/rng.hpp"

namespace epilna {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kEmissionMeanFloor = 1e-8;  // applied only when y > 0

enum class EmissionFamily { neg_binomial, poisson };

// One observed count series. rho/phi reference entries of the natural-scale
// parameter vector; an index of -1 means the fixed fallback value is used.
struct SeriesSpec {
  std::string name;
  int transition = 0;
  EmissionFamily family = EmissionFamily::neg_binomial;
  int rho_param = -1;
  double rho_value = 1.0;
  int phi_param = -1;
  double phi_value = 1.0;
  bool allow_rho_above_one = false;  // over-reporting is outside the validated range

  double rho(const Eigen::VectorXd& theta) const {
    return rho_param >= 0 ? theta[rho_param] : rho_value;
  }
  double phi(const Eigen::VectorXd& theta) const {
    return phi_param >= 0 ? theta[phi_param] : phi_value;
  }
  bool rho_in_domain(double r) const { return r >= 0.0 && (allow_rho_above_one || r <= 1.0); }
};

using EmissionSpec = std::vector<SeriesSpec>;

struct Dataset {
  ObservationSchedule schedule;
  std::vector<std::string> series_names;
  Eigen::MatrixXd counts;                                    // L x S, integers where observed
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed;  // L x S mask

  int n_series() const { return static_cast<int>(counts.cols()); }
  int n_obs() const { return static_cast<int>(observed.count()); }

  static Dataset empty(const ObservationSchedule& sched, std::vector<std::string> names) {
    Dataset d;
    d.schedule = sched;
    d.series_names = std::move(names);
    const int L = sched.n_intervals();
    const int S = static_cast<int>(d.series_names.size());
    d.counts.setZero(L, S);
    d.observed.setConstant(L, S, false);
    return d;
  }
};

// log pmf of NegBinom with mean mu and size phi (variance mu + mu^2/phi).
inline double log_neg_binomial(double y, double mu, double phi) {
  if (y == 0.0 && mu == 0.0) return 0.0;
  if (mu <= 0.0) return kNegInf;
  const double lp = std::log(phi / (phi + mu));  // log P(success), size-phi form
  const double lq = std::log(mu / (phi + mu));
  return std::lgamma(y + phi) - std::lgamma(phi) - std::lgamma(y + 1.0) + phi * lp + y * lq;
}

inline double log_poisson(double y, double mu) {
  if (y == 0.0 && mu == 0.0) return 0.0;
  if (mu <= 0.0) return kNegInf;
  return y * std::log(mu) - mu - std::lgamma(y + 1.0);
}

// Emission log-density for one observed count. The mean floor keeps a
// numerically-zero real-valued increment from producing a -inf spike when a
// positive count was observed; an exact zero mean is kept when y = 0.
inline double log_emission(double y, double dn, double rho, double phi, EmissionFamily family) {
  double mu = rho * dn;
  if (y > 0.0 && mu < kEmissionMeanFloor) mu = kEmissionMeanFloor;
  return family == EmissionFamily::poisson ? log_poisson(y, mu) : log_neg_binomial(y, mu, phi);
}

// Full observed-data log-likelihood. Invalid paths carry zero mass (the
// support indicators), as do parameters with a detection rate outside its
// domain. Missing observations contribute 0.
inline double observed_data_loglik(const Dataset& data, const LatentPath& path,
                                   const Eigen::VectorXd& theta, const EmissionSpec& emission) {
  if (!path.valid) return kNegInf;
  double ll = 0.0;
  for (int s = 0; s < static_cast<int>(emission.size()); ++s) {
    const SeriesSpec& sp = emission[s];
    const double rho = sp.rho(theta);
    const double phi = sp.phi(theta);
    if (!sp.rho_in_domain(rho)) return kNegInf;
    if (sp.family == EmissionFamily::neg_binomial && !(phi > 0.0)) return kNegInf;
    for (int ell = 0; ell < data.counts.rows(); ++ell) {
      if (!data.observed(ell, s)) continue;
      ll += log_emission(data.counts(ell, s), path.incidence(ell, sp.transition), rho, phi,
                         sp.family);
      if (ll == kNegInf) return kNegInf;
    }
  }
  return ll;
}

inline double sample_emission(double dn, double rho, double phi, EmissionFamily family, Rng& rng) {
  const double mu = rho * dn;
  if (mu <= 0.0) return 0.0;
  return family == EmissionFamily::poisson ? static_cast<double>(rng.poisson(mu))
                                           : static_cast<double>(rng.neg_binomial(mu, phi));
}

// Draw a complete synthetic dataset from a valid latent path.
inline Dataset sample_observations(const LatentPath& path, const ObservationSchedule& schedule,
                                   const EmissionSpec& emission, const Eigen::VectorXd& theta,
                                   Rng& rng) {
  std::vector<std::string> names;
  names.reserve(emission.size());
  for (const auto& sp : emission) names.push_back(sp.name);
  Dataset d = Dataset::empty(schedule, std::move(names));
  for (int s = 0; s < static_cast<int>(emission.size()); ++s) {
    const SeriesSpec& sp = emission[s];
    const double rho = sp.rho(theta);
    const double phi = sp.phi(theta);
    for (int ell = 0; ell < d.counts.rows(); ++ell) {
      d.counts(ell, s) = sample_emission(path.incidence(ell, sp.transition), rho, phi, sp.family, rng);
      d.observed(ell, s) = true;
    }
  }
  return d;
}

}  // namespace epilna
