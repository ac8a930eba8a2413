#pragma once
// Post-processing statistics: effective sample size via the initial monotone
// positive autocovariance sequence, univariate and multivariate potential
// scale reduction factors, quantiles, and equal-tailed credible intervals.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace epilna {

struct SeriesTooShort : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EssResult {
  double value = 0.0;
  bool degenerate = false;
};

// Effective sample size n / (1 + 2 sum rho_k), truncating the autocovariance
// sum at the initial monotone positive sequence of paired sums.
inline EssResult ess(const Eigen::VectorXd& series) {
  const int n = static_cast<int>(series.size());
  if (n < 100) throw SeriesTooShort("ess needs at least 100 draws, have " + std::to_string(n));
  Eigen::VectorXd x = series.array() - series.mean();
  const double gamma0 = x.squaredNorm() / n;
  if (gamma0 <= 0.0 || !std::isfinite(gamma0)) return {0.0, true};

  auto gamma = [&](int k) { return x.head(n - k).dot(x.tail(n - k)) / n; };
  double sum_pairs = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (int m = 0; 2 * m + 1 < n; ++m) {
    double pair = gamma(2 * m) + gamma(2 * m + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);  // enforce monotone decrease
    sum_pairs += pair;
    prev_pair = pair;
  }
  const double tau = std::max(2.0 * sum_pairs / gamma0 - 1.0, 1.0);
  return {std::min(static_cast<double>(n), n / tau), false};
}

namespace detail {

inline void check_chain_shapes(const std::vector<Eigen::MatrixXd>& chains) {
  if (chains.size() < 2) throw ShapeMismatch("psrf needs at least 2 chains");
  for (const auto& c : chains)
    if (c.rows() != chains[0].rows() || c.cols() != chains[0].cols())
      throw ShapeMismatch("psrf chains must share draw count and dimension");
  if (chains[0].rows() < 2) throw ShapeMismatch("psrf needs at least 2 draws per chain");
}

}  // namespace detail

// Univariate potential scale reduction factor, sqrt convention:
// R = sqrt(((n-1)/n W + (1 + 1/m) B/n) / W).
inline double psrf_univariate(const std::vector<Eigen::VectorXd>& chains) {
  const int m = static_cast<int>(chains.size());
  if (m < 2) throw ShapeMismatch("psrf needs at least 2 chains");
  const int n = static_cast<int>(chains[0].size());
  for (const auto& c : chains)
    if (c.size() != n) throw ShapeMismatch("psrf chains must have equal length");

  double w = 0.0, grand = 0.0;
  std::vector<double> means(m);
  for (int j = 0; j < m; ++j) {
    means[j] = chains[j].mean();
    grand += means[j] / m;
    w += (chains[j].array() - means[j]).square().sum() / (n - 1) / m;
  }
  double b_over_n = 0.0;
  for (int j = 0; j < m; ++j)
    b_over_n += (means[j] - grand) * (means[j] - grand) / (m - 1);
  if (w <= 0.0) return b_over_n <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double vhat = (n - 1.0) / n * w + (1.0 + 1.0 / m) * b_over_n;
  return std::sqrt(vhat / w);
}

struct PsrfResult {
  Eigen::VectorXd univariate;
  double multivariate = 1.0;
};

// Brooks-Gelman statistics from per-chain draw matrices (rows = iterations).
inline PsrfResult psrf(const std::vector<Eigen::MatrixXd>& chains) {
  detail::check_chain_shapes(chains);
  const int m = static_cast<int>(chains.size());
  const int n = static_cast<int>(chains[0].rows());
  const int d = static_cast<int>(chains[0].cols());

  PsrfResult res;
  res.univariate.resize(d);
  for (int p = 0; p < d; ++p) {
    std::vector<Eigen::VectorXd> cols;
    cols.reserve(m);
    for (const auto& c : chains) cols.push_back(c.col(p));
    res.univariate[p] = psrf_univariate(cols);
  }

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd bn = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd grand = Eigen::VectorXd::Zero(d);
  std::vector<Eigen::VectorXd> means(m);
  for (int j = 0; j < m; ++j) {
    means[j] = chains[j].colwise().mean();
    grand += means[j] / m;
  }
  for (int j = 0; j < m; ++j) {
    Eigen::MatrixXd centered = chains[j].rowwise() - means[j].transpose();
    w += centered.transpose() * centered / (n - 1.0) / m;
    bn += (means[j] - grand) * (means[j] - grand).transpose() / (m - 1.0);
  }
  const double ridge = 1e-12 * std::max(w.trace() / d, 1.0);
  w += ridge * Eigen::MatrixXd::Identity(d, d);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(bn, w, Eigen::EigenvaluesOnly);
  const double lambda = es.eigenvalues().maxCoeff();
  res.multivariate = std::sqrt((n - 1.0) / n + (m + 1.0) / m * lambda);
  return res;
}

// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
inline double quantile(Eigen::VectorXd sample, double q) {
  const int n = static_cast<int>(sample.size());
  std::sort(sample.data(), sample.data() + n);
  if (n == 1) return sample[0];
  const double h = (n - 1) * std::min(std::max(q, 0.0), 1.0);
  const int lo = static_cast<int>(std::floor(h));
  const int hi = std::min(lo + 1, n - 1);
  return sample[lo] + (h - lo) * (sample[hi] - sample[lo]);
}

struct CredibleInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

// Equal-tailed interval at the given mass (0.95 -> [2.5%, 97.5%] quantiles).
inline CredibleInterval credible_interval(const Eigen::VectorXd& sample, double mass = 0.95) {
  const double tail = 0.5 * (1.0 - mass);
  return {quantile(sample, tail), quantile(sample, 1.0 - tail)};
}

struct ParamSummary {
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  CredibleInterval bci95;
  double ess = 0.0;
  bool ess_degenerate = false;
};

inline ParamSummary summarize(const Eigen::VectorXd& draws) {
  ParamSummary s;
  s.mean = draws.mean();
  s.sd = std::sqrt((draws.array() - s.mean).square().sum() /
                   std::max<int>(1, static_cast<int>(draws.size()) - 1));
  s.median = quantile(draws, 0.5);
  s.bci95 = credible_interval(draws, 0.95);
  if (draws.size() >= 100) {
    EssResult e = ess(draws);
    s.ess = e.value;
    s.ess_degenerate = e.degenerate;
  }
  return s;
}

}  // namespace epilna
