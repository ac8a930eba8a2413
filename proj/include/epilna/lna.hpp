#pragma once
// Linear noise approximation of the transition counting process, restarted at
// each observation time.
//
// Within one inter-observation interval the cumulative transition counts N
// are approximated on the log scale Ntil = log(N + 1). Writing lambda for the
// transition rates at volumes X = x0 + A^T (exp(Ntil) - 1), the moment ODEs
//     d mu    / dt = eta(mu)            eta_i = (e^{-mu_i} - e^{-2 mu_i}/2) lambda_i
//     d Sigma / dt = F Sigma + Sigma F^T + Phi
//     F = d eta / d mu,   Phi = diag(e^{-2 mu_i} lambda_i)
// are integrated from mu = 0, Sigma = 0 (counts restart at zero, so the
// residual-mean ODE dm/dt = F m stays identically zero and m is carried only
// as a field). A latent path is then assembled interval by interval:
//     Ntil_l = mu_l + chol(Sigma_l) Z_l,   dN = exp(Ntil_l) - 1,
//     N_l = N_{l-1} + dN,                  X_l = x0 + A^T N_l,
// with validity requiring nonnegative increments and in-box volumes.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "epilna/model.hpp"
#include "epilna/ode.hpp"

namespace epilna {

struct LnaMoments {
  Eigen::VectorXd mu;     // log-scale drift at t_end
  Eigen::MatrixXd sigma;  // log-scale covariance at t_end
  Eigen::VectorXd m;      // residual mean; identically zero under restarting
  OdeStatus status = OdeStatus::ok;
};

struct LnaWorkspace {
  Rk45Workspace rk;
  Eigen::VectorXd state;            // mu ++ vec(Sigma)
  Eigen::VectorXd lam, eta, g, gp;  // per-transition scratch
  Eigen::MatrixXd dlam_dx;          // K x C
  Eigen::MatrixXd dx_dmu;           // C x K
  Eigen::MatrixXd fmat;             // K x K
  Eigen::VectorXd xvol;             // C
};

// Lower Cholesky factor with escalating diagonal jitter. Coordinates whose
// variance is exactly zero (a transition whose rate is identically zero over
// the interval, e.g. gated off) get exact zero rows/cols in the factor rather
// than jitter noise: a PSD matrix with a zero diagonal entry has a zero
// row/col, and injecting noise there would turn deterministic increments into
// invalid negative ones. Returns nullopt when the matrix is indefinite beyond
// repair.
inline std::optional<Eigen::MatrixXd> cholesky_with_jitter(const Eigen::MatrixXd& sigma) {
  const int n = static_cast<int>(sigma.rows());
  std::vector<int> active;
  active.reserve(n);
  for (int i = 0; i < n; ++i)
    if (sigma(i, i) > 0.0) active.push_back(i);
  const int m = static_cast<int>(active.size());
  if (m == 0) return Eigen::MatrixXd::Zero(n, n);

  Eigen::MatrixXd sub(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) sub(i, j) = sigma(active[i], active[j]);

  auto embed = [&](const Eigen::MatrixXd& l_sub) {
    if (m == n) return l_sub;
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j <= i; ++j) full(active[i], active[j]) = l_sub(i, j);
    return full;
  };

  Eigen::LLT<Eigen::MatrixXd> llt(sub);
  if (llt.info() == Eigen::Success) return embed(Eigen::MatrixXd(llt.matrixL()));
  const double scale = std::max(sub.trace() / m, 1.0);
  for (int k = 0; k <= 4; ++k) {
    const double jitter = std::pow(10.0, -12 + k) * scale;
    llt.compute(sub + jitter * Eigen::MatrixXd::Identity(m, m));
    if (llt.info() == Eigen::Success) return embed(Eigen::MatrixXd(llt.matrixL()));
  }
  return std::nullopt;
}

namespace detail {

// RHS of the joint (mu, Sigma) system for one restart interval.
struct MomentRhs {
  const CompiledRates* rates;
  const Eigen::MatrixXd* stoich;  // K x C
  const Eigen::VectorXd* x0;
  LnaWorkspace* w;

  void operator()(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) const {
    const int K = static_cast<int>(stoich->rows());
    const int C = static_cast<int>(stoich->cols());
    auto& ws = *w;
    dy.resize(y.size());

    // volumes implied by the log-scale drift
    ws.xvol = *x0;
    for (int k = 0; k < K; ++k) {
      const double em = std::exp(y[k]);
      ws.xvol.noalias() += stoich->row(k).transpose() * (em - 1.0);
      ws.dx_dmu.col(k) = stoich->row(k).transpose() * em;
    }

    rates->rates_and_jacobian(ws.xvol.data(), t, C, ws.lam, ws.dlam_dx);

    for (int k = 0; k < K; ++k) {
      const double e1 = std::exp(-y[k]);
      const double e2 = e1 * e1;
      ws.g[k] = e1 - 0.5 * e2;
      ws.gp[k] = -e1 + e2;
    }

    dy.head(K) = ws.g.cwiseProduct(ws.lam);  // eta

    // F = diag(gp .* lam) + diag(g) * dlam_dx * dx_dmu
    ws.fmat.noalias() = ws.dlam_dx * ws.dx_dmu;
    ws.fmat.array().colwise() *= ws.g.array();
    ws.fmat.diagonal() += ws.gp.cwiseProduct(ws.lam);

    Eigen::Map<const Eigen::MatrixXd> sig(y.data() + K, K, K);
    Eigen::Map<Eigen::MatrixXd> dsig(dy.data() + K, K, K);
    dsig.noalias() = ws.fmat * sig;
    dsig.noalias() += sig * ws.fmat.transpose();
    for (int k = 0; k < K; ++k) dsig(k, k) += std::exp(-2.0 * y[k]) * ws.lam[k];
  }
};

// RHS of the drift-only system (deterministic ODE limit).
struct DriftRhs {
  const CompiledRates* rates;
  const Eigen::MatrixXd* stoich;
  const Eigen::VectorXd* x0;
  LnaWorkspace* w;

  void operator()(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) const {
    const int K = static_cast<int>(stoich->rows());
    const int C = static_cast<int>(stoich->cols());
    auto& ws = *w;
    dy.resize(K);
    ws.xvol = *x0;
    for (int k = 0; k < K; ++k) ws.xvol.noalias() += stoich->row(k).transpose() * (std::exp(y[k]) - 1.0);
    rates->rates_and_jacobian(ws.xvol.data(), t, C, ws.lam, ws.dlam_dx);
    for (int k = 0; k < K; ++k) {
      const double e1 = std::exp(-y[k]);
      dy[k] = (e1 - 0.5 * e1 * e1) * ws.lam[k];
    }
  }
};

inline void prepare_workspace(LnaWorkspace& w, int K, int C) {
  w.lam.resize(K);
  w.eta.resize(K);
  w.g.resize(K);
  w.gp.resize(K);
  w.dlam_dx.resize(K, C);
  w.dx_dmu.resize(C, K);
  w.fmat.resize(K, K);
  w.xvol.resize(C);
}

}  // namespace detail

// Drift eta and diffusion Phi at a given log-scale state; exposed for direct
// checking against the closed forms.
inline void lna_drift_diffusion(const CompartmentalModel& model, const Eigen::VectorXd& theta,
                                const Eigen::VectorXd& x0, const Eigen::VectorXd& ntil, double t,
                                Eigen::VectorXd& eta, Eigen::MatrixXd& phi) {
  const int K = model.n_trans();
  Eigen::VectorXd x = x0;
  for (int k = 0; k < K; ++k) x += model.stoich.row(k).transpose() * (std::exp(ntil[k]) - 1.0);
  CompiledRates cr = model.compile_rates(theta);
  Eigen::VectorXd lam(K);
  for (int k = 0; k < K; ++k) lam[k] = cr.rate(k, x.data(), t);
  eta.resize(K);
  phi.setZero(K, K);
  for (int k = 0; k < K; ++k) {
    const double e1 = std::exp(-ntil[k]);
    eta[k] = (e1 - 0.5 * e1 * e1) * lam[k];
    phi(k, k) = e1 * e1 * lam[k];
  }
}

// Jacobian F = d eta / d mu, via the same analytic form the moment ODE uses.
inline Eigen::MatrixXd lna_jacobian(const CompartmentalModel& model, const Eigen::VectorXd& theta,
                                    const Eigen::VectorXd& x0, const Eigen::VectorXd& ntil,
                                    double t) {
  const int K = model.n_trans();
  const int C = model.n_comp();
  LnaWorkspace w;
  detail::prepare_workspace(w, K, C);
  CompiledRates cr = model.compile_rates(theta);
  detail::MomentRhs rhs{&cr, &model.stoich, &x0, &w};
  Eigen::VectorXd y(K + K * K), dy;
  y.setZero();
  y.head(K) = ntil;
  rhs(t, y, dy);
  return w.fmat;
}

// Integrate the restarted moment ODEs over (t_start, t_end] from volumes x0.
inline LnaMoments integrate_interval(const CompartmentalModel& model, const CompiledRates& rates,
                                     const Eigen::VectorXd& x0, double t_start, double t_end,
                                     const OdeSolverConfig& cfg, LnaWorkspace& w) {
  const int K = model.n_trans();
  detail::prepare_workspace(w, K, model.n_comp());
  w.state.setZero(K + K * K);
  detail::MomentRhs rhs{&rates, &model.stoich, &x0, &w};
  // keep Sigma numerically symmetric as it accumulates
  auto symmetrize = [K](Eigen::VectorXd& y) {
    Eigen::Map<Eigen::MatrixXd> sig(y.data() + K, K, K);
    sig = 0.5 * (sig + sig.transpose()).eval();
  };
  OdeStatus status = integrate_rk45(rhs, w.state, t_start, t_end, cfg, w.rk, symmetrize);
  LnaMoments out;
  out.status = status;
  out.mu = w.state.head(K);
  out.sigma = Eigen::Map<Eigen::MatrixXd>(w.state.data() + K, K, K);
  out.m = Eigen::VectorXd::Zero(K);
  return out;
}

inline LnaMoments integrate_interval(const CompartmentalModel& model, const Eigen::VectorXd& theta,
                                     const Eigen::VectorXd& x0, double t_start, double t_end,
                                     const OdeSolverConfig& cfg = {}) {
  CompiledRates cr = model.compile_rates(theta);
  LnaWorkspace w;
  return integrate_interval(model, cr, x0, t_start, t_end, cfg, w);
}

struct LatentPath {
  enum class Failure { none, integrator, cholesky, negative_increment, volumes_outside };

  Eigen::MatrixXd incidence;  // L x K, increments dN per interval (clamped to >= 0)
  Eigen::MatrixXd counts;     // (L+1) x K, cumulative N at t_0..t_L
  Eigen::MatrixXd volumes;    // (L+1) x C, X at t_0..t_L
  bool valid = false;
  Failure failure = Failure::none;
  OdeStatus ode_status = OdeStatus::ok;
  int failed_interval = -1;

  static LatentPath zeros(int L, int K, int C) {
    LatentPath p;
    p.incidence.setZero(L, K);
    p.counts.setZero(L + 1, K);
    p.volumes.setZero(L + 1, C);
    return p;
  }
};

constexpr double kIncrementTol = 1e-8;  // dN >= -tol accepted, then clamped to 0

// Map a latent draw Z (rows = intervals, cols = transitions) to a path.
inline LatentPath do_lna(const CompartmentalModel& model, const CompiledRates& rates,
                         const Eigen::VectorXd& x0, const Eigen::MatrixXd& Z,
                         const OdeSolverConfig& cfg, LnaWorkspace& w) {
  const int L = model.schedule.n_intervals();
  const int K = model.n_trans();
  const int C = model.n_comp();
  LatentPath path = LatentPath::zeros(L, K, C);
  path.volumes.row(0) = x0;

  if (!model.volumes_valid(x0)) {
    path.failure = LatentPath::Failure::volumes_outside;
    path.failed_interval = 0;
    return path;
  }

  Eigen::VectorXd x_prev = x0;
  Eigen::VectorXd ntil(K), dn(K);
  for (int ell = 1; ell <= L; ++ell) {
    LnaMoments mom =
        integrate_interval(model, rates, x_prev, model.schedule.t(ell - 1), model.schedule.t(ell), cfg, w);
    if (mom.status != OdeStatus::ok) {
      path.failure = LatentPath::Failure::integrator;
      path.ode_status = mom.status;
      path.failed_interval = ell;
      return path;
    }
    auto chol = cholesky_with_jitter(mom.sigma);
    if (!chol) {
      path.failure = LatentPath::Failure::cholesky;
      path.failed_interval = ell;
      return path;
    }
    ntil = mom.mu + (*chol) * Z.row(ell - 1).transpose();
    for (int k = 0; k < K; ++k) {
      dn[k] = std::expm1(ntil[k]);
      if (!(dn[k] >= -kIncrementTol) || !std::isfinite(dn[k])) {
        path.failure = LatentPath::Failure::negative_increment;
        path.failed_interval = ell;
        return path;
      }
      if (dn[k] < 0.0) dn[k] = 0.0;
    }
    path.incidence.row(ell - 1) = dn;
    path.counts.row(ell) = path.counts.row(ell - 1) + dn.transpose();
    // X = x0 + A^T N keeps the count/volume coupling exact by construction
    path.volumes.row(ell) = x0;
    path.volumes.row(ell).noalias() += path.counts.row(ell) * model.stoich;
    if (!model.volumes_valid(path.volumes.row(ell).transpose())) {
      path.failure = LatentPath::Failure::volumes_outside;
      path.failed_interval = ell;
      return path;
    }
    x_prev = path.volumes.row(ell);
  }
  path.valid = true;
  return path;
}

inline LatentPath do_lna(const CompartmentalModel& model, const Eigen::VectorXd& theta,
                         const Eigen::MatrixXd& Z, const OdeSolverConfig& cfg = {}) {
  CompiledRates cr = model.compile_rates(theta);
  LnaWorkspace w;
  return do_lna(model, cr, model.initial_volumes(theta), Z, cfg, w);
}

// Deterministic ODE limit: drift only, Sigma = 0.
inline LatentPath ode_limit_path(const CompartmentalModel& model, const CompiledRates& rates,
                                 const Eigen::VectorXd& x0, const OdeSolverConfig& cfg,
                                 LnaWorkspace& w) {
  const int L = model.schedule.n_intervals();
  const int K = model.n_trans();
  const int C = model.n_comp();
  detail::prepare_workspace(w, K, C);
  LatentPath path = LatentPath::zeros(L, K, C);
  path.volumes.row(0) = x0;

  if (!model.volumes_valid(x0)) {
    path.failure = LatentPath::Failure::volumes_outside;
    path.failed_interval = 0;
    return path;
  }

  Eigen::VectorXd x_prev = x0;
  Eigen::VectorXd dn(K);
  for (int ell = 1; ell <= L; ++ell) {
    detail::DriftRhs rhs{&rates, &model.stoich, &x_prev, &w};
    w.state.setZero(K);
    OdeStatus status =
        integrate_rk45(rhs, w.state, model.schedule.t(ell - 1), model.schedule.t(ell), cfg, w.rk);
    if (status != OdeStatus::ok) {
      path.failure = LatentPath::Failure::integrator;
      path.ode_status = status;
      path.failed_interval = ell;
      return path;
    }
    for (int k = 0; k < K; ++k) dn[k] = std::max(std::expm1(w.state[k]), 0.0);
    path.incidence.row(ell - 1) = dn;
    path.counts.row(ell) = path.counts.row(ell - 1) + dn.transpose();
    path.volumes.row(ell) = x0;
    path.volumes.row(ell).noalias() += path.counts.row(ell) * model.stoich;
    if (!model.volumes_valid(path.volumes.row(ell).transpose())) {
      path.failure = LatentPath::Failure::volumes_outside;
      path.failed_interval = ell;
      return path;
    }
    x_prev = path.volumes.row(ell);
  }
  path.valid = true;
  return path;
}

inline LatentPath ode_limit_path(const CompartmentalModel& model, const Eigen::VectorXd& theta,
                                 const OdeSolverConfig& cfg = {}) {
  CompiledRates cr = model.compile_rates(theta);
  LnaWorkspace w;
  return ode_limit_path(model, cr, model.initial_volumes(theta), cfg, w);
}

}  // namespace epilna
