#pragma once
// Adaptive embedded Runge-Kutta 5(4) integrator (Dormand-Prince pair) over a
// flat state vector. Error-controlled step selection with absolute+relative
// tolerances; failures are reported as statuses so callers can translate an
// unintegrable parameter region into a zero-likelihood evaluation instead of
// aborting a chain.

#include <Eigen/Dense>
#include <cmath>

namespace epilna {

struct OdeSolverConfig {
  double abs_tol = 1e-8;
  double rel_tol = 1e-6;
  int max_steps = 10000;          // per integrate() call
  double min_step_frac = 1e-12;   // of the interval length
};

enum class OdeStatus { ok, step_size_underflow, max_steps_exceeded, non_finite };

inline const char* to_string(OdeStatus s) {
  switch (s) {
    case OdeStatus::ok: return "ok";
    case OdeStatus::step_size_underflow: return "step_size_underflow";
    case OdeStatus::max_steps_exceeded: return "max_steps_exceeded";
    case OdeStatus::non_finite: return "non_finite";
  }
  return "?";
}

struct Rk45Workspace {
  Eigen::VectorXd k1, k2, k3, k4, k5, k6, k7, ytmp, y5;
  void resize(Eigen::Index n) {
    for (auto* v : {&k1, &k2, &k3, &k4, &k5, &k6, &k7, &ytmp, &y5}) v->resize(n);
  }
};

// RHS: void f(double t, const VectorXd& y, VectorXd& dydt)
// PostStep: void post(VectorXd& y) applied after each accepted step.
template <typename RHS, typename PostStep>
OdeStatus integrate_rk45(RHS&& f, Eigen::VectorXd& y, double t0, double t1,
                         const OdeSolverConfig& cfg, Rk45Workspace& w, PostStep&& post) {
  // Dormand-Prince 5(4) tableau
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                   b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                   e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;

  const double span = t1 - t0;
  if (!(span > 0.0)) return OdeStatus::ok;
  const double min_step = span * cfg.min_step_frac;

  w.resize(y.size());
  double t = t0;
  double h = span / 20.0;
  f(t, y, w.k1);
  bool k1_fresh = true;

  for (int step = 0; step < cfg.max_steps; ++step) {
    if (t >= t1) return OdeStatus::ok;
    if (h > t1 - t) h = t1 - t;
    if (!k1_fresh) {
      f(t, y, w.k1);
      k1_fresh = true;
    }

    w.ytmp = y + h * (a21 * w.k1);
    f(t + c2 * h, w.ytmp, w.k2);
    w.ytmp = y + h * (a31 * w.k1 + a32 * w.k2);
    f(t + c3 * h, w.ytmp, w.k3);
    w.ytmp = y + h * (a41 * w.k1 + a42 * w.k2 + a43 * w.k3);
    f(t + c4 * h, w.ytmp, w.k4);
    w.ytmp = y + h * (a51 * w.k1 + a52 * w.k2 + a53 * w.k3 + a54 * w.k4);
    f(t + c5 * h, w.ytmp, w.k5);
    w.ytmp = y + h * (a61 * w.k1 + a62 * w.k2 + a63 * w.k3 + a64 * w.k4 + a65 * w.k5);
    f(t + h, w.ytmp, w.k6);
    w.y5 = y + h * (b1 * w.k1 + b3 * w.k3 + b4 * w.k4 + b5 * w.k5 + b6 * w.k6);
    f(t + h, w.y5, w.k7);

    // A non-finite trial means the step overshot into overflow territory, not
    // that the solution blew up: reject and shrink like any failed step.
    bool bad = !w.y5.allFinite();
    double err = 0.0;
    if (!bad) {
      // scaled RMS error of the embedded 4th-order estimate
      double err2 = 0.0;
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double ei = h * (e1 * w.k1[i] + e3 * w.k3[i] + e4 * w.k4[i] + e5 * w.k5[i] +
                               e6 * w.k6[i] + e7 * w.k7[i]);
        const double sc = cfg.abs_tol + cfg.rel_tol * std::max(std::fabs(y[i]), std::fabs(w.y5[i]));
        err2 += (ei / sc) * (ei / sc);
      }
      err = std::sqrt(err2 / static_cast<double>(y.size()));
      bad = !std::isfinite(err);
    }

    if (!bad && err <= 1.0) {
      t += h;
      y = w.y5;
      post(y);
      w.k1 = w.k7;  // first-same-as-last
      k1_fresh = true;
      if (t >= t1) return OdeStatus::ok;
    } else {
      k1_fresh = true;  // k1 at (t, y) is still valid after a rejected step
    }
    const double fac = bad ? 0.2 : (err <= 0.0) ? 5.0 : 0.9 * std::pow(err, -0.2);
    h *= std::min(5.0, std::max(0.2, fac));
    if (h < min_step) return bad ? OdeStatus::non_finite : OdeStatus::step_size_underflow;
  }
  return OdeStatus::max_steps_exceeded;
}

template <typename RHS>
OdeStatus integrate_rk45(RHS&& f, Eigen::VectorXd& y, double t0, double t1,
                         const OdeSolverConfig& cfg, Rk45Workspace& w) {
  return integrate_rk45(std::forward<RHS>(f), y, t0, t1, cfg, w, [](Eigen::VectorXd&) {});
}

}  // namespace epilna
