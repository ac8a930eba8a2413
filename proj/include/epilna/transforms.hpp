#pragma once
// Estimation-scale reparameterization and priors.
//
// Natural parameters (rates, detection probabilities, overdispersions) are
// mapped to unconstrained estimation coordinates through a restricted family
// of composites: each coordinate is a signed sum of terms
//     sign * fn(coef * prod_j theta_j^{p_j} + shift),  fn in {id, log, logit}
// which covers scales like log(beta*P/mu - 1) + log(P*rho), log(omega/mu),
// logit(rho), log(1/sqrt(phi)). The family is closed under analytic
// inversion by sequential elimination: at build time we search for an
// ordering in which each coordinate isolates exactly one still-unknown
// parameter; failure is a configuration error, not a runtime surprise.
//
// Priors are densities on declared scalar quantities q_i(theta) drawn from
// the same transform family (defaulting to the estimation coordinate itself).
// The posterior kernel works on estimation coordinates, so the prior carries
// the change-of-variables term log|det dq/de| = log|det dq/dtheta| -
// log|det de/dtheta|, which vanishes exactly when q == e.

#include <Eigen/Dense>
#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "epilna/expr.hpp"
#include "epilna/rng.hpp"

namespace epilna {

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedTransform : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace detail

struct TransformTerm {
  enum class Fn { id, log, logit };
  double sign = 1.0;
  Fn fn = Fn::id;
  double coef = 1.0;
  double shift = 0.0;
  std::vector<std::pair<int, double>> powers;  // (param index, exponent)

  double inner(const double* theta) const {
    double m = coef;
    for (auto [j, p] : powers) m *= std::pow(theta[j], p);
    return m + shift;
  }

  double apply(double v) const {
    switch (fn) {
      case Fn::id: return sign * v;
      case Fn::log:
        if (!(v > 0.0)) throw DomainError("log of non-positive transform argument");
        return sign * std::log(v);
      case Fn::logit:
        if (!(v > 0.0) || !(v < 1.0)) throw DomainError("logit argument outside (0,1)");
        return sign * std::log(v / (1.0 - v));
    }
    return 0.0;
  }

  double fn_inverse(double t) const {  // value of inner from sign*fn(inner) = t
    switch (fn) {
      case Fn::id: return sign * t;
      case Fn::log: return std::exp(sign * t);
      case Fn::logit: return detail::expit(sign * t);
    }
    return 0.0;
  }

  // d term / d theta_u, given inner value v
  double dterm(const double* theta, int u, double v) const {
    double p_u = 0.0;
    for (auto [j, p] : powers)
      if (j == u) p_u += p;
    if (p_u == 0.0) return 0.0;
    const double dmono = (v - shift) * p_u / theta[u];
    switch (fn) {
      case Fn::id: return sign * dmono;
      case Fn::log: return sign * dmono / v;
      case Fn::logit: return sign * dmono / (v * (1.0 - v));
    }
    return 0.0;
  }
};

struct CoordinateTransform {
  std::string text;
  std::vector<TransformTerm> terms;

  double forward(const double* theta) const {
    double acc = 0.0;
    for (const auto& t : terms) acc += t.apply(t.inner(theta));
    return acc;
  }

  bool uses(int u) const {
    for (const auto& t : terms)
      for (auto [j, p] : t.powers)
        if (j == u && p != 0.0) return true;
    return false;
  }
};

namespace detail {

// --- pattern matching: bound expression AST -> TransformTerm list ---

inline void match_monomial(const ExprNode& n, double power, TransformTerm& out) {
  switch (n.kind) {
    case ExprNode::Kind::number:
      out.coef *= std::pow(n.value, power);
      return;
    case ExprNode::Kind::param:
      out.powers.emplace_back(n.param, power);
      return;
    case ExprNode::Kind::mul:
      match_monomial(*n.lhs, power, out);
      match_monomial(*n.rhs, power, out);
      return;
    case ExprNode::Kind::div:
      match_monomial(*n.lhs, power, out);
      match_monomial(*n.rhs, -power, out);
      return;
    case ExprNode::Kind::neg:
      out.coef *= std::pow(-1.0, power);  // only meaningful for integer powers
      match_monomial(*n.lhs, power, out);
      return;
    case ExprNode::Kind::pow: {
      if (n.rhs->kind != ExprNode::Kind::number)
        throw UnsupportedTransform("transform exponents must be numeric constants");
      match_monomial(*n.lhs, power * n.rhs->value, out);
      return;
    }
    case ExprNode::Kind::call:
      if (n.name == "sqrt") {
        match_monomial(*n.lhs, power * 0.5, out);
        return;
      }
      throw UnsupportedTransform("function '" + n.name + "' not allowed inside a transform monomial");
    default:
      throw UnsupportedTransform("transform argument must be coef * monomial + shift");
  }
}

// inner argument of a transform function: coef*monomial + constant shift
inline void match_inner(const ExprNode& n, TransformTerm& out) {
  // collect top-level sum pieces
  std::vector<std::pair<double, const ExprNode*>> pieces;
  std::vector<std::pair<double, const ExprNode*>> stack{{1.0, &n}};
  while (!stack.empty()) {
    auto [sgn, node] = stack.back();
    stack.pop_back();
    if (node->kind == ExprNode::Kind::add) {
      stack.push_back({sgn, node->lhs.get()});
      stack.push_back({sgn, node->rhs.get()});
    } else if (node->kind == ExprNode::Kind::sub) {
      stack.push_back({sgn, node->lhs.get()});
      stack.push_back({-sgn, node->rhs.get()});
    } else {
      pieces.push_back({sgn, node});
    }
  }
  const ExprNode* mono = nullptr;
  double mono_sign = 1.0;
  for (auto [sgn, node] : pieces) {
    if (node->kind == ExprNode::Kind::number) {
      out.shift += sgn * node->value;
    } else {
      if (mono) throw UnsupportedTransform("transform argument has more than one non-constant term");
      mono = node;
      mono_sign = sgn;
    }
  }
  if (!mono) throw UnsupportedTransform("transform argument carries no parameter");
  out.coef *= mono_sign;
  match_monomial(*mono, 1.0, out);
}

inline TransformTerm match_term(const ExprNode& n, double sign) {
  TransformTerm term;
  term.sign = sign;
  if (n.kind == ExprNode::Kind::call && (n.name == "log" || n.name == "logit")) {
    term.fn = n.name == "log" ? TransformTerm::Fn::log : TransformTerm::Fn::logit;
    match_inner(*n.lhs, term);
  } else {
    term.fn = TransformTerm::Fn::id;
    match_inner(n, term);
  }
  // merge duplicate parameter indices inside the monomial
  std::map<int, double> merged;
  for (auto [j, p] : term.powers) merged[j] += p;
  term.powers.assign(merged.begin(), merged.end());
  return term;
}

}  // namespace detail

inline CoordinateTransform parse_transform(const std::string& text,
                                           const std::map<std::string, int>& table) {
  ExprPtr ast = ExprParser(text).parse();
  bind_params(*ast, table);
  CoordinateTransform ct;
  ct.text = text;

  // split the top-level signed sum; bare constants become a shift folded into
  // an identity term (id(x) - 1 == id(x - 1)), which keeps quantities like
  // "R0 - 1" a single invertible term
  std::vector<std::pair<double, const ExprNode*>> pieces;
  std::vector<std::pair<double, const ExprNode*>> stack{{1.0, ast.get()}};
  while (!stack.empty()) {
    auto [sgn, node] = stack.back();
    stack.pop_back();
    if (node->kind == ExprNode::Kind::add) {
      stack.push_back({sgn, node->lhs.get()});
      stack.push_back({sgn, node->rhs.get()});
    } else if (node->kind == ExprNode::Kind::sub) {
      stack.push_back({sgn, node->lhs.get()});
      stack.push_back({-sgn, node->rhs.get()});
    } else if (node->kind == ExprNode::Kind::neg) {
      stack.push_back({-sgn, node->lhs.get()});
    } else {
      pieces.push_back({sgn, node});
    }
  }
  double const_shift = 0.0;
  int id_term = -1;
  for (auto [sgn, node] : pieces) {
    if (node->kind == ExprNode::Kind::number) {
      const_shift += sgn * node->value;
      continue;
    }
    ct.terms.push_back(detail::match_term(*node, sgn));
    if (ct.terms.back().fn == TransformTerm::Fn::id) id_term = static_cast<int>(ct.terms.size()) - 1;
  }
  if (ct.terms.empty()) throw UnsupportedTransform("transform carries no parameter");
  if (const_shift != 0.0) {
    if (id_term < 0)
      throw UnsupportedTransform("constant offset needs a plain term to absorb it in '" + text +
                                 "'");
    ct.terms[id_term].shift += const_shift * ct.terms[id_term].sign;
  }
  return ct;
}

// --- priors -----------------------------------------------------------------

struct PriorSpec {
  enum class Family { normal, lognormal, logitnormal, exponential, gamma, uniform, beta };
  Family family = Family::normal;
  double a = 0.0, b = 1.0;        // family-specific: see log_pdf
  CoordinateTransform quantity;   // scalar quantity the density is declared on

  double log_pdf(double q) const {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    constexpr double half_log_2pi = 0.91893853320467274178;
    switch (family) {
      case Family::normal:
        return -0.5 * ((q - a) / b) * ((q - a) / b) - std::log(b) - half_log_2pi;
      case Family::lognormal: {
        if (!(q > 0.0)) return neg_inf;
        const double l = std::log(q);
        return -0.5 * ((l - a) / b) * ((l - a) / b) - std::log(b) - half_log_2pi - l;
      }
      case Family::logitnormal: {
        if (!(q > 0.0) || !(q < 1.0)) return neg_inf;
        const double l = std::log(q / (1.0 - q));
        return -0.5 * ((l - a) / b) * ((l - a) / b) - std::log(b) - half_log_2pi -
               std::log(q) - std::log1p(-q);
      }
      case Family::exponential:
        if (q < 0.0) return neg_inf;
        return std::log(a) - a * q;
      case Family::gamma:
        if (!(q > 0.0)) return neg_inf;
        return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(q) - b * q;
      case Family::uniform:
        if (q < a || q > b) return neg_inf;
        return -std::log(b - a);
      case Family::beta:
        if (!(q > 0.0) || !(q < 1.0)) return neg_inf;
        return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(q) +
               (b - 1.0) * std::log1p(-q);
    }
    return neg_inf;
  }

  double draw(Rng& rng) const {
    switch (family) {
      case Family::normal: return rng.normal(a, b);
      case Family::lognormal: return std::exp(rng.normal(a, b));
      case Family::logitnormal: return detail::expit(rng.normal(a, b));
      case Family::exponential: return rng.exponential(a);
      case Family::gamma: return rng.gamma(a, b);
      case Family::uniform: return rng.uniform(a, b);
      case Family::beta: return rng.beta(a, b);
    }
    return 0.0;
  }

  double median() const {
    switch (family) {
      case Family::normal: return a;
      case Family::lognormal: return std::exp(a);
      case Family::logitnormal: return detail::expit(a);
      case Family::exponential: return std::log(2.0) / a;
      case Family::gamma: return boost::math::median(boost::math::gamma_distribution<>(a, 1.0 / b));
      case Family::uniform: return 0.5 * (a + b);
      case Family::beta: return boost::math::median(boost::math::beta_distribution<>(a, b));
    }
    return 0.0;
  }
};

inline PriorSpec::Family prior_family_from_string(const std::string& s) {
  if (s == "normal") return PriorSpec::Family::normal;
  if (s == "lognormal") return PriorSpec::Family::lognormal;
  if (s == "logitnormal") return PriorSpec::Family::logitnormal;
  if (s == "exponential") return PriorSpec::Family::exponential;
  if (s == "gamma") return PriorSpec::Family::gamma;
  if (s == "uniform") return PriorSpec::Family::uniform;
  if (s == "beta") return PriorSpec::Family::beta;
  throw std::runtime_error("unknown prior family '" + s + "'");
}

// --- parameter space ---------------------------------------------------------

struct ElimStep {
  int coord;  // coordinate used
  int term;   // term within that coordinate isolating the parameter
  int param;  // parameter solved for
};

struct ParameterSpace {
  std::vector<std::string> names;  // free parameters first, then fixed constants
  int n_free = 0;
  Eigen::VectorXd constant_values;  // size names.size() - n_free

  std::vector<std::string> est_names;
  std::vector<CoordinateTransform> est;  // one per free parameter
  std::vector<PriorSpec> priors;         // one per estimation coordinate

  std::vector<ElimStep> est_plan;
  std::optional<std::vector<ElimStep>> prior_plan;  // present when prior quantities invert

  int n_total() const { return static_cast<int>(names.size()); }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw std::runtime_error("unknown parameter '" + name + "'");
  }

  std::map<std::string, int> name_table() const {
    std::map<std::string, int> t;
    for (size_t i = 0; i < names.size(); ++i) t[names[i]] = static_cast<int>(i);
    return t;
  }

  void finalize() {
    if (static_cast<int>(est.size()) != n_free)
      throw UnsupportedTransform("need exactly one estimation coordinate per free parameter");
    if (priors.size() != est.size())
      throw UnsupportedTransform("need exactly one prior per estimation coordinate");
    est_plan = build_plan(est);
    std::vector<CoordinateTransform> prior_q;
    prior_q.reserve(priors.size());
    for (const auto& p : priors) prior_q.push_back(p.quantity);
    try {
      prior_plan = build_plan(prior_q);
    } catch (const UnsupportedTransform&) {
      prior_plan.reset();  // prior-dispersed starts unavailable; explicit inits required
    }
  }

  Eigen::VectorXd full_theta(const Eigen::VectorXd& free) const {
    Eigen::VectorXd theta(n_total());
    theta.head(n_free) = free;
    theta.tail(n_total() - n_free) = constant_values;
    return theta;
  }

  Eigen::VectorXd to_estimation(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd e(n_free);
    for (int i = 0; i < n_free; ++i) e[i] = est[i].forward(theta.data());
    return e;
  }

  Eigen::VectorXd to_natural(const Eigen::VectorXd& e) const {
    return invert(est, est_plan, e);
  }

  // log prior density of the estimation coordinates, including the
  // change-of-variables term for quantities declared off the estimation scale.
  double log_prior(const Eigen::VectorXd& e) const {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd theta;
    try {
      theta = to_natural(e);
    } catch (const DomainError&) {
      return neg_inf;
    }
    double lp = 0.0;
    bool identical = true;
    for (size_t i = 0; i < priors.size(); ++i) {
      double q;
      try {
        q = priors[i].quantity.forward(theta.data());
      } catch (const DomainError&) {
        return neg_inf;
      }
      lp += priors[i].log_pdf(q);
      if (priors[i].quantity.text != est[i].text) identical = false;
    }
    if (!std::isfinite(lp)) return neg_inf;
    if (!identical) {
      try {
        lp += log_abs_det_jacobian(priors_q(), theta) - log_abs_det_jacobian(est, theta);
      } catch (const DomainError&) {
        return neg_inf;
      }
    }
    return lp;
  }

  // Draw a starting point: independent prior draws of the declared quantities,
  // shrunk toward the prior medians, mapped back to estimation coordinates.
  Eigen::VectorXd draw_start(Rng& rng, double shrink = 4.0) const {
    if (!prior_plan)
      throw UnsupportedTransform(
          "prior quantities are not jointly invertible; supply explicit initial values");
    std::vector<CoordinateTransform> q = priors_q();
    Eigen::VectorXd qv(priors.size());
    for (size_t i = 0; i < priors.size(); ++i) {
      const double m = priors[i].median();
      qv[static_cast<int>(i)] = m + (priors[i].draw(rng) - m) / shrink;
    }
    Eigen::VectorXd theta = invert(q, *prior_plan, qv);
    return to_estimation(theta);
  }

 private:
  std::vector<CoordinateTransform> priors_q() const {
    std::vector<CoordinateTransform> q;
    q.reserve(priors.size());
    for (const auto& p : priors) q.push_back(p.quantity);
    return q;
  }

  std::vector<ElimStep> build_plan(const std::vector<CoordinateTransform>& coords) const {
    std::vector<bool> known(n_total(), false);
    for (int i = n_free; i < n_total(); ++i) known[i] = true;
    std::vector<bool> used(coords.size(), false);
    std::vector<ElimStep> plan;
    bool progress = true;
    while (progress) {
      progress = false;
      for (size_t c = 0; c < coords.size(); ++c) {
        if (used[c]) continue;
        int unknown_param = -1, unknown_term = -1, hits = 0;
        for (size_t t = 0; t < coords[c].terms.size(); ++t) {
          for (auto [j, p] : coords[c].terms[t].powers) {
            if (!known[j] && p != 0.0) {
              ++hits;
              unknown_param = j;
              unknown_term = static_cast<int>(t);
            }
          }
        }
        if (hits == 1) {
          plan.push_back({static_cast<int>(c), unknown_term, unknown_param});
          known[unknown_param] = true;
          used[c] = true;
          progress = true;
        }
      }
    }
    for (int i = 0; i < n_free; ++i)
      if (!known[i])
        throw UnsupportedTransform("no analytic elimination order solves parameter '" + names[i] +
                                   "'");
    for (size_t c = 0; c < coords.size(); ++c)
      if (!used[c])
        throw UnsupportedTransform("coordinate '" + coords[c].text +
                                   "' is redundant; transform map is not a bijection");
    return plan;
  }

  Eigen::VectorXd invert(const std::vector<CoordinateTransform>& coords,
                         const std::vector<ElimStep>& plan, const Eigen::VectorXd& values) const {
    Eigen::VectorXd theta(n_total());
    theta.setZero();
    theta.tail(n_total() - n_free) = constant_values;
    for (const auto& step : plan) {
      const CoordinateTransform& ct = coords[step.coord];
      double residual = values[step.coord];
      for (size_t t = 0; t < ct.terms.size(); ++t)
        if (static_cast<int>(t) != step.term) residual -= ct.terms[t].apply(ct.terms[t].inner(theta.data()));
      const TransformTerm& term = ct.terms[step.term];
      const double v = term.fn_inverse(residual);
      double rest = term.coef;
      double p_u = 0.0;
      for (auto [j, p] : term.powers) {
        if (j == step.param)
          p_u += p;
        else
          rest *= std::pow(theta[j], p);
      }
      const double mono = (v - term.shift) / rest;
      if (p_u == 1.0) {
        theta[step.param] = mono;
      } else {
        if (!(mono > 0.0))
          throw DomainError("cannot take fractional/negative power of non-positive value while inverting '" +
                            ct.text + "'");
        theta[step.param] = std::pow(mono, 1.0 / p_u);
      }
    }
    return theta;
  }

  double log_abs_det_jacobian(const std::vector<CoordinateTransform>& coords,
                              const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd J(coords.size(), n_free);
    for (size_t c = 0; c < coords.size(); ++c)
      for (int u = 0; u < n_free; ++u) {
        double acc = 0.0;
        for (const auto& t : coords[c].terms) {
          const double v = t.inner(theta.data());
          if (t.fn == TransformTerm::Fn::log && !(v > 0.0)) throw DomainError("jacobian: log domain");
          if (t.fn == TransformTerm::Fn::logit && (!(v > 0.0) || !(v < 1.0)))
            throw DomainError("jacobian: logit domain");
          acc += t.dterm(theta.data(), u, v);
        }
        J(static_cast<Eigen::Index>(c), u) = acc;
      }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
    double logdet = 0.0;
    for (int i = 0; i < J.rows(); ++i) {
      const double d = std::fabs(lu.matrixLU()(i, i));
      if (!(d > 0.0) || !std::isfinite(d)) throw DomainError("transform jacobian is singular");
      logdet += std::log(d);
    }
    return logdet;
  }
};

}  // namespace epilna
