#pragma once
// JSON model configuration: compartments, gated transition rates, the
// parameter space (free/constant split, estimation-scale transforms, priors),
// the observation model, schedule, simulation settings, and fit defaults.
// Every malformed input maps to ConfigError so the CLI can fail uniformly.

#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "epilna/emission.hpp"
#include "epilna/gillespie.hpp"
#include "epilna/mcmc.hpp"
#include "epilna/model.hpp"
#include "epilna/transforms.hpp"

namespace epilna {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::string name;
  CompartmentalModel model;
  ParameterSpace params;
  EmissionSpec emission;

  bool has_truth = false;
  Eigen::VectorXd truth;  // full natural vector, used to simulate

  TruncationConfig truncation;
  int min_cases = 15;
  int sim_budget = 1000;

  McmcConfig fit;
};

namespace detail {

using nlohmann::json;

inline const json& require(const json& j, const std::string& key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(where + ": missing required key '" + key + "'");
  return *it;
}

inline ObservationSchedule parse_schedule(const json& j) {
  ObservationSchedule s;
  s.t0 = j.value("t0", 0.0);
  if (j.contains("times")) {
    s.times = j.at("times").get<std::vector<double>>();
  } else {
    const double dt = require(j, "dt", "schedule").get<double>();
    const int n = require(j, "n", "schedule").get<int>();
    for (int i = 1; i <= n; ++i) s.times.push_back(s.t0 + i * dt);
  }
  return s;
}

inline TruncationConfig parse_truncation(const json& j) {
  TruncationConfig t;
  const std::string rule = j.value("truncation", "none");
  if (rule == "A")
    t.rule = TruncationConfig::Rule::A;
  else if (rule == "B")
    t.rule = TruncationConfig::Rule::B;
  else if (rule == "none")
    t.rule = TruncationConfig::Rule::none;
  else
    throw ConfigError("simulate: unknown truncation rule '" + rule + "'");
  t.inclusive_threshold = j.value("inclusive_threshold", false);
  t.cap = j.value("cap_weeks", 52);
  t.min_weeks = j.value("min_weeks", 12);
  t.low_threshold = j.value("low_threshold", 5.0);
  return t;
}

}  // namespace detail

inline ModelConfig parse_model_config(const nlohmann::json& j) {
  using detail::require;
  ModelConfig cfg;
  cfg.name = j.value("name", "model");
  CompartmentalModel& m = cfg.model;

  // strata: either a single total population or an explicit list
  if (j.contains("population")) {
    m.strata.push_back({"pop", j.at("population").get<double>()});
  } else if (j.contains("strata")) {
    for (const auto& s : j.at("strata"))
      m.strata.push_back({require(s, "name", "strata").get<std::string>(),
                          require(s, "population", "strata").get<double>()});
  } else {
    throw ConfigError("model: need 'population' or 'strata'");
  }

  for (const auto& c : require(j, "compartments", "model")) {
    if (c.is_string()) {
      m.compartments.push_back({c.get<std::string>(), 0});
    } else {
      CompartmentSpec cs;
      cs.name = require(c, "name", "compartments").get<std::string>();
      const std::string stratum = c.value("stratum", m.strata.front().name);
      cs.stratum = -1;
      for (int i = 0; i < m.n_strata(); ++i)
        if (m.strata[i].name == stratum) cs.stratum = i;
      if (cs.stratum < 0)
        throw ConfigError("compartment '" + cs.name + "': unknown stratum '" + stratum + "'");
      m.compartments.push_back(cs);
    }
  }

  // parameter table drives every expression in the file
  const auto& pj = require(j, "parameters", "model");
  std::vector<std::string> free = require(pj, "free", "parameters").get<std::vector<std::string>>();
  ParameterSpace& ps = cfg.params;
  ps.names = free;
  ps.n_free = static_cast<int>(free.size());
  std::vector<double> cvals;
  if (pj.contains("constants"))
    for (const auto& [k, v] : pj.at("constants").items()) {
      ps.names.push_back(k);
      cvals.push_back(v.get<double>());
    }
  ps.constant_values = Eigen::Map<const Eigen::VectorXd>(cvals.data(), cvals.size());
  const std::map<std::string, int> table = ps.name_table();

  for (const auto& t : require(j, "transitions", "model")) {
    TransitionSpec tr;
    tr.name = require(t, "name", "transitions").get<std::string>();
    tr.from = m.compartment_index(require(t, "from", tr.name).get<std::string>());
    tr.to = m.compartment_index(require(t, "to", tr.name).get<std::string>());
    if (t.contains("multiplier"))
      tr.multiplier = m.compartment_index(t.at("multiplier").get<std::string>());
    const auto& r = require(t, "rate", tr.name);
    try {
      if (r.contains("constant")) tr.constant.parse(r.at("constant").get<std::string>(), table);
      if (r.contains("linear"))
        for (const auto& [comp, expr] : r.at("linear").items())
          tr.linear.emplace_back(m.compartment_index(comp),
                                 Expr(expr.get<std::string>(), table));
    } catch (const ExprError& e) {
      throw ConfigError("transition '" + tr.name + "': " + e.what());
    }
    if (tr.constant.empty() && tr.linear.empty())
      throw ConfigError("transition '" + tr.name + "': rate needs 'constant' and/or 'linear'");
    if (t.contains("gates"))
      for (const auto& g : t.at("gates")) {
        GateWindow w;
        w.on = require(g, "on", tr.name).get<double>();
        if (g.contains("off")) w.off = g.at("off").get<double>();
        tr.gates.push_back(w);
      }
    m.transitions.push_back(std::move(tr));
  }
  m.build_stoichiometry();

  const auto& x0j = require(j, "initial", "model");
  m.x0_exprs.resize(m.n_comp());
  for (const auto& [comp, expr] : x0j.items()) {
    try {
      m.x0_exprs[m.compartment_index(comp)] =
          expr.is_string() ? Expr(expr.get<std::string>(), table)
                           : Expr(std::to_string(expr.get<double>()), table);
    } catch (const ExprError& e) {
      throw ConfigError("initial['" + comp + "']: " + e.what());
    }
  }
  for (int c = 0; c < m.n_comp(); ++c)
    if (m.x0_exprs[c].empty())
      throw ConfigError("initial: missing compartment '" + m.compartments[c].name + "'");

  m.schedule = detail::parse_schedule(require(j, "schedule", "model"));
  try {
    m.validate();
  } catch (const ModelError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }

  // estimation scale + priors
  const auto est = require(pj, "estimation", "parameters").get<std::vector<std::string>>();
  if (static_cast<int>(est.size()) != ps.n_free)
    throw ConfigError("parameters: need one estimation coordinate per free parameter");
  try {
    for (const auto& text : est) {
      ps.est_names.push_back(text);
      ps.est.push_back(parse_transform(text, table));
    }
    for (const auto& pr : require(pj, "priors", "parameters")) {
      PriorSpec spec;
      spec.family = prior_family_from_string(require(pr, "family", "priors").get<std::string>());
      spec.a = require(pr, "a", "priors").get<double>();
      spec.b = pr.value("b", 1.0);
      spec.quantity = parse_transform(require(pr, "quantity", "priors").get<std::string>(), table);
      ps.priors.push_back(std::move(spec));
    }
    if (ps.priors.size() != static_cast<std::size_t>(ps.n_free))
      throw ConfigError("parameters: need one prior per free parameter");
    ps.finalize();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("parameters: ") + e.what());
  }

  if (pj.contains("start")) {
    const auto s = pj.at("start").get<std::vector<double>>();
    if (static_cast<int>(s.size()) != ps.n_free)
      throw ConfigError("parameters.start: wrong length");
    cfg.fit.init_est = Eigen::Map<const Eigen::VectorXd>(s.data(), s.size());
  }

  if (j.contains("values")) {
    Eigen::VectorXd theta(ps.n_total());
    theta.tail(ps.n_total() - ps.n_free) = ps.constant_values;
    std::vector<bool> seen(ps.n_free, false);
    for (const auto& [k, v] : j.at("values").items()) {
      const int i = ps.index_of(k);
      if (i < ps.n_free) seen[i] = true;
      theta[i] = v.get<double>();
    }
    for (int i = 0; i < ps.n_free; ++i)
      if (!seen[i]) throw ConfigError("values: missing free parameter '" + ps.names[i] + "'");
    cfg.truth = theta;
    cfg.has_truth = true;
  }

  for (const auto& o : require(j, "observation", "model")) {
    SeriesSpec sp;
    sp.name = require(o, "name", "observation").get<std::string>();
    sp.transition = m.transition_index(require(o, "transition", sp.name).get<std::string>());
    const std::string fam = o.value("family", "negbinomial");
    if (fam == "negbinomial")
      sp.family = EmissionFamily::neg_binomial;
    else if (fam == "poisson")
      sp.family = EmissionFamily::poisson;
    else
      throw ConfigError("observation '" + sp.name + "': unknown family '" + fam + "'");
    const auto& rho = require(o, "rho", sp.name);
    if (rho.is_string())
      sp.rho_param = ps.index_of(rho.get<std::string>());
    else
      sp.rho_value = rho.get<double>();
    if (sp.family == EmissionFamily::neg_binomial) {
      const auto& phi = require(o, "phi", sp.name);
      if (phi.is_string())
        sp.phi_param = ps.index_of(phi.get<std::string>());
      else
        sp.phi_value = phi.get<double>();
    }
    sp.allow_rho_above_one = o.value("allow_rho_above_one", false);
    cfg.emission.push_back(std::move(sp));
  }
  if (cfg.emission.empty()) throw ConfigError("observation: need at least one series");

  if (j.contains("simulate")) {
    const auto& sj = j.at("simulate");
    cfg.truncation = detail::parse_truncation(sj);
    cfg.min_cases = sj.value("min_cases", 15);
    cfg.sim_budget = sj.value("budget", 1000);
  }

  if (j.contains("initial_volumes")) {
    const auto& iv = j.at("initial_volumes");
    if (iv.value("estimate", false)) {
      Eigen::VectorXd fractions(m.n_comp());
      const auto& fj = require(iv, "fractions", "initial_volumes");
      for (int c = 0; c < m.n_comp(); ++c) {
        const auto& name = m.compartments[c].name;
        if (!fj.contains(name))
          throw ConfigError("initial_volumes.fractions: missing compartment '" + name + "'");
        fractions[c] = fj.at(name).get<double>();
      }
      double total = 0.0;
      for (const auto& s : m.strata) total += s.population;
      cfg.fit.estimate_init_volumes = true;
      cfg.fit.init_prior = InitialVolumePrior::multinomial(
          total, fractions, require(iv, "alpha", "initial_volumes").get<double>());
    }
  }

  if (j.contains("fit")) {
    const auto& fj = j.at("fit");
    McmcConfig& f = cfg.fit;
    f.seed = fj.value("seed", f.seed);
    f.n_chains = fj.value("chains", f.n_chains);
    f.n_adapt = fj.value("adapt", f.n_adapt);
    f.n_sample = fj.value("sample", f.n_sample);
    f.thin = fj.value("thin", f.thin);
    f.z_repeats = fj.value("z_repeats", f.z_repeats);
    f.theta_repeats = fj.value("theta_repeats", f.theta_repeats);
    f.z_first = fj.value("z_first", f.z_first);
    f.retune_at = fj.value("retune_at", f.retune_at);
    f.warmup_max = fj.value("warmup_max", f.warmup_max);
    f.start_attempts = fj.value("start_attempts", f.start_attempts);
    f.start_shrink = fj.value("start_shrink", f.start_shrink);
    f.checkpoint_every = fj.value("checkpoint_every", f.checkpoint_every);
    f.mvnss.step_out = fj.value("step_out", f.mvnss.step_out);
    f.mvnss.omega = fj.value("mvnss_omega", f.mvnss.omega);
    f.elliptss_omega = fj.value("elliptss_omega", f.elliptss_omega);
    const std::string kernel = fj.value("kernel", "auto");
    if (kernel == "auto")
      f.kernel = McmcConfig::Kernel::auto_select;
    else if (kernel == "garwm")
      f.kernel = McmcConfig::Kernel::garwm;
    else if (kernel == "mvnss")
      f.kernel = McmcConfig::Kernel::mvnss;
    else
      throw ConfigError("fit: unknown kernel '" + kernel + "'");
    if (fj.contains("blocks")) {
      for (const auto& blk : fj.at("blocks")) {
        std::vector<int> ids;
        for (const auto& name : blk) {
          const int i = ps.index_of(name.get<std::string>());
          if (i >= ps.n_free)
            throw ConfigError("fit.blocks: '" + name.get<std::string>() + "' is not free");
          ids.push_back(i);
        }
        f.blocks.push_back(std::move(ids));
      }
    }
    if (fj.contains("solver")) {
      const auto& s = fj.at("solver");
      f.solver.abs_tol = s.value("abs_tol", f.solver.abs_tol);
      f.solver.rel_tol = s.value("rel_tol", f.solver.rel_tol);
      f.solver.max_steps = s.value("max_steps", f.solver.max_steps);
    }
  }
  return cfg;
}

inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return parse_model_config(j);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace epilna
