// Command-line front end: simulate / fit / predict / validate. Every command
// is a deterministic function of (config file, flags, seed); manifests record
// the config hash so resumed runs can refuse a changed configuration.
//
// Exit codes: 0 ok, 2 config or input parse failure, 3 simulation budget
// exhausted, 4 no valid MCMC starting state, 5 checkpoint mismatch,
// 6 moment-validation failure, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "epilna/coverage.hpp"
#include "epilna/io.hpp"
#include "epilna/mcmc.hpp"
#include "epilna/model_config.hpp"

namespace {

using namespace epilna;

constexpr int kExitConfig = 2;
constexpr int kExitBudget = 3;
constexpr int kExitWarmup = 4;
constexpr int kExitCheckpoint = 5;
constexpr int kExitValidation = 6;

struct CommonArgs {
  std::string model_path;
  std::string params_path;
  std::uint64_t seed = 1;
  bool seed_given = false;
};

// override truth values from a flat {"name": value} JSON file
Eigen::VectorXd truth_from_params_file(const ModelConfig& cfg, const std::string& path) {
  nlohmann::json j;
  {
    auto in = std::ifstream(path);
    if (!in) throw ConfigError("cannot open params file '" + path + "'");
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  const ParameterSpace& ps = cfg.params;
  Eigen::VectorXd theta(ps.n_total());
  theta.tail(ps.n_total() - ps.n_free) = ps.constant_values;
  if (cfg.has_truth) theta = cfg.truth;
  std::vector<bool> seen(ps.n_free, cfg.has_truth);
  for (const auto& [k, v] : j.items()) {
    const int i = ps.index_of(k);
    if (i < ps.n_free) seen[i] = true;
    theta[i] = v.get<double>();
  }
  for (int i = 0; i < ps.n_free; ++i)
    if (!seen[i])
      throw ConfigError("params: no value for free parameter '" + ps.names[i] + "'");
  return theta;
}

Eigen::VectorXd require_truth(const ModelConfig& cfg, const std::string& params_path) {
  if (!params_path.empty()) return truth_from_params_file(cfg, params_path);
  if (cfg.has_truth) return cfg.truth;
  throw ConfigError("no parameter values: add a \"values\" block or pass --params");
}

std::string run_hash(const std::string& model_path, const std::string& params_path,
                     const std::string& overrides) {
  std::string bytes = read_file(model_path);
  if (!params_path.empty()) bytes += "\x1f" + read_file(params_path);
  bytes += "\x1f" + overrides;
  return hex_u64(fnv1a(bytes));
}

nlohmann::json base_manifest(const std::string& command, const std::string& hash,
                             std::uint64_t seed, const ModelConfig& cfg) {
  nlohmann::json m;
  m["command"] = command;
  m["config_hash"] = hash;
  m["seed"] = seed;
  m["model"] = cfg.name;
  m["n_free_parameters"] = cfg.params.n_free;
  return m;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonArgs& a, const std::string& trunc_flag, const std::string& out) {
  ModelConfig cfg = load_model_config(a.model_path);
  const Eigen::VectorXd truth = require_truth(cfg, a.params_path);
  TruncationConfig trunc = cfg.truncation;
  if (trunc_flag == "A")
    trunc.rule = TruncationConfig::Rule::A;
  else if (trunc_flag == "B")
    trunc.rule = TruncationConfig::Rule::B;
  else if (trunc_flag == "none")
    trunc.rule = TruncationConfig::Rule::none;

  const std::string hash =
      run_hash(a.model_path, a.params_path,
               "simulate;seed=" + std::to_string(a.seed) + ";truncation=" + trunc_flag);

  Rng rng = Rng::stream(a.seed, {kStreamSimulate});
  SimulatedDataset sim = simulate_dataset(cfg.model, truth, cfg.emission, cfg.model.schedule,
                                          trunc, cfg.min_cases, rng, cfg.sim_budget);

  write_dataset_csv(out + "_data.csv", sim.data);
  {
    auto f = detail::open_out(out + "_events.csv");
    write_events_csv(f, sim.log, cfg.model);
  }
  {
    auto f = detail::open_out(out + "_true_incidence.csv");
    f << "time";
    for (const auto& tr : cfg.model.transitions) f << ',' << tr.name;
    f << '\n';
    for (int ell = 0; ell < sim.true_incidence.rows(); ++ell) {
      f << fmt_g17(cfg.model.schedule.times[ell]);
      for (int k = 0; k < sim.true_incidence.cols(); ++k)
        f << ',' << fmt_count(sim.true_incidence(ell, k));
      f << '\n';
    }
  }

  nlohmann::json m = base_manifest("simulate", hash, a.seed, cfg);
  m["attempts"] = sim.attempts;
  m["weeks"] = sim.data.schedule.n_intervals();
  m["observed_total"] = sim.data.counts.sum();
  m["outputs"] = {out + "_data.csv", out + "_events.csv", out + "_true_incidence.csv"};
  write_manifest(out + "_manifest.json", m);

  std::cout << "simulated " << sim.data.schedule.n_intervals() << " weeks ("
            << sim.attempts << (sim.attempts == 1 ? " attempt, " : " attempts, ")
            << fmt_count(sim.data.counts.sum()) << " observed cases) -> " << out << "_*\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string data_path, method = "lna", checkpoint_dir, out;
  int chains = -1, adapt = -1, sample = -1, thin = -1, threads = -1;
  bool resume = false;
};

int cmd_fit(const CommonArgs& a, const FitArgs& fa) {
  ModelConfig cfg = load_model_config(a.model_path);
  Dataset data = read_dataset_csv(fa.data_path);
  {
    std::vector<std::string> want;
    for (const auto& sp : cfg.emission) want.push_back(sp.name);
    if (data.series_names != want)
      throw ConfigError("dataset series do not match the model's observation block");
  }

  McmcConfig& fit = cfg.fit;
  fit.use_ode = fa.method == "ode";
  if (fa.chains > 0) fit.n_chains = fa.chains;
  if (fa.adapt >= 0) fit.n_adapt = fa.adapt;
  if (fa.sample > 0) fit.n_sample = fa.sample;
  if (fa.thin > 0) fit.thin = fa.thin;
  if (fa.threads > 0) fit.threads = fa.threads;
  if (a.seed_given) fit.seed = a.seed;

  std::ostringstream ov;
  ov << "fit;method=" << fa.method << ";chains=" << fit.n_chains << ";adapt=" << fit.n_adapt
     << ";sample=" << fit.n_sample << ";thin=" << fit.thin << ";seed=" << fit.seed;
  const std::string hash = run_hash(a.model_path, "", ov.str());

  CheckpointFn checkpoint;
  std::vector<ChainState> resumed;
  if (!fa.checkpoint_dir.empty()) {
    std::filesystem::create_directories(fa.checkpoint_dir);
    if (fit.checkpoint_every <= 0) fit.checkpoint_every = 1000;
    checkpoint = [dir = fa.checkpoint_dir, hash](const ChainState& st) {
      write_checkpoint(dir + "/chain_" + std::to_string(st.chain_id) + ".json", st, hash);
    };
    if (fa.resume) {
      for (int c = 0; c < fit.n_chains; ++c) {
        const std::string path = fa.checkpoint_dir + "/chain_" + std::to_string(c) + ".json";
        if (std::filesystem::exists(path)) resumed.push_back(read_checkpoint(path, hash));
      }
    }
  } else if (fa.resume) {
    throw ConfigError("--resume needs --checkpoint <dir>");
  }

  MultiChainSample ms = run_chains(cfg.model, cfg.params, cfg.emission, data, fit,
                                   resumed.empty() ? nullptr : &resumed, checkpoint);

  {
    auto f = detail::open_out(fa.out + "_posterior.csv");
    write_posterior_csv(f, ms);
  }
  {
    auto f = detail::open_out(fa.out + "_diagnostics.csv");
    write_diagnostics_csv(f, ms);
  }

  nlohmann::json m = base_manifest("fit", hash, fit.seed, cfg);
  m["method"] = fa.method;
  m["chains"] = fit.n_chains;
  m["adapt"] = fit.n_adapt;
  m["sample"] = fit.n_sample;
  m["thin"] = fit.thin;
  m["kept_draws"] = ms.est.rows();
  if (fit.n_chains >= 2 && ms.psrf_est.univariate.size() > 0) {
    m["max_univariate_psrf"] = ms.psrf_est.univariate.maxCoeff();
    m["multivariate_psrf"] = ms.psrf_est.multivariate;
  }
  nlohmann::json per_chain = nlohmann::json::array();
  for (const auto& c : ms.chains) {
    nlohmann::json cj = stats_json(c.stats);
    cj["chain"] = c.chain_id;
    cj["accept_rate"] = c.stats.theta_updates > 0 ? static_cast<double>(c.stats.theta_accepts) /
                                                        static_cast<double>(c.stats.theta_updates)
                                                  : 0.0;
    cj["final_bracket"] = c.final_omega;
    cj["final_log_scale"] = c.final_log_scale;
    per_chain.push_back(cj);
  }
  m["chains_detail"] = per_chain;
  m["outputs"] = {fa.out + "_posterior.csv", fa.out + "_diagnostics.csv"};
  write_manifest(fa.out + "_manifest.json", m);

  std::cout << "fit complete: " << ms.est.rows() << " draws from " << fit.n_chains
            << " chains -> " << fa.out << "_*\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_predict(const CommonArgs& a, const std::string& posterior_path,
                const std::string& data_path, int draws, const std::string& out) {
  ModelConfig cfg = load_model_config(a.model_path);
  PosteriorCsv post;
  {
    auto f = detail::open_in(posterior_path);
    post = read_posterior_csv(f);
  }
  std::vector<std::string> free(cfg.params.names.begin(),
                                cfg.params.names.begin() + cfg.params.n_free);
  Eigen::MatrixXd nat = natural_draws(post, free);

  Dataset data;
  const bool have_data = !data_path.empty();
  if (have_data) {
    data = read_dataset_csv(data_path);
    cfg.model.schedule = data.schedule;  // score exactly the observed horizon
  }

  Rng rng = Rng::stream(a.seed, {kStreamPredict});
  McmcConfig pc = cfg.fit;
  PredictiveSummary pp = posterior_predict(cfg.model, cfg.params, cfg.emission, nat,
                                           cfg.model.schedule, have_data ? &data : nullptr, draws,
                                           rng, pc);

  {
    auto f = detail::open_out(out + "_predictive.csv");
    f << "time,series,q2.5,q10,q25,q50,q75,q90,q97.5,ppp\n";
    for (int ell = 0; ell < pp.schedule.n_intervals(); ++ell)
      for (std::size_t s = 0; s < pp.series.size(); ++s) {
        f << fmt_g17(pp.schedule.times[ell]) << ',' << pp.series[s];
        for (const auto& q : pp.quantiles) f << ',' << fmt_count(q(ell, static_cast<int>(s)));
        f << ',';
        const double ppp = pp.ppp(ell, static_cast<int>(s));
        if (!std::isnan(ppp)) f << fmt_g17(ppp);
        f << '\n';
      }
  }

  const std::string hash = run_hash(a.model_path, "",
                                    "predict;seed=" + std::to_string(a.seed) +
                                        ";draws=" + std::to_string(draws));
  nlohmann::json m = base_manifest("predict", hash, a.seed, cfg);
  m["posterior_rows"] = static_cast<long long>(post.iteration.size());
  m["draws_used"] = pp.draws_used;
  m["draws_skipped"] = pp.draws_skipped;
  m["outputs"] = {out + "_predictive.csv"};
  write_manifest(out + "_manifest.json", m);

  std::cout << "predictive summary from " << pp.draws_used << " draws -> " << out
            << "_predictive.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Per-interval moment check: along the deterministic drift path, compare the
// implied incidence mean/variance of each transition against Monte Carlo
// moments of exact stochastic simulations started from the same volumes.

int cmd_validate(const CommonArgs& a, int replicates) {
  ModelConfig cfg = load_model_config(a.model_path);
  const Eigen::VectorXd truth = require_truth(cfg, a.params_path);
  const CompartmentalModel& model = cfg.model;
  const ObservationSchedule& sched = model.schedule;
  const int L = sched.n_intervals();
  const int K = model.n_trans();

  CompiledRates rates = model.compile_rates(truth);
  LnaWorkspace work;
  Eigen::VectorXd x0 = model.initial_volumes(truth);
  LatentPath drift = ode_limit_path(model, rates, x0, cfg.fit.solver, work);
  if (!drift.valid) {
    std::cerr << "validate: deterministic path invalid (interval " << drift.failed_interval
              << ")\n";
    return kExitValidation;
  }

  bool all_ok = true;
  for (int ell = 0; ell < L; ++ell) {
    const double t0 = ell == 0 ? sched.t0 : sched.times[ell - 1];
    const double t1 = sched.times[ell];
    Eigen::VectorXd xs = drift.volumes.row(ell).transpose().array().round().max(0.0);

    LnaMoments mom = integrate_interval(model, rates, xs, t0, t1, cfg.fit.solver, work);
    if (mom.status != OdeStatus::ok) {
      std::cout << "interval " << ell + 1 << ": FAIL (moment integration failed)\n";
      all_ok = false;
      continue;
    }

    // Monte Carlo moments of per-transition event counts over the interval
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(K), sumsq = Eigen::VectorXd::Zero(K);
    for (int r = 0; r < replicates; ++r) {
      Rng rng = Rng::stream(a.seed, {kStreamSimulate, static_cast<std::uint64_t>(ell),
                                     static_cast<std::uint64_t>(r)});
      EventLog log = gillespie_direct(model, xs, truth, t0, t1, rng);
      Eigen::VectorXd n = Eigen::VectorXd::Zero(K);
      for (int ev : log.events) n[ev] += 1.0;
      sum += n;
      sumsq += n.cwiseProduct(n);
    }
    const double R = replicates;
    Eigen::VectorXd mc_mean = sum / R;
    Eigen::VectorXd mc_var = (sumsq - sum.cwiseProduct(sum) / R) / (R - 1.0);

    bool ok = true;
    std::ostringstream detail_line;
    for (int k = 0; k < K; ++k) {
      // lognormal incidence moments implied by the interval Gaussian
      const double m = std::expm1(mom.mu[k] + 0.5 * mom.sigma(k, k));
      const double v = std::expm1(mom.sigma(k, k)) *
                       std::exp(2.0 * mom.mu[k] + mom.sigma(k, k));
      const double se = std::sqrt(mc_var[k] / R);
      const bool mean_ok = std::abs(m - mc_mean[k]) <= 3.0 * se + 1e-6;
      const bool var_ok = mc_var[k] > 1.0 ? std::abs(v - mc_var[k]) <= 0.15 * mc_var[k]
                                          : std::abs(v - mc_var[k]) <= 1.0;
      if (!(mean_ok && var_ok)) ok = false;
      detail_line << ' ' << model.transitions[k].name << " mean " << std::abs(m - mc_mean[k])
                  << "<=" << 3.0 * se + 1e-6 << (mean_ok ? " ok" : " FAIL") << " var "
                  << (mc_var[k] > 1.0 ? std::abs(v - mc_var[k]) / mc_var[k] : std::abs(v - mc_var[k]))
                  << (var_ok ? " ok" : " FAIL") << ';';
    }
    std::cout << "interval " << ell + 1 << " (" << t0 << "," << t1 << "]: "
              << (ok ? "pass" : "FAIL") << detail_line.str() << '\n';
    if (!ok) all_ok = false;
  }
  return all_ok ? 0 : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic epidemic model simulation and inference"};
  app.require_subcommand(1);

  CommonArgs common;
  FitArgs fit_args;
  std::string trunc_flag, out_prefix, posterior_path, data_path;
  int draws = 1000, replicates = 1000;

  auto add_common = [&](CLI::App* cmd, bool with_params) {
    cmd->add_option("--model", common.model_path, "model configuration JSON")->required();
    if (with_params)
      cmd->add_option("--params", common.params_path, "parameter values JSON (name -> value)");
    cmd->add_option("--seed", common.seed, "master seed")->each([&](const std::string&) {
      common.seed_given = true;
    });
  };

  CLI::App* sim = app.add_subcommand("simulate", "draw a synthetic outbreak and dataset");
  add_common(sim, true);
  sim->add_option("--truncation", trunc_flag, "override the truncation rule")
      ->check(CLI::IsMember({"A", "B", "none"}));
  sim->add_option("--out", out_prefix, "output file prefix")->required();

  CLI::App* fit = app.add_subcommand("fit", "run MCMC on an observed dataset");
  add_common(fit, false);
  fit->add_option("--data", fit_args.data_path, "dataset CSV")->required();
  fit->add_option("--method", fit_args.method, "latent path treatment")
      ->check(CLI::IsMember({"lna", "ode"}));
  fit->add_option("--chains", fit_args.chains, "number of chains");
  fit->add_option("--adapt", fit_args.adapt, "adaptation iterations (discarded)");
  fit->add_option("--sample", fit_args.sample, "sampling iterations");
  fit->add_option("--thin", fit_args.thin, "keep every k-th draw");
  fit->add_option("--threads", fit_args.threads, "worker threads");
  fit->add_option("--checkpoint", fit_args.checkpoint_dir, "checkpoint directory");
  fit->add_flag("--resume", fit_args.resume, "continue from checkpoints");
  fit->add_option("--out", fit_args.out, "output file prefix")->required();

  CLI::App* pred = app.add_subcommand("predict", "posterior predictive quantiles and p-values");
  add_common(pred, false);
  pred->add_option("--posterior", posterior_path, "posterior CSV from fit")->required();
  pred->add_option("--data", data_path, "observed dataset CSV (enables p-values)");
  pred->add_option("--draws", draws, "posterior draws to propagate");
  pred->add_option("--out", out_prefix, "output file prefix")->required();

  CLI::App* val = app.add_subcommand("validate", "check interval moments against simulation");
  add_common(val, true);
  val->add_option("--replicates", replicates, "Monte Carlo replicates per interval");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (sim->parsed()) return cmd_simulate(common, trunc_flag, out_prefix);
    if (fit->parsed()) return cmd_fit(common, fit_args);
    if (pred->parsed()) return cmd_predict(common, posterior_path, data_path, draws, out_prefix);
    if (val->parsed()) return cmd_validate(common, replicates);
  } catch (const CheckpointMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const ResimulationBudgetExceeded& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBudget;
  } catch (const WarmupFailed& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitWarmup;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
