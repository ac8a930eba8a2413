#pragma once
// Artifact I/O: dataset/event/path/posterior/diagnostics CSV, run manifest
// JSON, and chain checkpoints. Floating-point text is %.17g in CSV and C99
// hex floats in checkpoints, so write -> read -> write is byte-identical.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "epilna/emission.hpp"
#include "epilna/gillespie.hpp"
#include "epilna/mcmc.hpp"
#include "epilna/model.hpp"

namespace epilna {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// resuming against a changed run configuration; callers treat this as its own
// failure class rather than a parse error
struct CheckpointMismatch : IoError {
  using IoError::IoError;
};

// ---------------------------------------------------------------------------
// number text

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// integral counts print as integers; anything else falls back to %.17g
inline std::string fmt_count(double v) {
  if (v == std::floor(v) && std::abs(v) < 9.0e15) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    return buf;
  }
  return fmt_g17(v);
}

inline std::string fmt_hex(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  const char* c = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(c, &end);
  if (end == c) throw IoError("not a number: '" + s + "'");
  return v;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex_u64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

inline std::string strip_spaces(std::string s) {
  s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
  return s;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  return f;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read '" + path + "'");
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dataset CSV: header `time,<series...>`; the first data row carries the
// schedule origin t0 with every count cell empty; empty cell = missing.

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "time";
  for (const auto& s : data.series_names) out << ',' << s;
  out << '\n';
  out << fmt_g17(data.schedule.t0);
  for (int s = 0; s < data.n_series(); ++s) out << ',';
  out << '\n';
  for (int ell = 0; ell < data.schedule.n_intervals(); ++ell) {
    out << fmt_g17(data.schedule.times[ell]);
    for (int s = 0; s < data.n_series(); ++s) {
      out << ',';
      if (data.observed(ell, s)) out << fmt_count(data.counts(ell, s));
    }
    out << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset: empty file");
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "time")
    throw IoError("dataset: header must be time,<series>...");
  std::vector<std::string> names(header.begin() + 1, header.end());

  std::vector<double> times;
  std::vector<std::vector<std::string>> cells;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = detail::split_csv_line(line);
    if (row.size() != header.size())
      throw IoError("dataset: row has " + std::to_string(row.size()) + " cells, expected " +
                    std::to_string(header.size()));
    times.push_back(parse_double(row[0]));
    cells.emplace_back(row.begin() + 1, row.end());
  }
  if (times.size() < 2) throw IoError("dataset: need the origin row plus at least one interval");

  ObservationSchedule sched;
  sched.t0 = times[0];
  sched.times.assign(times.begin() + 1, times.end());
  Dataset d = Dataset::empty(sched, names);
  for (std::size_t r = 1; r < times.size(); ++r)
    for (std::size_t s = 0; s < names.size(); ++s) {
      const std::string& cell = cells[r][s];
      if (cell.empty()) {
        d.observed(r - 1, s) = false;
      } else {
        d.observed(r - 1, s) = true;
        d.counts(r - 1, s) = parse_double(cell);
      }
    }
  return d;
}

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
  auto f = detail::open_out(path);
  write_dataset_csv(f, data);
}

inline Dataset read_dataset_csv(const std::string& path) {
  auto f = detail::open_in(path);
  return read_dataset_csv(f);
}

// ---------------------------------------------------------------------------
// event log CSV: one simulated jump per row

inline void write_events_csv(std::ostream& out, const EventLog& log,
                             const CompartmentalModel& model) {
  out << "time,event\n";
  for (std::size_t i = 0; i < log.times.size(); ++i)
    out << fmt_g17(log.times[i]) << ',' << model.transitions[log.events[i]].name << '\n';
}

// ---------------------------------------------------------------------------
// latent path CSV: per observation time, interval incidence per transition
// and end-of-interval volumes per compartment

inline void write_path_csv(std::ostream& out, const LatentPath& path,
                           const CompartmentalModel& model) {
  out << "time";
  for (const auto& tr : model.transitions) out << ',' << tr.name;
  for (const auto& c : model.compartments) out << ',' << c.name;
  out << '\n';
  out << fmt_g17(model.schedule.t0);
  for (int k = 0; k < model.n_trans(); ++k) out << ',';
  for (int c = 0; c < model.n_comp(); ++c) out << ',' << fmt_g17(path.volumes(0, c));
  out << '\n';
  for (int ell = 0; ell < path.incidence.rows(); ++ell) {
    out << fmt_g17(model.schedule.times[ell]);
    for (int k = 0; k < model.n_trans(); ++k) out << ',' << fmt_g17(path.incidence(ell, k));
    for (int c = 0; c < model.n_comp(); ++c) out << ',' << fmt_g17(path.volumes(ell + 1, c));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// posterior CSV: iteration, chain, log-posterior, estimation-scale
// coordinates (column name = transform text, spaces stripped), then natural
// parameters

inline void write_posterior_csv(std::ostream& out, const MultiChainSample& ms) {
  if (ms.chains.empty()) throw IoError("posterior: no chains");
  const auto& names_est = ms.chains.front().est_names;
  const auto& names_nat = ms.chains.front().nat_names;
  out << "iteration,chain,log_posterior";
  for (const auto& n : names_est) out << ',' << strip_spaces(n);
  for (const auto& n : names_nat) out << ',' << n;
  out << '\n';
  for (const auto& chain : ms.chains)
    for (int r = 0; r < chain.est.rows(); ++r) {
      out << chain.iterations[r] << ',' << chain.chain_id << ',' << fmt_g17(chain.log_post[r]);
      for (int c = 0; c < chain.est.cols(); ++c) out << ',' << fmt_g17(chain.est(r, c));
      for (int c = 0; c < chain.nat.cols(); ++c) out << ',' << fmt_g17(chain.nat(r, c));
      out << '\n';
    }
}

struct PosteriorCsv {
  std::vector<std::string> columns;  // everything after iteration,chain
  std::vector<long long> iteration;
  std::vector<int> chain;
  Eigen::MatrixXd values;  // rows x columns.size()
};

inline PosteriorCsv read_posterior_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("posterior: empty file");
  auto header = detail::split_csv_line(line);
  if (header.size() < 4 || header[0] != "iteration" || header[1] != "chain" ||
      header[2] != "log_posterior")
    throw IoError("posterior: header must start iteration,chain,log_posterior");
  PosteriorCsv p;
  p.columns.assign(header.begin() + 2, header.end());
  std::vector<double> flat;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = detail::split_csv_line(line);
    if (row.size() != header.size()) throw IoError("posterior: ragged row");
    p.iteration.push_back(static_cast<long long>(parse_double(row[0])));
    p.chain.push_back(static_cast<int>(parse_double(row[1])));
    for (std::size_t c = 2; c < row.size(); ++c) flat.push_back(parse_double(row[c]));
  }
  const int ncol = static_cast<int>(p.columns.size());
  const int nrow = static_cast<int>(p.iteration.size());
  if (nrow == 0) throw IoError("posterior: no draws");
  p.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), nrow, ncol);
  return p;
}

// natural-scale draws are the trailing columns, one per free parameter
inline Eigen::MatrixXd natural_draws(const PosteriorCsv& p, const std::vector<std::string>& free) {
  const int d = static_cast<int>(free.size());
  if (static_cast<int>(p.columns.size()) < d + 1)
    throw IoError("posterior: too few columns for " + std::to_string(d) + " parameters");
  const int off = static_cast<int>(p.columns.size()) - d;
  for (int i = 0; i < d; ++i)
    if (p.columns[off + i] != free[i])
      throw IoError("posterior: column '" + p.columns[off + i] + "' where parameter '" + free[i] +
                    "' was expected");
  return p.values.rightCols(d);
}

// ---------------------------------------------------------------------------
// diagnostics CSV: per-parameter total ESS (summed over chains) and PSRF on
// the estimation scale, a log-posterior row, and the multivariate PSRF

inline void write_diagnostics_csv(std::ostream& out, const MultiChainSample& ms) {
  if (ms.chains.empty()) throw IoError("diagnostics: no chains");
  const auto& names = ms.chains.front().nat_names;
  const int d = static_cast<int>(names.size());
  out << "parameter,ess,psrf\n";
  for (int j = 0; j < d; ++j) {
    double total = 0.0;
    for (const auto& chain : ms.chains) {
      EssResult r = ess(chain.est.col(j));
      if (!r.degenerate) total += r.value;
    }
    out << names[j] << ',' << fmt_g17(total) << ',';
    if (ms.psrf_est.univariate.size() == d) out << fmt_g17(ms.psrf_est.univariate[j]);
    out << '\n';
  }
  double lp_total = 0.0;
  for (const auto& chain : ms.chains) {
    EssResult r = ess(chain.log_post);
    if (!r.degenerate) lp_total += r.value;
  }
  out << "log_posterior," << fmt_g17(lp_total) << ",\n";
  out << "multivariate,,";
  if (ms.chains.size() >= 2) out << fmt_g17(ms.psrf_est.multivariate);
  out << '\n';
}

// ---------------------------------------------------------------------------
// run manifest: config hash, seed, dimensions, and per-chain work counters.
// Only deterministic quantities appear so a rerun reproduces the file.

inline nlohmann::json stats_json(const KernelStats& s) {
  nlohmann::json j;
  j["theta_updates"] = s.theta_updates;
  j["theta_accepts"] = s.theta_accepts;
  j["theta_contractions"] = s.theta_contractions;
  j["stepouts"] = s.stepouts;
  j["z_updates"] = s.z_updates;
  j["z_moves"] = s.z_moves;
  j["z_contractions"] = s.z_contractions;
  j["warmup_iters"] = s.warmup_iters;
  j["start_attempts"] = s.start_attempts_used;
  return j;
}

inline void write_manifest(const std::string& path, const nlohmann::json& manifest) {
  auto f = detail::open_out(path);
  f << manifest.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// checkpoints: full chain state, hex-float doubles for exact resume

namespace detail {

inline nlohmann::json hex_array(const double* p, std::ptrdiff_t n) {
  nlohmann::json a = nlohmann::json::array();
  for (std::ptrdiff_t i = 0; i < n; ++i) a.push_back(fmt_hex(p[i]));
  return a;
}

inline void read_hex(const nlohmann::json& a, std::vector<double>& out) {
  out.clear();
  for (const auto& s : a) out.push_back(parse_double(s.get<std::string>()));
}

inline Eigen::VectorXd read_hex_vec(const nlohmann::json& a) {
  std::vector<double> v;
  read_hex(a, v);
  return Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const ChainState& s, const std::string& config_hash) {
  nlohmann::json j;
  j["format"] = 1;
  j["config_hash"] = config_hash;
  j["chain_id"] = s.chain_id;
  j["iteration"] = s.iteration;
  j["e"] = detail::hex_array(s.e.data(), s.e.size());
  j["z"] = detail::hex_array(s.z.data(), s.z.size());
  j["log_scale"] = fmt_hex(s.log_scale);
  nlohmann::json a;
  a["mean"] = detail::hex_array(s.adapt.mean.data(), s.adapt.mean.size());
  a["cov"] = detail::hex_array(s.adapt.cov.data(), s.adapt.cov.size());  // column-major square
  a["n"] = s.adapt.n;
  a["gain_c"] = fmt_hex(s.adapt.gain_c);
  a["gain_p"] = fmt_hex(s.adapt.gain_p);
  a["gain_alpha"] = fmt_hex(s.adapt.gain_alpha);
  a["nugget"] = fmt_hex(s.adapt.nugget);
  a["frozen"] = s.adapt.frozen;
  j["adapt"] = a;
  nlohmann::json e;
  e["omega"] = fmt_hex(s.ess.omega);
  e["angles"] = detail::hex_array(s.ess.angles.data(), static_cast<std::ptrdiff_t>(s.ess.angles.size()));
  e["contractions"] = s.ess.contractions;
  e["updates"] = s.ess.updates;
  j["slice"] = e;
  j["rng_state"] = s.rng_state;
  j["stats"] = stats_json(s.stats);
  nlohmann::json k;
  k["est"] = detail::hex_array(s.kept_est.data(), static_cast<std::ptrdiff_t>(s.kept_est.size()));
  k["nat"] = detail::hex_array(s.kept_nat.data(), static_cast<std::ptrdiff_t>(s.kept_nat.size()));
  k["log_post"] =
      detail::hex_array(s.kept_log_post.data(), static_cast<std::ptrdiff_t>(s.kept_log_post.size()));
  k["iter"] = s.kept_iter;
  j["kept"] = k;
  return j;
}

inline ChainState checkpoint_from_json(const nlohmann::json& j, const std::string& config_hash) {
  if (!j.contains("format") || j.at("format").get<int>() != 1)
    throw IoError("checkpoint: unknown format");
  if (j.at("config_hash").get<std::string>() != config_hash)
    throw CheckpointMismatch("checkpoint: config hash mismatch (run configuration changed)");
  ChainState s;
  s.chain_id = j.at("chain_id").get<int>();
  s.iteration = j.at("iteration").get<long long>();
  s.e = detail::read_hex_vec(j.at("e"));
  s.z = detail::read_hex_vec(j.at("z"));
  s.log_scale = parse_double(j.at("log_scale").get<std::string>());
  const auto& a = j.at("adapt");
  s.adapt.mean = detail::read_hex_vec(a.at("mean"));
  {
    std::vector<double> flat;
    detail::read_hex(a.at("cov"), flat);
    const auto d = static_cast<Eigen::Index>(s.adapt.mean.size());
    if (static_cast<Eigen::Index>(flat.size()) != d * d)
      throw IoError("checkpoint: covariance shape mismatch");
    s.adapt.cov = Eigen::Map<Eigen::MatrixXd>(flat.data(), d, d);
  }
  s.adapt.n = a.at("n").get<long long>();
  s.adapt.gain_c = parse_double(a.at("gain_c").get<std::string>());
  s.adapt.gain_p = parse_double(a.at("gain_p").get<std::string>());
  s.adapt.gain_alpha = parse_double(a.at("gain_alpha").get<std::string>());
  s.adapt.nugget = parse_double(a.at("nugget").get<std::string>());
  s.adapt.frozen = a.at("frozen").get<bool>();
  const auto& e = j.at("slice");
  s.ess.omega = parse_double(e.at("omega").get<std::string>());
  detail::read_hex(e.at("angles"), s.ess.angles);
  s.ess.contractions = e.at("contractions").get<long long>();
  s.ess.updates = e.at("updates").get<long long>();
  const auto rs = j.at("rng_state").get<std::vector<std::uint64_t>>();
  if (rs.size() != 4) throw IoError("checkpoint: bad rng state");
  std::copy(rs.begin(), rs.end(), s.rng_state.begin());
  const auto& st = j.at("stats");
  s.stats.theta_updates = st.at("theta_updates").get<long long>();
  s.stats.theta_accepts = st.at("theta_accepts").get<long long>();
  s.stats.theta_contractions = st.at("theta_contractions").get<long long>();
  s.stats.stepouts = st.at("stepouts").get<long long>();
  s.stats.z_updates = st.at("z_updates").get<long long>();
  s.stats.z_moves = st.at("z_moves").get<long long>();
  s.stats.z_contractions = st.at("z_contractions").get<long long>();
  s.stats.warmup_iters = st.at("warmup_iters").get<int>();
  s.stats.start_attempts_used = st.at("start_attempts").get<int>();
  const auto& k = j.at("kept");
  detail::read_hex(k.at("est"), s.kept_est);
  detail::read_hex(k.at("nat"), s.kept_nat);
  detail::read_hex(k.at("log_post"), s.kept_log_post);
  s.kept_iter = k.at("iter").get<std::vector<long long>>();
  return s;
}

inline void write_checkpoint(const std::string& path, const ChainState& s,
                             const std::string& config_hash) {
  auto f = detail::open_out(path + ".tmp");
  f << checkpoint_to_json(s, config_hash).dump() << '\n';
  f.close();
  if (std::rename((path + ".tmp").c_str(), path.c_str()) != 0)
    throw IoError("cannot replace checkpoint '" + path + "'");
}

inline ChainState read_checkpoint(const std::string& path, const std::string& config_hash) {
  auto f = detail::open_in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(path + ": " + ex.what());
  }
  return checkpoint_from_json(j, config_hash);
}

inline std::string read_file(const std::string& path) {
  auto f = detail::open_in(path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace epilna
