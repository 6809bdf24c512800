#pragma once

// Problem-file ingestion, Gaussian ensemble generation, the classification
// pipeline, and report emission. All numeric output goes through
// locale-independent formatting so identical inputs produce identical bytes.
// Reports print values as decimal strings with 12 significant digits; problem
// files print shortest round-trip representations so loading an emitted file
// reproduces the exact doubles.

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "sharpcert/certificates.hpp"
#include "sharpcert/model.hpp"
#include "sharpcert/recovery.hpp"
#include "sharpcert/rng.hpp"

namespace sharpcert {

// Input-side failures (missing files, malformed JSON, dimension mismatches).
// Kept distinct from solver exceptions so callers can map them to the
// invalid-input exit code.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_general(double v, int digits) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = digits > 0 ? std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general,
                                        digits)
                        : std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// 12 significant digits, '.' decimal point regardless of locale.
inline std::string format_number(double v) { return detail::format_general(v, 12); }

// Shortest representation that parses back to the identical double.
inline std::string format_exact(double v) { return detail::format_general(v, 0); }

// ---------------------------------------------------------------------------
// Problem files

struct ProblemFile {
  Problem problem;
  int version = 1;
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key,
                                           const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw IoError(path + ": missing field '" + key + "'");
  return *it;
}

inline Matrix parse_row_major(const nlohmann::json& arr, Eigen::Index rows, Eigen::Index cols,
                              const char* key, const std::string& path) {
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != rows * cols)
    throw IoError(path + ": field '" + key + "' must hold " + std::to_string(rows * cols) +
                  " row-major numbers");
  Matrix m(rows, cols);
  Eigen::Index idx = 0;
  for (const auto& v : arr) {
    if (!v.is_number()) throw IoError(path + ": field '" + key + "' has a non-numeric entry");
    m(idx / cols, idx % cols) = v.get<double>();
    ++idx;
  }
  return m;
}

}  // namespace detail

inline ProblemFile load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
  if (!j.is_object()) throw IoError(path + ": top level must be a JSON object");

  ProblemFile pf;
  pf.version = detail::require_field(j, "version", path).get<int>();
  if (pf.version != 1) throw IoError(path + ": unsupported schema version");
  const int m = detail::require_field(j, "m", path).get<int>();
  const int n = detail::require_field(j, "n", path).get<int>();
  const int p = detail::require_field(j, "p", path).get<int>();
  if (m <= 0 || n <= 0 || p <= 0) throw IoError(path + ": m, n, p must be positive");

  Problem& prob = pf.problem;
  prob.groups.p = p;
  const auto& groups = detail::require_field(j, "groups", path);
  if (!groups.is_array() || groups.empty())
    throw IoError(path + ": field 'groups' must be a non-empty array of index lists");
  for (const auto& g : groups) {
    if (!g.is_array() || g.empty())
      throw IoError(path + ": each group must be a non-empty index list");
    std::vector<int> idx;
    for (const auto& v : g) {
      if (!v.is_number_integer()) throw IoError(path + ": group indices must be integers");
      const int one_based = v.get<int>();
      if (one_based < 1 || one_based > p)
        throw IoError(path + ": group index " + std::to_string(one_based) + " outside 1.." +
                      std::to_string(p));
      idx.push_back(one_based - 1);
    }
    prob.groups.groups.push_back(std::move(idx));
  }
  try {
    prob.groups.validate();
  } catch (const std::exception& e) {
    throw IoError(path + ": " + e.what());
  }

  const bool has_phi = j.contains("phi");
  const bool has_gen = j.contains("generator");
  if (has_phi == has_gen)
    throw IoError(path + ": exactly one of 'phi' and 'generator' must be present");
  if (has_phi) {
    prob.phi = detail::parse_row_major(j["phi"], m, n, "phi", path);
  } else {
    const auto& gen = j["generator"];
    if (!gen.is_object() || detail::require_field(gen, "type", path).get<std::string>() !=
                                "gaussian")
      throw IoError(path + ": generator type must be \"gaussian\"");
    const auto seed = detail::require_field(gen, "seed", path).get<std::uint64_t>();
    prob.phi = CounterRng(seed, 1, 0).normal_matrix(m, n);
  }

  const auto& d = detail::require_field(j, "d", path);
  if (d.is_string()) {
    if (d.get<std::string>() != "identity")
      throw IoError(path + ": field 'd' must be \"identity\" or a row-major matrix");
    if (p != n) throw IoError(path + ": identity d requires p == n");
    prob.d = Matrix::Identity(n, n);
    prob.d_identity = true;
  } else {
    prob.d = detail::parse_row_major(d, n, p, "d", path);
    prob.d_identity = false;
  }

  const auto& x0 = detail::require_field(j, "x0", path);
  if (!x0.is_array() || static_cast<int>(x0.size()) != n)
    throw IoError(path + ": field 'x0' must hold " + std::to_string(n) + " numbers");
  prob.x0 = Vector(n);
  for (int i = 0; i < n; ++i) prob.x0(i) = x0[i].get<double>();
  prob.y0 = prob.phi * prob.x0;

  if (j.contains("seed")) pf.seed = j["seed"].get<std::uint64_t>();
  try {
    prob.validate();
  } catch (const std::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  return pf;
}

inline Problem load_problem(const std::string& path) { return load_problem_file(path).problem; }

inline nlohmann::ordered_json problem_to_json(const Problem& prob,
                                              std::optional<std::uint64_t> seed = {}) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["m"] = prob.m();
  j["n"] = prob.n();
  j["p"] = prob.p();
  auto groups = nlohmann::ordered_json::array();
  for (const auto& g : prob.groups.groups) {
    auto one_based = nlohmann::ordered_json::array();
    for (int i : g) one_based.push_back(i + 1);
    groups.push_back(std::move(one_based));
  }
  j["groups"] = std::move(groups);
  auto phi = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < prob.phi.rows(); ++r)
    for (Eigen::Index c = 0; c < prob.phi.cols(); ++c) phi.push_back(prob.phi(r, c));
  j["phi"] = std::move(phi);
  if (prob.d_identity) {
    j["d"] = "identity";
  } else {
    auto d = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < prob.d.rows(); ++r)
      for (Eigen::Index c = 0; c < prob.d.cols(); ++c) d.push_back(prob.d(r, c));
    j["d"] = std::move(d);
  }
  auto x0 = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < prob.x0.size(); ++i) x0.push_back(prob.x0(i));
  j["x0"] = std::move(x0);
  if (seed) j["seed"] = *seed;
  return j;
}

inline void emit_problem(const Problem& prob, const std::string& path,
                         std::optional<std::uint64_t> seed = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << problem_to_json(prob, seed).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Gaussian ensemble

struct EnsembleSpec {
  int m = 0;
  int n = 0;
  int q = 0;           // number of groups
  int group_size = 0;  // coordinates per group
  int k = 0;           // active groups
  std::uint64_t seed = 0;

  void validate() const {
    if (m <= 0 || n <= 0 || q <= 0 || group_size <= 0)
      throw IoError("ensemble: dimensions must be positive");
    if (q * group_size != n) throw IoError("ensemble: q * group_size must equal n");
    if (k < 0 || k > q) throw IoError("ensemble: active count must lie in 0..q");
  }
};

// Measurement matrix entries and active-group entries are standard normal;
// the support is a uniform k-subset of the groups. Three keyed streams keep
// the draws independent of each other and of consumption order.
inline Problem generate_instance(const EnsembleSpec& spec) {
  spec.validate();
  GroupStructure gs;
  gs.p = spec.n;
  for (int g = 0; g < spec.q; ++g) {
    std::vector<int> idx(spec.group_size);
    for (int i = 0; i < spec.group_size; ++i) idx[i] = g * spec.group_size + i;
    gs.groups.push_back(std::move(idx));
  }
  CounterRng phi_rng(spec.seed, 1, 0);
  CounterRng support_rng(spec.seed, 2, 0);
  CounterRng signal_rng(spec.seed, 3, 0);
  const Matrix phi = phi_rng.normal_matrix(spec.m, spec.n);
  std::vector<int> active = support_rng.choose(spec.q, spec.k);
  std::sort(active.begin(), active.end());
  Vector x0 = Vector::Zero(spec.n);
  for (int g : active)
    for (int i : gs.groups[g]) x0(i) = signal_rng.normal();
  Problem prob = Problem::with_identity_d(phi, gs, x0);
  prob.y0 = prob.phi * prob.x0;
  return prob;
}

// ---------------------------------------------------------------------------
// Worker pool

// Worker count for embarrassingly parallel loops: hardware concurrency capped
// by the SHARPCERT_THREADS environment variable.
inline int worker_count(int jobs) {
  int workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers <= 0) workers = 1;
  if (const char* env = std::getenv("SHARPCERT_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) workers = cap;
  }
  return std::max(1, std::min(workers, jobs));
}

// Runs fn(0..jobs-1) on a bounded pool. fn must not throw; callers keep
// per-index error state instead.
template <typename Fn>
inline void parallel_for(int jobs, Fn&& fn) {
  const int workers = worker_count(jobs);
  if (workers <= 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Classification pipeline

struct PipelineRow {
  int trial = 0;
  std::string verdict;  // verdict string, or "solver-failure"
  bool solver_ok = true;
  std::string failure;
  double tau = 0.0;
  double rho = 0.0;
  double rho_gap = 0.0;
  double gamma = 0.0;
  double zeta = 0.0;
  bool gamma_set = false;
  bool zeta_set = false;
  bool rho_optimal = false;
  bool ri = false;
  bool sri = false;
  double seconds = 0.0;
};

struct PipelineResult {
  EnsembleSpec spec;
  std::vector<PipelineRow> rows;
  int trials = 0;
  int sharp = 0;
  int unique_strong_not_sharp = 0;
  int not_a_solution = 0;
  int nonunique_or_undetermined = 0;
  int borderline = 0;
  int solver_failures = 0;
};

// Generates, classifies, and tallies `trials` independent instances. Trials
// run on the worker pool; rows land in trial order so output bytes do not
// depend on scheduling. Per-trial instance seeds are folded from the master
// seed and the trial index.
inline PipelineResult run_pipeline(const EnsembleSpec& spec, int trials,
                                   const ClassifyOptions& options = {}) {
  spec.validate();
  if (trials < 1) throw IoError("pipeline: trials must be >= 1");
  PipelineResult result;
  result.spec = spec;
  result.trials = trials;
  result.rows.resize(trials);
  parallel_for(trials, [&](int t) {
    PipelineRow& row = result.rows[t];
    row.trial = t;
    EnsembleSpec trial_spec = spec;
    trial_spec.seed = mix64(mix64(spec.seed) + static_cast<std::uint64_t>(t));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Problem prob = generate_instance(trial_spec);
      const CertificateReport rep = classify(prob, options);
      row.verdict = to_string(rep.verdict);
      row.tau = rep.tau.value;
      row.rho = rep.rho.value;
      row.rho_gap = rep.rho.gap;
      row.rho_optimal = rep.rho.status == "optimal";
      row.gamma = rep.gamma.value;
      row.gamma_set = rep.gamma.status != "not-computed" && rep.gamma.status != "not-applicable";
      row.zeta = rep.zeta.value;
      row.zeta_set = rep.zeta.status != "not-computed" && rep.zeta.status != "not-applicable";
      row.ri = rep.ri_holds;
      row.sri = rep.sri_holds;
    } catch (const std::exception& e) {
      row.solver_ok = false;
      row.verdict = "solver-failure";
      row.failure = e.what();
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  for (const auto& row : result.rows) {
    if (!row.solver_ok) {
      ++result.solver_failures;
    } else if (row.verdict == "sharp") {
      ++result.sharp;
    } else if (row.verdict == "unique-strong-not-sharp") {
      ++result.unique_strong_not_sharp;
    } else if (row.verdict == "not-a-solution") {
      ++result.not_a_solution;
    } else if (row.verdict == "solution-nonunique-or-undetermined") {
      ++result.nonunique_or_undetermined;
    } else {
      ++result.borderline;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline std::string bool_string(bool b) { return b ? "true" : "false"; }

inline void put_cert_value(nlohmann::ordered_json& j, const std::string& name,
                           const CertValue& v) {
  j[name] = format_number(v.value);
  j[name + "_status"] = v.status;
  j[name + "_gap"] = format_number(v.gap);
}

}  // namespace detail

inline std::string report_to_json(const CertificateReport& rep) {
  nlohmann::ordered_json j;
  j["verdict"] = to_string(rep.verdict);
  j["consistency_ok"] = detail::bool_string(rep.consistency_ok);
  detail::put_cert_value(j, "rho", rep.rho);
  detail::put_cert_value(j, "tau", rep.tau);
  detail::put_cert_value(j, "zeta", rep.zeta);
  detail::put_cert_value(j, "gamma", rep.gamma);
  detail::put_cert_value(j, "ic", rep.ic);
  j["ri"] = detail::bool_string(rep.ri_holds);
  j["c1"] = format_number(rep.c1);
  j["sri"] = detail::bool_string(rep.sri_holds);
  j["sharpness_constant_c"] = format_number(rep.sharpness_constant_c);
  j["lipschitz_l"] = format_number(rep.lipschitz_l);
  j["phi_pinv_norm"] = format_number(rep.phi_pinv_norm);
  j["threshold_tau"] = format_number(rep.thresholds.tau);
  j["threshold_rho_lo"] = format_number(rep.thresholds.rho_lo);
  j["threshold_rho_hi"] = format_number(rep.thresholds.rho_hi);
  j["threshold_gamma"] = format_number(rep.thresholds.gamma);
  j["threshold_zeta"] = format_number(rep.thresholds.zeta);
  return j.dump(2) + "\n";
}

inline std::string cells_to_csv(const std::vector<RateCell>& cells) {
  std::string out = "delta,draw,mode,error,bound,iterations,kkt_residual\n";
  for (const auto& c : cells) {
    out += format_number(c.delta);
    out += ',';
    out += std::to_string(c.draw);
    out += ',';
    out += to_string(c.mode);
    out += ',';
    out += c.failed ? "" : format_number(c.error);
    out += ',';
    out += c.bound > 0 ? format_number(c.bound) : "";
    out += ',';
    out += std::to_string(c.iterations);
    out += ',';
    out += c.failed ? "" : format_number(c.kkt_residual);
    out += '\n';
  }
  return out;
}

inline std::string ratefit_to_csv(const RateFit& fit) { return cells_to_csv(fit.cells); }

inline std::string ratefit_to_json(const RateFit& fit) {
  nlohmann::ordered_json j;
  auto arr = [](const std::vector<double>& v) {
    auto a = nlohmann::ordered_json::array();
    for (double x : v) a.push_back(format_number(x));
    return a;
  };
  j["deltas"] = arr(fit.deltas);
  j["median_error_lagrangian"] = arr(fit.median_error_lagrangian);
  j["median_error_constrained"] = arr(fit.median_error_constrained);
  j["bound_lagrangian"] = arr(fit.bound_lagrangian);
  j["bound_constrained"] = arr(fit.bound_constrained);
  j["slope_lagrangian"] = format_number(fit.slope_lagrangian);
  j["intercept_lagrangian"] = format_number(fit.intercept_lagrangian);
  j["slope_constrained"] = format_number(fit.slope_constrained);
  j["intercept_constrained"] = format_number(fit.intercept_constrained);
  j["failures"] = std::to_string(fit.failures);
  return j.dump(2) + "\n";
}

// Per-trial table. Wall-clock columns are opt-in because they change run to
// run while everything else is byte-stable.
inline std::string pipeline_to_csv(const PipelineResult& result, bool include_timings = false) {
  std::string out = "trial,verdict,tau,rho,gamma,zeta,ri,sri";
  if (include_timings) out += ",seconds";
  out += '\n';
  for (const auto& row : result.rows) {
    out += std::to_string(row.trial);
    out += ',';
    out += row.verdict;
    out += ',';
    out += row.solver_ok ? format_number(row.tau) : "";
    out += ',';
    out += row.solver_ok ? format_number(row.rho) : "";
    out += ',';
    out += row.gamma_set ? format_number(row.gamma) : "";
    out += ',';
    out += row.zeta_set ? format_number(row.zeta) : "";
    out += ',';
    out += row.solver_ok ? (row.ri ? "1" : "0") : "";
    out += ',';
    out += row.solver_ok ? (row.sri ? "1" : "0") : "";
    if (include_timings) {
      out += ',';
      out += format_number(row.seconds);
    }
    out += '\n';
  }
  return out;
}

inline std::string tally_to_json(const PipelineResult& result) {
  nlohmann::ordered_json j;
  j["trials"] = std::to_string(result.trials);
  j["sharp"] = std::to_string(result.sharp);
  j["unique_strong_not_sharp"] = std::to_string(result.unique_strong_not_sharp);
  j["not_a_solution"] = std::to_string(result.not_a_solution);
  j["nonunique_or_undetermined"] = std::to_string(result.nonunique_or_undetermined);
  j["borderline"] = std::to_string(result.borderline);
  j["solver_failures"] = std::to_string(result.solver_failures);
  return j.dump(2) + "\n";
}

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace detail

enum class ReportFormat { json, csv };

inline void emit_report(const CertificateReport& rep, ReportFormat format,
                        const std::string& path) {
  if (format == ReportFormat::json) {
    detail::write_text(path, report_to_json(rep));
    return;
  }
  // CSV rendering of a report: one header row, one value row, same fields.
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(report_to_json(rep));
  std::string header, row;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!header.empty()) {
      header += ',';
      row += ',';
    }
    header += it.key();
    row += it.value().get<std::string>();
  }
  detail::write_text(path, header + '\n' + row + '\n');
}

inline void emit_report(const RateFit& fit, ReportFormat format, const std::string& path) {
  detail::write_text(path, format == ReportFormat::json ? ratefit_to_json(fit)
                                                        : ratefit_to_csv(fit));
}

inline void emit_report(const PipelineResult& result, ReportFormat format,
                        const std::string& path, bool include_timings = false) {
  detail::write_text(path, format == ReportFormat::json
                               ? tally_to_json(result)
                               : pipeline_to_csv(result, include_timings));
}

}  // namespace sharpcert
