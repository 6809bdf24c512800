// Command-line front end: certify/classify a problem file, run a single
// recovery, sweep noise levels for empirical rates, or run the Gaussian
// ensemble classification pipeline.
//
// Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 verdict
// falsified (the candidate point is provably not a solution).

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sharpcert/io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalidInput = 2;
constexpr int kExitSolverFailure = 3;
constexpr int kExitFalsified = 4;

sharpcert::Thresholds parse_thresholds(const std::string& text) {
  sharpcert::Thresholds th;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw sharpcert::IoError("thresholds: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    double value = 0;
    try {
      value = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw sharpcert::IoError("thresholds: bad number in '" + item + "'");
    }
    if (key == "tau")
      th.tau = value;
    else if (key == "rho_lo")
      th.rho_lo = value;
    else if (key == "rho_hi")
      th.rho_hi = value;
    else if (key == "gamma")
      th.gamma = value;
    else if (key == "zeta")
      th.zeta = value;
    else
      throw sharpcert::IoError("thresholds: unknown key '" + key + "'");
  }
  return th;
}

std::vector<double> parse_deltas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw sharpcert::IoError("deltas: bad number '" + item + "'");
    }
    if (out.back() < 0) throw sharpcert::IoError("deltas: values must be >= 0");
  }
  if (out.empty()) throw sharpcert::IoError("deltas: empty list");
  return out;
}

struct CertifyConfig {
  std::string problem_path;
  bool exact = false;
  std::string thresholds;
  std::string out;
  bool verdict_only = false;
};

int run_certify(const CertifyConfig& cfg) {
  const sharpcert::Problem prob = sharpcert::load_problem(cfg.problem_path);
  sharpcert::ClassifyOptions options;
  options.exact_mode = cfg.exact;
  if (!cfg.thresholds.empty()) options.thresholds = parse_thresholds(cfg.thresholds);
  const sharpcert::CertificateReport rep = sharpcert::classify(prob, options);
  const std::string json = sharpcert::report_to_json(rep);
  if (!cfg.out.empty()) sharpcert::detail::write_text(cfg.out, json);
  if (cfg.verdict_only || !cfg.out.empty())
    std::cout << sharpcert::to_string(rep.verdict) << "\n";
  else
    std::cout << json;
  return rep.verdict == sharpcert::Verdict::not_a_solution ? kExitFalsified : kExitOk;
}

struct RecoverConfig {
  std::string problem_path;
  std::string mode = "lagrangian";
  double delta = 0.0;
  double mu_ratio = 1.0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

int run_recover(const RecoverConfig& cfg) {
  const sharpcert::ProblemFile pf = sharpcert::load_problem_file(cfg.problem_path);
  if (cfg.mode != "lagrangian" && cfg.mode != "constrained")
    throw sharpcert::IoError("mode must be lagrangian or constrained");
  if (cfg.delta < 0) throw sharpcert::IoError("delta must be >= 0");
  const std::uint64_t seed = cfg.seed_given ? cfg.seed : pf.seed.value_or(0);
  sharpcert::CounterRng rng(seed, 0, 0);
  const sharpcert::Vector y =
      pf.problem.y0 + rng.sphere_vector(pf.problem.m(), cfg.delta);
  sharpcert::RecoveryRun run;
  if (cfg.mode == "lagrangian" && cfg.delta > 0)
    run = sharpcert::solve_lagrangian(pf.problem, y, cfg.mu_ratio * cfg.delta);
  else
    run = sharpcert::solve_constrained(pf.problem, y, cfg.delta);
  run.delta = cfg.delta;
  std::cout << "mode: " << cfg.mode << "\n"
            << "delta: " << sharpcert::format_number(cfg.delta) << "\n"
            << "mu: " << sharpcert::format_number(run.mu) << "\n"
            << "error: " << sharpcert::format_number(run.error) << "\n"
            << "kkt_residual: " << sharpcert::format_number(run.kkt_residual) << "\n"
            << "iterations: " << run.iterations << "\n"
            << "converged: " << (run.converged ? "true" : "false") << "\n";
  if (!cfg.out.empty()) {
    sharpcert::RateCell cell;
    cell.delta = cfg.delta;
    cell.draw = 0;
    cell.mode = cfg.mode == "lagrangian" ? sharpcert::RecoveryMode::lagrangian
                                         : sharpcert::RecoveryMode::constrained;
    cell.error = run.error;
    cell.iterations = run.iterations;
    cell.kkt_residual = run.kkt_residual;
    sharpcert::detail::write_text(cfg.out, sharpcert::cells_to_csv({cell}));
  }
  return run.converged ? kExitOk : kExitSolverFailure;
}

struct RatesConfig {
  std::string problem_path;
  std::string deltas = "1e-1,1e-2,1e-3,1e-4";
  double mu_ratio = 1.0;
  int draws = 5;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

int run_rates(const RatesConfig& cfg) {
  const sharpcert::ProblemFile pf = sharpcert::load_problem_file(cfg.problem_path);
  if (cfg.draws < 1) throw sharpcert::IoError("draws must be >= 1");
  const std::vector<double> deltas = parse_deltas(cfg.deltas);
  const std::uint64_t seed = cfg.seed_given ? cfg.seed : pf.seed.value_or(0);
  const sharpcert::CertificateReport rep = sharpcert::classify(pf.problem);
  double kappa = 0.0;
  if (rep.verdict == sharpcert::Verdict::unique_strong_not_sharp) {
    const sharpcert::ModelDecomposition dec = sharpcert::model_decomposition(pf.problem);
    const sharpcert::KappaEstimate ke = sharpcert::estimate_strong_curvature(pf.problem, dec);
    if (ke.available) kappa = ke.value;
  }
  const sharpcert::RateFit fit = sharpcert::rate_experiment(pf.problem, rep, deltas,
                                                            cfg.mu_ratio, cfg.draws, seed, {},
                                                            kappa);
  std::cout << "verdict: " << sharpcert::to_string(rep.verdict) << "\n"
            << "slope_lagrangian: " << sharpcert::format_number(fit.slope_lagrangian) << "\n"
            << "slope_constrained: " << sharpcert::format_number(fit.slope_constrained) << "\n"
            << "failures: " << fit.failures << "\n";
  if (!cfg.out.empty())
    sharpcert::emit_report(fit, sharpcert::ReportFormat::csv, cfg.out);
  return fit.failures == 0 ? kExitOk : kExitSolverFailure;
}

struct PipelineConfig {
  sharpcert::EnsembleSpec spec;
  int trials = 1;
  std::string thresholds;
  std::string out;
  bool timings = false;
};

int run_pipeline_cmd(const PipelineConfig& cfg) {
  sharpcert::ClassifyOptions options;
  if (!cfg.thresholds.empty()) options.thresholds = parse_thresholds(cfg.thresholds);
  options.compute_ic = false;
  const sharpcert::PipelineResult result =
      sharpcert::run_pipeline(cfg.spec, cfg.trials, options);
  if (!cfg.out.empty())
    sharpcert::detail::write_text(cfg.out, sharpcert::pipeline_to_csv(result, cfg.timings));
  std::cout << sharpcert::tally_to_json(result);
  if (result.not_a_solution > 0) return kExitFalsified;
  if (result.solver_failures > 0) return kExitSolverFailure;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"certification and recovery toolkit for group-sparse inverse problems"};
  app.require_subcommand(1);

  CertifyConfig certify_cfg;
  CLI::App* certify = app.add_subcommand("certify", "classify a candidate and emit the report");
  certify->add_option("problem", certify_cfg.problem_path, "problem JSON file")->required();
  certify->add_flag("--exact", certify_cfg.exact, "use near-exact thresholds");
  certify->add_option("--thresholds", certify_cfg.thresholds,
                      "comma list tau=..,rho_lo=..,rho_hi=..,gamma=..,zeta=..");
  certify->add_option("--out", certify_cfg.out, "write JSON report here");

  CertifyConfig classify_cfg;
  classify_cfg.verdict_only = true;
  CLI::App* classify = app.add_subcommand("classify", "certify with verdict-only output");
  classify->add_option("problem", classify_cfg.problem_path, "problem JSON file")->required();
  classify->add_flag("--exact", classify_cfg.exact, "use near-exact thresholds");
  classify->add_option("--thresholds", classify_cfg.thresholds,
                       "comma list tau=..,rho_lo=..,rho_hi=..,gamma=..,zeta=..");
  classify->add_option("--out", classify_cfg.out, "write JSON report here");

  RecoverConfig recover_cfg;
  CLI::App* recover = app.add_subcommand("recover", "solve one noisy recovery instance");
  recover->add_option("problem", recover_cfg.problem_path, "problem JSON file")->required();
  recover->add_option("--mode", recover_cfg.mode, "lagrangian or constrained")
      ->default_val("lagrangian");
  recover->add_option("--delta", recover_cfg.delta, "noise norm")->required();
  recover->add_option("--mu-ratio", recover_cfg.mu_ratio, "penalty per unit delta")
      ->default_val(1.0);
  recover->add_option("--seed", recover_cfg.seed, "noise stream seed");
  recover->add_option("--out", recover_cfg.out, "write single-row CSV here");

  RatesConfig rates_cfg;
  CLI::App* rates = app.add_subcommand("rates", "sweep noise levels and fit the error slope");
  rates->add_option("problem", rates_cfg.problem_path, "problem JSON file")->required();
  rates->add_option("--deltas", rates_cfg.deltas, "comma list of noise norms");
  rates->add_option("--mu-ratio", rates_cfg.mu_ratio, "penalty per unit delta")
      ->default_val(1.0);
  rates->add_option("--draws", rates_cfg.draws, "noise draws per delta")->default_val(5);
  rates->add_option("--seed", rates_cfg.seed, "noise stream seed");
  rates->add_option("--out", rates_cfg.out, "write rate table CSV here");

  PipelineConfig pipeline_cfg;
  CLI::App* pipeline = app.add_subcommand("pipeline", "classify a Gaussian ensemble");
  pipeline->add_option("--m", pipeline_cfg.spec.m, "measurements")->required();
  pipeline->add_option("--n", pipeline_cfg.spec.n, "signal length")->required();
  pipeline->add_option("--groups", pipeline_cfg.spec.q, "number of groups")->required();
  pipeline->add_option("--group-size", pipeline_cfg.spec.group_size, "coordinates per group")
      ->required();
  pipeline->add_option("--active", pipeline_cfg.spec.k, "active groups")->required();
  pipeline->add_option("--trials", pipeline_cfg.trials, "independent instances")->required();
  pipeline->add_option("--seed", pipeline_cfg.spec.seed, "master seed")->default_val(0);
  pipeline->add_option("--thresholds", pipeline_cfg.thresholds,
                       "comma list tau=..,rho_lo=..,rho_hi=..,gamma=..,zeta=..");
  pipeline->add_option("--out", pipeline_cfg.out, "write per-trial CSV here");
  pipeline->add_flag("--timings", pipeline_cfg.timings, "append a wall-clock column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalidInput;
  }
  recover_cfg.seed_given = recover->count("--seed") > 0;
  rates_cfg.seed_given = rates->count("--seed") > 0;

  try {
    if (certify->parsed()) return run_certify(certify_cfg);
    if (classify->parsed()) return run_certify(classify_cfg);
    if (recover->parsed()) return run_recover(recover_cfg);
    if (rates->parsed()) return run_rates(rates_cfg);
    if (pipeline->parsed()) return run_pipeline_cmd(pipeline_cfg);
  } catch (const sharpcert::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolverFailure;
  }
  return kExitInvalidInput;
}
