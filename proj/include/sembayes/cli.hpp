#pragma once

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "sembayes/io/csv.hpp"
#include "sembayes/io/model_file.hpp"
#include "sembayes/io/results_json.hpp"

namespace sembayes {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,         // bad flags, model file, data file or option ranges
  kExitConvergence = 3,   // mode finding did not converge
  kExitHessian = 4,       // negative Hessian not positive definite
  kExitNumerical = 5,     // inadmissible point, profiling or other numerical failure
  kExitOracle = 6,        // MCMC oracle failed its R-hat / ESS gate
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ModelError*>(&e) || dynamic_cast<const DataError*>(&e) ||
      dynamic_cast<const DomainError*>(&e))
    return kExitUsage;
  if (dynamic_cast<const ConvergenceError*>(&e)) return kExitConvergence;
  if (dynamic_cast<const HessianError*>(&e)) return kExitHessian;
  if (dynamic_cast<const OracleUnusableError*>(&e)) return kExitOracle;
  if (dynamic_cast<const Error*>(&e)) return kExitNumerical;
  return kExitInternal;
}

struct CliConfig {
  std::string model_path, data_path, out = "out";
  std::uint64_t seed = 20240611;
  int grid_points = 21;
  int rqmc_points = 512;
  int gh_order = 24;
  int draws = 4000;
  int threads = 1;
  std::string stage = "copula";
  std::vector<std::string> derived;
  bool write_draws = false;
  // compare-mcmc
  int chains = 4, warmup = 5000, iterations = 5000;
  double rhat_max = 1.01, min_ess = 400.0;
  // recover / sbc / simulate
  std::vector<int> n_list{100, 400};
  int n = 200;
  int reps = 200;
  std::string prior_set = "informative";
  int max_attempts = 0;
  std::string sim_out = "data.csv";
};

namespace detail {

inline void add_common(CLI::App* c, CliConfig& cfg, bool needs_data) {
  c->add_option("--model", cfg.model_path, "Model file (YAML)")->required()->check(CLI::ExistingFile);
  if (needs_data) c->add_option("--data", cfg.data_path, "Data file (CSV with header)")->required()->check(CLI::ExistingFile);
  c->add_option("--seed", cfg.seed, "Seed for all randomness")->capture_default_str();
  c->add_option("--threads", cfg.threads, "Worker threads")
      ->envname("SEMBAYES_THREADS")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
}

inline void add_pipeline(CLI::App* c, CliConfig& cfg) {
  c->add_option("--grid-points", cfg.grid_points, "Profile scan points K (odd, 9..201)")
      ->check(CLI::Range(9, 201))
      ->capture_default_str();
  c->add_option("--rqmc", cfg.rqmc_points, "RQMC points for the VB shift (16..65536)")
      ->check(CLI::Range(16, 65536))
      ->capture_default_str();
  c->add_option("--gh-order", cfg.gh_order, "Gauss-Hermite order for NORTA (4..64)")
      ->check(CLI::Range(4, 64))
      ->capture_default_str();
  c->add_option("--draws", cfg.draws, "Joint draws B (1..10000000)")->check(CLI::Range(1, 10000000))->capture_default_str();
  c->add_option("--stage", cfg.stage, "Last stage: laplace | profiles | vb | copula")
      ->check(CLI::IsMember({"laplace", "laplace-only", "profiles", "vb", "copula", "all"}))
      ->capture_default_str();
}

inline PipelineOptions pipeline_options(const CliConfig& cfg) {
  if (cfg.grid_points % 2 == 0) throw DomainError("--grid-points must be odd");
  PipelineOptions p;
  p.stage = stage_from_string(cfg.stage);
  p.seed = cfg.seed;
  p.marginals.grid_points = cfg.grid_points;
  p.rqmc_points = cfg.rqmc_points;
  p.gh_order = cfg.gh_order;
  p.draws = cfg.draws;
  p.derived = cfg.derived;
  p.threads = cfg.threads;
  return p;
}

inline RunInfo run_info(const CliConfig& cfg, const std::string& command) {
  RunInfo info;
  info.command = command;
  info.model_path = cfg.model_path;
  info.data_path = cfg.data_path;
  info.seed = cfg.seed;
  info.grid_points = cfg.grid_points;
  info.rqmc_points = cfg.rqmc_points;
  info.gh_order = cfg.gh_order;
  info.draws = cfg.draws;
  info.threads = cfg.threads;
  return info;
}

inline std::filesystem::path prepare_out(const std::string& dir) {
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  return out;
}

inline void write_fit_outputs(const std::filesystem::path& dir, const PosteriorResult& r, const SemPosterior& post,
                              const CliConfig& cfg, const std::string& command) {
  write_json((dir / "results.json").string(), results_json(r, &post.model(), run_info(cfg, command), post.data().n()));
  if (!r.marginals.empty()) {
    auto out = open_out(dir / "density_grids.csv");
    write_density_grids(out, density_grids(r));
  }
  if (cfg.write_draws && r.draws) {
    auto out = open_out(dir / "draws.csv");
    out << std::setprecision(17);
    for (std::size_t k = 0; k < r.names.size(); ++k) out << (k ? "," : "") << detail::csv_field(r.names[k]);
    out << '\n';
    for (Eigen::Index i = 0; i < r.draws->draws.rows(); ++i) {
      for (Eigen::Index k = 0; k < r.draws->draws.cols(); ++k) out << (k ? "," : "") << r.draws->draws(i, k);
      out << '\n';
    }
  }
}

inline Vec require_truth(const ModelFile& mf, const std::string& path) {
  if (!mf.truth) throw ModelError("model file '" + path + "' has no 'truth' section, needed for this command");
  return *mf.truth;
}

inline int cmd_fit(const CliConfig& cfg, std::ostream& log) {
  const ModelFile mf = load_model_file(cfg.model_path);
  const SemPosterior post(mf.model, load_csv(cfg.data_path, mf.model));
  const PosteriorResult r = run_posterior(post, pipeline_options(cfg));
  const auto dir = prepare_out(cfg.out);
  write_fit_outputs(dir, r, post, cfg, "fit");
  for (const auto& w : r.warnings) log << "warning: " << w << '\n';
  log << "fit: m=" << post.model().m() << " n=" << post.data().n() << " stage=" << to_string(r.stage)
      << " log_evidence=" << r.laplace.log_evidence << " -> " << dir.string() << '\n';
  return kExitOk;
}

inline int cmd_compare(const CliConfig& cfg, std::ostream& log) {
  const ModelFile mf = load_model_file(cfg.model_path);
  const SemPosterior post(mf.model, load_csv(cfg.data_path, mf.model));
  PipelineOptions po = pipeline_options(cfg);
  const PosteriorResult r = run_posterior(post, po);
  if (r.marginals.empty()) throw DomainError("compare-mcmc needs marginals: use --stage profiles or later");
  McmcOptions mo;
  mo.chains = cfg.chains;
  mo.warmup = cfg.warmup;
  mo.draws = cfg.iterations;
  mo.seed = derive_seed(cfg.seed, 3);
  mo.require_usable = false;
  mo.threads = cfg.threads;
  const McmcRun run = mcmc_oracle(post, r.laplace, mo);
  const auto dir = prepare_out(cfg.out);
  write_fit_outputs(dir, r, post, cfg, "compare-mcmc");
  Json diag{{"chains", mo.chains}, {"warmup", mo.warmup}, {"draws", mo.draws}, {"seed", mo.seed},
            {"acceptance", run.acceptance}, {"rhat", detail::to_json(run.rhat)}, {"ess", detail::to_json(run.ess)}};
  ComparisonGate gate{cfg.rhat_max, cfg.min_ess};
  ComparisonReport rep;
  try {
    rep = compare_to_mcmc(r, run, parameter_groups(post.model()), gate, cfg.threads);
  } catch (const OracleUnusableError&) {
    write_json((dir / "mcmc_diagnostics.json").string(), diag);
    throw;
  }
  Json j = comparison_json(rep);
  j["mcmc"] = diag;
  write_json((dir / "comparison.json").string(), j);
  auto out = open_out(dir / "comparison.csv");
  write_comparison_csv(out, rep);
  log << "compare-mcmc: median JS " << rep.median_js << ", min JS " << rep.min_js << ", max std discrepancy "
      << rep.max_std_discrepancy << " -> " << dir.string() << '\n';
  return kExitOk;
}

inline int cmd_recover(const CliConfig& cfg, std::ostream& log) {
  const ModelFile mf = load_model_file(cfg.model_path);
  const Vec truth = require_truth(mf, cfg.model_path);
  HarnessOptions h;
  h.pipeline = pipeline_options(cfg);
  h.threads = cfg.threads;
  const RecoveryReport rep = recovery_study(mf.model, truth, cfg.n_list, cfg.reps, cfg.seed, h);
  const auto dir = prepare_out(cfg.out);
  write_json((dir / "recovery.json").string(), recovery_json(rep));
  auto out = open_out(dir / "recovery.csv");
  write_recovery_csv(out, rep);
  for (const auto& row : rep.rows)
    log << "recover: n=" << row.n << " successes " << row.successes << "/" << row.attempts << '\n';
  return kExitOk;
}

inline int cmd_sbc(const CliConfig& cfg, std::ostream& log) {
  const ModelFile mf = load_model_file(cfg.model_path);
  PriorSet set;
  if (cfg.prior_set == "informative") set = PriorSet::Informative;
  else if (cfg.prior_set == "diffuse") set = PriorSet::Diffuse;
  else throw DomainError("--prior-set must be informative or diffuse");
  SbcOptions so;
  so.pipeline = pipeline_options(cfg);
  so.threads = cfg.threads;
  so.max_attempts = cfg.max_attempts;
  const SbcReport rep = sbc_check(mf.model, cfg.n, cfg.reps, set, cfg.seed, so);
  const auto dir = prepare_out(cfg.out);
  write_json((dir / "sbc.json").string(), sbc_json(rep));
  {
    auto out = open_out(dir / "sbc_pit.csv");
    write_sbc_pit_csv(out, rep);
  }
  auto out = open_out(dir / "sbc_truth.csv");
  write_sbc_truth_csv(out, rep);
  log << "sbc: " << rep.successes << " successes in " << rep.attempts << " attempts -> " << dir.string() << '\n';
  return rep.successes == rep.requested ? kExitOk : kExitNumerical;
}

inline int cmd_simulate(const CliConfig& cfg, std::ostream& log) {
  const ModelFile mf = load_model_file(cfg.model_path);
  const Vec truth = require_truth(mf, cfg.model_path);
  const DataSet d = simulate_dataset(mf.model, ParamVector::from_constrained(mf.model, truth), cfg.n, cfg.seed);
  const std::filesystem::path p(cfg.sim_out);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  write_csv(p.string(), d);
  log << "simulate: " << d.n() << " rows -> " << p.string() << '\n';
  return kExitOk;
}

}  // namespace detail

/// Entry point of the command-line tool; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian SEM posterior approximation: Laplace, skew-normal marginals, VB shift, copula draws"};
  app.require_subcommand(1);
  CliConfig cfg;

  auto* fit = app.add_subcommand("fit", "Run the posterior pipeline and write results.json and density_grids.csv");
  detail::add_common(fit, cfg, true);
  detail::add_pipeline(fit, cfg);
  fit->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  fit->add_option("--derived", cfg.derived, "Derived scalar expression over parameter names (repeatable)");
  fit->add_flag("--write-draws", cfg.write_draws, "Also write draws.csv");
  fit->add_flag_callback("--laplace-only", [&] { cfg.stage = "laplace"; }, "Same as --stage laplace");

  auto* cmp = app.add_subcommand("compare-mcmc", "Compare the approximation against an adaptive Metropolis oracle");
  detail::add_common(cmp, cfg, true);
  detail::add_pipeline(cmp, cfg);
  cmp->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  cmp->add_option("--chains", cfg.chains, "MCMC chains")->check(CLI::Range(2, 64))->capture_default_str();
  cmp->add_option("--warmup", cfg.warmup, "Warmup iterations per chain")->check(CLI::Range(0, 100000000))->capture_default_str();
  cmp->add_option("--iterations", cfg.iterations, "Kept iterations per chain")->check(CLI::Range(10, 100000000))->capture_default_str();
  cmp->add_option("--rhat-max", cfg.rhat_max, "Oracle gate on split R-hat")->capture_default_str();
  cmp->add_option("--min-ess", cfg.min_ess, "Oracle gate on effective sample size")->capture_default_str();

  auto* rec = app.add_subcommand("recover", "Coverage and log-score study from the model file's truth");
  detail::add_common(rec, cfg, false);
  detail::add_pipeline(rec, cfg);
  rec->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  rec->add_option("--n", cfg.n_list, "Sample sizes (comma separated)")->delimiter(',')->check(CLI::Range(2, 100000000));
  rec->add_option("--reps", cfg.reps, "Replications per sample size")->check(CLI::Range(1, 1000000))->capture_default_str();

  auto* sbc = app.add_subcommand("sbc", "Simulation-based calibration with prior draws");
  detail::add_common(sbc, cfg, false);
  detail::add_pipeline(sbc, cfg);
  sbc->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  sbc->add_option("--n", cfg.n, "Sample size per replication")->check(CLI::Range(2, 100000000))->capture_default_str();
  sbc->add_option("--reps", cfg.reps, "Required successful replications")->check(CLI::Range(1, 1000000))->capture_default_str();
  sbc->add_option("--prior-set", cfg.prior_set, "informative | diffuse")
      ->check(CLI::IsMember({"informative", "diffuse"}))
      ->capture_default_str();
  sbc->add_option("--max-attempts", cfg.max_attempts, "Attempt cap (0: 100 x reps)")->check(CLI::NonNegativeNumber);

  auto* sim = app.add_subcommand("simulate", "Simulate a data set from the model file's truth");
  detail::add_common(sim, cfg, false);
  sim->add_option("--n", cfg.n, "Rows")->check(CLI::Range(2, 100000000))->capture_default_str();
  sim->add_option("--out", cfg.sim_out, "Output CSV file")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, log, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (*fit) return detail::cmd_fit(cfg, log);
    if (*cmp) return detail::cmd_compare(cfg, log);
    if (*rec) return detail::cmd_recover(cfg, log);
    if (*sbc) return detail::cmd_sbc(cfg, log);
    if (*sim) return detail::cmd_simulate(cfg, log);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitUsage;
}

}  // namespace sembayes
