#pragma once

#include <fstream>
#include <iomanip>

#include "json.hpp"
#include "sembayes/validate.hpp"

namespace sembayes {

inline constexpr int kResultsSchemaVersion = 1;

using Json = nlohmann::ordered_json;

namespace detail {

inline Json to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Json to_json(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(to_json(Vec(m.row(r).transpose())));
  return a;
}

inline Json to_json(const MarginalSummary& s) {
  return Json{{"mean", s.mean}, {"sd", s.sd}, {"median", s.median}, {"q025", s.q025}, {"q975", s.q975}, {"mode", s.mode}};
}

inline Json to_json(const SkewNormalParams& p) { return Json{{"xi", p.xi}, {"omega", p.omega}, {"alpha", p.alpha}}; }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline Json failures_json(const std::map<std::string, int>& f) {
  Json o = Json::object();
  for (const auto& [k, v] : f) o[k] = v;
  return o;
}

}  // namespace detail

/// Run settings echoed into results.json.
struct RunInfo {
  std::string command = "fit";
  std::string model_path, data_path;
  std::uint64_t seed = 0;
  int grid_points = 21;
  int rqmc_points = 512;
  int gh_order = 24;
  int draws = 4000;
  int threads = 1;
};

/// Versioned results document. Wall-clock data lives only under "timings_ms".
inline Json results_json(const PosteriorResult& r, const ModelSpec* model, const RunInfo& info, int n_obs = 0) {
  using detail::to_json;
  Json j;
  j["schema"] = "sembayes.results";
  j["schema_version"] = kResultsSchemaVersion;
  j["run"] = {{"command", info.command}, {"model", info.model_path}, {"data", info.data_path},
              {"seed", info.seed},       {"stage", to_string(r.stage)}, {"grid_points", info.grid_points},
              {"rqmc_points", info.rqmc_points}, {"gh_order", info.gh_order}, {"draws", info.draws},
              {"threads", info.threads}};
  if (model) {
    j["model"] = {{"indicators", model->indicators()}, {"latents", model->latents()}, {"m", model->m()},
                  {"n", n_obs}};
  }

  const LaplaceFit& f = r.laplace;
  Json lap;
  lap["mode_unconstrained"] = to_json(f.mode);
  Vec mode_c(f.dim());
  for (int k = 0; k < f.dim(); ++k) mode_c[k] = to_constrained(r.transforms[k], f.mode[k]);
  lap["mode_constrained"] = to_json(mode_c);
  lap["log_density_at_mode"] = f.log_density_at_mode;
  lap["log_evidence"] = f.log_evidence;
  lap["log_det_neg_hessian"] = f.log_det_h;
  lap["grad_norm_at_mode"] = f.grad_norm_at_mode;
  lap["iterations"] = f.iterations;
  lap["neg_hessian"] = to_json(f.neg_hessian);
  lap["covariance"] = to_json(f.covariance);
  j["laplace"] = lap;

  Json params = Json::array();
  for (int k = 0; k < f.dim(); ++k) {
    Json p;
    p["name"] = k < static_cast<int>(r.names.size()) ? r.names[k] : std::to_string(k);
    if (model) p["class"] = to_string(model->param(k).kind);
    p["transform"] = to_string(r.transforms[k]);
    p["mode_unconstrained"] = f.mode[k];
    p["mode_constrained"] = mode_c[k];
    p["laplace_sd_unconstrained"] = std::sqrt(f.covariance(k, k));
    if (k < static_cast<int>(r.marginals.size())) {
      const auto& mg = r.marginals[k];
      p["skew_normal_unconstrained"] = to_json(mg.shifted());
      p["skew_normal_before_shift"] = to_json(mg.params);
      p["vb_shift"] = mg.vb_shift;
      p["volume_slope"] = mg.vol_slope;
      p["fit_rss"] = mg.fit_rss;
      p["flags"] = {{"gaussian_fallback", mg.gaussian_fallback},
                    {"volume_slope_failed", mg.vol_slope_failed},
                    {"dropped_scan_points", mg.dropped_points}};
    }
    if (k < static_cast<int>(r.summaries.size())) p["summary_constrained"] = to_json(r.summaries[k]);
    params.push_back(p);
  }
  j["parameters"] = params;

  if (r.vb) {
    j["vb"] = {{"delta", to_json(r.vb->delta)},
               {"rqmc_points", r.vb->rqmc_points},
               {"objective_at_zero", r.vb->objective_at_zero},
               {"objective_at_delta", r.vb->objective_at_delta},
               {"objective_se_at_zero", r.vb->objective_se_at_zero},
               {"converged", r.vb->converged},
               {"failed", r.vb->failed},
               {"penalized_draws", r.vb->penalized_draws}};
  }
  if (r.copula) {
    j["copula"] = {{"R", to_json(r.copula->r)},
                   {"R_star", to_json(r.copula->r_star)},
                   {"pd_repair_applied", r.copula->pd_repair_applied},
                   {"unattainable_pairs", r.copula->unattainable_pairs}};
  }
  if (r.draws) j["draws"] = {{"count", r.draws->b()}, {"seed", r.draws->seed}};
  if (!r.derived.empty()) {
    Json d = Json::array();
    for (const auto& ds : r.derived) {
      Json e{{"expression", ds.expression}, {"summary", to_json(empirical_summary(ds.samples))}};
      if (ds.sn_fit) e["skew_normal"] = to_json(*ds.sn_fit);
      d.push_back(e);
    }
    j["derived"] = d;
  }
  if (r.scores) {
    j["factor_scores"] = {{"mean", to_json(r.scores->mean)},
                          {"sd", to_json(r.scores->sd)},
                          {"skipped_draws", r.factor_score_skipped}};
  }
  j["warnings"] = r.warnings;
  Json t = Json::object();
  for (const auto& [name, ms] : r.timings_ms) t[name] = ms;
  j["timings_ms"] = t;
  return j;
}

/// Constrained-scale density grid per parameter. Grid points sit at the
/// fitted quantiles of Phi(z) for z evenly spaced on [-z_max, z_max], so the
/// trapezoid rule resolves skewed and bounded densities alike.
struct DensityGrid {
  std::string name;
  Vec x, density;
};

inline std::vector<DensityGrid> density_grids(const PosteriorResult& r, int points = 200, double z_max = 6.0) {
  std::vector<DensityGrid> out;
  for (std::size_t k = 0; k < r.marginals.size(); ++k) {
    const auto& mg = r.marginals[k];
    DensityGrid g;
    g.name = k < r.names.size() ? r.names[k] : std::to_string(k);
    g.x.resize(points);
    g.density.resize(points);
    const SkewNormalParams sp = mg.shifted();
    for (int i = 0; i < points; ++i) {
      const double z = -z_max + 2.0 * z_max * i / (points - 1);
      g.x[i] = to_constrained(mg.transform, sn_quantile_from_normal(sp, z));
      g.density[i] = mg.density_constrained(g.x[i]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline double trapezoid(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (Eigen::Index i = 1; i < x.size(); ++i) s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return s;
}

inline void write_density_grids(std::ostream& out, const std::vector<DensityGrid>& grids) {
  out << "parameter,x,density\n" << std::setprecision(17);
  for (const auto& g : grids)
    for (Eigen::Index i = 0; i < g.x.size(); ++i) out << detail::csv_field(g.name) << ',' << g.x[i] << ',' << g.density[i] << '\n';
}

// ---------------------------------------------------------------------------
// Validation reports

inline Json comparison_json(const ComparisonReport& rep) {
  using detail::to_json;
  Json j;
  j["schema"] = "sembayes.comparison";
  j["schema_version"] = kResultsSchemaVersion;
  j["oracle"] = {{"max_rhat", rep.max_rhat}, {"min_ess", rep.min_ess}};
  j["median_js"] = rep.median_js;
  j["min_js"] = rep.min_js;
  j["max_std_discrepancy"] = rep.max_std_discrepancy;
  Json ps = Json::array();
  for (const auto& p : rep.params) {
    ps.push_back({{"name", p.name},
                  {"group", p.group},
                  {"approx", to_json(p.approx)},
                  {"mcmc", to_json(p.mcmc)},
                  {"abs_error", {{"mean", p.err_mean}, {"sd", p.err_sd}, {"median", p.err_median},
                                 {"q025", p.err_q025}, {"q975", p.err_q975}, {"mode", p.err_mode}}},
                  {"std_discrepancy", p.std_discrepancy},
                  {"js_percent", p.js},
                  {"rhat", p.rhat},
                  {"ess", p.ess}});
  }
  j["parameters"] = ps;
  Json gs = Json::array();
  for (const auto& g : rep.groups) {
    gs.push_back({{"group", g.group},
                  {"count", g.count},
                  {"median_abs_error", {{"mean", g.median_err_mean}, {"sd", g.median_err_sd},
                                        {"median", g.median_err_median}, {"q025", g.median_err_q025},
                                        {"q975", g.median_err_q975}, {"mode", g.median_err_mode}}},
                  {"median_std_discrepancy", g.median_std_discrepancy},
                  {"max_std_discrepancy", g.max_std_discrepancy},
                  {"median_js", g.median_js},
                  {"min_js", g.min_js}});
  }
  j["groups"] = gs;
  return j;
}

inline void write_comparison_csv(std::ostream& out, const ComparisonReport& rep) {
  out << "parameter,group,approx_mean,mcmc_mean,approx_sd,mcmc_sd,err_mean,err_sd,err_median,err_q025,err_q975,"
         "err_mode,std_discrepancy,js_percent,rhat,ess\n"
      << std::setprecision(10);
  for (const auto& p : rep.params)
    out << detail::csv_field(p.name) << ',' << p.group << ',' << p.approx.mean << ',' << p.mcmc.mean << ',' << p.approx.sd << ','
        << p.mcmc.sd << ',' << p.err_mean << ',' << p.err_sd << ',' << p.err_median << ',' << p.err_q025 << ','
        << p.err_q975 << ',' << p.err_mode << ',' << p.std_discrepancy << ',' << p.js << ',' << p.rhat << ','
        << p.ess << '\n';
}

inline Json recovery_json(const RecoveryReport& rep) {
  Json j;
  j["schema"] = "sembayes.recovery";
  j["schema_version"] = kResultsSchemaVersion;
  j["parameters"] = rep.names;
  j["truth"] = detail::to_json(rep.truth);
  Json rows = Json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"n", r.n},
                    {"attempts", r.attempts},
                    {"successes", r.successes},
                    {"failures", detail::failures_json(r.failures)},
                    {"cr95", detail::to_json(r.cr95)},
                    {"cr50", detail::to_json(r.cr50)},
                    {"mls", detail::to_json(r.mls)}});
  }
  j["rows"] = rows;
  return j;
}

inline void write_recovery_csv(std::ostream& out, const RecoveryReport& rep) {
  out << "parameter,n,successes,truth,cr95,cr50,mls\n" << std::setprecision(10);
  const double na = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rep.rows)
    for (std::size_t k = 0; k < rep.names.size(); ++k)
      out << detail::csv_field(rep.names[k]) << ',' << r.n << ',' << r.successes << ',' << rep.truth[k] << ','
          << (r.successes ? r.cr95[k] : na) << ',' << (r.successes ? r.cr50[k] : na) << ','
          << (r.successes ? r.mls[k] : na) << '\n';
}

inline Json sbc_json(const SbcReport& rep) {
  Json j;
  j["schema"] = "sembayes.sbc";
  j["schema_version"] = kResultsSchemaVersion;
  j["prior_set"] = rep.prior_set == PriorSet::Informative ? "informative" : "diffuse";
  j["n"] = rep.n;
  j["requested"] = rep.requested;
  j["attempts"] = rep.attempts;
  j["successes"] = rep.successes;
  j["failure_rate"] = rep.failure_rate();
  j["failure_causes"] = detail::failures_json(rep.failure_causes);
  j["parameters"] = rep.names;
  j["ks"] = detail::to_json(rep.ks);
  j["fraction_outside_band"] = detail::to_json(rep.frac_outside);
  j["ecdf_grid"] = detail::to_json(rep.ecdf_grid);
  j["band_lower"] = detail::to_json(rep.band_lower);
  j["band_upper"] = detail::to_json(rep.band_upper);
  j["ecdf"] = detail::to_json(rep.ecdf);
  j["pit"] = detail::to_json(rep.pit);
  return j;
}

/// Long-format true values for success/failure quantile-quantile plots.
inline void write_sbc_truth_csv(std::ostream& out, const SbcReport& rep) {
  out << "parameter,group,true_value\n" << std::setprecision(17);
  auto dump = [&](const Mat& t, const char* group) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index k = 0; k < t.cols(); ++k) out << detail::csv_field(rep.names[k]) << ',' << group << ',' << t(r, k) << '\n';
  };
  dump(rep.truth_success, "success");
  dump(rep.truth_failure, "failure");
}

inline void write_sbc_pit_csv(std::ostream& out, const SbcReport& rep) {
  out << "replication,parameter,pit\n" << std::setprecision(17);
  for (Eigen::Index r = 0; r < rep.pit.rows(); ++r)
    for (Eigen::Index k = 0; k < rep.pit.cols(); ++k) out << r << ',' << detail::csv_field(rep.names[k]) << ',' << rep.pit(r, k) << '\n';
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

}  // namespace sembayes
