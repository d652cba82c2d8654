#pragma once

#include <map>

#include <boost/math/distributions/binomial.hpp>

#include "sembayes/mcmc.hpp"
#include "sembayes/pipeline.hpp"
#include "sembayes/simulate.hpp"

namespace sembayes {

// ---------------------------------------------------------------------------
// Jensen-Shannon similarity

/// 100 (1 - JSD / log 2) between two densities tabulated on a common grid.
/// Each is renormalized by the trapezoid rule first.
inline double js_percent_on_grid(const Vec& grid, Vec p, Vec q) {
  auto trap = [&](const Vec& f) {
    double s = 0.0;
    for (Eigen::Index i = 1; i < grid.size(); ++i) s += 0.5 * (f[i] + f[i - 1]) * (grid[i] - grid[i - 1]);
    return s;
  };
  const double zp = trap(p), zq = trap(q);
  if (!(zp > 0.0) || !(zq > 0.0)) throw DomainError("density has no mass on the comparison grid");
  p /= zp;
  q /= zq;
  Vec kl_p(grid.size()), kl_q(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    kl_p[i] = p[i] > 0.0 ? p[i] * std::log(p[i] / m) : 0.0;
    kl_q[i] = q[i] > 0.0 ? q[i] * std::log(q[i] / m) : 0.0;
  }
  const double jsd = 0.5 * trap(kl_p) + 0.5 * trap(kl_q);
  return std::clamp(100.0 * (1.0 - jsd / std::numbers::ln2), 0.0, 100.0);
}

template <class F, class G>
double js_percent(F&& f, G&& g, double lo, double hi, int points = 512) {
  const Vec grid = Vec::LinSpaced(points, lo, hi);
  Vec p(points), q(points);
  for (int i = 0; i < points; ++i) {
    p[i] = f(grid[i]);
    q[i] = g(grid[i]);
  }
  return js_percent_on_grid(grid, p, q);
}

inline double silverman_bandwidth(const Vec& x) {
  const double n = static_cast<double>(x.size());
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / (n - 1.0));
  std::vector<double> v(x.data(), x.data() + x.size());
  const double iqr = sample_quantile(v, 0.75) - sample_quantile(v, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 1.0;
  return 0.9 * spread * std::pow(n, -0.2);
}

/// Gaussian-kernel density estimate on a grid. Large samples are first
/// linearly binned onto a mesh about 40 bins per bandwidth wide.
inline Vec kde_on_grid(const Vec& samples, const Vec& grid, double h) {
  const double norm = kInvSqrt2Pi / (static_cast<double>(samples.size()) * h);
  Vec out = Vec::Zero(grid.size());
  if (samples.size() <= 4096) {
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < samples.size(); ++k) {
        const double z = (grid[i] - samples[k]) / h;
        if (std::abs(z) < 9.0) s += std::exp(-0.5 * z * z);
      }
      out[i] = s * norm;
    }
    return out;
  }
  const double lo = samples.minCoeff(), hi = samples.maxCoeff();
  const int bins = std::clamp(static_cast<int>(40.0 * (hi - lo) / h), 2, 1 << 20);
  const double step = (hi - lo) / (bins - 1);
  if (!(step > 0.0)) {
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      const double z = (grid[i] - lo) / h;
      out[i] = std::exp(-0.5 * z * z) * samples.size() * norm;
    }
    return out;
  }
  Vec weight = Vec::Zero(bins);
  for (Eigen::Index k = 0; k < samples.size(); ++k) {
    const double pos = (samples[k] - lo) / step;
    const int b = std::min(static_cast<int>(pos), bins - 2);
    const double frac = pos - b;
    weight[b] += 1.0 - frac;
    weight[b + 1] += frac;
  }
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const int first = std::max(0, static_cast<int>(std::floor((grid[i] - 9.0 * h - lo) / step)));
    const int last = std::min(bins - 1, static_cast<int>(std::ceil((grid[i] + 9.0 * h - lo) / step)));
    double s = 0.0;
    for (int b = first; b <= last; ++b) {
      if (weight[b] == 0.0) continue;
      const double z = (grid[i] - (lo + b * step)) / h;
      s += weight[b] * std::exp(-0.5 * z * z);
    }
    out[i] = s * norm;
  }
  return out;
}

/// KDE of constrained-scale samples against the fitted SN density on the
/// constrained scale, over the union of both supports.
inline double js_percent(const SkewNormalMarginal& mg, const Vec& samples, int points = 512) {
  const double h = silverman_bandwidth(samples);
  const double lo = std::min(samples.minCoeff() - 4.0 * h, mg.quantile_constrained(1e-7));
  const double hi = std::max(samples.maxCoeff() + 4.0 * h, mg.quantile_constrained(1.0 - 1e-7));
  const Vec grid = Vec::LinSpaced(points, lo, hi);
  Vec q(points);
  for (int i = 0; i < points; ++i) q[i] = mg.density_constrained(grid[i]);
  return js_percent_on_grid(grid, kde_on_grid(samples, grid, h), q);
}

// ---------------------------------------------------------------------------
// Comparison with an MCMC oracle

/// Summaries of a sample; the mode is the KDE maximizer.
inline MarginalSummary empirical_summary(const Vec& x) {
  MarginalSummary s;
  const double n = static_cast<double>(x.size());
  s.mean = x.mean();
  s.sd = std::sqrt((x.array() - s.mean).square().sum() / (n - 1.0));
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  s.median = sample_quantile(v, 0.5);
  s.q025 = sample_quantile(v, 0.025);
  s.q975 = sample_quantile(v, 0.975);
  const double h = silverman_bandwidth(x);
  const Vec grid = Vec::LinSpaced(512, s.q025, s.q975);
  Eigen::Index k;
  kde_on_grid(x, grid, h).maxCoeff(&k);
  s.mode = grid[k];
  return s;
}

struct ParamComparison {
  std::string name;
  std::string group;
  MarginalSummary approx, mcmc;
  double err_mean = 0, err_sd = 0, err_median = 0, err_q025 = 0, err_q975 = 0, err_mode = 0;
  double std_discrepancy = 0;  // |mean error| / sd_mcmc
  double js = 0;
  double rhat = 0, ess = 0;
};

struct GroupAggregate {
  std::string group;
  int count = 0;
  double median_err_mean = 0, median_err_sd = 0, median_err_median = 0, median_err_q025 = 0, median_err_q975 = 0,
         median_err_mode = 0;
  double median_std_discrepancy = 0, max_std_discrepancy = 0;
  double median_js = 0, min_js = 0;
};

struct ComparisonReport {
  std::vector<ParamComparison> params;
  std::vector<GroupAggregate> groups;
  double median_js = 0, min_js = 0, max_std_discrepancy = 0;
  double max_rhat = 0, min_ess = 0;
};

inline ParamComparison compare_summaries(const MarginalSummary& approx, const MarginalSummary& mcmc) {
  ParamComparison c;
  c.approx = approx;
  c.mcmc = mcmc;
  c.err_mean = std::abs(approx.mean - mcmc.mean);
  c.err_sd = std::abs(approx.sd - mcmc.sd);
  c.err_median = std::abs(approx.median - mcmc.median);
  c.err_q025 = std::abs(approx.q025 - mcmc.q025);
  c.err_q975 = std::abs(approx.q975 - mcmc.q975);
  c.err_mode = std::abs(approx.mode - mcmc.mode);
  c.std_discrepancy = c.err_mean / mcmc.sd;
  return c;
}

inline void aggregate_report(ComparisonReport& rep) {
  std::map<std::string, std::vector<const ParamComparison*>> by;
  std::vector<std::string> order;
  for (const auto& p : rep.params) {
    if (!by.count(p.group)) order.push_back(p.group);
    by[p.group].push_back(&p);
  }
  auto med = [](const std::vector<const ParamComparison*>& v, double ParamComparison::*f) {
    std::vector<double> xs;
    for (auto* p : v) xs.push_back(p->*f);
    return median(xs);
  };
  rep.groups.clear();
  for (const auto& g : order) {
    const auto& v = by[g];
    GroupAggregate a;
    a.group = g;
    a.count = static_cast<int>(v.size());
    a.median_err_mean = med(v, &ParamComparison::err_mean);
    a.median_err_sd = med(v, &ParamComparison::err_sd);
    a.median_err_median = med(v, &ParamComparison::err_median);
    a.median_err_q025 = med(v, &ParamComparison::err_q025);
    a.median_err_q975 = med(v, &ParamComparison::err_q975);
    a.median_err_mode = med(v, &ParamComparison::err_mode);
    a.median_std_discrepancy = med(v, &ParamComparison::std_discrepancy);
    a.median_js = med(v, &ParamComparison::js);
    a.max_std_discrepancy = 0.0;
    a.min_js = 100.0;
    for (auto* p : v) {
      a.max_std_discrepancy = std::max(a.max_std_discrepancy, p->std_discrepancy);
      a.min_js = std::min(a.min_js, p->js);
    }
    rep.groups.push_back(a);
  }
  std::vector<double> js;
  rep.min_js = 100.0;
  rep.max_std_discrepancy = 0.0;
  for (const auto& p : rep.params) {
    js.push_back(p.js);
    rep.min_js = std::min(rep.min_js, p.js);
    rep.max_std_discrepancy = std::max(rep.max_std_discrepancy, p.std_discrepancy);
  }
  rep.median_js = js.empty() ? 0.0 : median(js);
}

struct ComparisonGate {
  double rhat_max = 1.01;
  double min_ess = 100.0;
};

/// groups[j] names the class used for aggregation (empty: one group).
inline ComparisonReport compare_to_mcmc(const PosteriorResult& result, const McmcRun& run,
                                        const std::vector<std::string>& groups = {}, const ComparisonGate& gate = {},
                                        int threads = 1) {
  if (!run.usable(gate.rhat_max))
    throw OracleUnusableError("MCMC oracle fails the split-Rhat gate (max " + std::to_string(run.rhat.maxCoeff()) + ")");
  if (run.ess.minCoeff() < gate.min_ess)
    throw OracleUnusableError("MCMC oracle fails the ESS gate (min " + std::to_string(run.ess.minCoeff()) + ")");
  const int m = result.dim();
  if (run.dim() != m || static_cast<int>(result.summaries.size()) != m)
    throw DomainError("posterior result and MCMC run disagree on dimension, or result lacks marginals");
  const Mat pooled = run.pooled();
  ComparisonReport rep;
  rep.params.resize(m);
  parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    const Transform t = result.marginals[j].transform;
    Vec c(pooled.rows());
    for (Eigen::Index i = 0; i < pooled.rows(); ++i) c[i] = to_constrained(t, pooled(i, j));
    ParamComparison pc = compare_summaries(result.summaries[j], empirical_summary(c));
    pc.name = j < static_cast<int>(result.names.size()) ? result.names[j] : std::to_string(j);
    pc.group = j < static_cast<int>(groups.size()) ? groups[j] : "all";
    pc.js = js_percent(result.marginals[j], c);
    pc.rhat = run.rhat[j];
    pc.ess = run.ess[j];
    rep.params[j] = std::move(pc);
  });
  rep.max_rhat = run.rhat.maxCoeff();
  rep.min_ess = run.ess.minCoeff();
  aggregate_report(rep);
  return rep;
}

inline std::vector<std::string> parameter_groups(const ModelSpec& model) {
  std::vector<std::string> out;
  for (const auto& p : model.params()) out.push_back(to_string(p.kind));
  return out;
}

/// MCMC oracle for a SEM posterior, started around a Laplace fit.
inline McmcRun mcmc_oracle(const SemPosterior& post, const LaplaceFit& fit, const McmcOptions& opt = {}) {
  return adaptive_metropolis(post, fit.mode, fit.covariance, opt);
}

// ---------------------------------------------------------------------------
// Failure classification shared by the simulation harnesses

inline std::string failure_cause(const std::exception& e) {
  if (dynamic_cast<const ConvergenceError*>(&e)) return "convergence";
  if (dynamic_cast<const HessianError*>(&e)) return "hessian";
  if (dynamic_cast<const ProfilingError*>(&e)) return "profiling";
  if (dynamic_cast<const ImpliedCovarianceError*>(&e) || dynamic_cast<const StructuralSingularityError*>(&e) ||
      dynamic_cast<const DegenerateConditionalError*>(&e))
    return "inadmissible";
  return "other";
}

struct HarnessOptions {
  PipelineOptions pipeline;  // stage is forced to vb
  int threads = 1;
};

namespace detail {

inline PipelineOptions harness_pipeline(const HarnessOptions& h, std::uint64_t seed) {
  PipelineOptions p = h.pipeline;
  p.stage = std::min(p.stage, Stage::Vb);
  p.seed = seed;
  p.threads = 1;
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Recovery study

struct RecoveryRow {
  int n = 0;
  int attempts = 0;
  int successes = 0;
  std::map<std::string, int> failures;
  Vec cr95, cr50, mls;  // per parameter, over successful replications
};

struct RecoveryReport {
  std::vector<std::string> names;
  Vec truth;
  std::vector<RecoveryRow> rows;
};

inline RecoveryReport recovery_study(const ModelSpec& model, const Vec& theta_true, const std::vector<int>& n_list,
                                     int b, std::uint64_t seed, const HarnessOptions& opt = {}) {
  const int m = model.m();
  if (theta_true.size() != m) throw DomainError("true parameter vector has the wrong length");
  const ParamVector truth = ParamVector::from_constrained(model, theta_true);
  RecoveryReport rep;
  rep.names = parameter_names(model);
  rep.truth = theta_true;
  for (int n : n_list) {
    struct Rep {
      bool ok = false;
      std::string cause;
      Vec in95, in50, ls;
    };
    std::vector<Rep> reps(b);
    const std::uint64_t nseed = derive_seed(seed, static_cast<std::uint64_t>(n));
    parallel_for(static_cast<std::size_t>(b), opt.threads, [&](std::size_t i) {
      Rep& r = reps[i];
      try {
        const std::uint64_t s = derive_seed(nseed, i);
        const SemPosterior post(model, simulate_dataset(model, truth, n, s));
        const PosteriorResult res = run_posterior(post, detail::harness_pipeline(opt, derive_seed(s, 7)));
        r.in95.resize(m);
        r.in50.resize(m);
        r.ls.resize(m);
        for (int j = 0; j < m; ++j) {
          const auto& mg = res.marginals[j];
          const double x = theta_true[j];
          r.in95[j] = (mg.quantile_constrained(0.025) <= x && x <= mg.quantile_constrained(0.975)) ? 1.0 : 0.0;
          r.in50[j] = (mg.quantile_constrained(0.25) <= x && x <= mg.quantile_constrained(0.75)) ? 1.0 : 0.0;
          r.ls[j] = std::log(mg.density_constrained(x));
        }
        r.ok = true;
      } catch (const Error& e) {
        r.cause = failure_cause(e);
      }
    });
    RecoveryRow row;
    row.n = n;
    row.attempts = b;
    row.cr95 = Vec::Zero(m);
    row.cr50 = Vec::Zero(m);
    row.mls = Vec::Zero(m);
    for (const auto& r : reps) {
      if (!r.ok) {
        ++row.failures[r.cause];
        continue;
      }
      ++row.successes;
      row.cr95 += r.in95;
      row.cr50 += r.in50;
      row.mls += r.ls;
    }
    if (row.successes > 0) {
      row.cr95 /= row.successes;
      row.cr50 /= row.successes;
      row.mls /= row.successes;
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Simulation-based calibration

struct SbcReport {
  std::vector<std::string> names;
  PriorSet prior_set = PriorSet::Informative;
  int n = 0;
  int requested = 0;
  int attempts = 0;
  int successes = 0;
  std::map<std::string, int> failure_causes;
  Mat pit;             // successes x m
  Mat truth_success;   // successes x m, constrained
  Mat truth_failure;   // failures x m, constrained
  Vec ecdf_grid;       // interior grid on (0,1)
  Mat ecdf;            // m x grid
  Vec band_lower, band_upper;  // pointwise 99% binomial band
  Vec ks;              // per parameter
  Vec frac_outside;    // share of grid points outside the band

  double failure_rate() const { return attempts > 0 ? 1.0 - static_cast<double>(successes) / attempts : 0.0; }
};

/// Kolmogorov-Smirnov distance of a sample of PIT values from U(0,1).
inline double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) d = std::max({d, (i + 1) / n - u[i], u[i] - i / n});
  return d;
}

/// Fills ECDFs, bands and KS statistics from the PIT matrix.
inline void sbc_statistics(SbcReport& r, int grid_points = 99) {
  const int b = static_cast<int>(r.pit.rows()), m = static_cast<int>(r.pit.cols());
  r.ecdf_grid = Vec::LinSpaced(grid_points + 2, 0.0, 1.0).segment(1, grid_points);
  r.band_lower.resize(grid_points);
  r.band_upper.resize(grid_points);
  for (int k = 0; k < grid_points; ++k) {
    boost::math::binomial_distribution<double> bin(b, r.ecdf_grid[k]);
    r.band_lower[k] = boost::math::quantile(bin, 0.005) / b;
    r.band_upper[k] = boost::math::quantile(boost::math::complement(bin, 0.005)) / b;
  }
  r.ecdf.resize(m, grid_points);
  r.ks.resize(m);
  r.frac_outside.resize(m);
  for (int j = 0; j < m; ++j) {
    std::vector<double> u(r.pit.col(j).data(), r.pit.col(j).data() + b);
    r.ks[j] = ks_uniform(u);
    int outside = 0;
    for (int k = 0; k < grid_points; ++k) {
      const double f = static_cast<double>(std::count_if(u.begin(), u.end(), [&](double v) { return v <= r.ecdf_grid[k]; })) / b;
      r.ecdf(j, k) = f;
      outside += (f < r.band_lower[k] || f > r.band_upper[k]) ? 1 : 0;
    }
    r.frac_outside[j] = static_cast<double>(outside) / grid_points;
  }
}

struct SbcOptions : HarnessOptions {
  int max_attempts = 0;  // 0: 100 * B
};

/// Draw from the prior, simulate, fit, record PIT; failures are discarded and
/// counted until B successes. Attempts run in batches, and successes are
/// taken in attempt order, so the result does not depend on threads.
inline SbcReport sbc_check(const ModelSpec& base, int n, int b, PriorSet prior_set, std::uint64_t seed,
                           const SbcOptions& opt = {}) {
  const ModelSpec model = base.with_prior_set(prior_set);
  const int m = model.m();
  const int max_attempts = opt.max_attempts > 0 ? opt.max_attempts : 100 * b;
  SbcReport rep;
  rep.names = parameter_names(model);
  rep.prior_set = prior_set;
  rep.n = n;
  rep.requested = b;
  std::vector<Vec> pits, ok_truth, bad_truth;

  struct Attempt {
    bool ok = false;
    std::string cause;
    Vec truth, pit;
  };
  const int batch = std::max(8, 4 * std::max(1, opt.threads));
  int next = 0;
  while (static_cast<int>(pits.size()) < b && next < max_attempts) {
    const int count = std::min(batch, max_attempts - next);
    std::vector<Attempt> at(count);
    parallel_for(static_cast<std::size_t>(count), opt.threads, [&](std::size_t i) {
      Attempt& a = at[i];
      const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(next) + i);
      std::mt19937_64 rng(s);
      a.truth.resize(m);
      for (int j = 0; j < m; ++j) a.truth[j] = prior_draw(model.param(j).prior, rng);
      DataSet data;
      try {
        data = simulate_dataset(model, ParamVector::from_constrained(model, a.truth), n, derive_seed(s, 1));
      } catch (const Error&) {
        a.cause = "inadmissible prior draw";
        return;
      }
      try {
        const SemPosterior post(model, data);
        const PosteriorResult res = run_posterior(post, detail::harness_pipeline(opt, derive_seed(s, 2)));
        a.pit.resize(m);
        for (int j = 0; j < m; ++j) a.pit[j] = res.marginals[j].cdf_constrained(a.truth[j]);
        a.ok = a.pit.allFinite();
        if (!a.ok) a.cause = "other";
      } catch (const Error& e) {
        a.cause = failure_cause(e);
      }
    });
    for (auto& a : at) {
      if (static_cast<int>(pits.size()) >= b) break;
      ++rep.attempts;
      if (a.ok) {
        pits.push_back(a.pit);
        ok_truth.push_back(a.truth);
      } else {
        ++rep.failure_causes[a.cause];
        bad_truth.push_back(a.truth);
      }
    }
    next += count;
  }
  rep.successes = static_cast<int>(pits.size());
  auto stack = [m](const std::vector<Vec>& rows) {
    Mat out(rows.size(), m);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = rows[i].transpose();
    return out;
  };
  rep.pit = stack(pits);
  rep.truth_success = stack(ok_truth);
  rep.truth_failure = stack(bad_truth);
  if (rep.successes > 0) sbc_statistics(rep);
  return rep;
}

}  // namespace sembayes
