// Acceptance report: one PASS/FAIL line per criterion, plus INFO lines.
// Exit status is 0 when every criterion was evaluated; --strict also
// requires every criterion to pass.

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <chrono>
#include <cstdio>
#include <thread>

#include "CLI11.hpp"
#include "sembayes/io/csv.hpp"
#include "sembayes/io/model_file.hpp"
#include "sembayes/validate.hpp"
#include "support/fixtures.hpp"

using namespace sembayes;
using namespace sembayes::testing;

namespace {

const std::string kModels = SEMBAYES_MODELS_DIR;
constexpr std::uint64_t kSeed = 20240611;  // the command-line default

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int g_threads = 1;

// ---------------------------------------------------------------------------
// 1. Gaussian exactness

Outcome gaussian_exactness() {
  double mean_err = 0, sd_err = 0, slope = 0, shift = 0, evid = 0;
  for (int m : {2, 5, 10}) {
    const GaussianTarget t = random_gaussian_target(m, 1000 + m);
    std::vector<std::string> names;
    for (int j = 0; j < m; ++j) names.push_back("x" + std::to_string(j));
    PipelineOptions opt;
    opt.seed = 17;
    const PosteriorResult r = run_posterior(t, Vec::Zero(m), std::vector<Transform>(m, Transform::Identity), names, opt);
    const Mat cov = t.covariance();
    for (int j = 0; j < m; ++j) {
      const auto mo = sn_moments(r.marginals[j].shifted());
      mean_err = std::max(mean_err, std::abs(mo.mean - t.mu[j]));
      sd_err = std::max(sd_err, std::abs(std::sqrt(mo.variance) - std::sqrt(cov(j, j))));
      slope = std::max(slope, std::abs(r.marginals[j].vol_slope));
    }
    shift = std::max(shift, r.vb->delta_whitened.cwiseAbs().maxCoeff());
    evid = std::max(evid, std::abs(r.laplace.log_evidence - t.log_normalizer()));
  }
  return {mean_err < 1e-3 && sd_err < 1e-3 && slope < 2e-3 && shift < 5e-3 && evid < 1e-8,
          fmt("max |mean err| %.1e, |sd err| %.1e, |vol slope| %.1e, |delta| %.1e, |log evidence err| %.1e", mean_err,
              sd_err, slope, shift, evid)};
}

// ---------------------------------------------------------------------------
// 2. Volume slope vs determinant oracle

Mat drop(const Mat& h, int j) {
  const int m = static_cast<int>(h.rows());
  Mat out(m - 1, m - 1);
  for (int a = 0, ra = 0; a < m; ++a) {
    if (a == j) continue;
    for (int b = 0, rb = 0; b < m; ++b)
      if (b != j) out(ra, rb++) = h(a, b);
    ++ra;
  }
  return out;
}

template <class HessFn>
double determinant_slope(const LaplaceFit& fit, int j, HessFn hess, double h) {
  const Vec v = fit.covariance.col(j) / std::sqrt(fit.covariance(j, j));
  auto gamma = [&](double t) { return -0.5 * std::log(drop(hess(Vec(fit.mode + t * v)), j).determinant()); };
  return (-gamma(2 * h) + 8 * gamma(h) - 8 * gamma(-h) + gamma(-2 * h)) / (12 * h);
}

Outcome volume_slope_oracle() {
  double worst = 0;
  const MixedLogGammaTarget lg = mixed_log_gamma_target();
  const LaplaceFit f1 = laplace_fit(lg, Vec::Zero(lg.dim()));
  for (int j = 0; j < lg.dim(); ++j) {
    const double oracle = determinant_slope(
        f1, j,
        [&](const Vec& x) {
          const Vec y = lg.mix_inv * x;
          Vec d(lg.dim());
          for (int i = 0; i < lg.dim(); ++i) d[i] = lg.rate[i] * std::exp(y[i]);
          return Mat(lg.mix_inv.transpose() * d.asDiagonal() * lg.mix_inv);
        },
        1e-3);
    worst = std::max(worst, std::abs(volume_slope(lg, f1, j) - oracle) / std::abs(oracle));
  }
  ModelBuilder b({"y1", "y2", "y3"}, {"f"});
  b.fix_loading(0, 0, 1.0).free_loading(1, 0).free_loading(2, 0).fix_latent_intercept(0, 0.0);
  for (int i = 0; i < 3; ++i) b.fix_intercept(i, 0.0);
  const ModelSpec sem = b.build();
  const SemPosterior post(sem, simulated_data(sem, 40, 5));
  const LaplaceFit f2 = laplace_fit(post);
  for (int j = 0; j < sem.m(); ++j) {
    const double oracle = determinant_slope(f2, j, [&](const Vec& x) { return neg_hessian_at(post, x); }, 1e-2);
    worst = std::max(worst, std::abs(volume_slope(post, f2, j) - oracle) / std::abs(oracle));
  }
  return {worst < 0.01, fmt("mixed log-gamma (m=4) and 1-factor SEM (m=%d): max relative error %.2e", sem.m(), worst)};
}

// ---------------------------------------------------------------------------
// 3. End to end against a gated MCMC oracle

struct OracleOutcome {
  bool gate_ok = false;
  ComparisonReport rep;
  double max_rhat = 0, min_ess = 0;
};

OracleOutcome oracle_comparison(const std::string& model_file, const std::string& data_file) {
  const ModelFile mf = load_model_file(kModels + "/" + model_file);
  const SemPosterior post(mf.model, load_csv(kModels + "/" + data_file, mf.model));
  PipelineOptions po;
  po.seed = kSeed;
  po.threads = g_threads;
  const PosteriorResult r = run_posterior(post, po);
  McmcOptions mo;
  mo.chains = 4;
  mo.warmup = 10000;
  mo.draws = 50000;
  mo.seed = kSeed;
  mo.require_usable = false;
  mo.threads = g_threads;
  const McmcRun run = mcmc_oracle(post, r.laplace, mo);
  OracleOutcome out;
  out.max_rhat = run.rhat.maxCoeff();
  out.min_ess = run.ess.minCoeff();
  try {
    out.rep = compare_to_mcmc(r, run, parameter_groups(mf.model), ComparisonGate{1.01, 2000.0}, g_threads);
    out.gate_ok = true;
  } catch (const OracleUnusableError&) {
  }
  return out;
}

Outcome oracle_end_to_end() {
  const OracleOutcome o = oracle_comparison("small.yaml", "small.csv");
  if (!o.gate_ok) return {false, fmt("oracle gate failed: max Rhat %.4f, min ESS %.0f", o.max_rhat, o.min_ess)};
  const auto& r = o.rep;
  return {r.max_std_discrepancy < 0.25 && r.median_js >= 95.0 && r.min_js >= 90.0,
          fmt("m=%zu n=200: max |dmean|/sd %.3f, JS median %.2f%% min %.2f%% (oracle Rhat %.4f, ESS %.0f)",
              r.params.size(), r.max_std_discrepancy, r.median_js, r.min_js, o.max_rhat, o.min_ess)};
}

std::string literal_m10_info() {
  const OracleOutcome o = oracle_comparison("small_m10.yaml", "small_m10.csv");
  if (!o.gate_ok) return fmt("m=10 variant: oracle gate failed (max Rhat %.4f, min ESS %.0f)", o.max_rhat, o.min_ess);
  const auto& r = o.rep;
  return fmt("m=10 variant: max |dmean|/sd %.3f, JS median %.2f%% min %.2f%% (oracle Rhat %.4f, ESS %.0f)",
             r.max_std_discrepancy, r.median_js, r.min_js, o.max_rhat, o.min_ess);
}

// ---------------------------------------------------------------------------
// 4. Coverage

Outcome coverage() {
  const ModelFile mf = load_model_file(kModels + "/small.yaml");
  HarnessOptions h;
  h.threads = g_threads;
  const RecoveryReport rep = recovery_study(mf.model, *mf.truth, {100, 400}, 200, kSeed, h);
  bool ok = true;
  std::string worst;
  double worst_gap = -1;
  for (const auto& row : rep.rows) {
    if (row.successes == 0) return {false, fmt("no successful fits at n=%d", row.n)};
    boost::math::binomial_distribution<double> bin(row.successes, 0.95);
    const double lo = boost::math::quantile(bin, 0.005) / row.successes;
    const double hi = boost::math::quantile(boost::math::complement(bin, 0.005)) / row.successes;
    for (int j = 0; j < row.cr95.size(); ++j) {
      const double c = row.cr95[j];
      const double gap = c < lo ? lo - c : c > hi ? c - hi : 0.0;
      if (gap > 0) ok = false;
      if (gap > worst_gap) {
        worst_gap = gap;
        worst = fmt("%s CR95 %.3f at n=%d, band [%.3f, %.3f]", rep.names[j].c_str(), c, row.n, lo, hi);
      }
    }
  }
  int increasing = 0;
  const int m = static_cast<int>(rep.names.size());
  for (int j = 0; j < m; ++j) increasing += rep.rows[1].mls[j] > rep.rows[0].mls[j] ? 1 : 0;
  int outside = 0;
  for (const auto& row : rep.rows) {
    boost::math::binomial_distribution<double> bin(row.successes, 0.95);
    const double lo = boost::math::quantile(bin, 0.005) / row.successes;
    const double hi = boost::math::quantile(boost::math::complement(bin, 0.005)) / row.successes;
    for (int j = 0; j < m; ++j) outside += (row.cr95[j] < lo || row.cr95[j] > hi) ? 1 : 0;
  }
  const bool mls_ok = increasing >= 0.9 * m;
  return {ok && mls_ok, fmt("%d of %d CR95 cells outside the 99%% band (worst: %s); MLS(400) > MLS(100) for %d/%d",
                            outside, 2 * m, worst.c_str(), increasing, m)};
}

// ---------------------------------------------------------------------------
// 5. SBC

double median(const Vec& v) {
  std::vector<double> x(v.data(), v.data() + v.size());
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

const double kSbcKsBound = 1.2 / std::sqrt(200.0);

bool sbc_calibrated(const SbcReport& r) {
  return r.successes == 200 && median(r.ks) < kSbcKsBound && r.frac_outside.maxCoeff() <= 0.05;
}

Outcome sbc() {
  const ModelFile mf = load_model_file(kModels + "/small.yaml");
  SbcOptions o;
  o.threads = g_threads;
  const SbcReport inf = sbc_check(mf.model, 200, 200, PriorSet::Informative, kSeed, o);
  const SbcReport dif = sbc_check(mf.model, 200, 200, PriorSet::Diffuse, kSeed, o);
  const double med = median(inf.ks);
  const double bound = kSbcKsBound;
  const double worst = inf.frac_outside.maxCoeff();
  const bool calib = sbc_calibrated(inf);
  const bool contrast = dif.failure_rate() > inf.failure_rate();
  return {calib && contrast,
          fmt("informative: median KS %.4f (< %.4f), worst band excursion %.1f%% of grid; failure rate diffuse %.3f "
              "(%d/%d) vs informative %.3f (%d/%d)",
              med, bound, 100 * worst, dif.failure_rate(), dif.attempts - dif.successes, dif.attempts,
              inf.failure_rate(), inf.attempts - inf.successes, inf.attempts)};
}

std::string sbc_seed_info() {
  const ModelFile mf = load_model_file(kModels + "/small.yaml");
  SbcOptions o;
  o.threads = g_threads;
  int pass = 0;
  double ks_sum = 0;
  const int seeds = 10;
  for (int k = 1; k <= seeds; ++k) {
    const SbcReport r = sbc_check(mf.model, 200, 200, PriorSet::Informative, derive_seed(kSeed, k), o);
    pass += sbc_calibrated(r) ? 1 : 0;
    ks_sum += r.ks.mean();
  }
  return fmt("informative calibration check over %d further seeds: %d pass, mean KS %.4f", seeds, pass, ks_sum / seeds);
}

std::string sbc_contrast_info() {
  const ModelFile mf = load_model_file(kModels + "/democracy42.yaml");
  SbcOptions o;
  o.threads = g_threads;
  const SbcReport inf = sbc_check(mf.model, 75, 10, PriorSet::Informative, kSeed, o);
  const SbcReport dif = sbc_check(mf.model, 75, 10, PriorSet::Diffuse, kSeed, o);
  return fmt("m=42 model, n=75, 10 successes each: failure rate diffuse %.3f (%d attempts) vs informative %.3f (%d attempts)",
             dif.failure_rate(), dif.attempts, inf.failure_rate(), inf.attempts);
}

// ---------------------------------------------------------------------------
// 6. Distribution-function precision

Outcome precision() {
  boost::math::quadrature::tanh_sinh<double> ts;
  double t_err = 0;
  for (double h = -5.0; h <= 5.0 + 1e-9; h += 0.25)
    for (double a : {-40.0, -10.0, -2.0, -1.0, -0.3, 0.05, 0.5, 1.0, 1.7, 4.0, 12.0, 40.0}) {
      auto f = [h](double t) { return std::exp(-0.5 * h * h * (1 + t * t)) / (1 + t * t); };
      const double oracle = ts.integrate(f, 0.0, a, 1e-15) / (2 * M_PI);
      t_err = std::max(t_err, std::abs(owens_t(h, a) - oracle));
    }
  double rt_err = 0;
  for (double a : {-20.0, -5.0, -1.0, 0.0, 0.7, 3.0, 20.0})
    for (double tau : {1e-8, 1e-4, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1 - 1e-4, 1 - 1e-8}) {
      const SkewNormalParams p{0.4, 1.3, a};
      rt_err = std::max(rt_err, std::abs(sn_cdf(p, sn_quantile(p, tau)) - tau));
    }
  double mo_err = 0;
  for (const SkewNormalParams p : {SkewNormalParams{1, 2, -3}, SkewNormalParams{0, 0.5, 8}, SkewNormalParams{-2, 1, 0.4}}) {
    auto moment = [&](int k) {
      return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          [&](double x) { return std::pow(x, k) * sn_pdf(p, x); }, -kInf, kInf, 15u, 1e-14);
    };
    const double m1 = moment(1), m2 = moment(2), m3 = moment(3);
    const double var = m2 - m1 * m1;
    const double skew = (m3 - 3 * m1 * var - m1 * m1 * m1) / std::pow(var, 1.5);
    const auto m = sn_moments(p);
    mo_err = std::max({mo_err, std::abs(m.mean - m1), std::abs(m.variance - var), std::abs(m.skewness - skew)});
  }
  return {t_err < 1e-10 && rt_err < 1e-9 && mo_err < 1e-6,
          fmt("Owen's T max err %.1e, cdf/quantile round trip %.1e, moments %.1e", t_err, rt_err, mo_err)};
}

// ---------------------------------------------------------------------------
// 7. Copula fidelity

double ks_distance(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  return d;
}

Outcome copula_fidelity() {
  const int b = 4096;
  const double ks_bound = 1.63 / std::sqrt(static_cast<double>(b));
  double ks_worst = 0, r_worst = 0;
  struct Case {
    SkewNormalParams a, c;
    double r;
  };
  for (const Case& cs : {Case{{0, 1, 5}, {0, 1, 5}, 0.5}, Case{{0, 1, 5}, {1, 2, -4}, 0.6}, Case{{0, 1, 8}, {0, 0.5, 3}, -0.4}}) {
    std::vector<SkewNormalMarginal> ms(2);
    ms[0].j = 0;
    ms[0].params = cs.a;
    ms[1].j = 1;
    ms[1].params = cs.c;
    const Mat omega = (Mat(2, 2) << 1.0, cs.r, cs.r, 1.0).finished();
    const CopulaModel c = make_copula(omega, ms);
    const JointDraws d = sample_joint(c, b, 2024);
    for (int j = 0; j < 2; ++j) {
      const SkewNormalParams p = ms[j].shifted();
      std::vector<double> col(d.draws_unconstrained.col(j).data(), d.draws_unconstrained.col(j).data() + b);
      ks_worst = std::max(ks_worst, ks_distance(col, [&](double x) { return sn_cdf(p, x); }));
    }
    const Vec x = d.draws_unconstrained.col(0).array() - d.draws_unconstrained.col(0).mean();
    const Vec y = d.draws_unconstrained.col(1).array() - d.draws_unconstrained.col(1).mean();
    r_worst = std::max(r_worst, std::abs(x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm()) - cs.r));
  }
  return {ks_worst < ks_bound && r_worst < 0.03,
          fmt("B=%d: max marginal KS %.4f (< %.4f), max |Pearson - R| %.4f", b, ks_worst, ks_bound, r_worst)};
}

// ---------------------------------------------------------------------------
// 8. Performance class

Outcome performance(double& seconds) {
  const ModelFile mf = load_model_file(kModels + "/democracy42.yaml");
  const SemPosterior post(mf.model, load_csv(kModels + "/democracy42.csv", mf.model));
  const auto t0 = std::chrono::steady_clock::now();
  PipelineOptions po;
  po.threads = 1;
  const PosteriorResult r = run_posterior(post, po);
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string stages;
  for (const auto& [name, ms] : r.timings_ms) stages += fmt(" %s %.0f ms,", name.c_str(), ms);
  stages.pop_back();
  return {seconds < 20.0, fmt("m=%d, n=%d, single thread, full pipeline:%s (informational)", mf.model.m(),
                              post.data().n(), stages.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance report"};
  bool strict = false;
  std::vector<int> only;
  g_threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_flag("--strict", strict, "exit nonzero unless every criterion passes");
  app.add_option("--only", only, "criteria to run")->check(CLI::Range(1, 8));
  app.add_option("--threads", g_threads, "worker threads for harness loops")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* title;
    double budget_s;
    std::function<Outcome(double&)> run;
  };
  auto plain = [](Outcome (*f)()) {
    return [f](double&) { return f(); };
  };
  const std::vector<Criterion> criteria = {
      {1, "Gaussian exactness", 5, plain(gaussian_exactness)},
      {2, "volume slope oracle", 10, plain(volume_slope_oracle)},
      {3, "end to end vs MCMC", 180, plain(oracle_end_to_end)},
      {4, "coverage", 600, plain(coverage)},
      {5, "SBC", 900, plain(sbc)},
      {6, "distribution functions", 5, plain(precision)},
      {7, "copula fidelity", 30, plain(copula_fidelity)},
      {8, "performance class", 20, performance},
  };

  int passed = 0, evaluated = 0, errors = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    double inner = -1;
    try {
      o = c.run(inner);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
      ++errors;
    }
    const double s = inner >= 0 ? inner : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = s < c.budget_s;
    const bool pass = o.pass && in_time;
    std::printf("criterion %d %s: %s  %s; %.2f s (budget %.0f s)%s\n", c.id, c.title, pass ? "PASS" : "FAIL",
                o.detail.c_str(), s, c.budget_s, in_time ? "" : " OVER BUDGET");
    std::fflush(stdout);
    ++evaluated;
    passed += pass ? 1 : 0;
    try {
      if (c.id == 3) std::printf("  INFO %s\n", literal_m10_info().c_str());
      if (c.id == 5) {
        std::printf("  INFO %s\n", sbc_seed_info().c_str());
        std::printf("  INFO %s\n", sbc_contrast_info().c_str());
      }
    } catch (const std::exception& e) {
      std::printf("  INFO error: %s\n", e.what());
    }
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%d criteria pass\n", passed, evaluated);
  if (errors > 0) return 1;
  return strict && passed != evaluated ? 1 : 0;
}
