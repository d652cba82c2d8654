#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "sembayes/validate.hpp"
#include "support/fixtures.hpp"

using namespace sembayes;

namespace {

Vec ar1_chain(int n, double phi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vec x(n);
  x[0] = normal(rng) / std::sqrt(1.0 - phi * phi);
  for (int t = 1; t < n; ++t) x[t] = phi * x[t - 1] + normal(rng);
  return x;
}

Vec sn_sample(const SkewNormalParams& p, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const double delta = p.alpha / std::sqrt(1.0 + p.alpha * p.alpha);
  Vec x(n);
  for (int i = 0; i < n; ++i) {
    const double u0 = std::abs(normal(rng)), u1 = normal(rng);
    x[i] = p.xi + p.omega * (delta * u0 + std::sqrt(1.0 - delta * delta) * u1);
  }
  return x;
}

// Two indicators on one latent with every loading, variance and latent mean
// fixed: the intercepts have an exactly Gaussian posterior.
ModelSpec conjugate_intercepts_model() {
  ModelBuilder b({"y1", "y2"}, {"eta"});
  b.fix_loading(0, 0, 1.0).fix_loading(1, 0, 1.0);
  b.fix_residual_variance(0, 1.0).fix_residual_variance(1, 1.0);
  b.fix_latent_variance(0, 1.0).fix_latent_intercept(0, 0.0);
  return b.build();
}

ModelSpec identified_one_factor() {
  ModelBuilder b({"y1", "y2", "y3"}, {"eta"});
  b.fix_loading(0, 0, 1.0).free_loading(1, 0).free_loading(2, 0).fix_latent_intercept(0, 0.0);
  b.prior_set(PriorSet::Informative);
  return b.build();
}

}  // namespace

// ---------------------------------------------------------------------------
// Adaptive Metropolis

TEST(AdaptiveMetropolis, GaussianMeanAndCovarianceWithinMonteCarloError) {
  const auto t = sembayes::testing::random_gaussian_target(3, 11);
  McmcOptions opt;
  opt.warmup = 4000;
  opt.draws = 20000;
  opt.seed = 5;
  const McmcRun run = adaptive_metropolis(t, t.mu, Mat::Identity(3, 3), opt);
  const Mat cov = t.covariance();
  const Mat pooled = run.pooled();
  for (int j = 0; j < 3; ++j) {
    const Vec x = pooled.col(j);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().sum() / (x.size() - 1.0);
    const double se_mean = std::sqrt(cov(j, j) / run.ess[j]);
    const double se_var = cov(j, j) * std::sqrt(2.0 / run.ess[j]);
    EXPECT_NEAR(mean, t.mu[j], 3.0 * se_mean) << j;
    EXPECT_NEAR(var, cov(j, j), 3.0 * se_var) << j;
  }
  const Vec x0 = pooled.col(0), x1 = pooled.col(1);
  const double c01 = ((x0.array() - x0.mean()) * (x1.array() - x1.mean())).sum() / (x0.size() - 1.0);
  const double se_c01 = std::sqrt((cov(0, 0) * cov(1, 1) + cov(0, 1) * cov(0, 1)) / std::min(run.ess[0], run.ess[1]));
  EXPECT_NEAR(c01, cov(0, 1), 3.0 * se_c01);
}

TEST(AdaptiveMetropolis, AcceptanceAfterAdaptationInRange) {
  const auto t = sembayes::testing::random_gaussian_target(5, 3);
  McmcOptions opt;
  opt.warmup = 4000;
  opt.draws = 4000;
  const McmcRun run = adaptive_metropolis(t, t.mu, 4.0 * Mat::Identity(5, 5), opt);
  for (double a : run.acceptance) {
    EXPECT_GE(a, 0.15);
    EXPECT_LE(a, 0.5);
  }
  EXPECT_LT(run.rhat.maxCoeff(), 1.01);
}

TEST(AdaptiveMetropolis, LogGammaMeanMatchesQuadrature) {
  const sembayes::testing::LogGammaTarget t;
  auto dens = [&](double x) { return std::exp(t.log_density(Vec::Constant(1, x))); };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double z = GK::integrate(dens, -30.0, 8.0, 12u, 1e-13);
  const double mean = GK::integrate([&](double x) { return x * dens(x); }, -30.0, 8.0, 12u, 1e-13) / z;
  const double var = GK::integrate([&](double x) { return (x - mean) * (x - mean) * dens(x); }, -30.0, 8.0, 12u, 1e-13) / z;
  McmcOptions opt;
  opt.warmup = 4000;
  opt.draws = 20000;
  opt.seed = 9;
  const McmcRun run = adaptive_metropolis(t, Vec::Zero(1), Mat::Identity(1, 1), opt);
  EXPECT_NEAR(run.pooled().col(0).mean(), mean, 3.0 * std::sqrt(var / run.ess[0]));
}

TEST(AdaptiveMetropolis, DeterministicUnderSeedAndThreads) {
  const auto t = sembayes::testing::random_gaussian_target(2, 4);
  McmcOptions opt;
  opt.warmup = 500;
  opt.draws = 500;
  opt.require_usable = false;
  const McmcRun a = adaptive_metropolis(t, t.mu, Mat::Identity(2, 2), opt);
  opt.threads = 4;
  const McmcRun b = adaptive_metropolis(t, t.mu, Mat::Identity(2, 2), opt);
  for (std::size_t c = 0; c < a.chains.size(); ++c) EXPECT_EQ(a.chains[c], b.chains[c]);
}

TEST(AdaptiveMetropolis, SeparatedModesFailTheGate) {
  struct TwoModes {
    int dim() const { return 1; }
    double log_density(const Vec& x) const {
      const double a = -0.5 * (x[0] - 15.0) * (x[0] - 15.0), b = -0.5 * (x[0] + 15.0) * (x[0] + 15.0);
      return std::max(a, b) + std::log1p(std::exp(std::min(a, b) - std::max(a, b)));
    }
    Vec gradient(const Vec&) const { return Vec::Zero(1); }
  };
  McmcOptions opt;
  opt.chains = 8;
  opt.warmup = 500;
  opt.draws = 2000;
  opt.init_spread = 6.0;
  opt.seed = 2;
  EXPECT_THROW(adaptive_metropolis(TwoModes{}, Vec::Zero(1), Mat::Identity(1, 1), opt), OracleUnusableError);
  opt.require_usable = false;
  const McmcRun run = adaptive_metropolis(TwoModes{}, Vec::Zero(1), Mat::Identity(1, 1), opt);
  EXPECT_GT(run.rhat[0], 1.5);
}

TEST(Diagnostics, SplitRhatNearOneForIidChains) {
  std::vector<Vec> chains;
  for (int c = 0; c < 4; ++c) chains.push_back(ar1_chain(5000, 0.0, 100 + c));
  EXPECT_NEAR(split_rhat(chains), 1.0, 0.01);
}

TEST(Diagnostics, SplitRhatDetectsShiftedChain) {
  std::vector<Vec> chains;
  for (int c = 0; c < 4; ++c) chains.push_back(ar1_chain(2000, 0.0, 200 + c));
  chains[3].array() += 2.0;
  EXPECT_GT(split_rhat(chains), 1.1);
}

TEST(Diagnostics, SplitRhatDetectsTrendWithinChain) {
  Vec x = ar1_chain(4000, 0.0, 7);
  x.tail(2000).array() += 1.5;
  EXPECT_GT(split_rhat({x}), 1.1);
}

TEST(Diagnostics, EssOfIidChainsIsNearTotal) {
  std::vector<Vec> chains;
  for (int c = 0; c < 4; ++c) chains.push_back(ar1_chain(5000, 0.0, 300 + c));
  EXPECT_NEAR(effective_sample_size(chains) / 20000.0, 1.0, 0.1);
}

TEST(Diagnostics, EssOfAr1MatchesIntegratedAutocorrelation) {
  const double phi = 0.6;
  std::vector<Vec> chains;
  for (int c = 0; c < 4; ++c) chains.push_back(ar1_chain(50000, phi, 400 + c));
  const double expected = 200000.0 * (1.0 - phi) / (1.0 + phi);
  EXPECT_NEAR(effective_sample_size(chains) / expected, 1.0, 0.15);
}

// ---------------------------------------------------------------------------
// Jensen-Shannon similarity

TEST(JsPercent, IdenticalDensitiesGiveHundred) {
  auto f = [](double x) { return std::exp(sn_logpdf({0.3, 1.2, 2.0}, x)); };
  EXPECT_NEAR(js_percent(f, f, -6.0, 8.0), 100.0, 1e-12);
}

TEST(JsPercent, DisjointSupportsGiveZero) {
  auto f = [](double x) { return (x >= 0.0 && x < 1.0) ? 1.0 : 0.0; };
  auto g = [](double x) { return (x >= 2.0 && x < 3.0) ? 1.0 : 0.0; };
  EXPECT_NEAR(js_percent(f, g, -1.0, 4.0, 2048), 0.0, 1e-12);
}

TEST(JsPercent, SymmetricInItsArguments) {
  auto f = [](double x) { return std::exp(sn_logpdf({0.0, 1.0, 3.0}, x)); };
  auto g = [](double x) { return std::exp(sn_logpdf({0.4, 1.3, -1.0}, x)); };
  const double a = js_percent(f, g, -6.0, 6.0), b = js_percent(g, f, -6.0, 6.0);
  EXPECT_NEAR(a, b, 1e-12);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 100.0);
}

TEST(JsPercent, MatchesClosedFormForShiftedGaussians) {
  // JSD for N(0,1) vs N(d,1) by independent high-order quadrature.
  const double d = 1.0;
  auto f = [](double x) { return std::exp(norm_logpdf(x)); };
  auto g = [&](double x) { return std::exp(norm_logpdf(x - d)); };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double jsd = GK::integrate(
      [&](double x) {
        const double p = f(x), q = g(x), m = 0.5 * (p + q);
        return 0.5 * (p > 0 ? p * std::log(p / m) : 0.0) + 0.5 * (q > 0 ? q * std::log(q / m) : 0.0);
      },
      -12.0, 13.0, 10u, 1e-14);
  EXPECT_NEAR(js_percent(f, g, -12.0, 13.0, 4096), 100.0 * (1.0 - jsd / std::numbers::ln2), 1e-4);
}

TEST(JsPercent, SelfComparisonFromLargeSampleIsHigh) {
  SkewNormalMarginal mg;
  mg.params = {-0.2, 0.3, 4.0};
  mg.transform = Transform::Log;
  const Vec u = sn_sample(mg.params, 50000, 3);
  const Vec c = u.array().exp();
  EXPECT_GE(js_percent(mg, c), 99.0);
}

TEST(JsPercent, BinnedKdeAgreesWithDirectSum) {
  const Vec x = sn_sample({0.0, 1.0, 2.0}, 20000, 8);
  const double h = silverman_bandwidth(x);
  const Vec grid = Vec::LinSpaced(200, -3.0, 4.0);
  const Vec binned = kde_on_grid(x, grid, h);
  Vec direct = Vec::Zero(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    for (Eigen::Index k = 0; k < x.size(); ++k) direct[i] += std::exp(-0.5 * std::pow((grid[i] - x[k]) / h, 2));
    direct[i] *= kInvSqrt2Pi / (x.size() * h);
  }
  EXPECT_LT((binned - direct).cwiseAbs().maxCoeff(), 1e-3 * direct.maxCoeff());
}

// ---------------------------------------------------------------------------
// Comparison reports

TEST(CompareToMcmc, SplitHalvesAgreeWithinMonteCarloError) {
  const auto t = sembayes::testing::random_gaussian_target(2, 21);
  McmcOptions opt;
  opt.chains = 2;
  opt.warmup = 2000;
  opt.draws = 20000;
  const McmcRun run = adaptive_metropolis(t, t.mu, Mat::Identity(2, 2), opt);
  for (int j = 0; j < 2; ++j) {
    const ParamComparison c =
        compare_summaries(empirical_summary(run.chains[0].col(j)), empirical_summary(run.chains[1].col(j)));
    EXPECT_LT(c.std_discrepancy, 3.0 * std::sqrt(2.0 * 2.0 / run.ess[j])) << j;
  }
}

TEST(CompareToMcmc, OneSdShiftGivesUnitDiscrepancy) {
  MarginalSummary mcmc{1.0, 0.5, 1.0, 0.0, 2.0, 1.0};
  MarginalSummary approx = mcmc;
  approx.mean += mcmc.sd;
  EXPECT_NEAR(compare_summaries(approx, mcmc).std_discrepancy, 1.0, 1e-12);
}

TEST(CompareToMcmc, ShiftedResultAgainstRealRunGivesUnitDiscrepancy) {
  const auto t = sembayes::testing::random_gaussian_target(2, 22);
  McmcOptions opt;
  opt.warmup = 2000;
  opt.draws = 5000;
  const McmcRun run = adaptive_metropolis(t, t.mu, Mat::Identity(2, 2), opt);
  PosteriorResult r;
  r.laplace.mode = t.mu;
  r.names = {"a", "b"};
  for (int j = 0; j < 2; ++j) {
    const MarginalSummary s = empirical_summary(run.pooled().col(j));
    SkewNormalMarginal mg;
    mg.j = j;
    mg.params = {s.mean + s.sd, s.sd, 0.0};
    r.marginals.push_back(mg);
    MarginalSummary shifted = s;
    shifted.mean += s.sd;
    r.summaries.push_back(shifted);
  }
  const ComparisonReport rep = compare_to_mcmc(r, run);
  for (const auto& p : rep.params) EXPECT_NEAR(p.std_discrepancy, 1.0, 1e-9) << p.name;
}

TEST(CompareToMcmc, AggregationMatchesHandComputation) {
  ComparisonReport rep;
  const double errs[] = {0.3, 0.1, 0.2};
  const double js[] = {97.0, 99.0, 91.0};
  const double sd[] = {0.5, 1.0, 2.0};
  const char* groups[] = {"g1", "g2", "g1"};
  for (int j = 0; j < 3; ++j) {
    MarginalSummary m{0.0, sd[j], 0.0, -1.0, 1.0, 0.0};
    MarginalSummary a = m;
    a.mean = errs[j];
    ParamComparison p = compare_summaries(a, m);
    p.js = js[j];
    p.group = groups[j];
    rep.params.push_back(p);
  }
  aggregate_report(rep);
  EXPECT_DOUBLE_EQ(rep.median_js, 97.0);
  EXPECT_DOUBLE_EQ(rep.min_js, 91.0);
  EXPECT_DOUBLE_EQ(rep.max_std_discrepancy, 0.6);
  ASSERT_EQ(rep.groups.size(), 2u);
  EXPECT_EQ(rep.groups[0].group, "g1");
  EXPECT_EQ(rep.groups[0].count, 2);
  EXPECT_DOUBLE_EQ(rep.groups[0].median_err_mean, 0.25);
  EXPECT_DOUBLE_EQ(rep.groups[0].median_std_discrepancy, (0.6 + 0.1) / 2.0);
  EXPECT_DOUBLE_EQ(rep.groups[0].min_js, 91.0);
  EXPECT_DOUBLE_EQ(rep.groups[1].median_js, 99.0);
}

TEST(CompareToMcmc, GateRejectsUnconvergedOracle) {
  McmcRun run;
  run.chains = {Mat::Zero(10, 1), Mat::Zero(10, 1)};
  run.rhat = Vec::Constant(1, 1.2);
  run.ess = Vec::Constant(1, 5000.0);
  PosteriorResult r;
  EXPECT_THROW(compare_to_mcmc(r, run), OracleUnusableError);
  run.rhat[0] = 1.001;
  run.ess[0] = 10.0;
  EXPECT_THROW(compare_to_mcmc(r, run), OracleUnusableError);
}

// ---------------------------------------------------------------------------
// Simulation

TEST(SimulateDataset, SampleMomentsConvergeToImplied) {
  const ModelSpec model = sembayes::testing::rich_model();
  std::mt19937_64 rng(1);
  const ParamVector theta = ParamVector::from_constrained(model, sembayes::testing::plausible_constrained(model, rng));
  const ReducedForm rf = reduced_form(model, theta);
  const DataSet d = simulate_dataset(model, theta, 100000, 42);
  const double cov_err = ((d.scatter() - rf.sigma).array().abs() / rf.sigma.array().abs().maxCoeff()).maxCoeff();
  EXPECT_LT(cov_err, 0.05);
  for (int i = 0; i < model.p(); ++i) EXPECT_NEAR(d.mean()[i], rf.mu[i], 0.05 * std::max(1.0, std::abs(rf.mu[i])));
}

TEST(SimulateDataset, DeterministicUnderSeed) {
  const ModelSpec model = sembayes::testing::one_factor_model();
  std::mt19937_64 rng(2);
  const ParamVector theta = ParamVector::from_constrained(model, sembayes::testing::plausible_constrained(model, rng));
  EXPECT_EQ(simulate_dataset(model, theta, 50, 7).y(), simulate_dataset(model, theta, 50, 7).y());
  EXPECT_NE(simulate_dataset(model, theta, 50, 7).y(), simulate_dataset(model, theta, 50, 8).y());
}

// ---------------------------------------------------------------------------
// Recovery

TEST(RecoveryStudy, SingleReplicationCoverageIsZeroOrOne) {
  const ModelSpec model = identified_one_factor();
  std::mt19937_64 rng(3);
  const Vec truth = sembayes::testing::plausible_constrained(model, rng);
  const RecoveryReport rep = recovery_study(model, truth, {200}, 1, 11);
  ASSERT_EQ(rep.rows.size(), 1u);
  ASSERT_EQ(rep.rows[0].successes, 1);
  for (int j = 0; j < model.m(); ++j) {
    EXPECT_TRUE(rep.rows[0].cr95[j] == 0.0 || rep.rows[0].cr95[j] == 1.0);
    EXPECT_TRUE(rep.rows[0].cr50[j] == 0.0 || rep.rows[0].cr50[j] == 1.0);
    EXPECT_LE(rep.rows[0].cr50[j], rep.rows[0].cr95[j]);
    EXPECT_TRUE(std::isfinite(rep.rows[0].mls[j]));
  }
}

TEST(RecoveryStudy, ExactGaussianPosteriorIsCalibrated) {
  const ModelSpec model = conjugate_intercepts_model();
  const Vec truth = (Vec(2) << 0.7, -1.2).finished();
  HarnessOptions opt;
  opt.threads = 4;
  const int b = 1000;
  const RecoveryReport rep = recovery_study(model, truth, {50}, b, 5, opt);
  boost::math::binomial_distribution<double> bin(b, 0.95);
  const double lo = boost::math::quantile(bin, 0.005) / b, hi = boost::math::quantile(boost::math::complement(bin, 0.005)) / b;
  boost::math::binomial_distribution<double> bin50(b, 0.5);
  const double lo50 = boost::math::quantile(bin50, 0.005) / b,
               hi50 = boost::math::quantile(boost::math::complement(bin50, 0.005)) / b;
  for (int j = 0; j < 2; ++j) {
    EXPECT_GE(rep.rows[0].cr50[j], lo50) << j;
    EXPECT_LE(rep.rows[0].cr50[j], hi50) << j;
    EXPECT_GE(rep.rows[0].cr95[j], lo) << j;
    EXPECT_LE(rep.rows[0].cr95[j], hi) << j;
  }
}

TEST(RecoveryStudy, DeterministicAcrossThreadCounts) {
  const ModelSpec model = identified_one_factor();
  std::mt19937_64 rng(4);
  const Vec truth = sembayes::testing::plausible_constrained(model, rng);
  HarnessOptions a, b;
  b.threads = 3;
  const RecoveryReport ra = recovery_study(model, truth, {100}, 4, 9, a);
  const RecoveryReport rb = recovery_study(model, truth, {100}, 4, 9, b);
  EXPECT_EQ(ra.rows[0].mls, rb.rows[0].mls);
  EXPECT_EQ(ra.rows[0].cr95, rb.rows[0].cr95);
}

// ---------------------------------------------------------------------------
// Simulation-based calibration

TEST(Sbc, KsUniformKnownValues) {
  EXPECT_NEAR(ks_uniform({0.5}), 0.5, 1e-15);
  EXPECT_NEAR(ks_uniform({0.25, 0.75}), 0.25, 1e-15);
  EXPECT_NEAR(ks_uniform({0.1, 0.2}), 0.8, 1e-15);
}

TEST(Sbc, ExactConjugateInferenceGivesUniformPit) {
  SbcOptions opt;
  opt.threads = 4;
  const int b = 200;
  const SbcReport r = sbc_check(conjugate_intercepts_model(), 30, b, PriorSet::Informative, 13, opt);
  ASSERT_EQ(r.successes, b);
  std::vector<double> ks(r.ks.data(), r.ks.data() + r.ks.size());
  EXPECT_LT(median(ks), 1.2 / std::sqrt(b));
  EXPECT_GE(r.pit.minCoeff(), 0.0);
  EXPECT_LE(r.pit.maxCoeff(), 1.0);
}

TEST(Sbc, HalvedPosteriorSdConcentratesPit) {
  // Normal mean with N(0,1) prior and n unit-variance observations.
  const int b = 200, n = 10;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  SbcReport exact, broken;
  exact.pit.resize(b, 1);
  broken.pit.resize(b, 1);
  for (int i = 0; i < b; ++i) {
    const double theta = normal(rng);
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += theta + normal(rng);
    const double mean = sum / (n + 1.0), sd = 1.0 / std::sqrt(n + 1.0);
    exact.pit(i, 0) = norm_cdf((theta - mean) / sd);
    broken.pit(i, 0) = norm_cdf((theta - mean) / (0.5 * sd));
  }
  sbc_statistics(exact);
  sbc_statistics(broken);
  EXPECT_LT(exact.ks[0], 1.63 / std::sqrt(b));
  EXPECT_GT(broken.ks[0], 0.15);
  EXPECT_GT(broken.frac_outside[0], 0.2);
  EXPECT_LT(exact.frac_outside[0], 0.05);
}

TEST(Sbc, FailureAccountingAndDeterminism) {
  SbcOptions a, b;
  b.threads = 4;
  const ModelSpec model = identified_one_factor();
  const SbcReport ra = sbc_check(model, 100, 12, PriorSet::Informative, 21, a);
  const SbcReport rb = sbc_check(model, 100, 12, PriorSet::Informative, 21, b);
  EXPECT_GE(ra.attempts, ra.successes);
  EXPECT_EQ(ra.successes, 12);
  int failures = 0;
  for (const auto& [cause, count] : ra.failure_causes) failures += count;
  EXPECT_EQ(ra.attempts - ra.successes, failures);
  EXPECT_EQ(ra.truth_failure.rows(), failures);
  EXPECT_EQ(ra.pit, rb.pit);
  EXPECT_EQ(ra.attempts, rb.attempts);
}

TEST(Sbc, AttemptCapStopsShortOfRequest) {
  SbcOptions opt;
  opt.max_attempts = 3;
  const SbcReport r = sbc_check(identified_one_factor(), 100, 10, PriorSet::Informative, 1, opt);
  EXPECT_EQ(r.attempts, 3);
  EXPECT_LE(r.successes, 3);
}
