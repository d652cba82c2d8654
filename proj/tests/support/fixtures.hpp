#pragma once

// Shared test fixtures: small SEMs, synthetic log densities with known
// answers, and finite-difference oracles. Nothing here calls into the code
// paths it is used to check.

#include <random>

#include "sembayes/sem.hpp"
#include "sembayes/simulate.hpp"

namespace sembayes::testing {

/// Exactly Gaussian log density with precision P and mean mu, plus an
/// additive constant.
struct GaussianTarget {
  Vec mu;
  Mat precision;
  double offset = 0.0;

  int dim() const { return static_cast<int>(mu.size()); }
  double log_density(const Vec& x) const {
    const Vec d = x - mu;
    return offset - 0.5 * d.dot(precision * d);
  }
  Vec gradient(const Vec& x) const { return -(precision * (x - mu)); }

  Mat covariance() const { return precision.inverse(); }
  double log_normalizer() const {
    return offset + 0.5 * dim() * kLog2Pi - 0.5 * std::log(precision.determinant());
  }
};

/// Random SPD matrix with controlled conditioning.
inline Mat random_spd(int m, std::mt19937_64& rng, double min_eig = 0.3, double max_eig = 3.0) {
  std::normal_distribution<double> normal;
  Mat a(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Mat> qr(a);
  const Mat qm = qr.householderQ();
  std::uniform_real_distribution<double> unif(min_eig, max_eig);
  Vec eig(m);
  for (int i = 0; i < m; ++i) eig[i] = unif(rng);
  return symmetrize(qm * eig.asDiagonal() * qm.transpose());
}

inline GaussianTarget random_gaussian_target(int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  GaussianTarget t;
  t.mu.resize(m);
  for (int i = 0; i < m; ++i) t.mu[i] = normal(rng);
  t.precision = random_spd(m, rng);
  t.offset = 1.7;
  return t;
}

/// Product of independent log-Gamma coordinates: x_i = log X_i with
/// X_i ~ Gamma(shape_i, rate_i), mixed by an invertible linear map
/// x = A y. Non-Gaussian, smooth, every third derivative nonzero.
struct MixedLogGammaTarget {
  Vec shape, rate;
  Mat mix;      // A
  Mat mix_inv;  // A^{-1}

  int dim() const { return static_cast<int>(shape.size()); }
  double log_density(const Vec& x) const {
    const Vec y = mix_inv * x;
    double total = 0.0;
    for (int i = 0; i < dim(); ++i) total += shape[i] * y[i] - rate[i] * std::exp(y[i]);
    return total;
  }
  Vec gradient(const Vec& x) const {
    const Vec y = mix_inv * x;
    Vec gy(dim());
    for (int i = 0; i < dim(); ++i) gy[i] = shape[i] - rate[i] * std::exp(y[i]);
    return mix_inv.transpose() * gy;
  }
};

inline MixedLogGammaTarget mixed_log_gamma_target() {
  MixedLogGammaTarget t;
  t.shape = Vec::LinSpaced(4, 3.0, 6.0);
  t.rate = Vec::LinSpaced(4, 1.0, 2.5);
  t.mix.resize(4, 4);
  t.mix << 1.0, 0.3, 0.0, 0.2,
           0.0, 1.0, 0.4, 0.0,
           0.1, 0.0, 1.0, 0.3,
           0.0, 0.2, 0.0, 1.0;
  t.mix_inv = t.mix.inverse();
  return t;
}

/// One-dimensional log-Gamma: x = log X, X ~ Gamma(shape, rate).
struct LogGammaTarget {
  double shape = 3.0, rate = 2.0;
  int dim() const { return 1; }
  double log_density(const Vec& x) const { return shape * x[0] - rate * std::exp(x[0]); }
  Vec gradient(const Vec& x) const { return Vec::Constant(1, shape - rate * std::exp(x[0])); }
};

/// Central finite-difference gradient of any LogDensity.
template <class Target>
Vec fd_gradient(const Target& t, const Vec& x, double rel_step = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * (1.0 + std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (t.log_density(xp) - t.log_density(xm)) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Test SEMs.

/// 1 factor, 3 indicators, first loading fixed to 1. m = 10.
inline ModelSpec one_factor_model(PriorSet set = PriorSet::Diffuse) {
  ModelBuilder b({"y1", "y2", "y3"}, {"eta"});
  b.fix_loading(0, 0, 1.0).free_loading(1, 0).free_loading(2, 0).prior_set(set);
  return b.build();
}

/// Three latents (two exogenous, correlated; one endogenous), nine
/// indicators, one residual correlation. Exercises every parameter class.
inline ModelSpec rich_model() {
  ModelBuilder b({"x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9"}, {"f1", "f2", "f3"});
  for (int f = 0; f < 3; ++f) {
    b.fix_loading(3 * f, f, 1.0);
    b.free_loading(3 * f + 1, f);
    b.free_loading(3 * f + 2, f);
    b.fix_latent_intercept(f, 0.0);
  }
  b.free_regression(2, 0).free_regression(2, 1);
  b.free_latent_covariance(0, 1);
  b.free_residual_covariance(0, 3);
  b.free_latent_intercept(2);
  return b.build();
}

/// A plausible interior point for a model: loadings near 1, SDs near 0.8,
/// correlations near 0.2, regressions 0.4, intercepts spread.
inline Vec plausible_constrained(const ModelSpec& model, std::mt19937_64& rng, double jitter = 0.1) {
  std::uniform_real_distribution<double> unif(-jitter, jitter);
  Vec c(model.m());
  for (int k = 0; k < model.m(); ++k) {
    switch (model.param(k).kind) {
      case ParamKind::Intercept: c[k] = 1.0 + 0.5 * model.param(k).row + unif(rng); break;
      case ParamKind::LatentIntercept: c[k] = 0.3 + unif(rng); break;
      case ParamKind::Loading: c[k] = 0.9 + unif(rng); break;
      case ParamKind::Regression: c[k] = 0.4 + unif(rng); break;
      case ParamKind::ResidualSD:
      case ParamKind::LatentSD: c[k] = 0.8 + unif(rng); break;
      case ParamKind::ResidualCorrelation:
      case ParamKind::LatentCorrelation: c[k] = 0.2 + unif(rng); break;
    }
  }
  return c;
}

inline DataSet simulated_data(const ModelSpec& model, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Vec c = plausible_constrained(model, rng, 0.0);
  return simulate_dataset(model, ParamVector::from_constrained(model, c), n, seed + 1);
}

}  // namespace sembayes::testing
