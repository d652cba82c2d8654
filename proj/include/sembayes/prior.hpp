#pragma once

#include <random>

#include "sembayes/transform.hpp"

namespace sembayes {

// Prior densities are defined on the constrained scale. The *_unconstrained
// variants add the log-Jacobian so they are densities over the unconstrained
// coordinate, which is where every optimizer and profile runs.

/// Log prior density at constrained value c; -inf outside the support.
inline double prior_logpdf_constrained(const PriorSpec& pr, double c) {
  switch (pr.family) {
    case PriorSpec::Family::Normal: {
      const double z = (c - pr.a) / pr.b;
      return norm_logpdf(z) - std::log(pr.b);
    }
    case PriorSpec::Family::GammaOnSD: {
      if (!(c > 0.0)) return -kInf;
      return pr.a * std::log(pr.b) - std::lgamma(pr.a) + (pr.a - 1.0) * std::log(c) - pr.b * c;
    }
    case PriorSpec::Family::BetaOnCorrelation: {
      if (!(std::abs(c) < 1.0)) return -kInf;
      const double x = 0.5 * (c + 1.0);
      const double log_beta = std::lgamma(pr.a) + std::lgamma(pr.b) - std::lgamma(pr.a + pr.b);
      // density of rho = Beta((rho+1)/2) * 1/2
      return (pr.a - 1.0) * std::log(x) + (pr.b - 1.0) * std::log1p(-x) - log_beta - std::log(2.0);
    }
  }
  return -kInf;
}

/// Log prior density over the unconstrained coordinate u (includes Jacobian).
inline double prior_logpdf_unconstrained(const PriorSpec& pr, Transform t, double u) {
  switch (pr.family) {
    case PriorSpec::Family::BetaOnCorrelation: {
      if (t != Transform::Fisher) break;
      // x = (tanh(u)+1)/2 = sigmoid(2u); closed form is stable in the tails.
      const double log_x = -std::log1p(std::exp(-2.0 * u));
      const double log_1mx = -std::log1p(std::exp(2.0 * u));
      const double log_beta = std::lgamma(pr.a) + std::lgamma(pr.b) - std::lgamma(pr.a + pr.b);
      if (!std::isfinite(log_x) || !std::isfinite(log_1mx)) return -kInf;
      // p(rho) |drho/du| = Beta(x) * (1/2) * 4x(1-x)
      return pr.a * log_x + pr.b * log_1mx - log_beta + std::log(2.0);
    }
    case PriorSpec::Family::GammaOnSD: {
      if (t != Transform::Log) break;
      return pr.a * std::log(pr.b) - std::lgamma(pr.a) + pr.a * u - pr.b * std::exp(u);
    }
    default: break;
  }
  return prior_logpdf_constrained(pr, to_constrained(t, u)) + log_abs_jacobian(t, u);
}

/// d/du of prior_logpdf_unconstrained.
inline double prior_grad_unconstrained(const PriorSpec& pr, Transform t, double u) {
  switch (pr.family) {
    case PriorSpec::Family::Normal: {
      const double c = to_constrained(t, u);
      return -(c - pr.a) / (pr.b * pr.b) * d_constrained(t, u) + d_log_abs_jacobian(t, u);
    }
    case PriorSpec::Family::GammaOnSD: {
      if (t == Transform::Log) return pr.a - pr.b * std::exp(u);
      const double c = to_constrained(t, u);
      return ((pr.a - 1.0) / c - pr.b) * d_constrained(t, u) + d_log_abs_jacobian(t, u);
    }
    case PriorSpec::Family::BetaOnCorrelation: {
      if (t == Transform::Fisher) {
        const double x = 0.5 * (std::tanh(u) + 1.0);
        return 2.0 * pr.a * (1.0 - x) - 2.0 * pr.b * x;
      }
      const double c = to_constrained(t, u);
      const double x = 0.5 * (c + 1.0);
      return 0.5 * ((pr.a - 1.0) / x - (pr.b - 1.0) / (1.0 - x)) * d_constrained(t, u) + d_log_abs_jacobian(t, u);
    }
  }
  return 0.0;
}

/// One draw on the constrained scale.
template <class Rng>
double prior_draw(const PriorSpec& pr, Rng& rng) {
  switch (pr.family) {
    case PriorSpec::Family::Normal: return std::normal_distribution<double>(pr.a, pr.b)(rng);
    case PriorSpec::Family::GammaOnSD: return std::gamma_distribution<double>(pr.a, 1.0 / pr.b)(rng);
    case PriorSpec::Family::BetaOnCorrelation: {
      const double x = std::gamma_distribution<double>(pr.a, 1.0)(rng);
      const double y = std::gamma_distribution<double>(pr.b, 1.0)(rng);
      return 2.0 * x / (x + y) - 1.0;
    }
  }
  return 0.0;
}

}  // namespace sembayes
