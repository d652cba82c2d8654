#pragma once

#include <algorithm>
#include <array>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/owens_t.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include "sembayes/common.hpp"

namespace sembayes {

struct SkewNormalParams {
  double xi = 0.0;
  double omega = 1.0;
  double alpha = 0.0;

  double delta() const { return alpha / std::sqrt(1.0 + alpha * alpha); }
  void validate() const {
    if (!(omega > 0.0) || !std::isfinite(omega) || !std::isfinite(xi) || !std::isfinite(alpha))
      throw DomainError("skew-normal needs finite xi, alpha and omega > 0");
  }
};

struct SkewNormalMoments {
  double mean;
  double variance;
  double skewness;
};

/// Owen's T(h, a).
inline double owens_t(double h, double a) { return boost::math::owens_t(h, a); }

inline double sn_logpdf(const SkewNormalParams& p, double x) {
  const double z = (x - p.xi) / p.omega;
  return std::log(2.0) - std::log(p.omega) + norm_logpdf(z) + norm_logcdf(p.alpha * z);
}

inline double sn_pdf(const SkewNormalParams& p, double x) { return std::exp(sn_logpdf(p, x)); }

namespace detail {

/// log P(Z <= z) for Z ~ SN(0, 1, alpha), z <= 0.
inline double sn_std_log_lower(double z, double alpha) {
  if (alpha * z > -2.0) {
    const double v = norm_cdf(z) - 2.0 * owens_t(z, alpha);
    if (v > 1e-300) return std::log(v);
    return std::log(2.0) + norm_logcdf(z) + norm_logcdf(alpha * z);
  }
  // Against the skew Phi(z) - 2T cancels; integrate the positive density
  // directly, scaled by its value at z.
  auto g = [alpha](double t) { return norm_logpdf(t) + norm_logcdf(alpha * t); };
  const double gz = g(z);
  const double rate = -z + alpha * std::exp(norm_logpdf(alpha * z) - norm_logcdf(alpha * z));
  const double curv = 1.0 + alpha * alpha;
  const double width = (std::sqrt(rate * rate + 120.0 * curv) - rate) / curv;  // log drop of about 60
  auto f = [&](double t) { return std::exp(g(t) - gz); };
  const double tol = std::max(1e-13, 64.0 * std::abs(gz) * std::numeric_limits<double>::epsilon());
  const double i = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, z - width, z, 6, tol);
  return gz + std::log(2.0 * i);
}

/// P(Z <= z) for Z ~ SN(0, 1, alpha).
inline double sn_std_lower(double z, double alpha) {
  if (z > 0.0) return -std::expm1(sn_std_log_lower(-z, -alpha));
  return std::exp(sn_std_log_lower(z, alpha));
}

}  // namespace detail

inline double sn_cdf(const SkewNormalParams& p, double x) {
  const double z = (x - p.xi) / p.omega;
  if (!std::isfinite(z)) return z > 0 ? 1.0 : 0.0;
  return std::clamp(detail::sn_std_lower(z, p.alpha), 0.0, 1.0);
}

/// Gradient of log f_SN with respect to (xi, log omega, alpha).
inline std::array<double, 3> sn_logpdf_grad(const SkewNormalParams& p, double x) {
  const double z = (x - p.xi) / p.omega;
  const double az = p.alpha * z;
  const double mills = std::exp(norm_logpdf(az) - norm_logcdf(az));
  const double dz = -z + p.alpha * mills;
  return {-dz / p.omega, -1.0 - z * dz, z * mills};
}

/// Upper tail 1 - F(x), computed without forming 1 - F.
inline double sn_survival(const SkewNormalParams& p, double x) {
  const double z = (x - p.xi) / p.omega;
  if (!std::isfinite(z)) return z > 0 ? 0.0 : 1.0;
  return std::clamp(detail::sn_std_lower(-z, -p.alpha), 0.0, 1.0);
}

namespace detail {

/// w with P(W <= w) = exp(log_tail), W ~ SN(0, 1, alpha), log_tail <= log 0.5;
/// Newton on log F inside a widening bracket.
inline double sn_std_lower_quantile(double alpha, double log_tail, double guess) {
  auto log_f = [&](double w) {
    return w <= 0.0 ? sn_std_log_lower(w, alpha) : std::log1p(-std::exp(sn_std_log_lower(-w, -alpha)));
  };
  auto h = [&](double w) { return log_f(w) - log_tail; };
  double lo = -10.0, hi = 10.0;
  while (h(lo) > 0.0) lo *= 2.0;
  while (h(hi) < 0.0) hi *= 2.0;
  auto fd = [&](double w) {
    const double lf = log_f(w);
    const double lpdf = std::log(2.0) + norm_logpdf(w) + norm_logcdf(alpha * w);
    return std::make_pair(lf - log_tail, std::exp(lpdf - lf));
  };
  std::uintmax_t iters = 100;
  return boost::math::tools::newton_raphson_iterate(fd, std::clamp(guess, lo, hi), lo, hi, 48, iters);
}

inline double sn_quantile_z(const SkewNormalParams& p, double log_tail, double z_normal, bool upper) {
  p.validate();
  const double a = upper ? -p.alpha : p.alpha;
  const double d = a / std::sqrt(1.0 + a * a);
  const double b = d * std::sqrt(2.0 / std::numbers::pi);
  const double guess = b + std::sqrt(1.0 - b * b) * z_normal;
  const double w = sn_std_lower_quantile(a, log_tail, guess);
  return p.xi + p.omega * (upper ? -w : w);
}

}  // namespace detail

inline double sn_quantile(const SkewNormalParams& p, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("quantile level must lie in (0,1)");
  const bool upper = tau > 0.5;
  const double t = upper ? 1.0 - tau : tau;
  const double z = -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * t);
  return detail::sn_quantile_z(p, std::log(t), z, upper);
}

/// Q(Phi(z)): the SN quantile at the normal probability of z, solving in the
/// tail that keeps the level representable.
inline double sn_quantile_from_normal(const SkewNormalParams& p, double z) {
  const bool upper = z > 0.0;
  return detail::sn_quantile_z(p, norm_logcdf(-std::abs(z)), -std::abs(z), upper);
}

inline SkewNormalMoments sn_moments(const SkewNormalParams& p) {
  const double d = p.delta();
  const double b = d * std::sqrt(2.0 / std::numbers::pi);
  const double v = 1.0 - b * b;
  return {p.xi + p.omega * b, p.omega * p.omega * v, 0.5 * (4.0 - std::numbers::pi) * b * b * b / std::pow(v, 1.5)};
}

/// Largest attainable |skewness| (the alpha -> infinity limit).
inline double sn_max_abs_skewness() {
  const double b = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * (4.0 - std::numbers::pi) * b * b * b / std::pow(1.0 - b * b, 1.5);
}

/// Shape parameter that yields a given skewness (clamped inside the range).
inline double sn_alpha_from_skewness(double skew) {
  const double lim = 0.99 * sn_max_abs_skewness();
  skew = std::clamp(skew, -lim, lim);
  const double c = std::cbrt(2.0 * std::abs(skew) / (4.0 - std::numbers::pi));
  const double b = c / std::sqrt(1.0 + c * c);  // b = delta sqrt(2/pi)
  const double d = std::copysign(b / std::sqrt(2.0 / std::numbers::pi), skew);
  return d / std::sqrt(1.0 - d * d);
}

/// Mode by 1-D maximization of the log density.
inline double sn_mode(const SkewNormalParams& p) {
  const auto m = sn_moments(p);
  const double sd = std::sqrt(m.variance);
  auto neg = [&](double x) { return -sn_logpdf(p, x); };
  auto r = boost::math::tools::brent_find_minima(neg, m.mean - 3.0 * sd, m.mean + 3.0 * sd, 52);
  return r.first;
}

}  // namespace sembayes
