#pragma once

#include <unsupported/Eigen/NonLinearOptimization>

#include "sembayes/laplace.hpp"
#include "sembayes/quadrature.hpp"
#include "sembayes/skew_normal.hpp"
#include "sembayes/transform.hpp"

namespace sembayes {

struct MarginalOptions {
  int grid_points = 21;
  double t_max = 4.0;
  double slope_eps = 1e-3;    // outer step along v_j
  double slope_delta = 1e-4;  // inner step along each probe direction
  bool central_inner = true;
  bool central_outer = true;
  int threads = 1;
};

struct ScanGrid {
  int j = 0;
  Vec direction;  // v_j
  Vec t;
  Mat points;     // K x m
  Vec x;          // j-th coordinate along the grid
  Vec heights;    // volume-corrected log ordinates; -inf where inadmissible
  double vol_slope = 0.0;
  bool vol_slope_failed = false;
};

struct SkewNormalMarginal {
  int j = 0;
  SkewNormalParams params;  // unconstrained scale, before any shift
  double intercept = 0.0;
  double vb_shift = 0.0;
  double fit_rss = 0.0;
  Transform transform = Transform::Identity;
  bool gaussian_fallback = false;
  bool vol_slope_failed = false;
  double vol_slope = 0.0;
  int dropped_points = 0;

  SkewNormalParams shifted() const { return {params.xi + vb_shift, params.omega, params.alpha}; }

  /// Density on the constrained scale.
  double density_constrained(double c) const {
    double u;
    try {
      u = to_unconstrained(transform, c);
    } catch (const DomainError&) {
      return 0.0;
    }
    return std::exp(sn_logpdf(shifted(), u) - log_abs_jacobian(transform, u));
  }
  double cdf_constrained(double c) const {
    double u;
    try {
      u = to_unconstrained(transform, c);
    } catch (const DomainError&) {
      return c > 0 ? 1.0 : 0.0;
    }
    return sn_cdf(shifted(), u);
  }
  double quantile_constrained(double tau) const { return to_constrained(transform, sn_quantile(shifted(), tau)); }
};

struct MarginalSummary {
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double mode = 0.0;
};

inline Vec scan_direction(const LaplaceFit& fit, int j) {
  return fit.covariance.col(j) / std::sqrt(fit.covariance(j, j));
}

inline Vec conditional_mean_path(const LaplaceFit& fit, int j, double x) {
  return fit.mode + (x - fit.mode[j]) * fit.covariance.col(j) / fit.covariance(j, j);
}

/// First-order volume slope gamma'_j(0) from whitened curvature probes near
/// the mode. With both flags off this is the m+2 gradient forward scheme
/// against the baseline curvature 1; the defaults use central differences in
/// both layers. Throws ProfilingError on non-finite probes.
template <LogDensity Target>
double volume_slope(const Target& target, const LaplaceFit& fit, int j, double eps = 1e-3, double delta = 1e-4,
                    bool central_inner = true, bool central_outer = true) {
  const int m = fit.dim();
  const Vec v = scan_direction(fit, j);
  auto grad = [&](const Vec& x) {
    Vec g;
    try {
      g = target.gradient(x);
    } catch (const Error& e) {
      throw ProfilingError(std::string("volume slope probe failed: ") + e.what());
    }
    if (!g.allFinite()) throw ProfilingError("volume slope probe produced a non-finite gradient");
    return g;
  };
  // sum_k c(L_k) - c(v), where c(u) = -u^T (d/du) g is the curvature along u
  auto projected_trace = [&](const Vec& base) {
    Vec g0;
    if (!central_inner) g0 = grad(base);
    auto curvature = [&](const Vec& u) {
      if (central_inner) return -u.dot(grad(base + delta * u) - grad(base - delta * u)) / (2.0 * delta);
      return -u.dot(grad(base + delta * u) - g0) / delta;
    };
    double tr = 0.0;
    for (int k = 0; k < m; ++k) tr += curvature(fit.whitening.col(k));
    return tr - curvature(v);
  };
  if (central_outer)
    return -0.5 * (projected_trace(fit.mode + eps * v) - projected_trace(fit.mode - eps * v)) / (2.0 * eps);
  // at the mode the whitened curvature is the identity: trace m, along v 1
  return -0.5 * (projected_trace(fit.mode + eps * v) - (m - 1)) / eps;
}

template <LogDensity Target>
ScanGrid profile_marginal(const Target& target, const LaplaceFit& fit, int j, const MarginalOptions& opt = {}) {
  const int k_pts = opt.grid_points;
  if (k_pts < 9 || k_pts % 2 == 0) throw DomainError("grid size must be odd and at least 9");
  ScanGrid g;
  g.j = j;
  g.direction = scan_direction(fit, j);
  try {
    g.vol_slope = volume_slope(target, fit, j, opt.slope_eps, opt.slope_delta, opt.central_inner, opt.central_outer);
  } catch (const ProfilingError&) {
    g.vol_slope = 0.0;
    g.vol_slope_failed = true;
  }
  g.t = Vec::LinSpaced(k_pts, -opt.t_max, opt.t_max);
  g.points.resize(k_pts, fit.dim());
  g.x.resize(k_pts);
  g.heights.resize(k_pts);
  const double sd = std::sqrt(fit.covariance(j, j));
  int bad = 0;
  for (int k = 0; k < k_pts; ++k) {
    const Vec p = fit.mode + g.t[k] * g.direction;
    g.points.row(k) = p.transpose();
    g.x[k] = fit.mode[j] + g.t[k] * sd;
    const double lp = log_density_or_ninf(target, p);
    g.heights[k] = std::isfinite(lp) ? lp + g.t[k] * g.vol_slope : -kInf;
    if (!std::isfinite(lp)) ++bad;
  }
  if (2 * bad > k_pts) throw ProfilingError("more than half of the scan grid is inadmissible");
  return g;
}

namespace detail {

struct SnResidual {
  using Scalar = double;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
  using InputType = Vec;
  using ValueType = Vec;
  using JacobianType = Mat;

  Vec x, h, sw;  // grid points, heights, sqrt weights
  bool fixed_shape = false;

  int inputs() const { return fixed_shape ? 3 : 4; }
  int values() const { return static_cast<int>(x.size()); }

  SkewNormalParams params(const Vec& p) const { return {p[0], std::exp(p[1]), fixed_shape ? 0.0 : p[2]}; }
  double intercept(const Vec& p) const { return p[inputs() - 1]; }

  int operator()(const Vec& p, Vec& f) const {
    const SkewNormalParams sp = params(p);
    const double c = intercept(p);
    for (int k = 0; k < values(); ++k) f[k] = sw[k] * (h[k] - sn_logpdf(sp, x[k]) - c);
    return 0;
  }
  int df(const Vec& p, Mat& jac) const {
    const SkewNormalParams sp = params(p);
    for (int k = 0; k < values(); ++k) {
      const auto g = sn_logpdf_grad(sp, x[k]);
      jac(k, 0) = -sw[k] * g[0];
      jac(k, 1) = -sw[k] * g[1];
      if (!fixed_shape) jac(k, 2) = -sw[k] * g[2];
      jac(k, inputs() - 1) = -sw[k];
    }
    return 0;
  }
};

inline bool lm_ok(int status) {
  using namespace Eigen::LevenbergMarquardtSpace;
  return status == RelativeReductionTooSmall || status == RelativeErrorTooSmall ||
         status == RelativeErrorAndReductionTooSmall || status == CosinusTooSmall || status == FtolTooSmall ||
         status == XtolTooSmall || status == GtolTooSmall;
}

}  // namespace detail

/// Weighted least-squares skew-normal fit to a scan grid (unconstrained scale).
inline SkewNormalMarginal fit_skew_normal(const ScanGrid& grid) {
  std::vector<int> keep;
  for (int k = 0; k < grid.heights.size(); ++k)
    if (std::isfinite(grid.heights[k])) keep.push_back(k);
  if (keep.size() < 6) throw ProfilingError("fewer than 6 admissible grid points for the skew-normal fit");
  const int n = static_cast<int>(keep.size());
  detail::SnResidual res;
  res.x.resize(n);
  res.h.resize(n);
  Vec w(n);
  double hmax = -kInf;
  for (int i = 0; i < n; ++i) {
    res.x[i] = grid.x[keep[i]];
    res.h[i] = grid.heights[keep[i]];
    hmax = std::max(hmax, res.h[i]);
  }
  for (int i = 0; i < n; ++i) w[i] = std::exp(res.h[i] - hmax);
  w /= w.sum();
  res.sw = w.array().sqrt();

  // moment-matched start, treating the weights as a discrete distribution
  const double mean = w.dot(res.x);
  const Vec dx = res.x.array() - mean;
  const double var = w.dot(dx.cwiseProduct(dx));
  const double skew = w.dot(dx.cwiseProduct(dx).cwiseProduct(dx)) / std::pow(var, 1.5);
  const double alpha0 = sn_alpha_from_skewness(skew);
  const double d0 = alpha0 / std::sqrt(1 + alpha0 * alpha0);
  const double omega0 = std::sqrt(var / (1.0 - 2.0 * d0 * d0 / std::numbers::pi));
  const double xi0 = mean - omega0 * d0 * std::sqrt(2.0 / std::numbers::pi);
  auto start_intercept = [&](const SkewNormalParams& sp) {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += w[i] * (res.h[i] - sn_logpdf(sp, res.x[i]));
    return c;
  };

  SkewNormalMarginal out;
  out.j = grid.j;
  out.vol_slope = grid.vol_slope;
  out.vol_slope_failed = grid.vol_slope_failed;
  out.dropped_points = static_cast<int>(grid.heights.size()) - n;

  auto run = [&](bool gaussian) -> bool {
    res.fixed_shape = gaussian;
    const SkewNormalParams sp0{xi0, omega0, gaussian ? 0.0 : alpha0};
    Vec p(res.inputs());
    p[0] = sp0.xi;
    p[1] = std::log(sp0.omega);
    if (!gaussian) p[2] = sp0.alpha;
    p[res.inputs() - 1] = start_intercept(sp0);
    Eigen::LevenbergMarquardt<detail::SnResidual> lm(res);
    lm.parameters.maxfev = 2000;
    lm.parameters.ftol = 1e-14;
    lm.parameters.xtol = 1e-14;
    const int status = lm.minimize(p);
    if (!detail::lm_ok(status) || !p.allFinite()) return false;
    out.params = res.params(p);
    out.intercept = res.intercept(p);
    Vec f(n);
    res(p, f);
    out.fit_rss = f.squaredNorm();
    return std::isfinite(out.fit_rss);
  };
  if (!run(false)) {
    out.gaussian_fallback = true;
    if (!run(true)) {
      out.params = {mean, std::sqrt(var), 0.0};
      out.intercept = start_intercept(out.params);
      out.fit_rss = kInf;
    }
  }
  return out;
}

/// Adds each component of the shift to the matching marginal's location.
inline void apply_shift(std::vector<SkewNormalMarginal>& margs, const Vec& delta) {
  for (auto& mg : margs) mg.vb_shift += delta[mg.j];
}

/// Summaries on the constrained scale.
inline MarginalSummary marginal_summaries(const SkewNormalMarginal& mg) {
  const SkewNormalParams sp = mg.shifted();
  const Transform t = mg.transform;
  MarginalSummary s;
  s.median = to_constrained(t, sn_quantile(sp, 0.5));
  s.q025 = to_constrained(t, sn_quantile(sp, 0.025));
  s.q975 = to_constrained(t, sn_quantile(sp, 0.975));
  const double lo = sn_quantile(sp, 1e-12), hi = sn_quantile(sp, 1.0 - 1e-12);
  const double m1 = integrate_legendre([&](double u) { return to_constrained(t, u) * sn_pdf(sp, u); }, lo, hi, 64);
  const double m2 = integrate_legendre(
      [&](double u) {
        const double d = to_constrained(t, u) - m1;
        return d * d * sn_pdf(sp, u);
      },
      lo, hi, 64);
  s.mean = m1;
  s.sd = std::sqrt(m2);
  const double a = sn_quantile(sp, 1e-6), b = sn_quantile(sp, 1.0 - 1e-6);
  const double u_mode = maximize_1d([&](double u) { return sn_logpdf(sp, u) - log_abs_jacobian(t, u); }, a, b);
  s.mode = to_constrained(t, u_mode);
  return s;
}

/// Profiles and fits every marginal; output order follows the parameters.
template <LogDensity Target>
std::vector<SkewNormalMarginal> fit_marginals(const Target& target, const LaplaceFit& fit,
                                              const std::vector<Transform>& transforms, const MarginalOptions& opt = {},
                                              std::vector<ScanGrid>* grids = nullptr) {
  const int m = fit.dim();
  std::vector<SkewNormalMarginal> out(m);
  std::vector<ScanGrid> local(m);
  parallel_for(static_cast<std::size_t>(m), opt.threads, [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    local[j] = profile_marginal(target, fit, j, opt);
    out[j] = fit_skew_normal(local[j]);
    out[j].transform = transforms.empty() ? Transform::Identity : transforms[j];
  });
  if (grids) *grids = std::move(local);
  return out;
}

}  // namespace sembayes
