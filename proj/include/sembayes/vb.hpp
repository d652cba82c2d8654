#pragma once

#include "sembayes/laplace.hpp"
#include "sembayes/marginals.hpp"
#include "sembayes/rqmc.hpp"

namespace sembayes {

struct VbOptions {
  int rqmc_points = 512;
  std::uint64_t seed = 20240611;
  double step_tol = 1e-5;  // whitened units
  int max_iter = 200;
  double penalty = -1e10;
  int threads = 1;
  bool antithetic = true;  // half the points plus their negations
};

/// Point set for the VB objective; antithetic sets have exactly zero mean.
inline Mat vb_points(int m, int count, std::uint64_t seed, bool antithetic) {
  if (!antithetic) return rqmc_normal_points(m, count, seed);
  const int half = (count + 1) / 2;
  const Mat z = rqmc_normal_points(m, half, seed);
  Mat out(2 * half, m);
  out << z, -z;
  return out;
}

struct VbShift {
  Vec delta;           // unconstrained scale
  Vec delta_whitened;  // L^{-1} delta
  std::vector<double> objective_trace;
  int rqmc_points = 0;
  std::uint64_t seed = 0;
  double objective_at_zero = 0.0;
  double objective_at_delta = 0.0;
  double objective_se_at_zero = 0.0;
  bool converged = false;
  bool failed = false;
  int penalized_draws = 0;  // at the optimum
};

/// Expected log density under N(mode + L d, L L^T), estimated on fixed
/// standard-normal points; the value, gradient in d, and the per-point values.
template <LogDensity Target>
class VbObjective {
 public:
  VbObjective(const Target& target, const LaplaceFit& fit, Mat z, double penalty = -1e10, int threads = 1)
      : target_(target), fit_(fit), z_(std::move(z)), penalty_(penalty), threads_(threads) {}

  int dim() const { return fit_.dim(); }

  double log_density(const Vec& d) const { return mean(values(d)); }

  Vec gradient(const Vec& d) const {
    const int n = static_cast<int>(z_.rows());
    std::vector<Vec> grads(n);
    parallel_for(static_cast<std::size_t>(n), threads_, [&](std::size_t i) {
      const Vec x = point(d, static_cast<int>(i));
      Vec g = Vec::Zero(dim());
      if (std::isfinite(log_density_or_ninf(target_, x))) {
        try {
          g = target_.gradient(x);
        } catch (const Error&) {
          g.setZero();
        }
        if (!g.allFinite()) g.setZero();
      }
      grads[i] = std::move(g);
    });
    Vec total = Vec::Zero(dim());
    for (const auto& g : grads) total += g;
    return fit_.whitening.transpose() * (total / n);
  }

  std::vector<double> values(const Vec& d) const {
    const int n = static_cast<int>(z_.rows());
    std::vector<double> v(n);
    parallel_for(static_cast<std::size_t>(n), threads_, [&](std::size_t i) {
      const double lp = log_density_or_ninf(target_, point(d, static_cast<int>(i)));
      v[i] = std::isfinite(lp) ? lp : penalty_;
    });
    return v;
  }

  int penalized(const Vec& d) const {
    int c = 0;
    for (double v : values(d)) c += v == penalty_ ? 1 : 0;
    return c;
  }

  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }

 private:
  Vec point(const Vec& d, int i) const { return fit_.mode + fit_.whitening * (d + z_.row(i).transpose()); }

  const Target& target_;
  const LaplaceFit& fit_;
  Mat z_;
  double penalty_;
  int threads_;
};

/// Objective at an unconstrained shift delta.
template <LogDensity Target>
double vb_objective(const Target& target, const LaplaceFit& fit, const Vec& delta, const Mat& z, double penalty = -1e10) {
  VbObjective<Target> obj(target, fit, z, penalty);
  const Vec d = fit.whitening.triangularView<Eigen::Lower>().solve(delta);
  return obj.log_density(d);
}

template <LogDensity Target>
VbShift fit_vb_shift(const Target& target, const LaplaceFit& fit, const VbOptions& opt = {}) {
  const int m = fit.dim();
  VbShift out;
  const Mat z = vb_points(m, opt.rqmc_points, opt.seed, opt.antithetic);
  out.rqmc_points = static_cast<int>(z.rows());
  out.seed = opt.seed;
  out.delta = Vec::Zero(m);
  out.delta_whitened = Vec::Zero(m);
  VbObjective<Target> obj(target, fit, z, opt.penalty, opt.threads);

  const auto v0 = obj.values(Vec::Zero(m));
  out.objective_at_zero = VbObjective<Target>::mean(v0);
  double ss = 0.0;
  for (double v : v0) ss += (v - out.objective_at_zero) * (v - out.objective_at_zero);
  out.objective_se_at_zero = std::sqrt(ss / (v0.size() - 1) / v0.size());
  out.objective_at_delta = out.objective_at_zero;

  OptimOptions oo;
  oo.tol = opt.step_tol;  // whitened curvature is near I, so |grad| tracks the step
  oo.max_iter = opt.max_iter;
  oo.on_iteration = [&](int, const Vec&, double f) { out.objective_trace.push_back(f); };
  OptimResult r;
  try {
    r = bfgs_maximize(obj, Vec::Zero(m), oo);
  } catch (const Error&) {
    out.failed = true;
    return out;
  }
  if (!r.converged || !(r.value >= out.objective_at_zero)) {
    out.failed = true;
    return out;
  }
  out.converged = true;
  out.delta_whitened = r.x;
  out.delta = fit.whitening * r.x;
  out.objective_at_delta = r.value;
  out.penalized_draws = obj.penalized(r.x);
  return out;
}

inline void apply_shift(std::vector<SkewNormalMarginal>& margs, const VbShift& shift) { apply_shift(margs, shift.delta); }

}  // namespace sembayes
