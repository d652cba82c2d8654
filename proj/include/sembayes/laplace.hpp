#pragma once

#include "sembayes/optimize.hpp"

namespace sembayes {

struct LaplaceOptions {
  OptimOptions optim;
  int newton_polish_steps = 8;
  bool newton_finish = true;  // one Newton step after BFGS converges
  int threads = 1;
};

/// Gaussian approximation at the posterior mode, in unconstrained coordinates.
struct LaplaceFit {
  Vec mode;
  Mat neg_hessian;  // H
  Mat covariance;   // Omega = H^{-1}
  Mat whitening;    // lower L with L L^T = Omega
  double log_density_at_mode = 0.0;
  double log_det_h = 0.0;
  double log_evidence = 0.0;
  double grad_norm_at_mode = 0.0;
  double hessian_asymmetry = 0.0;  // max |H - H^T| before symmetrizing
  int iterations = 0;

  int dim() const { return static_cast<int>(mode.size()); }
};

/// -Hessian by central differences of the analytic gradient, one column per
/// coordinate, step eps^{1/3} (1 + |x_j|). Returns the raw (unsymmetrized)
/// matrix; callers symmetrize.
template <LogDensity Target>
Mat neg_hessian_raw(const Target& target, const Vec& x, int threads = 1) {
  const int m = static_cast<int>(x.size());
  const double base = std::cbrt(std::numeric_limits<double>::epsilon());
  Mat h(m, m);
  parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    const double step = base * (1.0 + std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    Vec gp, gm;
    try {
      gp = target.gradient(xp);
      gm = target.gradient(xm);
    } catch (const Error& e) {
      throw HessianError(std::string("gradient failed during Hessian evaluation: ") + e.what());
    }
    h.col(j) = -(gp - gm) / (xp[j] - xm[j]);
  });
  if (!h.allFinite()) throw HessianError("non-finite entries in the Hessian");
  return h;
}

template <LogDensity Target>
Mat neg_hessian_at(const Target& target, const Vec& x, int threads = 1) {
  return symmetrize(neg_hessian_raw(target, x, threads));
}

/// Mode by BFGS; if BFGS stalls short of the tolerance, Newton steps with the
/// finite-difference Hessian finish the job.
template <LogDensity Target>
OptimResult find_mode(const Target& target, const Vec& init, const LaplaceOptions& opt = {}) {
  OptimResult r = bfgs_maximize(target, init, opt.optim);
  if (r.converged && !opt.newton_finish) return r;
  const double tol = opt.optim.tol;
  const int steps = r.converged ? 1 : opt.newton_polish_steps;
  for (int s = 0; s < steps; ++s) {
    Mat h;
    try {
      h = neg_hessian_at(target, r.x, opt.threads);
    } catch (const HessianError&) {
      break;
    }
    Eigen::LLT<Mat> llt(h);
    if (llt.info() != Eigen::Success) break;
    const Vec step = llt.solve(r.grad);
    double scale = 1.0;
    bool moved = false;
    for (int k = 0; k < 30; ++k, scale *= 0.5) {
      const Vec xn = r.x + scale * step;
      const double v = log_density_or_ninf(target, xn);
      if (!std::isfinite(v)) continue;
      Vec gn;
      try {
        gn = target.gradient(xn);
      } catch (const Error&) {
        continue;
      }
      if (!gn.allFinite()) continue;
      // Near the optimum, function differences drown in roundoff; accept
      // any step that reduces the gradient norm.
      if (gn.lpNorm<Eigen::Infinity>() < r.grad.lpNorm<Eigen::Infinity>() || v > r.value) {
        r.x = xn;
        r.value = v;
        r.grad = gn;
        moved = true;
        break;
      }
    }
    if (r.converged) break;
    ++r.iterations;
    if (r.grad.lpNorm<Eigen::Infinity>() <= tol) {
      r.converged = true;
      r.stalled = false;
      return r;
    }
    if (!moved) break;
  }
  if (r.converged) return r;
  if (r.saw_inadmissible && r.stalled)
    throw ImpliedCovarianceError("mode search trapped against the inadmissible region");
  throw ConvergenceError("mode search did not reach gradient tolerance (|grad|_inf = " +
                         std::to_string(r.grad.lpNorm<Eigen::Infinity>()) + ")");
}

/// Laplace approximation around a given mode.
template <LogDensity Target>
LaplaceFit laplace_at(const Target& target, const Vec& mode, int threads = 1) {
  LaplaceFit fit;
  fit.mode = mode;
  const Mat raw = neg_hessian_raw(target, mode, threads);
  fit.hessian_asymmetry = (raw - raw.transpose()).cwiseAbs().maxCoeff();
  fit.neg_hessian = symmetrize(raw);
  Eigen::LLT<Mat> llt(fit.neg_hessian);
  if (llt.info() != Eigen::Success) throw HessianError("negative Hessian at the mode is not positive definite");
  const Mat lh = llt.matrixL();
  fit.log_det_h = 2.0 * lh.diagonal().array().log().sum();
  const int m = fit.dim();
  fit.covariance = symmetrize(llt.solve(Mat::Identity(m, m)));
  Eigen::LLT<Mat> lo(fit.covariance);
  if (lo.info() != Eigen::Success) throw HessianError("Laplace covariance is not positive definite");
  fit.whitening = lo.matrixL();
  fit.log_density_at_mode = target.log_density(mode);
  fit.grad_norm_at_mode = target.gradient(mode).template lpNorm<Eigen::Infinity>();
  fit.log_evidence = 0.5 * m * kLog2Pi - 0.5 * fit.log_det_h + fit.log_density_at_mode;
  return fit;
}

template <LogDensity Target>
LaplaceFit laplace_fit(const Target& target, const Vec& init, const LaplaceOptions& opt = {}) {
  const OptimResult r = find_mode(target, init, opt);
  LaplaceFit fit = laplace_at(target, r.x, opt.threads);
  fit.iterations = r.iterations;
  return fit;
}

inline LaplaceFit laplace_fit(const SemPosterior& post, const LaplaceOptions& opt = {}) {
  return laplace_fit(post, default_init(post.model(), post.data()), opt);
}

/// Recomputes the evidence from a fit (the value is cached on the fit).
inline double log_evidence(const LaplaceFit& fit) {
  return 0.5 * fit.dim() * kLog2Pi - 0.5 * fit.log_det_h + fit.log_density_at_mode;
}

}  // namespace sembayes
