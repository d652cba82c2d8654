#pragma once

#include <boost/math/tools/minima.hpp>
#include <functional>
#include <optional>

#include "sembayes/sem.hpp"

namespace sembayes {

struct OptimOptions {
  double tol = 1e-6;  // on the infinity norm of the gradient
  int max_iter = 2000;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_evals = 60;
  std::function<void(int, const Vec&, double)> on_iteration;  // (iteration, x, log density)
};

struct OptimResult {
  Vec x;
  double value = -kInf;
  Vec grad;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool stalled = false;  // line search could make no further progress
  bool saw_inadmissible = false;
};

namespace detail {

/// Value and gradient of -log density; inadmissible points come back as +inf.
template <LogDensity Target>
struct NegObjective {
  const Target& target;
  int evals = 0;
  bool saw_inadmissible = false;

  bool eval(const Vec& x, double& f, Vec& g) {
    ++evals;
    const double v = log_density_or_ninf(target, x);
    if (!std::isfinite(v)) {
      saw_inadmissible = true;
      f = kInf;
      return false;
    }
    try {
      g = -target.gradient(x);
    } catch (const Error&) {
      saw_inadmissible = true;
      f = kInf;
      return false;
    }
    if (!g.allFinite()) {
      f = kInf;
      return false;
    }
    f = -v;
    return true;
  }
};

struct LinePoint {
  double a;
  double f;
  double df;
  Vec g;
};

/// Strong-Wolfe line search (bracket then zoom). Infinite values are treated
/// as failed sufficient decrease, so the bracket shrinks away from them.
template <class Obj>
std::optional<LinePoint> wolfe_search(Obj& obj, const Vec& x, const Vec& p, double f0, double df0, double a_init,
                                      const OptimOptions& opt) {
  auto probe = [&](double a) {
    LinePoint lp{a, kInf, 0.0, Vec()};
    if (obj.eval(x + a * p, lp.f, lp.g)) lp.df = lp.g.dot(p);
    return lp;
  };
  auto sufficient = [&](const LinePoint& lp) { return std::isfinite(lp.f) && lp.f <= f0 + opt.c1 * lp.a * df0; };
  auto curvature_ok = [&](const LinePoint& lp) { return std::abs(lp.df) <= -opt.c2 * df0; };

  LinePoint lo{0.0, f0, df0, Vec()};
  std::optional<LinePoint> best;
  int evals = 0;

  auto zoom = [&](LinePoint l, LinePoint h) -> std::optional<LinePoint> {
    while (evals < opt.max_line_evals) {
      double a;
      const double width = h.a - l.a;
      if (std::isfinite(h.f)) {
        // minimizer of the quadratic through f(lo), f'(lo), f(hi)
        const double denom = 2.0 * (h.f - l.f - l.df * width);
        a = denom > 0.0 ? l.a - l.df * width * width / denom : l.a + 0.5 * width;
      } else {
        a = l.a + 0.5 * width;
      }
      const double lo_b = std::min(l.a, h.a) + 0.1 * std::abs(width);
      const double hi_b = std::max(l.a, h.a) - 0.1 * std::abs(width);
      if (!(a >= lo_b && a <= hi_b)) a = l.a + 0.5 * width;
      if (std::abs(width) < 1e-16 * std::max(1.0, std::abs(l.a))) break;
      LinePoint t = probe(a);
      ++evals;
      if (!sufficient(t) || t.f >= l.f) {
        h = std::move(t);
      } else {
        if (curvature_ok(t)) return t;
        if (t.df * (h.a - l.a) >= 0.0) h = l;
        l = std::move(t);
      }
    }
    if (l.a > 0.0) return l;  // sufficient decrease without curvature
    return std::nullopt;
  };

  double a = a_init;
  LinePoint prev = lo;
  for (int i = 0; evals < opt.max_line_evals; ++i) {
    LinePoint cur = probe(a);
    ++evals;
    if (!sufficient(cur) || (i > 0 && cur.f >= prev.f)) return zoom(prev, cur);
    if (curvature_ok(cur)) return cur;
    if (cur.df >= 0.0) return zoom(cur, prev);
    best = cur;
    prev = std::move(cur);
    a *= 2.0;
  }
  return best;
}

}  // namespace detail

/// BFGS maximizer of a log density. Throws ImpliedCovarianceError when the
/// very first evaluation is inadmissible.
template <LogDensity Target>
OptimResult bfgs_maximize(const Target& target, const Vec& x0, const OptimOptions& opt = {}) {
  detail::NegObjective<Target> obj{target};
  const int m = static_cast<int>(x0.size());
  OptimResult r;
  r.x = x0;
  double f;
  Vec g;
  if (!obj.eval(r.x, f, g)) throw ImpliedCovarianceError("initial point is outside the admissible region");

  Mat hinv = Mat::Identity(m, m);
  bool scaled = false;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    if (opt.on_iteration) opt.on_iteration(it, r.x, -f);
    if (g.lpNorm<Eigen::Infinity>() <= opt.tol) {
      r.converged = true;
      break;
    }
    Vec p = -hinv * g;
    double df = g.dot(p);
    if (!(df < 0.0)) {
      hinv.setIdentity();
      p = -g;
      df = -g.squaredNorm();
    }
    const double a_init = scaled ? 1.0 : std::min(1.0, 1.0 / std::max(p.lpNorm<Eigen::Infinity>(), 1e-12));
    auto lp = detail::wolfe_search(obj, r.x, p, f, df, a_init, opt);
    if (!lp) {
      if (!scaled) {
        r.stalled = true;
        break;
      }
      // retry once along steepest descent before giving up
      hinv.setIdentity();
      scaled = false;
      p = -g;
      df = -g.squaredNorm();
      lp = detail::wolfe_search(obj, r.x, p, f, df, std::min(1.0, 1.0 / std::max(p.lpNorm<Eigen::Infinity>(), 1e-12)), opt);
      if (!lp) {
        r.stalled = true;
        break;
      }
    }
    const Vec s = lp->a * p;
    const Vec y = lp->g - g;
    r.x += s;
    f = lp->f;
    g = lp->g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        hinv = Mat::Identity(m, m) * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Vec hy = hinv * y;
      hinv += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
    }
  }
  r.iterations = it;
  r.evaluations = obj.evals;
  r.saw_inadmissible = obj.saw_inadmissible;
  r.value = -f;
  r.grad = -g;
  return r;
}

/// One-dimensional Brent maximization on [lo, hi].
template <class F>
double maximize_1d(F&& f, double lo, double hi) {
  auto neg = [&](double x) { return -f(x); };
  return boost::math::tools::brent_find_minima(neg, lo, hi, 52).first;
}

}  // namespace sembayes
