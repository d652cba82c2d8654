#pragma once

#include <algorithm>
#include <random>

#include "sembayes/expression.hpp"
#include "sembayes/marginals.hpp"
#include "sembayes/optimize.hpp"
#include "sembayes/quadrature.hpp"

namespace sembayes {

/// z -> Q_SN(Phi(z)) on the unconstrained scale, tabulated on a fixed z grid
/// and read back by cubic Hermite interpolation with the exact derivative.
class QuantileMap {
 public:
  QuantileMap() = default;
  explicit QuantileMap(const SkewNormalParams& p, int nodes = 801, double z_max = 8.5) : p_(p), z_max_(z_max) {
    p.validate();
    if (p.alpha == 0.0) return;
    h_ = 2.0 * z_max / (nodes - 1);
    x_.resize(nodes);
    dx_.resize(nodes);
    for (int k = 0; k < nodes; ++k) {
      const double z = -z_max + k * h_;
      x_[k] = sn_quantile_from_normal(p, z);
      dx_[k] = std::exp(norm_logpdf(z) - sn_logpdf(p, x_[k]));
    }
  }

  const SkewNormalParams& params() const { return p_; }

  double operator()(double z) const {
    if (p_.alpha == 0.0) return p_.xi + p_.omega * z;
    if (!(std::abs(z) < z_max_)) return sn_quantile_from_normal(p_, z);
    const double s = (z + z_max_) / h_;
    const int k = std::min(static_cast<int>(s), static_cast<int>(x_.size()) - 2);
    const double t = s - k;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * x_[k] + (t3 - 2 * t2 + t) * h_ * dx_[k] + (-2 * t3 + 3 * t2) * x_[k + 1] +
           (t3 - t2) * h_ * dx_[k + 1];
  }

 private:
  SkewNormalParams p_;
  double z_max_ = 8.5;
  double h_ = 0.0;
  std::vector<double> x_, dx_;
};

struct CopulaModel {
  Mat r;       // target correlation
  Mat r_star;  // NORTA-adjusted latent correlation
  std::vector<SkewNormalMarginal> marginals;
  std::vector<QuantileMap> maps;
  bool pd_repair_applied = false;
  int unattainable_pairs = 0;

  int dim() const { return static_cast<int>(marginals.size()); }
};

struct JointDraws {
  Mat draws;              // B x m, constrained scale
  Mat draws_unconstrained;  // B x m
  std::uint64_t seed = 0;
  int b() const { return static_cast<int>(draws.rows()); }
};

inline Mat target_correlation(const Mat& omega) {
  const Vec s = omega.diagonal().cwiseSqrt().cwiseInverse();
  Mat r = s.asDiagonal() * omega * s.asDiagonal();
  r.diagonal().setOnes();
  return symmetrize(r);
}

inline Mat target_correlation(const LaplaceFit& fit) { return target_correlation(fit.covariance); }

/// Mean and variance of Q(Z), Z standard normal, by Gauss-Hermite.
inline std::pair<double, double> map_moments(const QuantileMap& q, int gh_order) {
  const QuadratureRule& r = cached_gauss_hermite_normal(gh_order);
  double m1 = 0.0, m2 = 0.0;
  for (int a = 0; a < gh_order; ++a) {
    const double x = q(r.nodes[a]);
    m1 += r.weights[a] * x;
    m2 += r.weights[a] * x * x;
  }
  return {m1, m2 - m1 * m1};
}

/// Pearson correlation of (Q_j(Z_1), Q_k(Z_2)) when (Z_1, Z_2) are standard
/// bivariate normal with correlation rho.
inline double induced_correlation(const QuantileMap& qj, const QuantileMap& qk, double rho, int gh_order) {
  const QuadratureRule& r = cached_gauss_hermite_normal(gh_order);
  const auto [mj, vj] = map_moments(qj, gh_order);
  const auto [mk, vk] = map_moments(qk, gh_order);
  const double s = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  double cross = 0.0;
  for (int a = 0; a < gh_order; ++a) {
    const double xa = qj(r.nodes[a]) - mj;
    double inner = 0.0;
    for (int b = 0; b < gh_order; ++b) inner += r.weights[b] * (qk(rho * r.nodes[a] + s * r.nodes[b]) - mk);
    cross += r.weights[a] * xa * inner;
  }
  return cross / std::sqrt(vj * vk);
}

struct NortaPair {
  double r_star = 0.0;
  bool clamped = false;
};

inline NortaPair norta_pair_solve(const QuantileMap& qj, const QuantileMap& qk, double target, int gh_order = 24) {
  if (!(std::abs(target) < 1.0)) throw DomainError("NORTA target correlation must lie in (-1, 1)");
  if (qj.params().alpha == 0.0 && qk.params().alpha == 0.0) return {target, false};
  if (target == 0.0) return {0.0, false};
  const double lo = -1.0 + 1e-6, hi = 1.0 - 1e-6;
  auto f = [&](double r) { return induced_correlation(qj, qk, r, gh_order) - target; };
  const double flo = f(lo), fhi = f(hi);
  if (flo > 0.0) return {lo, true};
  if (fhi < 0.0) return {hi, true};
  auto done = [](double a, double b) { return std::abs(b - a) <= 1e-10; };
  std::uintmax_t iters = 100;
  auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, done, iters);
  return {0.5 * (a + b), false};
}

/// Symmetric matrix with unit diagonal pushed to the nearest PD correlation
/// by eigenvalue clipping. Returns true when a repair was needed.
inline bool repair_correlation(Mat& r, double floor = 1e-8) {
  r = symmetrize(r);
  Eigen::SelfAdjointEigenSolver<Mat> es(r);
  if (es.eigenvalues().minCoeff() >= floor) return false;
  const Vec ev = es.eigenvalues().cwiseMax(floor);
  Mat fixed = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  const Vec s = fixed.diagonal().cwiseSqrt().cwiseInverse();
  r = symmetrize(s.asDiagonal() * fixed * s.asDiagonal());
  r.diagonal().setOnes();
  return true;
}

/// Solves every pair and repairs R* if the assembled matrix is not PD.
inline CopulaModel norta_adjust(CopulaModel c, int gh_order = 24, int threads = 1) {
  const int m = c.dim();
  if (static_cast<int>(c.maps.size()) != m) {
    c.maps.resize(m);
    parallel_for(static_cast<std::size_t>(m), threads,
                 [&](std::size_t j) { c.maps[j] = QuantileMap(c.marginals[j].shifted()); });
  }
  std::vector<std::pair<int, int>> pairs;
  for (int j = 0; j < m; ++j)
    for (int k = j + 1; k < m; ++k) pairs.emplace_back(j, k);
  std::vector<NortaPair> solved(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const auto [j, k] = pairs[i];
    solved[i] = norta_pair_solve(c.maps[j], c.maps[k], std::clamp(c.r(j, k), -1.0 + 1e-12, 1.0 - 1e-12), gh_order);
  });
  c.r_star = Mat::Identity(m, m);
  c.unattainable_pairs = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [j, k] = pairs[i];
    c.r_star(j, k) = c.r_star(k, j) = solved[i].r_star;
    c.unattainable_pairs += solved[i].clamped ? 1 : 0;
  }
  c.pd_repair_applied = repair_correlation(c.r_star);
  return c;
}

inline CopulaModel make_copula(const Mat& omega, std::vector<SkewNormalMarginal> marginals, int gh_order = 24,
                               int threads = 1) {
  CopulaModel c;
  if (omega.rows() != static_cast<Eigen::Index>(marginals.size()))
    throw DomainError("covariance and marginals disagree on dimension");
  c.r = target_correlation(omega);
  c.marginals = std::move(marginals);
  return norta_adjust(std::move(c), gh_order, threads);
}

inline CopulaModel make_copula(const LaplaceFit& fit, std::vector<SkewNormalMarginal> marginals, int gh_order = 24,
                               int threads = 1) {
  return make_copula(fit.covariance, std::move(marginals), gh_order, threads);
}

/// B joint draws; blocks of 256 rows get their own seed so the output does not
/// depend on the thread count.
inline JointDraws sample_joint(const CopulaModel& c, int b, std::uint64_t seed, int threads = 1) {
  const int m = c.dim();
  Eigen::LLT<Mat> llt(c.r_star);
  if (llt.info() != Eigen::Success) throw DomainError("copula correlation is not positive definite");
  const Mat lower = llt.matrixL();
  JointDraws out;
  out.seed = seed;
  out.draws.resize(b, m);
  out.draws_unconstrained.resize(b, m);
  constexpr int kBlock = 256;
  const int blocks = (b + kBlock - 1) / kBlock;
  parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t blk) {
    std::mt19937_64 rng(derive_seed(seed, blk));
    std::normal_distribution<double> normal;
    Vec e(m);
    const int start = static_cast<int>(blk) * kBlock, stop = std::min(b, start + kBlock);
    for (int i = start; i < stop; ++i) {
      for (int j = 0; j < m; ++j) e[j] = normal(rng);
      const Vec z = lower * e;
      for (int j = 0; j < m; ++j) {
        const double u = c.maps[j](z[j]);
        out.draws_unconstrained(i, j) = u;
        out.draws(i, j) = to_constrained(c.marginals[j].transform, u);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Factor scores

struct FactorScoreDraws {
  std::vector<Mat> draws;  // one n x q matrix per usable parameter draw
  int skipped = 0;         // parameter draws with an inadmissible implied model
};

inline FactorScoreDraws factor_score_draws(const ModelSpec& model, const DataSet& data, const JointDraws& jd,
                                           std::uint64_t seed, int threads = 1) {
  const int b = jd.b();
  const int n = data.n(), q = model.q();
  std::vector<Mat> per(b);
  std::vector<char> ok(b, 0);
  parallel_for(static_cast<std::size_t>(b), threads, [&](std::size_t i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::normal_distribution<double> normal;
    LatentConditional lc;
    try {
      lc = latent_conditional(model, ParamVector::from_unconstrained(model, Vec(jd.draws_unconstrained.row(i).transpose())), data.y());
    } catch (const Error&) {
      return;
    }
    Mat lower;
    if (!cholesky_lower(lc.cov, lower)) return;
    Mat eta(n, q);
    Vec e(q);
    for (int s = 0; s < n; ++s) {
      for (int k = 0; k < q; ++k) e[k] = normal(rng);
      eta.row(s) = lc.mean.row(s) + (lower * e).transpose();
    }
    per[i] = std::move(eta);
    ok[i] = 1;
  });
  FactorScoreDraws out;
  for (int i = 0; i < b; ++i) {
    if (ok[i]) out.draws.push_back(std::move(per[i]));
    else ++out.skipped;
  }
  return out;
}

struct FactorScoreSummary {
  Mat mean;  // n x q
  Mat sd;    // n x q
};

inline FactorScoreSummary summarize_scores(const FactorScoreDraws& fs) {
  if (fs.draws.empty()) throw DomainError("no usable factor score draws");
  const Eigen::Index n = fs.draws[0].rows(), q = fs.draws[0].cols();
  Mat s1 = Mat::Zero(n, q), s2 = Mat::Zero(n, q);
  for (const auto& d : fs.draws) {
    s1 += d;
    s2 += d.cwiseProduct(d);
  }
  const double b = static_cast<double>(fs.draws.size());
  FactorScoreSummary out;
  out.mean = s1 / b;
  out.sd = ((s2 / b - out.mean.cwiseProduct(out.mean)) * (b / std::max(1.0, b - 1.0))).cwiseMax(0.0).cwiseSqrt();
  return out;
}

// ---------------------------------------------------------------------------
// Derived scalars

struct DerivedScalar {
  std::string expression;
  Vec samples;
  std::optional<SkewNormalParams> sn_fit;
};

/// Maximum-likelihood skew-normal fit to a sample.
inline SkewNormalParams fit_skew_normal_ml(const Vec& x) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 3) throw DomainError("need at least 3 samples for a skew-normal fit");
  const double mean = x.mean();
  const Vec d = x.array() - mean;
  const double var = d.squaredNorm() / n;
  if (!(var > 0.0)) throw DomainError("degenerate sample");
  const double skew = d.array().cube().sum() / n / std::pow(var, 1.5);
  const double a0 = sn_alpha_from_skewness(skew);
  const double d0 = a0 / std::sqrt(1 + a0 * a0);
  const double w0 = std::sqrt(var / (1 - 2 * d0 * d0 / std::numbers::pi));
  struct Lik {
    const Vec& x;
    int dim() const { return 3; }
    double log_density(const Vec& p) const {
      const SkewNormalParams sp{p[0], std::exp(p[1]), p[2]};
      double s = 0.0;
      for (Eigen::Index i = 0; i < x.size(); ++i) s += sn_logpdf(sp, x[i]);
      return s;
    }
    Vec gradient(const Vec& p) const {
      const SkewNormalParams sp{p[0], std::exp(p[1]), p[2]};
      Vec g = Vec::Zero(3);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const auto gi = sn_logpdf_grad(sp, x[i]);
        g += Vec((Vec(3) << gi[0], gi[1], gi[2]).finished());
      }
      return g;
    }
  };
  Vec p0(3);
  p0 << mean - w0 * d0 * std::sqrt(2 / std::numbers::pi), std::log(w0), a0;
  OptimOptions oo;
  oo.tol = 1e-6 * n;
  const OptimResult r = bfgs_maximize(Lik{x}, p0, oo);
  return {r.x[0], std::exp(r.x[1]), r.x[2]};
}

/// Evaluates an expression over named columns of a draw matrix.
inline Vec evaluate_expression(const Expression& e, const std::vector<std::string>& column_names, const Mat& draws) {
  std::vector<int> cols;
  for (const auto& nm : e.names()) {
    auto it = std::find(column_names.begin(), column_names.end(), nm);
    if (it == column_names.end()) throw DomainError("unknown parameter '" + nm + "' in expression");
    cols.push_back(static_cast<int>(it - column_names.begin()));
  }
  Vec out(draws.rows());
  std::vector<double> vals(cols.size());
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) vals[k] = draws(i, cols[k]);
    out[i] = e.evaluate(vals);
  }
  return out;
}

inline DerivedScalar derived_scalar(const JointDraws& jd, const std::vector<std::string>& names, const std::string& expr,
                                    bool fit_sn = false) {
  DerivedScalar d;
  d.expression = expr;
  d.samples = evaluate_expression(Expression::parse(expr), names, jd.draws);
  if (fit_sn) {
    try {
      d.sn_fit = fit_skew_normal_ml(d.samples);
    } catch (const Error&) {
      d.sn_fit.reset();
    }
  }
  return d;
}

}  // namespace sembayes
