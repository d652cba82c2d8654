#pragma once

#include <concepts>

#include "sembayes/prior.hpp"

namespace sembayes {

/// A differentiable log density over R^m. log_density may throw an Error
/// subclass at structurally inadmissible points; gradient returns the
/// gradient of log_density (not its negative).
template <class T>
concept LogDensity = requires(const T& t, const Vec& x) {
  { t.dim() } -> std::convertible_to<int>;
  { t.log_density(x) } -> std::convertible_to<double>;
  { t.gradient(x) } -> std::convertible_to<Vec>;
};

/// Evaluates log_density, mapping inadmissible points to -inf.
template <LogDensity Target>
double log_density_or_ninf(const Target& target, const Vec& x) {
  try {
    const double v = target.log_density(x);
    return std::isnan(v) ? -kInf : v;
  } catch (const ImpliedCovarianceError&) {
    return -kInf;
  } catch (const StructuralSingularityError&) {
    return -kInf;
  } catch (const DegenerateConditionalError&) {
    return -kInf;
  }
}

// ---------------------------------------------------------------------------

/// Model matrices at one parameter point (constrained scale).
struct SemMatrices {
  Vec nu, alpha;
  Mat lambda, beta, theta, psi;
  Vec theta_sd, psi_sd;
};

inline SemMatrices model_matrices(const ModelSpec& model, const Vec& c) {
  const int p = model.p(), q = model.q();
  if (c.size() != model.m()) throw Error("parameter vector has wrong length");
  auto val = [&](const Entry& e) { return e.is_free() ? c[e.index] : e.value; };
  SemMatrices s;
  s.nu.resize(p);
  s.alpha.resize(q);
  s.lambda.resize(p, q);
  s.beta.resize(q, q);
  s.theta_sd.resize(p);
  s.psi_sd.resize(q);
  for (int i = 0; i < p; ++i) {
    s.nu[i] = val(model.nu(i));
    s.theta_sd[i] = val(model.theta_sd(i));
    for (int j = 0; j < q; ++j) s.lambda(i, j) = val(model.lambda(i, j));
  }
  for (int j = 0; j < q; ++j) {
    s.alpha[j] = val(model.alpha(j));
    s.psi_sd[j] = val(model.psi_sd(j));
    for (int k = 0; k < q; ++k) s.beta(j, k) = val(model.beta(j, k));
  }
  s.theta.resize(p, p);
  for (int i = 0; i < p; ++i)
    for (int k = 0; k < p; ++k)
      s.theta(i, k) = i == k ? s.theta_sd[i] * s.theta_sd[i] : s.theta_sd[i] * s.theta_sd[k] * val(model.theta_cor(i, k));
  s.psi.resize(q, q);
  for (int j = 0; j < q; ++j)
    for (int k = 0; k < q; ++k)
      s.psi(j, k) = j == k ? s.psi_sd[j] * s.psi_sd[j] : s.psi_sd[j] * s.psi_sd[k] * val(model.psi_cor(j, k));
  return s;
}

/// (I - B)^{-1}; throws StructuralSingularityError when singular.
inline Mat structural_inverse(const Mat& beta) {
  const auto q = beta.rows();
  Eigen::FullPivLU<Mat> lu(Mat::Identity(q, q) - beta);
  if (q > 0 && (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-12))
    throw StructuralSingularityError("(I - B) is singular");
  return q > 0 ? Mat(lu.inverse()) : Mat(0, 0);
}

struct ReducedForm {
  Vec mu;
  Mat sigma;
};

namespace detail {

struct ReducedFormWork {
  SemMatrices s;
  Mat a;        // (I - B)^{-1}
  Mat phi;      // A Psi A^T
  Vec a_alpha;  // A alpha
  Vec mu;
  Mat sigma;
  Eigen::LLT<Mat> sigma_llt;
};

inline void require_pd(const Mat& m, const char* what) {
  if (m.rows() == 0) return;
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw ImpliedCovarianceError(std::string(what) + " is not positive definite");
}

inline ReducedFormWork reduced_form_work(const ModelSpec& model, const Vec& c) {
  ReducedFormWork w;
  w.s = model_matrices(model, c);
  if (!w.s.theta.allFinite() || !w.s.psi.allFinite() || !w.s.lambda.allFinite() || !w.s.beta.allFinite())
    throw ImpliedCovarianceError("non-finite model matrix");
  require_pd(w.s.theta, "Theta");
  require_pd(w.s.psi, "Psi");
  w.a = structural_inverse(w.s.beta);
  w.phi = model.q() > 0 ? Mat(w.a * w.s.psi * w.a.transpose()) : Mat(0, 0);
  w.a_alpha = model.q() > 0 ? Vec(w.a * w.s.alpha) : Vec(0);
  w.mu = w.s.nu + (model.q() > 0 ? Vec(w.s.lambda * w.a_alpha) : Vec::Zero(model.p()));
  w.sigma = w.s.theta;
  if (model.q() > 0) w.sigma += w.s.lambda * w.phi * w.s.lambda.transpose();
  w.sigma = symmetrize(w.sigma);
  w.sigma_llt.compute(w.sigma);
  if (w.sigma_llt.info() != Eigen::Success || !w.sigma.allFinite())
    throw ImpliedCovarianceError("implied covariance is not positive definite");
  return w;
}

}  // namespace detail

/// Model-implied mean and covariance of one observation.
inline ReducedForm reduced_form(const ModelSpec& model, const ParamVector& theta) {
  auto w = detail::reduced_form_work(model, theta.constrained());
  return {std::move(w.mu), std::move(w.sigma)};
}

struct LatentConditional {
  Mat mean;  // n x q, row s holds m_s
  Mat cov;   // q x q, shared by all subjects
};

/// Moments of eta_s | y_s, theta for every row of y (n x p).
inline LatentConditional latent_conditional(const ModelSpec& model, const ParamVector& theta, const Mat& y) {
  const SemMatrices s = model_matrices(model, theta.constrained());
  const int q = model.q();
  const Mat a = structural_inverse(s.beta);
  const Mat phi = symmetrize(a * s.psi * a.transpose());
  Eigen::LLT<Mat> phi_llt(phi), theta_llt(s.theta);
  if (phi_llt.info() != Eigen::Success) throw DegenerateConditionalError("latent covariance Phi is singular");
  if (theta_llt.info() != Eigen::Success) throw DegenerateConditionalError("residual covariance Theta is singular");
  const Mat phi_inv = phi_llt.solve(Mat::Identity(q, q));
  const Mat lt_theta_inv = theta_llt.solve(s.lambda).transpose();  // Lambda^T Theta^{-1}
  Eigen::LLT<Mat> prec_llt(symmetrize(phi_inv + lt_theta_inv * s.lambda));
  if (prec_llt.info() != Eigen::Success) throw DegenerateConditionalError("conditional precision is singular");
  LatentConditional out;
  out.cov = symmetrize(prec_llt.solve(Mat::Identity(q, q)));
  const Vec prior_part = phi_inv * (a * s.alpha);
  const Mat centered = y.rowwise() - s.nu.transpose();
  const Mat rhs = (lt_theta_inv * centered.transpose()).colwise() + prior_part;  // q x n
  out.mean = (out.cov * rhs).transpose();
  return out;
}

inline LatentConditional latent_conditional(const ModelSpec& model, const ParamVector& theta, const Vec& y_s) {
  return latent_conditional(model, theta, Mat(y_s.transpose()));
}

namespace detail {

inline double log_likelihood_from(const ReducedFormWork& w, const DataSet& data) {
  const int p = data.p();
  const double n = data.n();
  const Vec d = data.mean() - w.mu;
  const Mat lower = w.sigma_llt.matrixL();
  const double log_det = 2.0 * lower.diagonal().array().log().sum();
  const Mat l_inv_s = w.sigma_llt.matrixL().solve(data.scatter());
  const Mat quad_s = w.sigma_llt.matrixL().solve(l_inv_s.transpose());  // L^{-1} S L^{-T}
  const Vec l_inv_d = w.sigma_llt.matrixL().solve(d);
  return -0.5 * n * (p * kLog2Pi + log_det + quad_s.trace() + l_inv_d.squaredNorm());
}

}  // namespace detail

/// Sum of per-row multivariate normal log densities at the implied moments.
inline double log_likelihood(const ModelSpec& model, const ParamVector& theta, const DataSet& data) {
  return detail::log_likelihood_from(detail::reduced_form_work(model, theta.constrained()), data);
}

/// Log prior over the unconstrained vector; -inf outside the support.
inline double log_prior(const ModelSpec& model, const ParamVector& theta) {
  double total = 0.0;
  const Vec& u = theta.unconstrained();
  for (int i = 0; i < model.m(); ++i) {
    const auto& pi = model.param(i);
    total += prior_logpdf_unconstrained(pi.prior, transform_of(pi.kind), u[i]);
    if (!std::isfinite(total)) return -kInf;
  }
  return total;
}

inline double log_posterior(const ModelSpec& model, const ParamVector& theta, const DataSet& data) {
  const double lp = log_prior(model, theta);
  if (!std::isfinite(lp)) return -kInf;
  return log_likelihood(model, theta, data) + lp;
}

/// Analytic gradient of log_posterior with respect to the unconstrained
/// coordinates.
inline Vec grad_log_posterior(const ModelSpec& model, const ParamVector& theta, const DataSet& data) {
  const auto w = detail::reduced_form_work(model, theta.constrained());
  const int p = model.p(), q = model.q();
  const double n = data.n();
  const Mat w_inv = w.sigma_llt.solve(Mat::Identity(p, p));
  const Vec d = data.mean() - w.mu;
  const Vec g_mu = n * (w_inv * d);
  const Mat sd = data.scatter() + d * d.transpose();
  const Mat g_sigma = -0.5 * n * (w_inv - w_inv * sd * w_inv);  // d loglik / d Sigma (entrywise)

  Mat g_lambda, g_beta, g_psi;
  Vec g_alpha;
  if (q > 0) {
    const Mat lambda_a = w.s.lambda * w.a;
    const Mat g_phi = w.s.lambda.transpose() * g_sigma * w.s.lambda;
    g_alpha = lambda_a.transpose() * g_mu;
    g_lambda = g_mu * w.a_alpha.transpose() + 2.0 * g_sigma * w.s.lambda * w.phi;
    g_beta = (lambda_a.transpose() * g_mu) * w.a_alpha.transpose() + 2.0 * w.a.transpose() * g_phi * w.phi;
    g_psi = w.a.transpose() * g_phi * w.a;
  }
  const Mat g_theta_sd_part = g_sigma * w.s.theta;
  const Mat g_psi_sd_part = q > 0 ? Mat(g_psi * w.s.psi) : Mat(0, 0);

  Vec grad = Vec::Zero(model.m());
  for (int k = 0; k < model.m(); ++k) {
    const auto& pi = model.param(k);
    const int r = pi.row, c = pi.col;
    double g = 0.0;
    switch (pi.kind) {
      case ParamKind::Intercept: g = g_mu[r]; break;
      case ParamKind::LatentIntercept: g = g_alpha[r]; break;
      case ParamKind::Loading: g = g_lambda(r, c); break;
      case ParamKind::Regression: g = g_beta(r, c); break;
      case ParamKind::ResidualSD: g = 2.0 * g_theta_sd_part(r, r) / w.s.theta_sd[r]; break;
      case ParamKind::LatentSD: g = 2.0 * g_psi_sd_part(r, r) / w.s.psi_sd[r]; break;
      case ParamKind::ResidualCorrelation: g = 2.0 * g_sigma(r, c) * w.s.theta_sd[r] * w.s.theta_sd[c]; break;
      case ParamKind::LatentCorrelation: g = 2.0 * g_psi(r, c) * w.s.psi_sd[r] * w.s.psi_sd[c]; break;
    }
    const Transform t = transform_of(pi.kind);
    const double u = theta.unconstrained()[k];
    grad[k] = g * d_constrained(t, u) + prior_grad_unconstrained(pi.prior, t, u);
  }
  return grad;
}

// ---------------------------------------------------------------------------

/// The SEM posterior as a LogDensity over the unconstrained parameter
/// vector. Holds its own copies of model and data, so it is safe to share
/// across threads.
class SemPosterior {
 public:
  SemPosterior(ModelSpec model, DataSet data) : model_(std::move(model)), data_(std::move(data)) {
    if (data_.p() != model_.p()) throw DataError("data and model disagree on the number of indicators");
  }

  int dim() const { return model_.m(); }
  const ModelSpec& model() const { return model_; }
  const DataSet& data() const { return data_; }
  std::vector<Transform> transforms() const { return model_.transforms(); }

  ParamVector point(const Vec& u) const { return ParamVector::from_unconstrained(model_, u); }

  double log_density(const Vec& u) const { return log_posterior(model_, point(u), data_); }
  Vec gradient(const Vec& u) const { return grad_log_posterior(model_, point(u), data_); }
  double log_likelihood_at(const Vec& u) const { return log_likelihood(model_, point(u), data_); }
  double log_prior_at(const Vec& u) const { return log_prior(model_, point(u)); }

 private:
  ModelSpec model_;
  DataSet data_;
};

/// Starting point: intercepts at sample means, free loadings at 1, regressions
/// at 0, SDs at half the sample SD of the relevant indicator, correlations at 0.
inline Vec default_init(const ModelSpec& model, const DataSet& data) {
  Vec u = Vec::Zero(model.m());
  const Vec sample_sd = data.scatter().diagonal().array().sqrt();
  for (int k = 0; k < model.m(); ++k) {
    const auto& pi = model.param(k);
    double c = 0.0;
    switch (pi.kind) {
      case ParamKind::Intercept: c = data.mean()[pi.row]; break;
      case ParamKind::LatentIntercept: c = 0.0; break;
      case ParamKind::Loading: c = 1.0; break;
      case ParamKind::Regression: c = 0.0; break;
      case ParamKind::ResidualSD: c = 0.5 * sample_sd[pi.row]; break;
      case ParamKind::LatentSD: {
        // first indicator that loads on this latent
        double sd = sample_sd.mean();
        for (int i = 0; i < model.p(); ++i) {
          const Entry& e = model.lambda(i, pi.row);
          if (e.is_free() || e.value != 0.0) {
            sd = sample_sd[i];
            break;
          }
        }
        c = 0.5 * sd;
        break;
      }
      case ParamKind::ResidualCorrelation:
      case ParamKind::LatentCorrelation: c = 0.0; break;
    }
    if (transform_of(pi.kind) == Transform::Log) c = std::max(c, 1e-3);
    u[k] = to_unconstrained(transform_of(pi.kind), c);
  }
  return u;
}

}  // namespace sembayes
