#pragma once

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <functional>
#include <map>
#include <mutex>

#include "sembayes/common.hpp"

namespace sembayes {

struct QuadratureRule {
  Vec nodes;
  Vec weights;
};

namespace detail {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights come
// from the first eigenvector components.
inline QuadratureRule golub_welsch(const Vec& diag, const Vec& offdiag, double mu0) {
  const int n = static_cast<int>(diag.size());
  Mat j = Mat::Zero(n, n);
  j.diagonal() = diag;
  for (int i = 0; i + 1 < n; ++i) j(i, i + 1) = j(i + 1, i) = offdiag[i];
  Eigen::SelfAdjointEigenSolver<Mat> es(j);
  QuadratureRule r;
  r.nodes = es.eigenvalues();
  r.weights = mu0 * es.eigenvectors().row(0).array().square().transpose();
  return r;
}

}  // namespace detail

/// n-point Gauss-Legendre rule on [-1, 1].
inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw DomainError("quadrature order must be >= 1");
  Vec diag = Vec::Zero(n), off(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) off[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
  return detail::golub_welsch(diag, off, 2.0);
}

/// n-point Gauss-Hermite rule for the standard normal weight:
/// E[f(Z)] ~ sum w_i f(x_i), weights sum to 1.
inline QuadratureRule gauss_hermite_normal(int n) {
  if (n < 1) throw DomainError("quadrature order must be >= 1");
  Vec diag = Vec::Zero(n), off(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) off[k - 1] = std::sqrt(static_cast<double>(k));
  return detail::golub_welsch(diag, off, 1.0);
}

/// Cached copy; rules are immutable once built.
inline const QuadratureRule& cached_gauss_hermite_normal(int n) {
  static std::mutex mu;
  static std::map<int, QuadratureRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_hermite_normal(n)).first;
  return it->second;
}

inline const QuadratureRule& cached_gauss_legendre(int n) {
  static std::mutex mu;
  static std::map<int, QuadratureRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_legendre(n)).first;
  return it->second;
}

/// Fixed-rule integral of f over [a, b].
template <class F>
double integrate_legendre(F&& f, double a, double b, int n = 64) {
  const QuadratureRule& r = cached_gauss_legendre(n);
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += r.weights[i] * f(mid + half * r.nodes[i]);
  return half * s;
}

/// Adaptive Gauss-Kronrod; infinite limits allowed.
inline double integrate_adaptive(const std::function<double(double)>& f, double a, double b, double tol = 1e-12) {
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 25, tol);
}

}  // namespace sembayes
