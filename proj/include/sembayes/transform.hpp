#pragma once

#include <span>

#include "sembayes/model.hpp"

namespace sembayes {

inline double to_constrained(Transform t, double u) {
  switch (t) {
    case Transform::Log: return std::exp(u);
    case Transform::Fisher: return std::tanh(u);
    default: return u;
  }
}

inline double to_unconstrained(Transform t, double c) {
  switch (t) {
    case Transform::Log:
      if (!(c > 0.0)) throw DomainError("standard deviation must be positive");
      return std::log(c);
    case Transform::Fisher:
      if (!(std::abs(c) < 1.0)) throw DomainError("correlation must lie in (-1, 1)");
      return std::atanh(c);
    default: return c;
  }
}

/// log |d constrained / d unconstrained| at u.
inline double log_abs_jacobian(Transform t, double u) {
  switch (t) {
    case Transform::Log: return u;
    case Transform::Fisher: {
      // log(1 - tanh(u)^2) = log(4) - 2|u| - 2 log(1 + exp(-2|u|))
      const double a = std::abs(u);
      return std::log(4.0) - 2.0 * a - 2.0 * std::log1p(std::exp(-2.0 * a));
    }
    default: return 0.0;
  }
}

/// d/du of log_abs_jacobian.
inline double d_log_abs_jacobian(Transform t, double u) {
  switch (t) {
    case Transform::Log: return 1.0;
    case Transform::Fisher: return -2.0 * std::tanh(u);
    default: return 0.0;
  }
}

/// d constrained / d unconstrained.
inline double d_constrained(Transform t, double u) {
  switch (t) {
    case Transform::Log: return std::exp(u);
    case Transform::Fisher: {
      const double r = std::tanh(u);
      return 1.0 - r * r;
    }
    default: return 1.0;
  }
}

/// One point in parameter space with both views. The unconstrained vector is
/// the primary representation; the constrained view and Jacobian derive from
/// it.
class ParamVector {
 public:
  ParamVector() = default;

  static ParamVector from_unconstrained(Vec u, std::vector<Transform> transforms) {
    ParamVector pv;
    if (static_cast<std::size_t>(u.size()) != transforms.size()) throw Error("parameter/transform size mismatch");
    pv.c_.resize(u.size());
    pv.log_jac_ = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      pv.c_[i] = to_constrained(transforms[i], u[i]);
      pv.log_jac_ += log_abs_jacobian(transforms[i], u[i]);
    }
    pv.u_ = std::move(u);
    pv.t_ = std::move(transforms);
    return pv;
  }

  static ParamVector from_constrained(const Vec& c, std::vector<Transform> transforms) {
    if (static_cast<std::size_t>(c.size()) != transforms.size()) throw Error("parameter/transform size mismatch");
    Vec u(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) u[i] = to_unconstrained(transforms[i], c[i]);
    return from_unconstrained(std::move(u), std::move(transforms));
  }

  static ParamVector from_unconstrained(const ModelSpec& model, Vec u) {
    return from_unconstrained(std::move(u), model.transforms());
  }
  static ParamVector from_constrained(const ModelSpec& model, const Vec& c) {
    return from_constrained(c, model.transforms());
  }

  int size() const { return static_cast<int>(u_.size()); }
  const Vec& unconstrained() const { return u_; }
  const Vec& constrained() const { return c_; }
  double log_jacobian() const { return log_jac_; }
  const std::vector<Transform>& transforms() const { return t_; }

 private:
  Vec u_, c_;
  double log_jac_ = 0.0;
  std::vector<Transform> t_;
};

}  // namespace sembayes
