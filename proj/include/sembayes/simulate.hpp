#pragma once

#include <random>

#include "sembayes/sem.hpp"

namespace sembayes {

/// n iid rows from N(mu(theta), Sigma(theta)); deterministic given seed.
inline DataSet simulate_dataset(const ModelSpec& model, const ParamVector& theta_true, int n, std::uint64_t seed) {
  if (n < 2) throw DataError("simulated data needs n >= 2");
  const ReducedForm rf = reduced_form(model, theta_true);
  Mat lower;
  if (!cholesky_lower(rf.sigma, lower)) throw ImpliedCovarianceError("implied covariance is not positive definite");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Mat y(n, model.p());
  Vec z(model.p());
  for (int s = 0; s < n; ++s) {
    for (int i = 0; i < model.p(); ++i) z[i] = normal(rng);
    y.row(s) = (rf.mu + lower * z).transpose();
  }
  return DataSet(std::move(y), model.indicators());
}

}  // namespace sembayes
