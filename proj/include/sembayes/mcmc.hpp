#pragma once

#include <complex>
#include <random>

#include <unsupported/Eigen/FFT>

#include "sembayes/sem.hpp"

namespace sembayes {

struct McmcOptions {
  int chains = 4;
  int warmup = 5000;
  int draws = 5000;  // per chain, after warmup
  std::uint64_t seed = 1;
  double init_spread = 1.0;  // overdispersion of starting points in proposal units
  double rhat_max = 1.01;
  bool require_usable = true;
  int threads = 1;
};

struct McmcRun {
  std::vector<Mat> chains;  // C x (T x m), unconstrained
  std::vector<double> acceptance;
  Vec rhat;
  Vec ess;
  std::uint64_t seed = 0;

  int dim() const { return chains.empty() ? 0 : static_cast<int>(chains[0].cols()); }
  int per_chain() const { return chains.empty() ? 0 : static_cast<int>(chains[0].rows()); }
  Mat pooled() const {
    Mat out(per_chain() * static_cast<int>(chains.size()), dim());
    for (std::size_t c = 0; c < chains.size(); ++c) out.middleRows(c * per_chain(), per_chain()) = chains[c];
    return out;
  }
  bool usable(double rhat_max = 1.01) const { return rhat.size() > 0 && rhat.maxCoeff() < rhat_max; }
};

/// Split-Rhat for one coordinate; each chain is halved.
inline double split_rhat(const std::vector<Vec>& chains) {
  std::vector<Vec> halves;
  for (const auto& c : chains) {
    const Eigen::Index h = c.size() / 2;
    halves.push_back(c.head(h));
    halves.push_back(c.segment(c.size() - h, h));
  }
  const double n = static_cast<double>(halves[0].size());
  const double k = static_cast<double>(halves.size());
  Vec means(halves.size());
  double w = 0.0;
  for (std::size_t i = 0; i < halves.size(); ++i) {
    means[i] = halves[i].mean();
    w += (halves[i].array() - means[i]).square().sum() / (n - 1.0);
  }
  w /= k;
  const double b = n * (means.array() - means.mean()).square().sum() / (k - 1.0);
  if (!(w > 0.0)) return b > 0.0 ? kInf : 1.0;
  return std::sqrt(((n - 1.0) / n * w + b / n) / w);
}

/// Multi-chain effective sample size with Geyer's initial positive sequence.
inline double effective_sample_size(const std::vector<Vec>& chains) {
  const int c = static_cast<int>(chains.size());
  const Eigen::Index n = chains[0].size();
  std::vector<Vec> centered;
  Vec means(c), vars(c);
  for (int i = 0; i < c; ++i) {
    means[i] = chains[i].mean();
    centered.push_back(chains[i].array() - means[i]);
    vars[i] = centered.back().squaredNorm() / (n - 1.0);
  }
  const double w = vars.mean();
  const double b_over_n = c > 1 ? (means.array() - means.mean()).square().sum() / (c - 1.0) : 0.0;
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  if (!(var_plus > 0.0)) return static_cast<double>(c * n);
  // Autocovariances via zero-padded FFT, averaged over chains.
  Eigen::Index len = 1;
  while (len < 2 * n) len <<= 1;
  Eigen::FFT<double> fft;
  Vec acov_sum = Vec::Zero(n);
  std::vector<double> buf(static_cast<std::size_t>(len));
  std::vector<std::complex<double>> spec;
  std::vector<double> back;
  for (int i = 0; i < c; ++i) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (Eigen::Index t = 0; t < n; ++t) buf[t] = centered[i][t];
    fft.fwd(spec, buf);
    for (auto& z : spec) z = std::norm(z);
    fft.inv(back, spec);
    for (Eigen::Index t = 0; t < n; ++t) acov_sum[t] += back[t] / static_cast<double>(n);
  }
  auto rho = [&](Eigen::Index t) { return 1.0 - (w - acov_sum[t] / c) / var_plus; };
  double sum = 0.0;  // sum of Geyer pairs, monotone-capped
  double prev_pair = kInf;
  for (Eigen::Index t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(static_cast<double>(c * n)));
  return c * n / tau;
}

namespace detail {

struct ChainOut {
  Mat draws;
  double acceptance = 0.0;
};

template <LogDensity Target>
ChainOut run_chain(const Target& target, const Vec& init, const Mat& cov0, const McmcOptions& opt, std::uint64_t seed) {
  const int m = static_cast<int>(init.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto std_normal = [&] {
    Vec e(m);
    for (int k = 0; k < m; ++k) e[k] = normal(rng);
    return e;
  };
  const double s = 2.38 * 2.38 / m;

  Mat chol;
  if (!cholesky_lower(s * cov0, chol)) throw DomainError("initial proposal covariance is not positive definite");
  Vec x = init;
  double lp = -kInf;
  for (int tries = 0; tries < 100 && !std::isfinite(lp); ++tries) {
    x = init + opt.init_spread * chol * std_normal();
    lp = log_density_or_ninf(target, x);
  }
  if (!std::isfinite(lp)) {
    x = init;
    lp = log_density_or_ninf(target, x);
  }
  if (!std::isfinite(lp)) throw ImpliedCovarianceError("no admissible starting point for MCMC");

  // Warmup: proposal s * Sigma_hat, re-estimated at the end of doubling windows,
  // with a Robbins-Monro log-scale factor steering acceptance toward 0.234.
  double log_scale = 0.0;
  Vec run_mean = x;
  Mat run_m2 = Mat::Zero(m, m);
  int run_n = 1;
  int window_end = std::max(50, opt.warmup / 20);
  for (int it = 0; it < opt.warmup; ++it) {
    const Vec prop = x + std::exp(log_scale) * (chol * std_normal());
    const double lq = log_density_or_ninf(target, prop);
    const double a = std::isfinite(lq) ? std::min(1.0, std::exp(lq - lp)) : 0.0;
    if (unif(rng) < a) {
      x = prop;
      lp = lq;
    }
    log_scale += (a - 0.234) / std::pow(it + 10.0, 0.6);
    log_scale = std::clamp(log_scale, -10.0, 5.0);
    ++run_n;
    const Vec d = x - run_mean;
    run_mean += d / run_n;
    run_m2 += d * (x - run_mean).transpose();
    if (it + 1 == window_end && it + 1 < opt.warmup) {
      Mat cov = symmetrize(run_m2 / (run_n - 1));
      cov.diagonal().array() += 1e-10 + 1e-8 * cov.diagonal().array();
      Mat c2;
      if (run_n > 2 * m && cholesky_lower(s * cov, c2)) {
        chol = c2;
        log_scale = 0.0;
      }
      run_mean = x;
      run_m2.setZero();
      run_n = 1;
      window_end = std::min(opt.warmup, 2 * window_end + 1);
    }
  }
  chol *= std::exp(log_scale);

  ChainOut out;
  out.draws.resize(opt.draws, m);
  long accepted = 0;
  for (int it = 0; it < opt.draws; ++it) {
    const Vec prop = x + chol * std_normal();
    const double lq = log_density_or_ninf(target, prop);
    if (std::isfinite(lq) && std::log(unif(rng)) < lq - lp) {
      x = prop;
      lp = lq;
      ++accepted;
    }
    out.draws.row(it) = x.transpose();
  }
  out.acceptance = static_cast<double>(accepted) / opt.draws;
  return out;
}

}  // namespace detail

inline void compute_diagnostics(McmcRun& run) {
  const int m = run.dim();
  run.rhat.resize(m);
  run.ess.resize(m);
  for (int j = 0; j < m; ++j) {
    std::vector<Vec> cols;
    for (const auto& c : run.chains) cols.push_back(c.col(j));
    run.rhat[j] = split_rhat(cols);
    run.ess[j] = effective_sample_size(cols);
  }
}

/// Random-walk Metropolis with warmup-adapted covariance, started around init
/// with initial proposal shape cov0 (typically the Laplace covariance).
template <LogDensity Target>
McmcRun adaptive_metropolis(const Target& target, const Vec& init, const Mat& cov0, const McmcOptions& opt = {}) {
  if (opt.chains < 1 || opt.draws < 4 || opt.warmup < 0) throw DomainError("invalid MCMC options");
  std::vector<detail::ChainOut> outs(opt.chains);
  parallel_for(static_cast<std::size_t>(opt.chains), opt.threads, [&](std::size_t c) {
    outs[c] = detail::run_chain(target, init, cov0, opt, derive_seed(opt.seed, c));
  });
  McmcRun run;
  run.seed = opt.seed;
  for (auto& o : outs) {
    run.chains.push_back(std::move(o.draws));
    run.acceptance.push_back(o.acceptance);
  }
  compute_diagnostics(run);
  if (opt.require_usable && !run.usable(opt.rhat_max)) {
    Eigen::Index j;
    const double worst = run.rhat.maxCoeff(&j);
    throw OracleUnusableError("MCMC oracle not converged: split-Rhat " + std::to_string(worst) + " for parameter " +
                              std::to_string(j));
  }
  return run;
}

}  // namespace sembayes
