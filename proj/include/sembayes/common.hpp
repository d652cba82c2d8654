#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

namespace sembayes {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

// ---------------------------------------------------------------------------
// Error hierarchy. Numerical failures that the caller is expected to branch on
// (optimizer steering, SBC failure accounting, CLI exit codes) get their own
// type.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (I - B) is singular at the requested point.
class StructuralSingularityError : public Error {
 public:
  using Error::Error;
};

/// The model-implied covariance (or Theta/Psi) is not positive definite.
class ImpliedCovarianceError : public Error {
 public:
  using Error::Error;
};

class DegenerateConditionalError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or non positive definite negative Hessian.
class HessianError : public Error {
 public:
  using Error::Error;
};

class ProfilingError : public Error {
 public:
  using Error::Error;
};

class OracleUnusableError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// A value outside the support of a transform or distribution.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  ModelError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// ---------------------------------------------------------------------------
// Standard normal helpers.

inline double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

inline double norm_logpdf(double z) { return -0.5 * kLog2Pi - 0.5 * z * z; }

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// log Phi(z), accurate in the far left tail.
inline double norm_logcdf(double z) {
  if (z > -30.0) return std::log(norm_cdf(z));
  // Asymptotic Mills-ratio series; erfc itself underflows past about -37.
  const double z2 = z * z;
  double series = 1.0;
  double term = 1.0;
  for (int k = 1; k < 12; ++k) {
    term *= -(2.0 * k - 1.0) / z2;
    series += term;
  }
  return norm_logpdf(z) - std::log(-z) + std::log(series);
}

inline double norm_quantile(double p) {
  if (p <= 0.0) return -kInf;
  if (p >= 1.0) return kInf;
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// ---------------------------------------------------------------------------
// Seeding. Child seeds are derived by counter so parallel work is reproducible
// regardless of scheduling.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

// ---------------------------------------------------------------------------
// Threading.

/// Default worker count: SEMBAYES_THREADS if set, else 1.
inline int default_thread_count() {
  if (const char* env = std::getenv("SEMBAYES_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

/// Runs body(i) for i in [0, n). Each index must write only its own output
/// slot; the result is then independent of the thread count.
template <class Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Small linear algebra helpers.

inline Mat symmetrize(const Mat& a) { return 0.5 * (a + a.transpose()); }

/// Lower Cholesky factor or nullopt-like empty matrix on failure.
inline bool cholesky_lower(const Mat& a, Mat& lower) {
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  return lower.allFinite();
}

/// Sample quantile with linear interpolation (type 7).
inline double sample_quantile(std::vector<double> xs, double p) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double median(std::vector<double> xs) { return sample_quantile(std::move(xs), 0.5); }

}  // namespace sembayes
