#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sembayes/common.hpp"

namespace sembayes {

/// Parameter classes. Each class fixes the transform to the unconstrained
/// scale and the default prior family.
enum class ParamKind {
  Intercept,          // nu_i
  LatentIntercept,    // alpha_j
  Loading,            // Lambda_ij
  Regression,         // B_jk
  ResidualSD,         // Theta_ii^{1/2}
  LatentSD,           // Psi_jj^{1/2}
  ResidualCorrelation,
  LatentCorrelation,
};

enum class Transform { Identity, Log, Fisher };

inline Transform transform_of(ParamKind kind) {
  switch (kind) {
    case ParamKind::ResidualSD:
    case ParamKind::LatentSD:
      return Transform::Log;
    case ParamKind::ResidualCorrelation:
    case ParamKind::LatentCorrelation:
      return Transform::Fisher;
    default:
      return Transform::Identity;
  }
}

inline const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::Intercept: return "intercept";
    case ParamKind::LatentIntercept: return "latent_intercept";
    case ParamKind::Loading: return "loading";
    case ParamKind::Regression: return "regression";
    case ParamKind::ResidualSD: return "residual_sd";
    case ParamKind::LatentSD: return "latent_sd";
    case ParamKind::ResidualCorrelation: return "residual_correlation";
    case ParamKind::LatentCorrelation: return "latent_correlation";
  }
  return "unknown";
}

inline const char* to_string(Transform t) {
  switch (t) {
    case Transform::Identity: return "identity";
    case Transform::Log: return "log";
    case Transform::Fisher: return "fisher";
  }
  return "unknown";
}

inline std::optional<ParamKind> param_kind_from_string(const std::string& s) {
  for (auto k : {ParamKind::Intercept, ParamKind::LatentIntercept, ParamKind::Loading,
                 ParamKind::Regression, ParamKind::ResidualSD, ParamKind::LatentSD,
                 ParamKind::ResidualCorrelation, ParamKind::LatentCorrelation})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

// ---------------------------------------------------------------------------

struct PriorSpec {
  enum class Family { Normal, GammaOnSD, BetaOnCorrelation };

  Family family = Family::Normal;
  double a = 0.0;  // mean | shape | Beta a
  double b = 1.0;  // sd   | rate  | Beta b

  static PriorSpec normal(double mean, double sd) { return {Family::Normal, mean, sd}; }
  static PriorSpec gamma(double shape, double rate) { return {Family::GammaOnSD, shape, rate}; }
  static PriorSpec beta(double a, double b) { return {Family::BetaOnCorrelation, a, b}; }

  void validate() const {
    if (!(b > 0.0) || !std::isfinite(a) || !std::isfinite(b))
      throw ModelError("prior parameters out of range: " + describe());
    if (family != Family::Normal && !(a > 0.0))
      throw ModelError("prior parameters out of range: " + describe());
  }

  std::string describe() const {
    std::ostringstream os;
    switch (family) {
      case Family::Normal: os << "normal(" << a << ", " << b << ")"; break;
      case Family::GammaOnSD: os << "gamma(" << a << ", " << b << ")"; break;
      case Family::BetaOnCorrelation: os << "beta(" << a << ", " << b << ")"; break;
    }
    return os.str();
  }

  bool operator==(const PriorSpec&) const = default;
};

inline PriorSpec::Family expected_family(ParamKind kind) {
  switch (transform_of(kind)) {
    case Transform::Log: return PriorSpec::Family::GammaOnSD;
    case Transform::Fisher: return PriorSpec::Family::BetaOnCorrelation;
    default: return PriorSpec::Family::Normal;
  }
}

/// Named prior sets. "diffuse" is the default for unspecified priors.
enum class PriorSet { Diffuse, Informative };

inline PriorSpec default_prior(ParamKind kind, PriorSet set = PriorSet::Diffuse) {
  const bool inf = set == PriorSet::Informative;
  switch (kind) {
    case ParamKind::Intercept: return PriorSpec::normal(0.0, 32.0);
    case ParamKind::LatentIntercept: return PriorSpec::normal(0.0, 10.0);
    case ParamKind::Loading: return inf ? PriorSpec::normal(1.25, 0.25) : PriorSpec::normal(0.0, 10.0);
    case ParamKind::Regression: return inf ? PriorSpec::normal(1.5, 0.25) : PriorSpec::normal(0.0, 10.0);
    case ParamKind::ResidualSD:
    case ParamKind::LatentSD: return inf ? PriorSpec::gamma(10.0, 10.0) : PriorSpec::gamma(1.0, 0.5);
    case ParamKind::ResidualCorrelation:
    case ParamKind::LatentCorrelation: return inf ? PriorSpec::beta(5.0, 5.0) : PriorSpec::beta(1.0, 1.0);
  }
  return PriorSpec{};
}

// ---------------------------------------------------------------------------

/// One entry of a model matrix: either a free parameter (index into the
/// parameter vector) or a fixed value.
struct Entry {
  int index = -1;
  double value = 0.0;

  bool is_free() const { return index >= 0; }
  static Entry fixed(double v) { return {-1, v}; }
};

struct ParamInfo {
  std::string name;
  ParamKind kind;
  int row = 0;  // indicator/latent index, first slot
  int col = 0;  // second slot (loadings, regressions, correlations)
  PriorSpec prior;
};

/// Symbolic SEM structure. Build with ModelBuilder, which enforces the
/// structural invariants; a finished ModelSpec is immutable.
class ModelSpec {
 public:
  int p() const { return static_cast<int>(indicators_.size()); }
  int q() const { return static_cast<int>(latents_.size()); }
  int m() const { return static_cast<int>(params_.size()); }

  const std::vector<std::string>& indicators() const { return indicators_; }
  const std::vector<std::string>& latents() const { return latents_; }
  const std::vector<ParamInfo>& params() const { return params_; }
  const ParamInfo& param(int i) const { return params_.at(static_cast<std::size_t>(i)); }

  const Entry& nu(int i) const { return nu_[i]; }
  const Entry& alpha(int j) const { return alpha_[j]; }
  const Entry& lambda(int i, int j) const { return lambda_[i * q() + j]; }
  const Entry& beta(int r, int c) const { return beta_[r * q() + c]; }
  const Entry& theta_sd(int i) const { return theta_sd_[i]; }
  const Entry& theta_cor(int i, int k) const { return theta_cor_[i * p() + k]; }
  const Entry& psi_sd(int j) const { return psi_sd_[j]; }
  const Entry& psi_cor(int j, int k) const { return psi_cor_[j * q() + k]; }

  Transform transform(int i) const { return transform_of(param(i).kind); }

  std::vector<Transform> transforms() const {
    std::vector<Transform> out;
    out.reserve(params_.size());
    for (const auto& pi : params_) out.push_back(transform_of(pi.kind));
    return out;
  }

  std::optional<int> find_param(const std::string& name) const {
    for (int i = 0; i < m(); ++i)
      if (params_[i].name == name) return i;
    return std::nullopt;
  }

  int indicator_index(const std::string& name) const {
    for (int i = 0; i < p(); ++i)
      if (indicators_[i] == name) return i;
    return -1;
  }

  int latent_index(const std::string& name) const {
    for (int j = 0; j < q(); ++j)
      if (latents_[j] == name) return j;
    return -1;
  }

  /// Latent variables in an order where every regressor precedes its outcome.
  const std::vector<int>& topological_order() const { return topo_; }

  /// Copy with all priors of one class replaced.
  ModelSpec with_class_prior(ParamKind kind, const PriorSpec& prior) const {
    ModelSpec out = *this;
    for (auto& pi : out.params_)
      if (pi.kind == kind) pi.prior = prior;
    return out;
  }

  ModelSpec with_prior_set(PriorSet set) const {
    ModelSpec out = *this;
    for (auto& pi : out.params_) pi.prior = default_prior(pi.kind, set);
    return out;
  }

  /// Copy whose parameter vector is reordered: new position k holds old
  /// parameter order[k].
  ModelSpec with_parameter_order(const std::vector<int>& order) const {
    if (static_cast<int>(order.size()) != m()) throw ModelError("parameter order has wrong length");
    std::vector<int> new_of_old(order.size(), -1);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const int old = order[k];
      if (old < 0 || old >= m() || new_of_old[old] != -1) throw ModelError("parameter order is not a permutation");
      new_of_old[old] = static_cast<int>(k);
    }
    ModelSpec out = *this;
    for (std::size_t k = 0; k < order.size(); ++k) out.params_[k] = params_[order[k]];
    auto remap = [&](std::vector<Entry>& es) {
      for (auto& e : es)
        if (e.is_free()) e.index = new_of_old[e.index];
    };
    remap(out.nu_);
    remap(out.alpha_);
    remap(out.lambda_);
    remap(out.beta_);
    remap(out.theta_sd_);
    remap(out.theta_cor_);
    remap(out.psi_sd_);
    remap(out.psi_cor_);
    return out;
  }

 private:
  friend class ModelBuilder;

  std::vector<std::string> indicators_;
  std::vector<std::string> latents_;
  std::vector<ParamInfo> params_;
  std::vector<Entry> nu_, alpha_, lambda_, beta_, theta_sd_, theta_cor_, psi_sd_, psi_cor_;
  std::vector<int> topo_;
};

/// Incremental construction of a ModelSpec. Defaults: every intercept (nu and
/// alpha) free, every SD free, loadings/regressions/correlations fixed at 0.
class ModelBuilder {
 public:
  ModelBuilder(std::vector<std::string> indicators, std::vector<std::string> latents)
      : ind_(std::move(indicators)), lat_(std::move(latents)) {
    const std::size_t p = ind_.size(), q = lat_.size();
    nu_.assign(p, Slot::free_slot());
    alpha_.assign(q, Slot::free_slot());
    lambda_.assign(p * q, Slot::fixed_slot(0.0));
    beta_.assign(q * q, Slot::fixed_slot(0.0));
    theta_sd_.assign(p, Slot::free_slot());
    theta_cor_.assign(p * p, Slot::fixed_slot(0.0));
    psi_sd_.assign(q, Slot::free_slot());
    psi_cor_.assign(q * q, Slot::fixed_slot(0.0));
    for (const auto& n : ind_)
      if (std::find(lat_.begin(), lat_.end(), n) != lat_.end())
        throw ModelError("name used for both an indicator and a latent: " + n);
  }

  int indicator(const std::string& name, int line = 0) const {
    for (std::size_t i = 0; i < ind_.size(); ++i)
      if (ind_[i] == name) return static_cast<int>(i);
    throw ModelError("unknown indicator '" + name + "'", line);
  }
  int latent(const std::string& name, int line = 0) const {
    for (std::size_t j = 0; j < lat_.size(); ++j)
      if (lat_[j] == name) return static_cast<int>(j);
    throw ModelError("unknown latent variable '" + name + "'", line);
  }
  bool is_indicator(const std::string& name) const {
    return std::find(ind_.begin(), ind_.end(), name) != ind_.end();
  }
  bool is_latent(const std::string& name) const {
    return std::find(lat_.begin(), lat_.end(), name) != lat_.end();
  }

  ModelBuilder& free_loading(int i, int j, int line = 0) { return set(lambda_[idx_pq(i, j)], Slot::free_slot(line)); }
  ModelBuilder& fix_loading(int i, int j, double v, int line = 0) { return set(lambda_[idx_pq(i, j)], Slot::fixed_slot(v, line)); }

  /// eta_outcome regressed on eta_predictor, i.e. B(outcome, predictor).
  ModelBuilder& free_regression(int outcome, int predictor, int line = 0) {
    check_hollow(outcome, predictor, line);
    return set(beta_[idx_qq(outcome, predictor)], Slot::free_slot(line));
  }
  ModelBuilder& fix_regression(int outcome, int predictor, double v, int line = 0) {
    check_hollow(outcome, predictor, line);
    return set(beta_[idx_qq(outcome, predictor)], Slot::fixed_slot(v, line));
  }

  ModelBuilder& fix_intercept(int i, double v, int line = 0) { return set(nu_[i], Slot::fixed_slot(v, line)); }
  ModelBuilder& free_intercept(int i, int line = 0) { return set(nu_[i], Slot::free_slot(line)); }
  ModelBuilder& fix_latent_intercept(int j, double v, int line = 0) { return set(alpha_[j], Slot::fixed_slot(v, line)); }
  ModelBuilder& free_latent_intercept(int j, int line = 0) { return set(alpha_[j], Slot::free_slot(line)); }

  /// Fixed variances are given on the variance scale and stored as SDs.
  ModelBuilder& fix_residual_variance(int i, double var, int line = 0) {
    if (!(var > 0.0)) throw ModelError("fixed variance must be positive", line);
    return set(theta_sd_[i], Slot::fixed_slot(std::sqrt(var), line));
  }
  ModelBuilder& fix_latent_variance(int j, double var, int line = 0) {
    if (!(var > 0.0)) throw ModelError("fixed variance must be positive", line);
    return set(psi_sd_[j], Slot::fixed_slot(std::sqrt(var), line));
  }

  ModelBuilder& free_residual_covariance(int i, int k, int line = 0) {
    if (i == k) throw ModelError("residual covariance needs two distinct indicators", line);
    return set(theta_cor_[idx_pp(std::min(i, k), std::max(i, k))], Slot::free_slot(line));
  }
  ModelBuilder& free_latent_covariance(int j, int k, int line = 0) {
    if (j == k) throw ModelError("latent covariance needs two distinct latent variables", line);
    return set(psi_cor_[idx_qq(std::min(j, k), std::max(j, k))], Slot::free_slot(line));
  }

  /// Prior overrides: by class, then by parameter name (name wins).
  ModelBuilder& class_prior(ParamKind kind, const PriorSpec& prior) {
    if (prior.family != expected_family(kind))
      throw ModelError(std::string("prior family does not match parameter class ") + to_string(kind));
    prior.validate();
    class_priors_[kind] = prior;
    return *this;
  }
  ModelBuilder& param_prior(const std::string& name, const PriorSpec& prior, int line = 0) {
    prior.validate();
    named_priors_[name] = {prior, line};
    return *this;
  }
  ModelBuilder& prior_set(PriorSet set) {
    prior_set_ = set;
    return *this;
  }

  ModelSpec build() const;

 private:
  struct Slot {
    bool free = false;
    double value = 0.0;
    int line = 0;
    static Slot free_slot(int line = 0) { return {true, 0.0, line}; }
    static Slot fixed_slot(double v, int line = 0) { return {false, v, line}; }
  };

  std::size_t idx_pq(int i, int j) const {
    if (i < 0 || i >= static_cast<int>(ind_.size()) || j < 0 || j >= static_cast<int>(lat_.size()))
      throw ModelError("loading index out of range");
    return static_cast<std::size_t>(i) * lat_.size() + static_cast<std::size_t>(j);
  }
  std::size_t idx_qq(int r, int c) const {
    if (r < 0 || r >= static_cast<int>(lat_.size()) || c < 0 || c >= static_cast<int>(lat_.size()))
      throw ModelError("latent index out of range");
    return static_cast<std::size_t>(r) * lat_.size() + static_cast<std::size_t>(c);
  }
  std::size_t idx_pp(int i, int k) const {
    if (i < 0 || i >= static_cast<int>(ind_.size()) || k < 0 || k >= static_cast<int>(ind_.size()))
      throw ModelError("indicator index out of range");
    return static_cast<std::size_t>(i) * ind_.size() + static_cast<std::size_t>(k);
  }
  void check_hollow(int r, int c, int line) const {
    if (r == c) throw ModelError("regression of '" + lat_.at(r) + "' on itself (B must be hollow)", line);
  }
  ModelBuilder& set(Slot& s, Slot v) {
    s = v;
    return *this;
  }

  std::vector<std::string> ind_, lat_;
  std::vector<Slot> nu_, alpha_, lambda_, beta_, theta_sd_, theta_cor_, psi_sd_, psi_cor_;
  std::map<ParamKind, PriorSpec> class_priors_;
  std::map<std::string, std::pair<PriorSpec, int>> named_priors_;
  PriorSet prior_set_ = PriorSet::Diffuse;
};

inline ModelSpec ModelBuilder::build() const {
  ModelSpec spec;
  spec.indicators_ = ind_;
  spec.latents_ = lat_;
  const int p = static_cast<int>(ind_.size());
  const int q = static_cast<int>(lat_.size());
  if (p < 1) throw ModelError("model needs at least one indicator");

  auto prior_for = [&](ParamKind kind) {
    auto it = class_priors_.find(kind);
    return it != class_priors_.end() ? it->second : default_prior(kind, prior_set_);
  };
  auto add = [&](const Slot& s, ParamKind kind, int row, int col, std::string name) -> Entry {
    if (!s.free) return Entry::fixed(s.value);
    spec.params_.push_back({std::move(name), kind, row, col, prior_for(kind)});
    return Entry{static_cast<int>(spec.params_.size()) - 1, 0.0};
  };

  // Parameter order: intercepts, loadings, regressions, residual SDs,
  // residual correlations, latent SDs, latent correlations, latent intercepts.
  spec.nu_.resize(p);
  for (int i = 0; i < p; ++i) spec.nu_[i] = add(nu_[i], ParamKind::Intercept, i, 0, "nu[" + ind_[i] + "]");
  spec.lambda_.resize(static_cast<std::size_t>(p * q));
  for (int j = 0; j < q; ++j)
    for (int i = 0; i < p; ++i)
      spec.lambda_[i * q + j] =
          add(lambda_[i * q + j], ParamKind::Loading, i, j, "lambda[" + ind_[i] + "," + lat_[j] + "]");
  spec.beta_.resize(static_cast<std::size_t>(q * q));
  for (int r = 0; r < q; ++r)
    for (int c = 0; c < q; ++c)
      spec.beta_[r * q + c] = add(beta_[r * q + c], ParamKind::Regression, r, c, "beta[" + lat_[r] + "," + lat_[c] + "]");
  spec.theta_sd_.resize(p);
  for (int i = 0; i < p; ++i)
    spec.theta_sd_[i] = add(theta_sd_[i], ParamKind::ResidualSD, i, i, "theta_sd[" + ind_[i] + "]");
  spec.theta_cor_.assign(static_cast<std::size_t>(p * p), Entry::fixed(0.0));
  for (int i = 0; i < p; ++i)
    for (int k = i + 1; k < p; ++k) {
      Entry e = add(theta_cor_[i * p + k], ParamKind::ResidualCorrelation, i, k,
                    "theta_cor[" + ind_[i] + "," + ind_[k] + "]");
      spec.theta_cor_[i * p + k] = e;
      spec.theta_cor_[k * p + i] = e;
    }
  spec.psi_sd_.resize(q);
  for (int j = 0; j < q; ++j) spec.psi_sd_[j] = add(psi_sd_[j], ParamKind::LatentSD, j, j, "psi_sd[" + lat_[j] + "]");
  spec.psi_cor_.assign(static_cast<std::size_t>(q * q), Entry::fixed(0.0));
  for (int j = 0; j < q; ++j)
    for (int k = j + 1; k < q; ++k) {
      Entry e = add(psi_cor_[j * q + k], ParamKind::LatentCorrelation, j, k,
                    "psi_cor[" + lat_[j] + "," + lat_[k] + "]");
      spec.psi_cor_[j * q + k] = e;
      spec.psi_cor_[k * q + j] = e;
    }
  spec.alpha_.resize(q);
  for (int j = 0; j < q; ++j)
    spec.alpha_[j] = add(alpha_[j], ParamKind::LatentIntercept, j, 0, "alpha[" + lat_[j] + "]");

  for (const auto& [name, pr] : named_priors_) {
    auto idx = spec.find_param(name);
    if (!idx) throw ModelError("prior given for unknown or fixed parameter '" + name + "'", pr.second);
    if (pr.first.family != expected_family(spec.params_[*idx].kind))
      throw ModelError("prior family " + pr.first.describe() + " does not fit parameter '" + name + "'", pr.second);
    spec.params_[*idx].prior = pr.first;
  }

  // Fixed correlations must lie inside (-1, 1); fixed SDs must be positive.
  for (const auto& s : theta_cor_)
    if (!s.free && std::abs(s.value) >= 1.0) throw ModelError("fixed residual correlation outside (-1, 1)", s.line);
  for (const auto& s : psi_cor_)
    if (!s.free && std::abs(s.value) >= 1.0) throw ModelError("fixed latent correlation outside (-1, 1)", s.line);

  // Acyclic structural part: Kahn's algorithm over edges predictor -> outcome.
  std::vector<int> indegree(q, 0);
  auto edge = [&](int r, int c) { return beta_[r * q + c].free || beta_[r * q + c].value != 0.0; };
  for (int r = 0; r < q; ++r)
    for (int c = 0; c < q; ++c)
      if (r != c && edge(r, c)) ++indegree[r];
  std::vector<int> ready;
  for (int j = 0; j < q; ++j)
    if (indegree[j] == 0) ready.push_back(j);
  while (!ready.empty()) {
    const int c = ready.front();
    ready.erase(ready.begin());
    spec.topo_.push_back(c);
    for (int r = 0; r < q; ++r)
      if (r != c && edge(r, c) && --indegree[r] == 0) ready.push_back(r);
  }
  if (static_cast<int>(spec.topo_.size()) != q) {
    int line = 0;
    for (int r = 0; r < q; ++r)
      if (indegree[r] > 0)
        for (int c = 0; c < q; ++c)
          if (edge(r, c) && beta_[r * q + c].line > 0) line = beta_[r * q + c].line;
    throw ModelError("structural regressions contain a cycle (B must be acyclic)", line);
  }

  // Scale constraint per latent.
  for (int j = 0; j < q; ++j) {
    bool scaled = !psi_sd_[j].free;
    for (int i = 0; i < p && !scaled; ++i) {
      const Slot& s = lambda_[i * q + j];
      scaled = !s.free && s.value != 0.0;
    }
    if (!scaled)
      throw ModelError("latent variable '" + lat_[j] + "' has no scale constraint (fix one loading or its variance)");
  }
  return spec;
}

// ---------------------------------------------------------------------------

/// Observed data with cached sufficient statistics. The Gaussian likelihood
/// depends on the rows only through n, the mean and the scatter matrix.
class DataSet {
 public:
  DataSet() = default;
  DataSet(Mat y, std::vector<std::string> names) : y_(std::move(y)), names_(std::move(names)) {
    if (y_.rows() < 2) throw DataError("data needs at least 2 rows");
    if (static_cast<Eigen::Index>(names_.size()) != y_.cols()) throw DataError("column name count does not match data");
    if (!y_.allFinite()) throw DataError("data contains missing or non-finite values");
    mean_ = y_.colwise().mean().transpose();
    const Mat centered = y_.rowwise() - mean_.transpose();
    scatter_ = (centered.transpose() * centered) / static_cast<double>(y_.rows());
  }

  int n() const { return static_cast<int>(y_.rows()); }
  int p() const { return static_cast<int>(y_.cols()); }
  const Mat& y() const { return y_; }
  const std::vector<std::string>& names() const { return names_; }
  const Vec& mean() const { return mean_; }
  /// Maximum-likelihood covariance (divisor n).
  const Mat& scatter() const { return scatter_; }

  /// Copy with columns reordered to the model's indicator order.
  DataSet aligned_to(const ModelSpec& model) const {
    if (p() != model.p()) throw DataError("data has " + std::to_string(p()) + " columns, model expects " + std::to_string(model.p()));
    Mat out(n(), p());
    for (int i = 0; i < model.p(); ++i) {
      auto it = std::find(names_.begin(), names_.end(), model.indicators()[i]);
      if (it == names_.end()) throw DataError("data has no column named '" + model.indicators()[i] + "'");
      out.col(i) = y_.col(std::distance(names_.begin(), it));
    }
    return DataSet(std::move(out), model.indicators());
  }

 private:
  Mat y_;
  std::vector<std::string> names_;
  Vec mean_;
  Mat scatter_;
};

}  // namespace sembayes
