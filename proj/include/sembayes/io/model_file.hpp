#pragma once

#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "sembayes/model.hpp"

namespace sembayes {

/// A parsed model document: the structure plus an optional true parameter
/// vector (constrained scale, parameter order) for simulation studies.
struct ModelFile {
  ModelSpec model;
  std::optional<Vec> truth;
};

namespace detail {

inline int yaml_line(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

inline std::string yaml_scalar(const YAML::Node& n, const std::string& what) {
  if (!n.IsScalar()) throw ModelError(what + " must be a scalar", yaml_line(n));
  return n.Scalar();
}

inline double yaml_number(const YAML::Node& n, const std::string& what) {
  const std::string s = yaml_scalar(n, what);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ModelError(what + " must be a finite number, got '" + s + "'", yaml_line(n));
}

inline std::vector<std::string> yaml_names(const YAML::Node& n, const std::string& what) {
  if (!n || !n.IsSequence()) throw ModelError("'" + what + "' must be a list of names", n ? yaml_line(n) : 0);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : n) {
    std::string s = yaml_scalar(e, what + " entry");
    if (!seen.insert(s).second) throw ModelError("duplicate name '" + s + "' in " + what, yaml_line(e));
    out.push_back(std::move(s));
  }
  return out;
}

/// "free" or a number.
struct SlotValue {
  bool free = false;
  double value = 0.0;
};

inline SlotValue yaml_slot(const YAML::Node& n, const std::string& what) {
  if (n.IsScalar() && n.Scalar() == "free") return {true, 0.0};
  return {false, yaml_number(n, what + " (a number fixes it, 'free' frees it)")};
}

inline void require_map(const YAML::Node& n, const std::string& what) {
  if (!n.IsMap()) throw ModelError("'" + what + "' must be a mapping", yaml_line(n));
}

inline PriorSpec parse_prior(const YAML::Node& n) {
  static const std::regex re(R"(^\s*(normal|gamma|beta)\s*\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)\s*$)");
  const std::string s = yaml_scalar(n, "prior");
  std::smatch m;
  if (!std::regex_match(s, m, re))
    throw ModelError("prior must look like normal(mean, sd), gamma(shape, rate) or beta(a, b), got '" + s + "'",
                     yaml_line(n));
  double a, b;
  try {
    a = std::stod(m[2].str());
    b = std::stod(m[3].str());
  } catch (const std::exception&) {
    throw ModelError("bad number in prior '" + s + "'", yaml_line(n));
  }
  PriorSpec p = m[1] == "normal" ? PriorSpec::normal(a, b) : m[1] == "gamma" ? PriorSpec::gamma(a, b) : PriorSpec::beta(a, b);
  try {
    p.validate();
  } catch (const ModelError& e) {
    throw ModelError(e.what(), yaml_line(n));
  }
  return p;
}

inline std::pair<std::string, std::string> yaml_pair(const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence() || n.size() != 2) throw ModelError(what + " entries must be [name, name] pairs", yaml_line(n));
  return {yaml_scalar(n[0], what), yaml_scalar(n[1], what)};
}

}  // namespace detail

/// Parses a YAML model document. Layout:
///   indicators: [y1, y2, y3]
///   latents: [eta]
///   loadings: {eta: {y1: 1, y2: free, y3: free}}
///   regressions: {outcome: [predictor, ...]} or {outcome: {predictor: free | value}}
///   residual_covariances: [[y1, y2]]
///   latent_covariances: [[eta1, eta2]]
///   intercepts: {y1: 0}            (free by default)
///   latent_intercepts: {eta: 0}    (free by default)
///   variances: {y1: 1.0, eta: 1.0} (fixed variances)
///   priors: {set: diffuse | informative, classes: {loading: "normal(0, 10)"},
///            parameters: {"lambda[y2,eta]": "normal(1, 0.5)"}}
///   truth: {"nu[y1]": 0.5, ...}    (all free parameters, constrained scale)
inline ModelFile parse_model_file(const std::string& text) {
  using namespace detail;
  YAML::Node doc;
  try {
    doc = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ModelError("malformed document: " + e.msg, e.mark.line >= 0 ? e.mark.line + 1 : 0);
  }
  if (!doc.IsMap()) throw ModelError("model document must be a mapping at top level", yaml_line(doc));
  static const std::set<std::string> known = {"indicators", "latents", "loadings", "regressions",
                                              "residual_covariances", "latent_covariances", "intercepts",
                                              "latent_intercepts", "variances", "priors", "truth", "name",
                                              "description"};
  for (const auto& kv : doc) {
    const std::string key = yaml_scalar(kv.first, "top-level key");
    if (!known.count(key)) throw ModelError("unknown section '" + key + "'", yaml_line(kv.first));
  }

  ModelBuilder b(yaml_names(doc["indicators"], "indicators"), yaml_names(doc["latents"], "latents"));

  if (const auto n = doc["loadings"]) {
    require_map(n, "loadings");
    for (const auto& kv : n) {
      const int j = b.latent(yaml_scalar(kv.first, "latent"), yaml_line(kv.first));
      require_map(kv.second, "loadings of a latent");
      for (const auto& e : kv.second) {
        const int i = b.indicator(yaml_scalar(e.first, "indicator"), yaml_line(e.first));
        const SlotValue v = yaml_slot(e.second, "loading");
        if (v.free) b.free_loading(i, j, yaml_line(e.first));
        else b.fix_loading(i, j, v.value, yaml_line(e.first));
      }
    }
  }

  if (const auto n = doc["regressions"]) {
    require_map(n, "regressions");
    for (const auto& kv : n) {
      const int r = b.latent(yaml_scalar(kv.first, "outcome latent"), yaml_line(kv.first));
      if (kv.second.IsSequence()) {
        for (const auto& e : kv.second) b.free_regression(r, b.latent(yaml_scalar(e, "predictor"), yaml_line(e)), yaml_line(e));
      } else {
        require_map(kv.second, "regression predictors");
        for (const auto& e : kv.second) {
          const int line = yaml_line(e.first);
          const int c = b.latent(yaml_scalar(e.first, "predictor"), line);
          const SlotValue v = yaml_slot(e.second, "regression coefficient");
          if (v.free) b.free_regression(r, c, line);
          else b.fix_regression(r, c, v.value, line);
        }
      }
    }
  }

  if (const auto n = doc["residual_covariances"]) {
    if (!n.IsSequence()) throw ModelError("'residual_covariances' must be a list of pairs", yaml_line(n));
    for (const auto& e : n) {
      const auto [a, c] = yaml_pair(e, "residual covariance");
      b.free_residual_covariance(b.indicator(a, yaml_line(e)), b.indicator(c, yaml_line(e)), yaml_line(e));
    }
  }
  if (const auto n = doc["latent_covariances"]) {
    if (!n.IsSequence()) throw ModelError("'latent_covariances' must be a list of pairs", yaml_line(n));
    for (const auto& e : n) {
      const auto [a, c] = yaml_pair(e, "latent covariance");
      b.free_latent_covariance(b.latent(a, yaml_line(e)), b.latent(c, yaml_line(e)), yaml_line(e));
    }
  }

  if (const auto n = doc["intercepts"]) {
    require_map(n, "intercepts");
    for (const auto& e : n) {
      const int line = yaml_line(e.first);
      const int i = b.indicator(yaml_scalar(e.first, "indicator"), line);
      const SlotValue v = yaml_slot(e.second, "intercept");
      if (v.free) b.free_intercept(i, line);
      else b.fix_intercept(i, v.value, line);
    }
  }
  if (const auto n = doc["latent_intercepts"]) {
    require_map(n, "latent_intercepts");
    for (const auto& e : n) {
      const int line = yaml_line(e.first);
      const int j = b.latent(yaml_scalar(e.first, "latent"), line);
      const SlotValue v = yaml_slot(e.second, "latent intercept");
      if (v.free) b.free_latent_intercept(j, line);
      else b.fix_latent_intercept(j, v.value, line);
    }
  }
  if (const auto n = doc["variances"]) {
    require_map(n, "variances");
    for (const auto& e : n) {
      const int line = yaml_line(e.first);
      const std::string name = yaml_scalar(e.first, "variable");
      const double v = yaml_number(e.second, "fixed variance");
      if (b.is_indicator(name)) b.fix_residual_variance(b.indicator(name), v, line);
      else if (b.is_latent(name)) b.fix_latent_variance(b.latent(name), v, line);
      else throw ModelError("unknown indicator or latent '" + name + "'", line);
    }
  }

  if (const auto n = doc["priors"]) {
    require_map(n, "priors");
    for (const auto& kv : n) {
      const std::string key = yaml_scalar(kv.first, "priors key");
      if (key == "set") {
        const std::string s = yaml_scalar(kv.second, "prior set");
        if (s == "diffuse") b.prior_set(PriorSet::Diffuse);
        else if (s == "informative") b.prior_set(PriorSet::Informative);
        else throw ModelError("prior set must be 'diffuse' or 'informative', got '" + s + "'", yaml_line(kv.second));
      } else if (key == "classes") {
        require_map(kv.second, "priors.classes");
        for (const auto& e : kv.second) {
          const std::string cls = yaml_scalar(e.first, "parameter class");
          const auto kind = param_kind_from_string(cls);
          if (!kind) throw ModelError("unknown parameter class '" + cls + "'", yaml_line(e.first));
          try {
            b.class_prior(*kind, parse_prior(e.second));
          } catch (const ModelError& err) {
            if (err.line() > 0) throw;
            throw ModelError(err.what(), yaml_line(e.first));
          }
        }
      } else if (key == "parameters") {
        require_map(kv.second, "priors.parameters");
        for (const auto& e : kv.second)
          b.param_prior(yaml_scalar(e.first, "parameter name"), parse_prior(e.second), yaml_line(e.first));
      } else {
        throw ModelError("unknown priors key '" + key + "' (set | classes | parameters)", yaml_line(kv.first));
      }
    }
  }

  ModelFile out{b.build(), std::nullopt};

  if (const auto n = doc["truth"]) {
    require_map(n, "truth");
    Vec t = Vec::Constant(out.model.m(), std::numeric_limits<double>::quiet_NaN());
    for (const auto& e : n) {
      const std::string name = yaml_scalar(e.first, "parameter name");
      const auto idx = out.model.find_param(name);
      if (!idx) throw ModelError("truth given for unknown or fixed parameter '" + name + "'", yaml_line(e.first));
      t[*idx] = yaml_number(e.second, "true value");
    }
    for (int k = 0; k < out.model.m(); ++k)
      if (std::isnan(t[k])) throw ModelError("truth is missing parameter '" + out.model.param(k).name + "'", yaml_line(n));
    out.truth = t;
  }
  return out;
}

inline ModelFile load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model_file(ss.str());
}

}  // namespace sembayes
