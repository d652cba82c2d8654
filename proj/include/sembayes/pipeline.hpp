#pragma once

#include <chrono>
#include <map>
#include <optional>

#include "sembayes/copula.hpp"
#include "sembayes/laplace.hpp"
#include "sembayes/marginals.hpp"
#include "sembayes/vb.hpp"

namespace sembayes {

enum class Stage { Laplace = 0, Profiles = 1, Vb = 2, Copula = 3 };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::Laplace: return "laplace";
    case Stage::Profiles: return "profiles";
    case Stage::Vb: return "vb";
    case Stage::Copula: return "copula";
  }
  return "?";
}

inline Stage stage_from_string(const std::string& s) {
  if (s == "laplace" || s == "laplace-only") return Stage::Laplace;
  if (s == "profiles") return Stage::Profiles;
  if (s == "vb") return Stage::Vb;
  if (s == "copula" || s == "all") return Stage::Copula;
  throw DomainError("unknown stage '" + s + "' (laplace | profiles | vb | copula)");
}

struct PipelineOptions {
  Stage stage = Stage::Copula;
  std::uint64_t seed = 20240611;
  LaplaceOptions laplace;
  MarginalOptions marginals;
  int rqmc_points = 512;
  int gh_order = 24;
  int draws = 4000;
  bool factor_scores = true;
  std::vector<std::string> derived;  // expressions over parameter names
  bool fit_derived_sn = true;
  int threads = 1;
};

struct PosteriorResult {
  std::vector<std::string> names;
  std::vector<Transform> transforms;
  Stage stage = Stage::Laplace;
  LaplaceFit laplace;
  std::vector<SkewNormalMarginal> marginals;
  std::vector<MarginalSummary> summaries;
  std::optional<VbShift> vb;
  std::optional<CopulaModel> copula;
  std::optional<JointDraws> draws;
  std::optional<FactorScoreSummary> scores;
  int factor_score_skipped = 0;
  std::vector<DerivedScalar> derived;
  std::vector<std::pair<std::string, double>> timings_ms;  // in stage order
  std::vector<std::string> warnings;

  int dim() const { return laplace.dim(); }
};

namespace detail {

class StageClock {
 public:
  explicit StageClock(PosteriorResult& r) : r_(r) {}
  template <class F>
  auto run(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto stop = [&] {
      r_.timings_ms.emplace_back(name,
                                 std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    };
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      stop();
    } else {
      auto v = f();
      stop();
      return v;
    }
  }

 private:
  PosteriorResult& r_;
};

}  // namespace detail

/// Laplace -> profiles and SN fits -> VB shift -> NORTA copula and draws.
template <LogDensity Target>
PosteriorResult run_posterior(const Target& target, const Vec& init, const std::vector<Transform>& transforms,
                              const std::vector<std::string>& names, const PipelineOptions& opt = {}) {
  PosteriorResult r;
  r.names = names;
  r.transforms = transforms;
  r.stage = opt.stage;
  detail::StageClock clock(r);
  LaplaceOptions lo = opt.laplace;
  lo.threads = opt.threads;
  r.laplace = clock.run("laplace", [&] { return laplace_fit(target, init, lo); });
  if (opt.stage == Stage::Laplace) return r;

  MarginalOptions mo = opt.marginals;
  mo.threads = opt.threads;
  r.marginals = clock.run("profiles", [&] { return fit_marginals(target, r.laplace, transforms, mo); });
  for (const auto& mg : r.marginals) {
    const std::string nm = mg.j < static_cast<int>(names.size()) ? names[mg.j] : std::to_string(mg.j);
    if (mg.gaussian_fallback) r.warnings.push_back("gaussian fallback for " + nm);
    if (mg.vol_slope_failed) r.warnings.push_back("volume slope unavailable for " + nm);
    if (mg.dropped_points > 0)
      r.warnings.push_back(std::to_string(mg.dropped_points) + " inadmissible scan points dropped for " + nm);
  }

  if (opt.stage >= Stage::Vb) {
    VbOptions vo;
    vo.rqmc_points = opt.rqmc_points;
    vo.seed = opt.seed;
    vo.threads = opt.threads;
    r.vb = clock.run("vb", [&] { return fit_vb_shift(target, r.laplace, vo); });
    if (r.vb->failed) r.warnings.push_back("vb shift failed; marginals left unshifted");
    else apply_shift(r.marginals, *r.vb);
  }

  r.summaries = clock.run("summaries", [&] {
    std::vector<MarginalSummary> s(r.marginals.size());
    parallel_for(s.size(), opt.threads, [&](std::size_t j) { s[j] = marginal_summaries(r.marginals[j]); });
    return s;
  });

  if (opt.stage >= Stage::Copula) {
    r.copula = clock.run("norta", [&] { return make_copula(r.laplace, r.marginals, opt.gh_order, opt.threads); });
    if (r.copula->pd_repair_applied) r.warnings.push_back("copula correlation repaired to positive definite");
    if (r.copula->unattainable_pairs > 0)
      r.warnings.push_back(std::to_string(r.copula->unattainable_pairs) + " NORTA targets unattainable (clamped)");
    r.draws = clock.run("draws", [&] { return sample_joint(*r.copula, opt.draws, derive_seed(opt.seed, 1), opt.threads); });
    if (!opt.derived.empty())
      clock.run("derived", [&] {
        for (const auto& e : opt.derived) r.derived.push_back(derived_scalar(*r.draws, names, e, opt.fit_derived_sn));
      });
  }
  return r;
}

inline std::vector<std::string> parameter_names(const ModelSpec& model) {
  std::vector<std::string> out;
  for (const auto& p : model.params()) out.push_back(p.name);
  return out;
}

inline PosteriorResult run_posterior(const SemPosterior& post, const PipelineOptions& opt = {}) {
  PosteriorResult r = run_posterior(post, default_init(post.model(), post.data()), post.transforms(),
                                    parameter_names(post.model()), opt);
  if (r.draws && opt.factor_scores && post.model().q() > 0) {
    detail::StageClock clock(r);
    clock.run("factor_scores", [&] {
      const FactorScoreDraws fs =
          factor_score_draws(post.model(), post.data(), *r.draws, derive_seed(opt.seed, 2), opt.threads);
      r.factor_score_skipped = fs.skipped;
      if (!fs.draws.empty()) r.scores = summarize_scores(fs);
    });
  }
  return r;
}

}  // namespace sembayes
