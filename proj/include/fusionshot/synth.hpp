#pragma once

// Synthetic pools with planted correctness structure.
//
// Each episode draws a shared difficulty t and per-model noise eps_i; model
// i is correct when sqrt(rho) t + sqrt(1 - rho) eps_i clears the standard
// normal quantile matching its target accuracy. Logits are then built so the
// argmax lands on the true class when correct and on a uniformly chosen
// wrong class otherwise, with a positive gap over the runner-up. Every
// episode uses its own generator seeded from (seed, split, episode id).

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "fusionshot/detail/random.hpp"
#include "fusionshot/error.hpp"
#include "fusionshot/logitstore.hpp"

namespace fusionshot {

/// Episodes fall into a regime with probability proportional to `weight`;
/// inside it, model i hits `accuracy[i]`.
struct Regime {
  double weight = 1.0;
  std::vector<double> accuracy;
};

struct RegimeSwitch {
  std::size_t batch = 0;  // first batch that uses the new plan
  std::vector<Regime> regimes;
};

struct SynthSpec {
  std::string pool_name = "synthetic";
  std::size_t N = 3;
  int K = 5;
  int J = 1;
  std::map<std::string, std::size_t> episodes{{"train", 1000}, {"val", 300}, {"novel", 600}};
  std::vector<double> accuracy;        // per model; ignored inside regimes
  double rho = 0.0;                    // shared-latent weight in [0, 1)
  double margin = 2.0;                 // mean gap of the predicted class over the runner-up
  std::vector<double> margin_correct;  // optional per-model gap when correct
  std::vector<double> margin_wrong;    // optional per-model gap when wrong
  double noise = 1.0;                  // sd of the background logits
  std::vector<Regime> regimes;
  std::size_t batches = 0;  // > 0 produces a stream with one `batch` split per pool
  std::size_t batch_episodes = 2000;
  std::vector<RegimeSwitch> switches;
  std::uint64_t seed = 7;
};

struct SynthPool {
  Pool pool;
  std::map<std::string, CorrectnessMatrix> planted;
};

namespace detail {

inline void check_accuracies(const std::vector<double>& acc, std::size_t n, const std::string& what) {
  if (acc.size() != n)
    throw Error(ErrorKind::InfeasibleSpec, what + " needs " + std::to_string(n) + " entries, got " + std::to_string(acc.size()));
  for (double a : acc)
    if (!(a > 0.0 && a < 1.0))
      throw Error(ErrorKind::InfeasibleSpec, what + " entries must lie strictly inside (0, 1); got " + std::to_string(a));
}

inline void validate_spec(const SynthSpec& s) {
  if (s.N < 2 || s.N > kMaxPoolSize) throw Error(ErrorKind::InfeasibleSpec, "N must be in [2, 64]");
  if (s.K < 2) throw Error(ErrorKind::InfeasibleSpec, "K must be >= 2");
  if (!(s.rho >= 0.0 && s.rho < 1.0)) throw Error(ErrorKind::InfeasibleSpec, "rho must be in [0, 1)");
  if (!(s.margin > 0.0) || !(s.noise >= 0.0)) throw Error(ErrorKind::InfeasibleSpec, "margin must be > 0, noise >= 0");
  for (const auto* v : {&s.margin_correct, &s.margin_wrong}) {
    if (!v->empty() && v->size() != s.N) throw Error(ErrorKind::InfeasibleSpec, "per-model margins need N entries");
    for (double m : *v)
      if (!(m > 0.0)) throw Error(ErrorKind::InfeasibleSpec, "margins must be > 0");
  }
  auto check_plan = [&](const std::vector<Regime>& plan) {
    double total = 0.0;
    for (const auto& r : plan) {
      check_accuracies(r.accuracy, s.N, "regime accuracy");
      if (!(r.weight > 0.0)) throw Error(ErrorKind::InfeasibleSpec, "regime weight must be > 0");
      total += r.weight;
    }
    return total;
  };
  if (s.regimes.empty())
    check_accuracies(s.accuracy, s.N, "accuracy");
  else
    check_plan(s.regimes);
  for (const auto& sw : s.switches) {
    if (sw.regimes.empty()) throw Error(ErrorKind::InfeasibleSpec, "switch needs a regime plan");
    check_plan(sw.regimes);
  }
}

struct Thresholds {
  std::vector<std::vector<double>> per_regime;  // [regime][model]
  std::vector<double> cumulative_weight;
};

inline Thresholds thresholds(const std::vector<Regime>& plan) {
  const boost::math::normal_distribution<double> unit;
  Thresholds t;
  double acc = 0.0;
  for (const auto& r : plan) {
    std::vector<double> q;
    for (double a : r.accuracy) q.push_back(boost::math::quantile(unit, 1.0 - a));
    t.per_regime.push_back(std::move(q));
    acc += r.weight;
    t.cumulative_weight.push_back(acc);
  }
  return t;
}

/// Logits with argmax exactly at `predicted`, `gap` above the runner-up.
inline std::vector<double> synth_logits(std::mt19937_64& rng, int K, int predicted, double gap, double noise) {
  std::vector<double> z(static_cast<std::size_t>(K));
  for (auto& v : z) v = noise * standard_normal(rng);
  double runner_up = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k)
    if (k != predicted) runner_up = std::max(runner_up, z[static_cast<std::size_t>(k)]);
  z[static_cast<std::size_t>(predicted)] = runner_up + gap;
  return z;
}

inline int wrong_class(std::mt19937_64& rng, int K, int y) {
  const int w = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(K - 1)));
  return w >= y ? w + 1 : w;
}

inline PoolManifest synth_manifest(const std::string& name, std::size_t n, int K, int J) {
  PoolManifest m;
  m.pool_name = name;
  m.K = K;
  m.J = J;
  for (std::size_t i = 0; i < n; ++i) {
    char id[24];
    std::snprintf(id, sizeof id, "m%02zu", i);
    m.models.push_back({id, "synthetic", "synthetic", {}});
  }
  return m;
}

/// Per-split builder that keeps logit matrices and planted failure patterns in step.
class SplitBuilder {
 public:
  SplitBuilder(std::size_t n, int K, std::size_t episodes) : mats_(n), failures_(episodes, 0) {
    for (auto& m : mats_) {
      m.K = K;
      m.records.reserve(episodes);
    }
  }

  void add(std::size_t model, std::uint64_t episode, int y, int predicted, std::vector<double> logits) {
    if (predicted != y) failures_[episode] |= std::uint64_t{1} << model;
    mats_[model].records.push_back({episode, y, std::move(logits)});
  }

  std::vector<LogitMatrix> take_matrices() { return std::move(mats_); }
  std::vector<std::uint64_t> take_failures() { return std::move(failures_); }

 private:
  std::vector<LogitMatrix> mats_;
  std::vector<std::uint64_t> failures_;
};

inline void generate_split(const SynthSpec& s, const std::vector<Regime>& plan, const std::string& split_key,
                           std::size_t episodes, SplitBuilder& out) {
  const auto th = thresholds(plan);
  const double total_w = th.cumulative_weight.back();
  const double shared = std::sqrt(s.rho);
  const double own = std::sqrt(1.0 - s.rho);
  const std::uint64_t split_hash = fnv1a(split_key);
  for (std::uint64_t e = 0; e < episodes; ++e) {
    std::mt19937_64 rng(derive_seed(s.seed, split_hash, e));
    const int y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(s.K)));
    std::size_t regime = 0;
    if (th.per_regime.size() > 1) {
      const double u = uniform01(rng) * total_w;
      while (regime + 1 < th.per_regime.size() && u >= th.cumulative_weight[regime]) ++regime;
    }
    const double t = standard_normal(rng);
    for (std::size_t i = 0; i < s.N; ++i) {
      const double score = shared * t + own * standard_normal(rng);
      const bool correct = score > th.per_regime[regime][i];
      const int predicted = correct ? y : wrong_class(rng, s.K, y);
      const double base = correct ? (s.margin_correct.empty() ? s.margin : s.margin_correct[i])
                                  : (s.margin_wrong.empty() ? s.margin : s.margin_wrong[i]);
      const double gap = base * (0.5 + uniform01(rng));
      out.add(i, e, y, predicted, synth_logits(rng, s.K, predicted, gap, s.noise));
    }
  }
}

inline std::vector<Regime> base_plan(const SynthSpec& s) {
  if (!s.regimes.empty()) return s.regimes;
  return {Regime{1.0, s.accuracy}};
}

inline SynthPool assemble_synth(PoolManifest manifest, std::map<std::string, SplitBuilder>& builders) {
  std::map<std::string, std::vector<LogitMatrix>> data;
  SynthPool out;
  const std::size_t n = manifest.models.size();
  for (auto& [split, b] : builders) {
    data[split] = b.take_matrices();
    out.planted[split] = CorrectnessMatrix(split, n, b.take_failures());
  }
  out.pool = Pool::assemble(std::move(manifest), std::move(data));
  return out;
}

}  // namespace detail

/// Pool with train/val/novel (or whatever `spec.episodes` lists) splits.
inline SynthPool generate(const SynthSpec& spec) {
  detail::validate_spec(spec);
  const auto plan = detail::base_plan(spec);
  std::map<std::string, detail::SplitBuilder> builders;
  for (const auto& [split, count] : spec.episodes) {
    auto [it, _] = builders.emplace(split, detail::SplitBuilder(spec.N, spec.K, count));
    detail::generate_split(spec, plan, split, count, it->second);
  }
  return detail::assemble_synth(detail::synth_manifest(spec.pool_name, spec.N, spec.K, spec.J), builders);
}

/// One pool per batch, each holding a single `batch` split; regime switches
/// take effect from their batch index onward.
inline std::vector<SynthPool> generate_stream(const SynthSpec& spec) {
  detail::validate_spec(spec);
  if (spec.batches == 0) throw Error(ErrorKind::InfeasibleSpec, "stream needs batches > 0");
  std::vector<SynthPool> out;
  for (std::size_t b = 0; b < spec.batches; ++b) {
    auto plan = detail::base_plan(spec);
    for (const auto& sw : spec.switches)
      if (sw.batch <= b) plan = sw.regimes;
    std::map<std::string, detail::SplitBuilder> builders;
    auto [it, _] = builders.emplace("batch", detail::SplitBuilder(spec.N, spec.K, spec.batch_episodes));
    detail::generate_split(spec, plan, "batch#" + std::to_string(b), spec.batch_episodes, it->second);
    out.push_back(detail::assemble_synth(
        detail::synth_manifest(spec.pool_name + "_batch" + std::to_string(b), spec.N, spec.K, spec.J), builders));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Planted pools

/// Members that `plant_ablation_pool` makes mutually complementary.
inline const std::vector<std::size_t> kAblationComplementary{1, 4, 7};

/// N = 10, K = 5. Members 1, 4 and 7 fail on disjoint episodes (each on about
/// a fifth of them, confidently), so any two of them outvote the third. The
/// other seven are near-copies of one 70%-accurate predictor, wrong classes
/// included. The planted triple scores plurality accuracy 1 and lambda 1.
inline SynthPool plant_ablation_pool(std::uint64_t seed, std::size_t episodes_per_split = 600) {
  constexpr std::size_t n = 10;
  constexpr int K = 5;
  std::map<std::string, detail::SplitBuilder> builders;
  for (const std::string split : {"train", "val", "novel"}) {
    auto [it, _] = builders.emplace(split, detail::SplitBuilder(n, K, episodes_per_split));
    auto& b = it->second;
    for (std::uint64_t e = 0; e < episodes_per_split; ++e) {
      std::mt19937_64 rng(detail::derive_seed(seed, detail::fnv1a("ablation/" + split), e));
      const int y = static_cast<int>(detail::uniform_index(rng, K));
      const auto slot = detail::uniform_index(rng, 5);
      const bool base_ok = detail::uniform01(rng) < 0.7;
      const int base_pred = base_ok ? y : detail::wrong_class(rng, K, y);
      std::size_t comp = 0;
      for (std::size_t i = 0; i < n; ++i) {
        int pred;
        double gap;
        if (comp < kAblationComplementary.size() && kAblationComplementary[comp] == i) {
          const bool fails = slot == comp;
          pred = fails ? detail::wrong_class(rng, K, y) : y;
          gap = (fails ? 3.0 : 1.0) * (0.5 + detail::uniform01(rng));
          ++comp;
        } else {
          if (detail::uniform01(rng) < 0.97) {
            pred = base_pred;
          } else {
            pred = detail::uniform01(rng) < 0.7 ? y : detail::wrong_class(rng, K, y);
          }
          gap = 2.0 * (0.5 + detail::uniform01(rng));
        }
        b.add(i, e, y, pred, detail::synth_logits(rng, K, pred, gap, 1.0));
      }
    }
  }
  return detail::assemble_synth(detail::synth_manifest("ablation", n, K, 1), builders);
}

/// Three members whose logit margins reveal when they are right: members 1
/// and 2 (70%) are confident only when correct, member 0 (55%) is uniformly
/// overconfident. Averaging probabilities follows member 0 too often; a
/// learned combiner can recalibrate.
inline SynthSpec complementary_spec(std::uint64_t seed, std::size_t novel_episodes = 600) {
  SynthSpec s;
  s.pool_name = "complementary";
  s.N = 3;
  s.K = 5;
  s.episodes = {{"train", 3000}, {"val", 600}, {"novel", novel_episodes}};
  s.accuracy = {0.55, 0.70, 0.70};
  s.margin_correct = {6.0, 2.5, 2.5};
  s.margin_wrong = {6.0, 0.5, 0.5};
  s.seed = seed;
  return s;
}

inline SynthPool plant_complementary_pool(std::uint64_t seed, std::size_t novel_episodes = 600) {
  return generate(complementary_spec(seed, novel_episodes));
}

/// Member 0 is always right, member 1 predicts a uniformly random class.
inline SynthPool plant_copy_pool(std::uint64_t seed, std::size_t train = 2000, std::size_t val = 500,
                                 std::size_t novel = 600) {
  constexpr int K = 5;
  std::map<std::string, detail::SplitBuilder> builders;
  for (const auto& [split, count] : std::map<std::string, std::size_t>{{"train", train}, {"val", val}, {"novel", novel}}) {
    auto [it, _] = builders.emplace(split, detail::SplitBuilder(2, K, count));
    for (std::uint64_t e = 0; e < count; ++e) {
      std::mt19937_64 rng(detail::derive_seed(seed, detail::fnv1a("copy/" + split), e));
      const int y = static_cast<int>(detail::uniform_index(rng, K));
      const int noise_pred = static_cast<int>(detail::uniform_index(rng, K));
      it->second.add(0, e, y, y, detail::synth_logits(rng, K, y, 2.0 * (0.5 + detail::uniform01(rng)), 1.0));
      it->second.add(1, e, y, noise_pred,
                     detail::synth_logits(rng, K, noise_pred, 2.0 * (0.5 + detail::uniform01(rng)), 1.0));
    }
  }
  return detail::assemble_synth(detail::synth_manifest("copy", 2, K, 1), builders);
}

/// Victim 0 (60%) with partner 3 that fails only where the victim succeeds.
/// Members 1, 2 and 4 copy the victim's outcome 90% of the time. All models
/// are confident when right and hesitant when wrong.
inline constexpr std::size_t kDefenseVictim = 0;
inline constexpr std::size_t kDefensePartner = 3;

inline SynthPool plant_defense_pool(std::uint64_t seed, std::size_t episodes_per_split = 600) {
  constexpr std::size_t n = 5;
  constexpr int K = 5;
  std::map<std::string, detail::SplitBuilder> builders;
  for (const std::string split : {"train", "val", "novel"}) {
    auto [it, _] = builders.emplace(split, detail::SplitBuilder(n, K, episodes_per_split));
    for (std::uint64_t e = 0; e < episodes_per_split; ++e) {
      std::mt19937_64 rng(detail::derive_seed(seed, detail::fnv1a("defense/" + split), e));
      const int y = static_cast<int>(detail::uniform_index(rng, K));
      const double u = detail::uniform01(rng);
      const bool victim_ok = u >= 0.4;
      const bool partner_ok = !(victim_ok && u < 0.65);  // fails on a quarter, all inside the victim's hits
      const int victim_wrong = detail::wrong_class(rng, K, y);
      for (std::size_t i = 0; i < n; ++i) {
        bool ok;
        if (i == kDefenseVictim) {
          ok = victim_ok;
        } else if (i == kDefensePartner) {
          ok = partner_ok;
        } else {
          ok = detail::uniform01(rng) < 0.9 ? victim_ok : detail::uniform01(rng) < 0.6;
        }
        const int pred = ok ? y : (i == kDefensePartner ? detail::wrong_class(rng, K, y) : victim_wrong);
        const double gap = (ok ? 3.0 : 0.5) * (0.5 + detail::uniform01(rng));
        it->second.add(i, e, y, pred, detail::synth_logits(rng, K, pred, gap, 1.0));
      }
    }
  }
  return detail::assemble_synth(detail::synth_manifest("defense", n, K, 1), builders);
}

/// Three-member stream of 2000-episode batches. Before `switch_batch` member 0
/// is the expert; from then on member 2 is. Margins carry no correctness
/// signal, so the combiner has to learn which member to follow. A
/// `switch_batch` >= `batches` gives a stationary stream.
inline SynthSpec switch_stream_spec(std::uint64_t seed, std::size_t batches = 10, std::size_t switch_batch = 4,
                                    double expert = 0.95, double others = 0.45) {
  SynthSpec s;
  s.pool_name = "stream";
  s.N = 3;
  s.K = 5;
  s.regimes = {Regime{1.0, {expert, others, others}}};
  if (switch_batch < batches) s.switches = {RegimeSwitch{switch_batch, {Regime{1.0, {others, others, expert}}}}};
  s.batches = batches;
  s.batch_episodes = 2000;
  s.margin = 2.0;
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------------------
// JSON for SynthSpec

inline void to_json(nlohmann::json& j, const Regime& r) { j = {{"weight", r.weight}, {"accuracy", r.accuracy}}; }

inline void from_json(const nlohmann::json& j, Regime& r) {
  r.weight = j.value("weight", 1.0);
  j.at("accuracy").get_to(r.accuracy);
}

inline void to_json(nlohmann::json& j, const RegimeSwitch& s) { j = {{"batch", s.batch}, {"regimes", s.regimes}}; }

inline void from_json(const nlohmann::json& j, RegimeSwitch& s) {
  j.at("batch").get_to(s.batch);
  j.at("regimes").get_to(s.regimes);
}

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"pool_name", s.pool_name},   {"N", s.N},
       {"K", s.K},                   {"J", s.J},
       {"episodes", s.episodes},     {"accuracy", s.accuracy},
       {"rho", s.rho},               {"margin", s.margin},
       {"margin_correct", s.margin_correct}, {"margin_wrong", s.margin_wrong},
       {"noise", s.noise},           {"regimes", s.regimes},
       {"batches", s.batches},       {"batch_episodes", s.batch_episodes},
       {"switches", s.switches},     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  SynthSpec d;
  s.pool_name = j.value("pool_name", d.pool_name);
  s.N = j.value("N", d.N);
  s.K = j.value("K", d.K);
  s.J = j.value("J", d.J);
  s.episodes = j.value("episodes", d.episodes);
  s.accuracy = j.value("accuracy", d.accuracy);
  s.rho = j.value("rho", d.rho);
  s.margin = j.value("margin", d.margin);
  s.margin_correct = j.value("margin_correct", d.margin_correct);
  s.margin_wrong = j.value("margin_wrong", d.margin_wrong);
  s.noise = j.value("noise", d.noise);
  s.regimes = j.value("regimes", d.regimes);
  s.batches = j.value("batches", d.batches);
  s.batch_episodes = j.value("batch_episodes", d.batch_episodes);
  s.switches = j.value("switches", d.switches);
  s.seed = j.value("seed", d.seed);
}

}  // namespace fusionshot
