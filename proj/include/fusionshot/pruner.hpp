#pragma once

// Ensemble pruning: exhaustive and genetic search over the 2^N - N - 1
// candidate masks, ranked by w1 * accuracy + w2 * diversity.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "fusionshot/detail/parallel.hpp"
#include "fusionshot/detail/random.hpp"
#include "fusionshot/diversity.hpp"
#include "fusionshot/error.hpp"
#include "fusionshot/logitstore.hpp"
#include "fusionshot/mask.hpp"

namespace fusionshot {

enum class SearchMethod { BruteForce, Genetic };

inline std::string to_string(SearchMethod m) { return m == SearchMethod::BruteForce ? "bf" : "ga"; }

inline SearchMethod parse_search_method(const std::string& s) {
  if (s == "bf" || s == "brute_force") return SearchMethod::BruteForce;
  if (s == "ga" || s == "genetic") return SearchMethod::Genetic;
  throw Error(ErrorKind::InvalidArgument, "unknown search method '" + s + "'");
}

struct GaConfig {
  std::size_t population_size = 64;
  double elite_fraction = 0.5;
  std::optional<double> mutation_rate;  // per bit; defaults to 1/N
  std::size_t plateau_generations = 100;
  std::size_t max_generations = 2000;
};

struct SearchConfig {
  SearchMethod method = SearchMethod::Genetic;
  Weights weights;
  std::size_t top_k = 5;
  std::uint64_t seed = 7;
  GaConfig ga;
  std::string split = "val";
  std::size_t threads = 1;

  void validate() const {
    weights.validate();
    if (top_k < 1) throw Error(ErrorKind::InvalidArgument, "top_k must be >= 1");
    if (ga.population_size < 2) throw Error(ErrorKind::InvalidArgument, "population_size must be >= 2");
    if (!(ga.elite_fraction > 0.0 && ga.elite_fraction <= 1.0))
      throw Error(ErrorKind::InvalidArgument, "elite_fraction must be in (0, 1]");
    if (ga.mutation_rate && !(*ga.mutation_rate >= 0.0 && *ga.mutation_rate <= 1.0))
      throw Error(ErrorKind::InvalidArgument, "mutation_rate must be in [0, 1]");
    if (ga.plateau_generations < 1 || ga.max_generations < 1)
      throw Error(ErrorKind::InvalidArgument, "generation limits must be >= 1");
  }
};

struct RankedEnsemble {
  DiversityReport report;
  double fitness = 0.0;
  double diversity_term = 0.0;  // lambda, or the victim's sigma in a defense search
};

struct SearchResult {
  SearchMethod method = SearchMethod::BruteForce;
  std::size_t pool_size = 0;
  Weights weights;
  std::optional<std::string> victim;
  std::vector<RankedEnsemble> ranked;
  std::vector<MaskScore> visited;  // every distinct mask scored, in ranking order
  std::uint64_t visited_count = 0;
  std::uint64_t candidate_count = 0;
  std::size_t generations_run = 0;
  std::size_t masks_with_undefined_focal = 0;
};

/// Number of ensembles with at least two members: 2^N - N - 1.
constexpr std::uint64_t candidate_count(std::size_t n) {
  if (n < 2 || n > 63) throw Error(ErrorKind::InvalidArgument, "candidate_count needs 2 <= N <= 63");
  return (std::uint64_t{1} << n) - n - 1;
}

/// Candidates of size >= 2 that contain every bit of `required`.
constexpr std::uint64_t candidate_count(std::size_t n, std::uint64_t required) {
  if (required == 0) return candidate_count(n);
  const auto r = static_cast<std::size_t>(std::popcount(required));
  const std::uint64_t supersets = std::uint64_t{1} << (n - r);
  return r >= 2 ? supersets : supersets - 1;
}

/// Ranking order: fitness descending, then fewer members, then smaller mask value.
inline bool ranks_before(const MaskScore& a, const MaskScore& b) {
  if (a.fitness != b.fitness) return a.fitness > b.fitness;
  if (a.m != b.m) return a.m < b.m;
  return a.bits < b.bits;
}

namespace detail {

inline SearchResult finish_search(const EnsembleScorer& scorer, const SearchConfig& config, std::vector<MaskScore> visited,
                                  std::uint64_t candidates) {
  std::sort(visited.begin(), visited.end(), ranks_before);
  SearchResult r;
  r.method = config.method;
  r.pool_size = scorer.table().models;
  r.weights = config.weights;
  r.candidate_count = candidates;
  r.visited_count = visited.size();
  for (const auto& s : visited) r.masks_with_undefined_focal += s.undefined_focal > 0;
  const KappaTable kappas(scorer.table());
  const std::size_t k = std::min<std::size_t>(config.top_k, visited.size());
  for (std::size_t i = 0; i < k; ++i) {
    RankedEnsemble re;
    re.report = diversity_report(scorer.table(), EnsembleMask(visited[i].bits, r.pool_size), config.weights, &kappas);
    re.fitness = visited[i].fitness;
    re.diversity_term = visited[i].lambda;
    r.ranked.push_back(std::move(re));
  }
  r.visited = std::move(visited);
  return r;
}

inline std::vector<MaskScore> score_all(const EnsembleScorer& scorer, const std::vector<std::uint64_t>& masks,
                                        std::size_t threads) {
  std::vector<MaskScore> out(masks.size());
  parallel_for(masks.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = scorer.score(masks[i]);
  });
  return out;
}

}  // namespace detail

/// Scores every mask of size >= 2 (that contains `required` bits).
inline SearchResult brute_force(const EnsembleScorer& scorer, const SearchConfig& config, std::uint64_t required = 0) {
  config.validate();
  const std::size_t n = scorer.table().models;
  if (n > 40) throw Error(ErrorKind::InvalidArgument, "brute force over more than 40 models is not supported");
  std::vector<std::uint64_t> masks;
  masks.reserve(static_cast<std::size_t>(candidate_count(n)));
  for (std::uint64_t bits = 3; bits < (std::uint64_t{1} << n); ++bits)
    if (std::popcount(bits) >= 2 && (bits & required) == required) masks.push_back(bits);
  auto visited = detail::score_all(scorer, masks, config.threads);
  const std::uint64_t candidates = masks.size();
  auto cfg = config;
  cfg.method = SearchMethod::BruteForce;
  return detail::finish_search(scorer, cfg, std::move(visited), candidates);
}

/// Elitist GA over N-bit masks. Every distinct mask is cached, so
/// visited_count counts distinct evaluations and top-k covers all of them.
inline SearchResult genetic_search(const EnsembleScorer& scorer, const SearchConfig& config, std::uint64_t required = 0) {
  config.validate();
  const std::size_t n = scorer.table().models;
  const auto& ga = config.ga;
  const double rate = ga.mutation_rate.value_or(1.0 / static_cast<double>(n));
  std::mt19937_64 rng(config.seed);

  auto repair = [&](std::uint64_t bits) {
    bits |= required;
    while (std::popcount(bits) < 2) bits |= std::uint64_t{1} << detail::uniform_index(rng, n);
    return bits;
  };

  std::vector<std::uint64_t> population(ga.population_size);
  for (auto& p : population) {
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (detail::uniform01(rng) < 0.5) bits |= std::uint64_t{1} << i;
    p = repair(bits);
  }

  std::unordered_map<std::uint64_t, MaskScore> cache;
  std::vector<MaskScore> visited;
  auto evaluate = [&](const std::vector<std::uint64_t>& pop) {
    std::vector<std::uint64_t> fresh;
    for (auto bits : pop)
      if (!cache.count(bits) && std::find(fresh.begin(), fresh.end(), bits) == fresh.end()) fresh.push_back(bits);
    auto scores = detail::score_all(scorer, fresh, config.threads);
    for (auto& s : scores) {
      cache.emplace(s.bits, s);
      visited.push_back(s);
    }
  };

  const std::size_t elite = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(ga.elite_fraction * static_cast<double>(ga.population_size))));
  double best = -std::numeric_limits<double>::infinity();
  std::size_t plateau = 0;
  std::size_t generations = 0;
  while (generations < ga.max_generations) {
    evaluate(population);
    ++generations;
    std::sort(population.begin(), population.end(),
              [&](std::uint64_t a, std::uint64_t b) { return ranks_before(cache.at(a), cache.at(b)); });
    const double current = cache.at(population.front()).fitness;
    if (current > best) {
      best = current;
      plateau = 0;
    } else if (++plateau >= ga.plateau_generations) {
      break;
    }
    std::vector<std::uint64_t> next(population.begin(), population.begin() + static_cast<std::ptrdiff_t>(elite));
    while (next.size() < ga.population_size) {
      const std::uint64_t a = next[detail::uniform_index(rng, elite)];
      const std::uint64_t b = next[detail::uniform_index(rng, elite)];
      const std::size_t cut = 1 + detail::uniform_index(rng, n - 1);
      const std::uint64_t low = (std::uint64_t{1} << cut) - 1;
      std::uint64_t child = (a & low) | (b & ~low);
      for (std::size_t i = 0; i < n; ++i)
        if (detail::uniform01(rng) < rate) child ^= std::uint64_t{1} << i;
      next.push_back(repair(child));
    }
    population = std::move(next);
  }

  const std::uint64_t candidates = candidate_count(n, required);
  auto cfg = config;
  cfg.method = SearchMethod::Genetic;
  auto result = detail::finish_search(scorer, cfg, std::move(visited), candidates);
  result.generations_run = generations;
  return result;
}

inline SearchResult search(const Pool& pool, const SearchConfig& config) {
  const auto table = make_table(pool, config.split);
  const EnsembleScorer scorer(table, config.weights);
  return config.method == SearchMethod::BruteForce ? brute_force(scorer, config) : genetic_search(scorer, config);
}

inline SearchResult brute_force(const Pool& pool, SearchConfig config) {
  config.method = SearchMethod::BruteForce;
  return search(pool, config);
}

inline SearchResult genetic_search(const Pool& pool, SearchConfig config) {
  config.method = SearchMethod::Genetic;
  return search(pool, config);
}

/// Search restricted to masks that contain the victim; the diversity term is
/// the victim's own focal sigma instead of the lambda average.
inline SearchResult defense_search(const Pool& pool, const SearchConfig& config, const std::string& victim) {
  const auto idx = pool.index_of(victim);
  if (!idx) throw Error(ErrorKind::VictimNotInPool, "victim '" + victim + "' is not in the pool");
  const auto table = make_table(pool, config.split);
  const EnsembleScorer scorer(table, config.weights, *idx);
  const std::uint64_t required = std::uint64_t{1} << *idx;
  auto result = config.method == SearchMethod::BruteForce ? brute_force(scorer, config, required)
                                                          : genetic_search(scorer, config, required);
  result.victim = victim;
  return result;
}

enum class SelectionPolicy { Best, RandomTopK };

/// `best` returns ranked[0]; `random_top_k` draws uniformly from the first
/// min(k, ranked.size()) entries (k = 0 means all of ranked).
inline EnsembleMask select_ensemble(const SearchResult& result, SelectionPolicy policy, std::uint64_t seed,
                                    std::size_t k = 0) {
  if (result.ranked.empty()) throw Error(ErrorKind::EmptyResult, "search result has no ranked ensembles");
  if (policy == SelectionPolicy::Best) return result.ranked.front().report.mask;
  const std::size_t pool = k == 0 ? result.ranked.size() : std::min(k, result.ranked.size());
  std::mt19937_64 rng(seed);
  return result.ranked[detail::uniform_index(rng, pool)].report.mask;
}

}  // namespace fusionshot
