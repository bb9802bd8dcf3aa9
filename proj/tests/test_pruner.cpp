#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "fusionshot/pruner.hpp"
#include "fusionshot/synth.hpp"
#include "support.hpp"

using namespace fusionshot;

namespace {

SynthPool random_pool(std::size_t n, std::uint64_t seed, std::size_t episodes = 300) {
  SynthSpec spec;
  spec.N = n;
  spec.K = 5;
  spec.rho = 0.4;
  spec.episodes = {{"val", episodes}};
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) spec.accuracy.push_back(0.5 + 0.35 * detail::uniform01(rng));
  return generate(spec);
}

/// Six models: 1 and 4 fail on disjoint episodes and are confident only when
/// right; the rest are noisy copies of one 60% predictor.
Pool planted_pair_pool() {
  constexpr int K = 5;
  constexpr std::size_t E = 400;
  std::mt19937_64 rng(31);
  PoolManifest manifest;
  manifest.K = K;
  std::vector<LogitMatrix> mats(6);
  for (std::size_t i = 0; i < 6; ++i) {
    manifest.models.push_back({"m" + std::to_string(i), "", "", {}});
    mats[i].K = K;
  }
  for (std::uint64_t e = 0; e < E; ++e) {
    const int y = static_cast<int>(detail::uniform_index(rng, K));
    const auto slot = detail::uniform_index(rng, 4);  // 0: model 1 fails, 1: model 4 fails
    const bool base_ok = detail::uniform01(rng) < 0.6;
    const int base_pred = base_ok ? y : detail::wrong_class(rng, K, y);
    for (std::size_t i = 0; i < 6; ++i) {
      int pred;
      double top;
      if (i == 1 || i == 4) {
        const bool fails = slot == (i == 1 ? 0u : 1u);
        pred = fails ? detail::wrong_class(rng, K, y) : y;
        top = fails ? 0.5 : 3.0;
      } else {
        pred = detail::uniform01(rng) < 0.9 ? base_pred : static_cast<int>(detail::uniform_index(rng, K));
        top = 1.0;
      }
      std::vector<double> z(K, 0.0);
      z[static_cast<std::size_t>(pred)] = top;
      mats[i].records.push_back({e, y, z});
    }
  }
  return Pool::assemble(manifest, {{"val", mats}});
}

}  // namespace

TEST(CandidateCount, KnownValues) {
  EXPECT_EQ(candidate_count(5), 26u);
  EXPECT_EQ(candidate_count(10), 1013u);
  EXPECT_EQ(candidate_count(4), 11u);
  EXPECT_EQ(candidate_count(20), 1048555u);
  EXPECT_EQ(candidate_count(2), 1u);
  static_assert(candidate_count(3) == 4);
}

TEST(CandidateCount, GrowsMoreThanTwofold) {
  for (std::size_t n = 2; n < 62; ++n) EXPECT_GT(candidate_count(n + 1), 2 * candidate_count(n)) << n;
}

TEST(CandidateCount, WithRequiredMember) {
  EXPECT_EQ(candidate_count(4, 0b0001), 7u);
  EXPECT_EQ(candidate_count(5, 0b00011), 8u);
  EXPECT_EQ(candidate_count(4, 0), 11u);
}

TEST(BruteForce, ThreeModelsScoreFourMasks) {
  const auto synth = random_pool(3, 1);
  SearchConfig cfg;
  cfg.top_k = 10;
  const auto r = brute_force(synth.pool, cfg);
  EXPECT_EQ(r.visited_count, 4u);
  EXPECT_EQ(r.candidate_count, 4u);
  EXPECT_EQ(r.ranked.size(), 4u);
  std::set<std::uint64_t> seen;
  for (const auto& s : r.visited) seen.insert(s.bits);
  EXPECT_EQ(seen, (std::set<std::uint64_t>{0b011, 0b101, 0b110, 0b111}));
}

TEST(BruteForce, VisitsEveryCandidate) {
  for (std::size_t n = 2; n <= 16; ++n) {
    const auto synth = random_pool(n, n, 40);
    SearchConfig cfg;
    cfg.top_k = 3;
    const auto r = brute_force(synth.pool, cfg);
    EXPECT_EQ(r.visited_count, candidate_count(n)) << n;
    EXPECT_EQ(r.candidate_count, candidate_count(n));
    EXPECT_EQ(r.ranked.size(), std::min<std::size_t>(3, r.visited_count));
  }
}

TEST(BruteForce, PlantedPairRanksFirst) {
  const auto pool = planted_pair_pool();
  SearchConfig cfg;
  const auto r = brute_force(pool, cfg);
  EXPECT_EQ(r.ranked.front().report.mask.bits(), 0b010010u);
  // independent check: slow per-mask reports agree on the argmax
  const auto t = make_table(pool, "val");
  std::uint64_t best = 0;
  double best_score = -1.0;
  for (std::uint64_t bits = 3; bits < 64; ++bits) {
    if (std::popcount(bits) < 2) continue;
    const double s = diversity_report(t, EnsembleMask(bits, 6), Weights{}).pruning_score;
    if (s > best_score + 1e-12) {
      best_score = s;
      best = bits;
    }
  }
  EXPECT_EQ(best, 0b010010u);
}

TEST(BruteForce, AblationPoolFullTeamFarFromTop) {
  const auto synth = plant_ablation_pool(7);
  SearchConfig cfg;
  const auto r = brute_force(synth.pool, cfg);
  EXPECT_EQ(r.ranked.front().report.mask, EnsembleMask::from_members(kAblationComplementary, 10));
  const std::uint64_t full = EnsembleMask::full(10).bits();
  const auto it = std::find_if(r.visited.begin(), r.visited.end(), [&](const MaskScore& s) { return s.bits == full; });
  ASSERT_NE(it, r.visited.end());
  EXPECT_GT(it - r.visited.begin(), 100);
}

TEST(Ranking, TotalOrder) {
  const auto synth = random_pool(8, 3);
  SearchConfig cfg;
  const auto r = brute_force(synth.pool, cfg);
  for (std::size_t i = 1; i < r.visited.size(); ++i) EXPECT_TRUE(ranks_before(r.visited[i - 1], r.visited[i]));
  for (std::size_t i = 0; i < r.ranked.size(); ++i) EXPECT_EQ(r.ranked[i].report.mask.bits(), r.visited[i].bits);
  // explicit tie-break rules
  MaskScore a{0b011, 2, 0, 0.5, 0.5, 0.5}, b{0b111, 3, 0, 0.5, 0.5, 0.5}, c{0b101, 2, 0, 0.5, 0.5, 0.5};
  EXPECT_TRUE(ranks_before(a, b));
  EXPECT_TRUE(ranks_before(a, c));
  EXPECT_FALSE(ranks_before(c, a));
}

TEST(Search, ThreadCountDoesNotChangeResult) {
  const auto synth = random_pool(10, 5);
  SearchConfig cfg;
  cfg.method = SearchMethod::BruteForce;
  cfg.threads = 1;
  const auto one = search(synth.pool, cfg);
  cfg.threads = 4;
  const auto four = search(synth.pool, cfg);
  ASSERT_EQ(one.visited.size(), four.visited.size());
  for (std::size_t i = 0; i < one.visited.size(); ++i) {
    EXPECT_EQ(one.visited[i].bits, four.visited[i].bits);
    EXPECT_EQ(one.visited[i].fitness, four.visited[i].fitness);
  }
}

TEST(Genetic, Deterministic) {
  const auto synth = random_pool(12, 8);
  SearchConfig cfg;
  cfg.seed = 99;
  const auto a = genetic_search(synth.pool, cfg);
  const auto b = genetic_search(synth.pool, cfg);
  ASSERT_EQ(a.visited.size(), b.visited.size());
  EXPECT_EQ(a.generations_run, b.generations_run);
  for (std::size_t i = 0; i < a.visited.size(); ++i) {
    EXPECT_EQ(a.visited[i].bits, b.visited[i].bits);
    EXPECT_EQ(a.visited[i].fitness, b.visited[i].fitness);
  }
}

TEST(Genetic, NeverBeatsBruteForceAndUsuallyMatches) {
  std::size_t same = 0, runs = 0;
  for (std::size_t n : {8, 10, 12}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto synth = random_pool(n, 1000 * n + seed);
      SearchConfig cfg;
      cfg.seed = seed;
      const auto bf = brute_force(synth.pool, cfg);
      const auto ga = genetic_search(synth.pool, cfg);
      EXPECT_LE(ga.ranked.front().fitness, bf.ranked.front().fitness);
      EXPECT_LE(ga.visited_count, ga.candidate_count);
      EXPECT_EQ(ga.candidate_count, candidate_count(n));
      same += ga.ranked.front().report.mask == bf.ranked.front().report.mask;
      ++runs;
    }
  }
  EXPECT_GE(static_cast<double>(same) / static_cast<double>(runs), 0.95) << same << "/" << runs;
}

TEST(Genetic, CoverageWellBelowOneAtTen) {
  const auto synth = random_pool(10, 44);
  SearchConfig cfg;
  const auto ga = genetic_search(synth.pool, cfg);
  const double coverage = static_cast<double>(ga.visited_count) / static_cast<double>(ga.candidate_count);
  EXPECT_LT(coverage, 0.75);
  EXPECT_GT(ga.generations_run, cfg.ga.plateau_generations - 1);
}

TEST(Genetic, RespectsGenerationCap) {
  const auto synth = random_pool(10, 45);
  SearchConfig cfg;
  cfg.ga.max_generations = 3;
  const auto ga = genetic_search(synth.pool, cfg);
  EXPECT_EQ(ga.generations_run, 3u);
}

TEST(SearchConfig, Validation) {
  const auto synth = random_pool(4, 2);
  SearchConfig cfg;
  cfg.top_k = 0;
  EXPECT_THROW(brute_force(synth.pool, cfg), Error);
  cfg = {};
  cfg.ga.population_size = 1;
  EXPECT_THROW(genetic_search(synth.pool, cfg), Error);
  cfg = {};
  cfg.weights = {0.9, 0.4};
  EXPECT_THROW(brute_force(synth.pool, cfg), Error);
}

TEST(Select, Policies) {
  const auto synth = random_pool(6, 9);
  SearchConfig cfg;
  const auto r = brute_force(synth.pool, cfg);
  EXPECT_EQ(select_ensemble(r, SelectionPolicy::Best, 1), r.ranked[0].report.mask);
  for (std::uint64_t s = 0; s < 20; ++s)
    EXPECT_EQ(select_ensemble(r, SelectionPolicy::RandomTopK, s, 1), r.ranked[0].report.mask);
  const auto pick = select_ensemble(r, SelectionPolicy::RandomTopK, 123, 5);
  EXPECT_EQ(pick, select_ensemble(r, SelectionPolicy::RandomTopK, 123, 5));
  std::set<std::uint64_t> picks;
  for (std::uint64_t s = 0; s < 200; ++s) picks.insert(select_ensemble(r, SelectionPolicy::RandomTopK, s, 5).bits());
  EXPECT_EQ(picks.size(), 5u);
  SearchResult empty;
  try {
    select_ensemble(empty, SelectionPolicy::Best, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyResult);
  }
}

TEST(Defense, CandidateSpaceContainsVictim) {
  const auto synth = random_pool(4, 10);
  SearchConfig cfg;
  cfg.method = SearchMethod::BruteForce;
  cfg.top_k = 20;
  const auto r = defense_search(synth.pool, cfg, "m00");
  EXPECT_EQ(r.visited_count, 7u);
  EXPECT_EQ(r.candidate_count, 7u);
  for (const auto& s : r.visited) EXPECT_TRUE(s.bits & 1u);
  ASSERT_TRUE(r.victim.has_value());
  EXPECT_EQ(*r.victim, "m00");
  // the diversity term is the victim's own sigma
  const auto t = make_table(synth.pool, "val");
  for (const auto& re : r.ranked)
    EXPECT_NEAR(re.diversity_term, focal_sigma(t.correct, re.report.mask, 0), 1e-12);
}

TEST(Defense, PlantedPartnerInTopMask) {
  const auto synth = plant_defense_pool(3);
  SearchConfig cfg;
  cfg.method = SearchMethod::BruteForce;
  const auto r = defense_search(synth.pool, cfg, "m00");
  EXPECT_TRUE(r.ranked.front().report.mask.contains(kDefensePartner));
  EXPECT_TRUE(r.ranked.front().report.mask.contains(kDefenseVictim));
  cfg.method = SearchMethod::Genetic;
  const auto ga = defense_search(synth.pool, cfg, "m00");
  EXPECT_EQ(ga.candidate_count, 15u);
  for (const auto& s : ga.visited) EXPECT_TRUE(s.bits & 1u);
}

TEST(Defense, UnknownVictim) {
  const auto synth = random_pool(4, 11);
  try {
    defense_search(synth.pool, SearchConfig{}, "nobody");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::VictimNotInPool);
  }
}
