#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <functional>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "fusionshot/error.hpp"
#include "fusionshot/logitstore.hpp"
#include "fusionshot/mask.hpp"

namespace fusionshot {

/// Episode-level accuracy with the 95% normal-approximation interval, both in percent.
struct EvalSummary {
  std::string method;
  std::string split;
  std::size_t episodes = 0;
  double accuracy = 0.0;
  double ci95 = 0.0;

  friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

/// Mean of the 0/1 outcomes and 1.96 * sample sd / sqrt(E), in percent.
/// The sample sd uses Bessel's correction; a single episode gives ci95 = 0.
template <std::ranges::sized_range R>
EvalSummary summarize(const R& outcomes, std::string method = {}, std::string split = {}) {
  EvalSummary s{std::move(method), std::move(split), std::ranges::size(outcomes), 0.0, 0.0};
  if (s.episodes == 0) return s;
  std::size_t hits = 0;
  for (bool ok : outcomes) hits += ok;
  const double E = static_cast<double>(s.episodes);
  const double mean = static_cast<double>(hits) / E;
  s.accuracy = 100.0 * mean;
  if (s.episodes > 1) {
    // squared deviations of 0/1 data: hits*(1-mean)^2 + misses*mean^2
    const double misses = E - static_cast<double>(hits);
    const double ss = static_cast<double>(hits) * (1.0 - mean) * (1.0 - mean) + misses * mean * mean;
    const double sd = std::sqrt(ss / (E - 1.0));
    s.ci95 = 100.0 * 1.96 * sd / std::sqrt(E);
  }
  return s;
}

namespace detail {

/// Modal class from vote counts. Ties are resolved by `tie_score(k)` (higher
/// wins), then by the lowest class index. `tie_score` is only evaluated
/// when a tie actually occurs.
template <class TieScore>
int plurality_from_counts(std::span<const int> counts, TieScore&& tie_score) {
  int best = 0;
  int top = counts[0];
  int tied = 1;
  for (std::size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > top) {
      top = counts[k];
      best = static_cast<int>(k);
      tied = 1;
    } else if (counts[k] == top) {
      ++tied;
    }
  }
  if (tied == 1) return best;
  double best_score = -1.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] != top) continue;
    const double s = tie_score(static_cast<int>(k));
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace detail

/// Plurality vote over member predictions. `mean_probs[k]` is the members'
/// mean softmax probability for class k and breaks ties; remaining ties go
/// to the lowest class index.
inline int plurality_vote(std::span<const int> predictions, std::span<const double> mean_probs) {
  const std::size_t K = mean_probs.size();
  if (K == 0) throw Error(ErrorKind::ShapeMismatch, "plurality_vote needs K >= 1");
  std::vector<int> counts(K, 0);
  for (int p : predictions) {
    if (p < 0 || static_cast<std::size_t>(p) >= K) throw Error(ErrorKind::ShapeMismatch, "prediction out of range");
    ++counts[static_cast<std::size_t>(p)];
  }
  return detail::plurality_from_counts(counts, [&](int k) { return mean_probs[static_cast<std::size_t>(k)]; });
}

/// Argmax of the element-wise mean of m softmax rows; ties go to the lowest index.
inline int simple_mean(const std::vector<std::vector<double>>& prob_rows) {
  if (prob_rows.empty()) throw Error(ErrorKind::ShapeMismatch, "simple_mean needs at least one row");
  const std::size_t K = prob_rows.front().size();
  std::vector<double> mean(K, 0.0);
  for (const auto& row : prob_rows) {
    if (row.size() != K) throw Error(ErrorKind::ShapeMismatch, "rows differ in length");
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      sum += row[k];
      mean[k] += row[k];
    }
    if (std::abs(sum - 1.0) > 1e-6) throw Error(ErrorKind::RowNotNormalized, "row sums to " + std::to_string(sum));
  }
  return argmax(mean);
}

/// Per-episode combiner: returns the fused class for one episode of a split.
using Combiner = std::function<int(const SplitTable&, const EnsembleMask&, std::size_t episode)>;

inline int plurality_predict(const SplitTable& t, const EnsembleMask& mask, std::size_t e) {
  std::array<int, 64> stack{};
  std::vector<int> heap;
  std::span<int> counts;
  const auto K = static_cast<std::size_t>(t.K);
  if (K <= stack.size()) {
    counts = std::span<int>(stack.data(), K);
  } else {
    heap.assign(K, 0);
    counts = heap;
  }
  for (std::uint64_t b = mask.bits(); b != 0; b &= b - 1)
    ++counts[static_cast<std::size_t>(t.prediction(static_cast<std::size_t>(std::countr_zero(b)), e))];
  return detail::plurality_from_counts(std::span<const int>(counts), [&](int k) {
    double s = 0.0;
    for (std::uint64_t b = mask.bits(); b != 0; b &= b - 1)
      s += t.prob_row(static_cast<std::size_t>(std::countr_zero(b)), e)[static_cast<std::size_t>(k)];
    return s;
  });
}

inline int mean_predict(const SplitTable& t, const EnsembleMask& mask, std::size_t e) {
  std::vector<double> mean(static_cast<std::size_t>(t.K), 0.0);
  for (auto i : mask.members()) {
    auto row = t.prob_row(i, e);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += row[k];
  }
  return argmax(mean);
}

inline Combiner plurality_combiner() { return plurality_predict; }
inline Combiner mean_combiner() { return mean_predict; }

/// Applies `combiner` to the first `episode_limit` episodes of the table
/// (all of them when the limit is 0).
inline EvalSummary evaluate(const std::string& method, const Combiner& combiner, const SplitTable& table,
                            const EnsembleMask& mask, std::size_t episode_limit = 600) {
  if (mask.width() != table.models) throw Error(ErrorKind::ShapeMismatch, "mask width differs from pool size");
  const std::size_t E = episode_limit == 0 ? table.episodes : episode_limit;
  if (E > table.episodes)
    throw Error(ErrorKind::NotEnoughEpisodes, "requested " + std::to_string(E) + " episodes, split '" + table.split +
                                                  "' has " + std::to_string(table.episodes));
  std::vector<bool> ok(E);
  for (std::size_t e = 0; e < E; ++e) ok[e] = combiner(table, mask, e) == table.y_true[e];
  return summarize(ok, method, table.split);
}

/// Fraction (not percent) of all episodes the plurality vote gets right.
inline double plurality_accuracy(const SplitTable& table, const EnsembleMask& mask) {
  std::size_t ok = 0;
  for (std::size_t e = 0; e < table.episodes; ++e) ok += plurality_predict(table, mask, e) == table.y_true[e];
  return table.episodes == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(table.episodes);
}

}  // namespace fusionshot
