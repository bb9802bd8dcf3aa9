#pragma once

// Focal negative correlation, focal diversity, Cohen's kappa and the convex
// pruning score.
//
// For a focal member f of an ensemble of size m, only the episodes where f
// fails are considered. n_j counts those episodes on which exactly j members
// (f included) fail, p_j = n_j / sum(n), and
//
//   sigma_f = 1 - sum_j [j(j-1) / (m(m-1))] p_j  /  sum_j [j/m] p_j
//
// The ratio is invariant to scaling p, so normalising by the focal-failure
// count or by the split size gives the same value.

#include <algorithm>
#include <bit>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusionshot/consensus.hpp"
#include "fusionshot/error.hpp"
#include "fusionshot/logitstore.hpp"
#include "fusionshot/mask.hpp"

namespace fusionshot {

/// counts[j-1] = n_j for j = 1..m; total = number of focal-failure episodes.
struct FailureHistogram {
  std::vector<double> counts;
  double total = 0.0;
};

inline FailureHistogram failure_histogram(const CorrectnessMatrix& corr, const EnsembleMask& mask, std::size_t focal) {
  if (!mask.contains(focal))
    throw Error(ErrorKind::FocalNotInMask, "model " + std::to_string(focal) + " is not in " + mask.to_string());
  if (mask.width() != corr.models()) throw Error(ErrorKind::ShapeMismatch, "mask width differs from pool size");
  FailureHistogram h;
  h.counts.assign(mask.size(), 0.0);
  const std::uint64_t focal_bit = std::uint64_t{1} << focal;
  for (std::uint64_t fails : corr.failure_patterns()) {
    if ((fails & focal_bit) == 0) continue;
    const int j = std::popcount(fails & mask.bits());
    h.counts[static_cast<std::size_t>(j - 1)] += 1.0;
    h.total += 1.0;
  }
  return h;
}

namespace detail {

inline constexpr double kSigmaDust = 1e-12;

inline double clamp_dust(double sigma) {
  if (sigma < 0.0 && sigma > -kSigmaDust) return 0.0;
  if (sigma > 1.0 && sigma < 1.0 + kSigmaDust) return 1.0;
  if (sigma < 0.0 || sigma > 1.0)
    throw std::logic_error("focal sigma " + std::to_string(sigma) + " outside [0, 1] beyond rounding");
  return sigma;
}

}  // namespace detail

/// sigma for one focal model given its failure histogram (m = counts.size()).
inline double focal_sigma(const FailureHistogram& h) {
  const std::size_t m = h.counts.size();
  if (m < 2) throw Error(ErrorKind::InvalidMask, "focal sigma needs an ensemble of at least two");
  double total = 0.0;
  for (double n : h.counts) total += n;
  if (total <= 0.0) throw Error(ErrorKind::FocalNeverFails, "focal model never fails on this split");
  const double md = static_cast<double>(m);
  double joint = 0.0;
  double single = 0.0;
  for (std::size_t idx = 0; idx < m; ++idx) {
    const double j = static_cast<double>(idx + 1);
    const double p = h.counts[idx] / total;
    joint += j * (j - 1.0) / (md * (md - 1.0)) * p;
    single += j / md * p;
  }
  return detail::clamp_dust(1.0 - joint / single);
}

inline double focal_sigma(const CorrectnessMatrix& corr, const EnsembleMask& mask, std::size_t focal) {
  return focal_sigma(failure_histogram(corr, mask, focal));
}

/// Focal diversity of one ensemble. Members that never fail have no sigma;
/// they are skipped in the average and listed in `never_failed`. If no
/// member fails at all, lambda is 1.
struct FocalDiversity {
  double lambda = 1.0;
  std::vector<std::optional<double>> sigma_per_focal;  // aligned with mask.members()
  std::vector<std::size_t> never_failed;
};

inline FocalDiversity focal_diversity(const CorrectnessMatrix& corr, const EnsembleMask& mask) {
  FocalDiversity out;
  double sum = 0.0;
  std::size_t defined = 0;
  for (auto focal : mask.members()) {
    auto h = failure_histogram(corr, mask, focal);
    if (h.total == 0.0) {
      out.sigma_per_focal.emplace_back(std::nullopt);
      out.never_failed.push_back(focal);
      continue;
    }
    const double s = focal_sigma(h);
    out.sigma_per_focal.emplace_back(s);
    sum += s;
    ++defined;
  }
  out.lambda = defined == 0 ? 1.0 : sum / static_cast<double>(defined);
  return out;
}

// ---------------------------------------------------------------------------
// Cohen's kappa on predicted labels

/// kappa = (p_o - p_e) / (1 - p_e). When p_e = 1 both raters are constant
/// and identical, and kappa is defined as 1.
inline double cohen_kappa(std::span<const int> a, std::span<const int> b, int K) {
  if (a.size() != b.size() || a.empty()) throw Error(ErrorKind::ShapeMismatch, "kappa needs equal, non-empty inputs");
  std::vector<double> fa(static_cast<std::size_t>(K), 0.0), fb(static_cast<std::size_t>(K), 0.0);
  double agree = 0.0;
  for (std::size_t e = 0; e < a.size(); ++e) {
    if (a[e] < 0 || a[e] >= K || b[e] < 0 || b[e] >= K) throw Error(ErrorKind::ShapeMismatch, "label out of range");
    fa[static_cast<std::size_t>(a[e])] += 1.0;
    fb[static_cast<std::size_t>(b[e])] += 1.0;
    agree += a[e] == b[e];
  }
  const double E = static_cast<double>(a.size());
  const double po = agree / E;
  double pe = 0.0;
  for (std::size_t k = 0; k < fa.size(); ++k) pe += (fa[k] / E) * (fb[k] / E);
  if (pe >= 1.0 - 1e-15) return 1.0;
  return (po - pe) / (1.0 - pe);
}

/// Pairwise kappa for every pool pair on one split; mean over a mask's pairs
/// is then a cheap lookup.
class KappaTable {
 public:
  explicit KappaTable(const SplitTable& t) : n_(t.models), values_(t.models * t.models, 1.0) {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) {
        std::span<const int> a(t.predicted.data() + i * t.episodes, t.episodes);
        std::span<const int> b(t.predicted.data() + j * t.episodes, t.episodes);
        values_[i * n_ + j] = values_[j * n_ + i] = cohen_kappa(a, b, t.K);
      }
  }

  double pair(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }

  double mean(const EnsembleMask& mask) const {
    auto members = mask.members();
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        sum += pair(members[a], members[b]);
        ++pairs;
      }
    return sum / static_cast<double>(pairs);
  }

 private:
  std::size_t n_;
  std::vector<double> values_;
};

inline double mean_pairwise_kappa(const SplitTable& t, const EnsembleMask& mask) { return KappaTable(t).mean(mask); }

// ---------------------------------------------------------------------------
// Pruning score

struct Weights {
  double w1 = 0.6;  // validation accuracy
  double w2 = 0.4;  // diversity

  void validate() const {
    if (w1 < 0.0 || w2 < 0.0 || std::abs(w1 + w2 - 1.0) > 1e-9 || !std::isfinite(w1) || !std::isfinite(w2))
      throw Error(ErrorKind::WeightsNotConvex,
                  "w1=" + std::to_string(w1) + ", w2=" + std::to_string(w2) + " are not a convex pair");
  }
};

inline double pruning_score(double accuracy, double lambda, const Weights& w) {
  w.validate();
  return w.w1 * accuracy + w.w2 * lambda;
}

struct DiversityReport {
  EnsembleMask mask;
  std::vector<std::optional<double>> sigma_per_focal;
  std::vector<std::size_t> never_failed;
  double lambda_focal = 1.0;
  double kappa = 1.0;
  double val_accuracy = 0.0;
  double pruning_score = 0.0;
};

/// Full report for one mask on one split; accuracy is plurality-vote accuracy.
inline DiversityReport diversity_report(const SplitTable& t, const EnsembleMask& mask, const Weights& w,
                                        const KappaTable* kappas = nullptr) {
  DiversityReport r;
  r.mask = mask;
  auto fd = focal_diversity(t.correct, mask);
  r.sigma_per_focal = std::move(fd.sigma_per_focal);
  r.never_failed = std::move(fd.never_failed);
  r.lambda_focal = fd.lambda;
  r.kappa = kappas ? kappas->mean(mask) : mean_pairwise_kappa(t, mask);
  r.val_accuracy = plurality_accuracy(t, mask);
  r.pruning_score = pruning_score(r.val_accuracy, r.lambda_focal, w);
  return r;
}

// ---------------------------------------------------------------------------
// Fast scorer

/// Scores of one mask as used by the search.
struct MaskScore {
  std::uint64_t bits = 0;
  std::uint32_t m = 0;
  std::uint32_t undefined_focal = 0;
  double accuracy = 0.0;
  double lambda = 1.0;
  double fitness = 0.0;
};

/// Evaluates (plurality accuracy, lambda, fitness) for many masks of one
/// split. Episodes with identical failure patterns are merged, and the
/// per-focal histogram sums collapse to
///   sigma_f = 1 - S2_f / ((m - 1) * S1_f),
/// with S1_f = sum over focal-failure episodes of j and S2_f of j(j - 1).
/// With `focal_only` set, the diversity term is sigma of that single model.
class EnsembleScorer {
 public:
  EnsembleScorer(const SplitTable& t, Weights w, std::optional<std::size_t> focal_only = std::nullopt)
      : table_(t), weights_(w), focal_only_(focal_only) {
    weights_.validate();
    std::vector<std::uint64_t> pats(t.correct.failure_patterns().begin(), t.correct.failure_patterns().end());
    std::sort(pats.begin(), pats.end());
    for (std::size_t i = 0; i < pats.size();) {
      std::size_t j = i;
      while (j < pats.size() && pats[j] == pats[i]) ++j;
      if (pats[i] != 0) {
        patterns_.push_back(pats[i]);
        pattern_counts_.push_back(static_cast<double>(j - i));
      }
      i = j;
    }
    // episode-major predictions for cache-friendly voting
    preds_.resize(t.models * t.episodes);
    for (std::size_t i = 0; i < t.models; ++i)
      for (std::size_t e = 0; e < t.episodes; ++e) preds_[e * t.models + i] = t.prediction(i, e);
  }

  const SplitTable& table() const noexcept { return table_; }
  const Weights& weights() const noexcept { return weights_; }

  MaskScore score(std::uint64_t bits) const {
    MaskScore s;
    s.bits = bits;
    s.m = static_cast<std::uint32_t>(std::popcount(bits));
    s.accuracy = accuracy(bits);
    double diversity = 1.0;
    if (focal_only_) {
      diversity = focal_sigma_fast(bits, *focal_only_, s.undefined_focal);
    } else {
      diversity = lambda_fast(bits, s.undefined_focal);
    }
    s.lambda = diversity;
    s.fitness = weights_.w1 * s.accuracy + weights_.w2 * diversity;
    return s;
  }

  double accuracy(std::uint64_t bits) const {
    const std::size_t N = table_.models;
    const auto K = static_cast<std::size_t>(table_.K);
    std::vector<int> counts(K);
    std::size_t ok = 0;
    for (std::size_t e = 0; e < table_.episodes; ++e) {
      std::fill(counts.begin(), counts.end(), 0);
      const int* row = preds_.data() + e * N;
      for (std::uint64_t b = bits; b != 0; b &= b - 1) ++counts[static_cast<std::size_t>(row[std::countr_zero(b)])];
      const int winner = detail::plurality_from_counts(std::span<const int>(counts), [&](int k) {
        double sum = 0.0;
        for (std::uint64_t b = bits; b != 0; b &= b - 1)
          sum += table_.prob_row(static_cast<std::size_t>(std::countr_zero(b)), e)[static_cast<std::size_t>(k)];
        return sum;
      });
      ok += winner == table_.y_true[e];
    }
    return table_.episodes == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(table_.episodes);
  }

 private:
  double lambda_fast(std::uint64_t bits, std::uint32_t& undefined) const {
    std::array<double, kMaxPoolSize> s1{}, s2{};
    for (std::size_t u = 0; u < patterns_.size(); ++u) {
      const std::uint64_t v = patterns_[u] & bits;
      if (v == 0) continue;
      const double j = std::popcount(v);
      const double c = pattern_counts_[u];
      for (std::uint64_t b = v; b != 0; b &= b - 1) {
        const int i = std::countr_zero(b);
        s1[static_cast<std::size_t>(i)] += c * j;
        s2[static_cast<std::size_t>(i)] += c * j * (j - 1.0);
      }
    }
    const double m = std::popcount(bits);
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::uint64_t b = bits; b != 0; b &= b - 1) {
      const auto i = static_cast<std::size_t>(std::countr_zero(b));
      if (s1[i] == 0.0) {
        ++undefined;
        continue;
      }
      sum += detail::clamp_dust(1.0 - s2[i] / ((m - 1.0) * s1[i]));
      ++defined;
    }
    return defined == 0 ? 1.0 : sum / static_cast<double>(defined);
  }

  double focal_sigma_fast(std::uint64_t bits, std::size_t focal, std::uint32_t& undefined) const {
    const std::uint64_t fb = std::uint64_t{1} << focal;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t u = 0; u < patterns_.size(); ++u) {
      if ((patterns_[u] & fb) == 0) continue;
      const double j = std::popcount(patterns_[u] & bits);
      s1 += pattern_counts_[u] * j;
      s2 += pattern_counts_[u] * j * (j - 1.0);
    }
    if (s1 == 0.0) {
      ++undefined;
      return 1.0;
    }
    const double m = std::popcount(bits);
    return detail::clamp_dust(1.0 - s2 / ((m - 1.0) * s1));
  }

  const SplitTable& table_;
  Weights weights_;
  std::optional<std::size_t> focal_only_;
  std::vector<std::uint64_t> patterns_;
  std::vector<double> pattern_counts_;
  std::vector<int> preds_;
};

}  // namespace fusionshot
