#pragma once

// Learn-to-combine network: a feed-forward MLP over the concatenated member
// outputs with logistic hidden units and a softmax output, trained with
// cross-entropy. Backpropagation is written out by hand; gradient_check
// validates it against central differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fusionshot/consensus.hpp"
#include "fusionshot/detail/random.hpp"
#include "fusionshot/error.hpp"
#include "fusionshot/logitstore.hpp"
#include "fusionshot/mask.hpp"

namespace fusionshot {

/// How each member's logit row is transformed before concatenation.
enum class Normalization { Softmax, Raw };

inline std::string to_string(Normalization n) { return n == Normalization::Softmax ? "softmax" : "raw"; }

inline Normalization parse_normalization(const std::string& s) {
  if (s == "softmax") return Normalization::Softmax;
  if (s == "raw") return Normalization::Raw;
  throw Error(ErrorKind::InvalidArgument, "unknown normalization '" + s + "'");
}

enum class Optimizer { Adam, FullBatchGD };

struct FusionMeta {
  std::uint64_t mask_bits = 0;
  std::size_t pool_size = 0;
  std::vector<std::string> member_ids;
  int K = 0;
  std::size_t m = 0;
  Normalization normalization = Normalization::Softmax;
  std::uint64_t seed = 0;
  double best_val_accuracy = 0.0;  // fraction
  std::size_t best_epoch = 0;
  std::size_t epochs_trained = 0;
};

/// weights[l] is (out x in); layer l maps activations of size dims[l] to dims[l+1].
struct FusionParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  FusionMeta meta;

  std::vector<int> layer_dims() const {
    std::vector<int> dims;
    if (weights.empty()) return dims;
    dims.push_back(static_cast<int>(weights.front().cols()));
    for (const auto& w : weights) dims.push_back(static_cast<int>(w.rows()));
    return dims;
  }

  int input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
  int output_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  void validate() const {
    if (weights.empty() || weights.size() != biases.size())
      throw Error(ErrorKind::ShapeMismatch, "fusion network needs matching weight and bias lists");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (biases[l].size() != weights[l].rows()) throw Error(ErrorKind::ShapeMismatch, "bias size mismatch");
      if (l > 0 && weights[l].cols() != weights[l - 1].rows())
        throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " input width mismatch");
      if (!weights[l].allFinite() || !biases[l].allFinite())
        throw Error(ErrorKind::ShapeMismatch, "non-finite parameter in layer " + std::to_string(l));
    }
    if (meta.K > 0 && output_dim() != meta.K) throw Error(ErrorKind::ShapeMismatch, "output width differs from K");
    if (meta.K > 0 && meta.m > 0 && input_dim() != meta.K * static_cast<int>(meta.m))
      throw Error(ErrorKind::ShapeMismatch, "input width differs from m*K");
  }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  static FusionParams initialize(const std::vector<int>& dims, std::uint64_t seed) {
    if (dims.size() < 2) throw Error(ErrorKind::ShapeMismatch, "need at least input and output layer");
    FusionParams p;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
      Eigen::MatrixXd w(dims[l + 1], dims[l]);
      Eigen::VectorXd b(dims[l + 1]);
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = bound * (2.0 * detail::uniform01(rng) - 1.0);
      for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = bound * (2.0 * detail::uniform01(rng) - 1.0);
      p.weights.push_back(std::move(w));
      p.biases.push_back(std::move(b));
    }
    return p;
  }

  static FusionParams zeros(const std::vector<int>& dims) {
    FusionParams p;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      p.weights.push_back(Eigen::MatrixXd::Zero(dims[l + 1], dims[l]));
      p.biases.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
    }
    return p;
  }
};

inline std::vector<int> default_layer_dims(std::size_t m, int K, const std::vector<int>& hidden = {100, 100}) {
  std::vector<int> dims{static_cast<int>(m) * K};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(K);
  return dims;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

/// Column-wise log-softmax.
inline Eigen::MatrixXd log_softmax_cols(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd out(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double zmax = z.col(c).maxCoeff();
    const double lse = zmax + std::log((z.col(c).array() - zmax).exp().sum());
    out.col(c) = z.col(c).array() - lse;
  }
  return out;
}

struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] = input, last = output logits
};

inline ForwardCache forward_cache(const FusionParams& p, const Eigen::MatrixXd& X) {
  ForwardCache c;
  c.activations.reserve(p.weights.size() + 1);
  c.activations.push_back(X);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Eigen::MatrixXd z = p.weights[l] * c.activations.back();
    z.colwise() += p.biases[l];
    c.activations.push_back(l + 1 == p.weights.size() ? std::move(z) : sigmoid(z));
  }
  return c;
}

inline void check_input(const FusionParams& p, const Eigen::MatrixXd& X) {
  if (X.rows() != p.input_dim())
    throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(X.rows()) + " features, network expects " +
                                              std::to_string(p.input_dim()));
}

}  // namespace detail

/// Class probabilities for a batch: X is (features x episodes), result (K x episodes).
inline Eigen::MatrixXd forward_batch(const FusionParams& p, const Eigen::MatrixXd& X) {
  detail::check_input(p, X);
  auto cache = detail::forward_cache(p, X);
  return detail::log_softmax_cols(cache.activations.back()).array().exp().matrix();
}

/// Concatenated, normalized member rows for one episode.
inline Eigen::VectorXd fusion_input(const std::vector<std::vector<double>>& member_logits, Normalization norm) {
  std::size_t total = 0;
  for (const auto& row : member_logits) total += row.size();
  Eigen::VectorXd x(static_cast<Eigen::Index>(total));
  Eigen::Index at = 0;
  for (const auto& row : member_logits) {
    const auto v = norm == Normalization::Softmax ? softmax(row) : row;
    for (double z : v) x(at++) = z;
  }
  return x;
}

/// Fused class distribution for one episode from its m member logit rows.
inline std::vector<double> forward(const FusionParams& p, const std::vector<std::vector<double>>& member_logits) {
  if (p.meta.m > 0 && member_logits.size() != p.meta.m)
    throw Error(ErrorKind::ShapeMismatch, "expected " + std::to_string(p.meta.m) + " member rows");
  for (const auto& row : member_logits) {
    if (p.meta.K > 0 && row.size() != static_cast<std::size_t>(p.meta.K))
      throw Error(ErrorKind::ShapeMismatch, "member row length differs from K");
    for (double z : row)
      if (!std::isfinite(z)) throw Error(ErrorKind::ShapeMismatch, "non-finite member logit");
  }
  const Eigen::MatrixXd out = forward_batch(p, fusion_input(member_logits, p.meta.normalization));
  return std::vector<double>(out.data(), out.data() + out.size());
}

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

/// Mean cross-entropy of labels y under the network.
inline double cross_entropy(const FusionParams& p, const Eigen::MatrixXd& X, const std::vector<int>& y) {
  detail::check_input(p, X);
  const auto logp = detail::log_softmax_cols(detail::forward_cache(p, X).activations.back());
  double loss = 0.0;
  for (Eigen::Index c = 0; c < logp.cols(); ++c) loss -= logp(y[static_cast<std::size_t>(c)], c);
  return loss / static_cast<double>(logp.cols());
}

/// Mean cross-entropy and its gradient with respect to every parameter.
inline double loss_and_gradient(const FusionParams& p, const Eigen::MatrixXd& X, const std::vector<int>& y,
                                Gradients& g) {
  detail::check_input(p, X);
  const auto cache = detail::forward_cache(p, X);
  const auto logp = detail::log_softmax_cols(cache.activations.back());
  const double B = static_cast<double>(X.cols());
  double loss = 0.0;
  Eigen::MatrixXd delta = logp.array().exp().matrix();  // P - Y
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const int label = y[static_cast<std::size_t>(c)];
    loss -= logp(label, c);
    delta(label, c) -= 1.0;
  }
  delta /= B;
  const std::size_t L = p.weights.size();
  g.weights.resize(L);
  g.biases.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    const auto& a_prev = cache.activations[l];
    g.weights[l].noalias() = delta * a_prev.transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = p.weights[l].transpose() * delta;
      delta = (back.array() * a_prev.array() * (1.0 - a_prev.array())).matrix();
    }
  }
  return loss / B;
}

/// Central-difference gradient with step h for every parameter.
inline Gradients numeric_gradient(const FusionParams& p, const Eigen::MatrixXd& X, const std::vector<int>& y,
                                  double h = 1e-5) {
  FusionParams q = p;
  Gradients g;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(p.weights[l].rows(), p.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(p.biases[l].size()));
    for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) {
      double& w = q.weights[l].data()[i];
      const double orig = w;
      w = orig + h;
      const double up = cross_entropy(q, X, y);
      w = orig - h;
      const double down = cross_entropy(q, X, y);
      w = orig;
      g.weights[l].data()[i] = (up - down) / (2.0 * h);
    }
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) {
      double& b = q.biases[l](i);
      const double orig = b;
      b = orig + h;
      const double up = cross_entropy(q, X, y);
      b = orig - h;
      const double down = cross_entropy(q, X, y);
      b = orig;
      g.biases[l](i) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

struct GradientCheck {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t parameters = 0;
};

/// Compares backprop against central differences over all parameters.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6); the floor keeps
/// near-zero gradients from amplifying finite-difference round-off.
inline GradientCheck gradient_check(const FusionParams& p, const Eigen::MatrixXd& X, const std::vector<int>& y,
                                    double h = 1e-5) {
  Gradients analytic;
  loss_and_gradient(p, X, y, analytic);
  const Gradients numeric = numeric_gradient(p, X, y, h);
  GradientCheck out;
  auto visit = [&](double a, double n) {
    const double abs_err = std::abs(a - n);
    out.max_absolute_error = std::max(out.max_absolute_error, abs_err);
    out.max_relative_error =
        std::max(out.max_relative_error, abs_err / std::max({std::abs(a), std::abs(n), 1e-6}));
    ++out.parameters;
  };
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < p.weights[l].size(); ++i)
      visit(analytic.weights[l].data()[i], numeric.weights[l].data()[i]);
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) visit(analytic.biases[l](i), numeric.biases[l](i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and training

/// Features are (m*K x episodes), member blocks in ascending model order.
struct FusionDataset {
  Eigen::MatrixXd X;
  std::vector<int> y;
  int K = 0;

  std::size_t size() const noexcept { return y.size(); }

  void append(const FusionDataset& other) {
    if (X.size() != 0 && other.X.rows() != X.rows())
      throw Error(ErrorKind::ShapeMismatch, "cannot append datasets of different width");
    Eigen::MatrixXd joined(other.X.rows(), X.cols() + other.X.cols());
    joined << X, other.X;
    X = std::move(joined);
    K = std::max(K, other.K);
    y.insert(y.end(), other.y.begin(), other.y.end());
  }
};

inline FusionDataset make_dataset(const SplitTable& t, const EnsembleMask& mask, Normalization norm,
                                  std::size_t begin = 0, std::size_t end = SIZE_MAX) {
  if (mask.width() != t.models) throw Error(ErrorKind::ShapeMismatch, "mask width differs from pool size");
  end = std::min(end, t.episodes);
  if (begin > end) throw Error(ErrorKind::NotEnoughEpisodes, "empty episode range");
  const auto members = mask.members();
  const auto K = static_cast<Eigen::Index>(t.K);
  FusionDataset d;
  d.K = t.K;
  d.X.resize(static_cast<Eigen::Index>(members.size()) * K, static_cast<Eigen::Index>(end - begin));
  d.y.assign(t.y_true.begin() + static_cast<std::ptrdiff_t>(begin), t.y_true.begin() + static_cast<std::ptrdiff_t>(end));
  for (std::size_t e = begin; e < end; ++e) {
    const auto col = static_cast<Eigen::Index>(e - begin);
    for (std::size_t mi = 0; mi < members.size(); ++mi) {
      auto row = norm == Normalization::Softmax ? t.prob_row(members[mi], e) : t.logit_row(members[mi], e);
      for (Eigen::Index k = 0; k < K; ++k) d.X(static_cast<Eigen::Index>(mi) * K + k, col) = row[static_cast<std::size_t>(k)];
    }
  }
  return d;
}

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t max_epochs = 300;
  std::size_t batch_size = 128;
  std::size_t patience = 0;  // epochs without validation improvement before stopping; 0 = never
  std::uint64_t seed = 7;
  Normalization normalization = Normalization::Softmax;
  std::vector<int> hidden{100, 100};
  Optimizer optimizer = Optimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning_rate must be > 0");
    if (max_epochs < 1) throw Error(ErrorKind::InvalidArgument, "max_epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be >= 1");
    for (int h : hidden)
      if (h < 1) throw Error(ErrorKind::InvalidArgument, "hidden widths must be positive");
  }
};

struct TrainTrace {
  std::vector<double> train_loss;    // after each epoch, full train split
  std::vector<double> val_accuracy;  // fraction, after each epoch
};

/// Fraction of columns whose argmax (lowest index on ties) equals the label.
inline double accuracy(const FusionParams& p, const FusionDataset& d) {
  if (d.size() == 0) return 0.0;
  const Eigen::MatrixXd out = detail::forward_cache(p, d.X).activations.back();
  std::size_t ok = 0;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < out.rows(); ++k)
      if (out(k, c) > out(best, c)) best = k;
    ok += best == d.y[static_cast<std::size_t>(c)];
  }
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

/// Trains from `init` (or a fresh seeded initialization) and returns the
/// snapshot with the highest validation accuracy; earlier epochs win ties.
inline FusionParams train(const FusionDataset& train_set, const FusionDataset& val_set, const TrainConfig& config,
                          const FusionParams* init = nullptr, TrainTrace* trace = nullptr) {
  config.validate();
  if (train_set.size() == 0) throw Error(ErrorKind::NotEnoughEpisodes, "empty training set");
  const int K = [&] {
    int k = std::max(train_set.K, val_set.K);
    for (int label : train_set.y) k = std::max(k, label + 1);
    for (int label : val_set.y) k = std::max(k, label + 1);
    return k;
  }();
  FusionParams params;
  if (init) {
    params = *init;
    detail::check_input(params, train_set.X);
  } else {
    std::vector<int> dims{static_cast<int>(train_set.X.rows())};
    dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
    dims.push_back(K);
    params = FusionParams::initialize(dims, detail::derive_seed(config.seed, 0x1417));
  }
  if (params.output_dim() < K) throw Error(ErrorKind::ShapeMismatch, "labels exceed network output width");

  const std::size_t L = params.weights.size();
  Gradients g, m1, m2;
  for (std::size_t l = 0; l < L; ++l) {
    m1.weights.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
    m1.biases.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
  }
  m2 = m1;

  std::mt19937_64 rng(detail::derive_seed(config.seed, 0x5eed));
  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  FusionParams best = params;
  double best_acc = -1.0;
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;
  std::size_t step = 0;
  std::size_t epoch = 0;
  const bool full_batch = config.optimizer == Optimizer::FullBatchGD;

  for (epoch = 1; epoch <= config.max_epochs; ++epoch) {
    if (!full_batch)
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[detail::uniform_index(rng, i)]);
    const std::size_t bs = full_batch ? order.size() : config.batch_size;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Eigen::MatrixXd Xb = train_set.X(Eigen::all, idx);
      std::vector<int> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = train_set.y[static_cast<std::size_t>(idx[i])];
      const double loss = loss_and_gradient(params, Xb, yb, g);
      if (!std::isfinite(loss))
        throw Error(ErrorKind::NonFiniteLoss, "loss became non-finite at epoch " + std::to_string(epoch) +
                                                  ", step " + std::to_string(step));
      ++step;
      if (full_batch) {
        for (std::size_t l = 0; l < L; ++l) {
          params.weights[l] -= config.learning_rate * g.weights[l];
          params.biases[l] -= config.learning_rate * g.biases[l];
        }
        continue;
      }
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      auto adam = [&](auto& param, const auto& grad, auto& m, auto& v) {
        m = config.beta1 * m + (1.0 - config.beta1) * grad;
        v = config.beta2 * v + (1.0 - config.beta2) * grad.cwiseProduct(grad);
        param.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
      };
      for (std::size_t l = 0; l < L; ++l) {
        adam(params.weights[l], g.weights[l], m1.weights[l], m2.weights[l]);
        adam(params.biases[l], g.biases[l], m1.biases[l], m2.biases[l]);
      }
    }
    const double val_acc = val_set.size() > 0 ? accuracy(params, val_set) : 0.0;
    if (trace) {
      trace->train_loss.push_back(cross_entropy(params, train_set.X, train_set.y));
      trace->val_accuracy.push_back(val_acc);
    }
    if (val_acc > best_acc || val_set.size() == 0) {
      best_acc = val_acc;
      best = params;
      best_epoch = epoch;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  best.meta = params.meta;
  best.meta.K = params.output_dim();
  best.meta.normalization = config.normalization;
  best.meta.seed = config.seed;
  best.meta.best_val_accuracy = std::max(best_acc, 0.0);
  best.meta.best_epoch = best_epoch;
  best.meta.epochs_trained = std::min(epoch, config.max_epochs);
  return best;
}

inline void stamp_members(FusionParams& p, const Pool& pool, const EnsembleMask& mask) {
  p.meta.mask_bits = mask.bits();
  p.meta.pool_size = mask.width();
  p.meta.m = mask.size();
  p.meta.K = pool.ways();
  p.meta.member_ids.clear();
  for (auto i : mask.members()) p.meta.member_ids.push_back(pool.manifest().models[i].model_id);
}

/// Trains on the pool's `train` split (plus `train_attacked` when present)
/// with `val` for snapshot selection.
inline FusionParams train(const Pool& pool, const EnsembleMask& mask, const TrainConfig& config,
                          TrainTrace* trace = nullptr) {
  if (mask.width() != pool.size()) throw Error(ErrorKind::ShapeMismatch, "mask width differs from pool size");
  auto train_set = make_dataset(make_table(pool, "train"), mask, config.normalization);
  if (pool.has_split("train_attacked"))
    train_set.append(make_dataset(make_table(pool, "train_attacked"), mask, config.normalization));
  const auto val_set = make_dataset(make_table(pool, "val"), mask, config.normalization);
  auto params = train(train_set, val_set, config, nullptr, trace);
  stamp_members(params, pool, mask);
  return params;
}

/// Per-episode fused predictions for episodes [begin, end) of a table.
inline std::vector<int> predict(const FusionParams& p, const SplitTable& t, const EnsembleMask& mask,
                                std::size_t begin = 0, std::size_t end = SIZE_MAX) {
  if (p.meta.m != 0 && mask.size() != p.meta.m)
    throw Error(ErrorKind::ShapeMismatch, "mask has " + std::to_string(mask.size()) + " members, network expects " +
                                              std::to_string(p.meta.m));
  const auto d = make_dataset(t, mask, p.meta.normalization, begin, end);
  detail::check_input(p, d.X);
  const Eigen::MatrixXd out = detail::forward_cache(p, d.X).activations.back();
  std::vector<int> preds(d.size());
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < out.rows(); ++k)
      if (out(k, c) > out(best, c)) best = k;
    preds[static_cast<std::size_t>(c)] = static_cast<int>(best);
  }
  return preds;
}

/// Fusion accuracy on a split, through the shared episode evaluator.
inline EvalSummary predict_eval(const FusionParams& p, const Pool& pool, const EnsembleMask& mask,
                                const std::string& split, std::size_t episode_limit = 600) {
  const auto table = make_table(pool, split);
  const std::size_t E = episode_limit == 0 ? table.episodes : std::min(episode_limit, table.episodes);
  const auto preds = predict(p, table, mask, 0, E);
  Combiner fused = [&preds](const SplitTable&, const EnsembleMask&, std::size_t e) { return preds[e]; };
  return evaluate("fusion", fused, table, mask, episode_limit);
}

// ---------------------------------------------------------------------------
// Streaming adaptation

struct StreamConfig {
  TrainConfig train;
  std::string split = "batch";
  std::size_t train_size = 1500;
  std::size_t val_size = 300;
  std::size_t test_size = 200;
  bool cold_start = false;
};

struct StreamResult {
  std::vector<EvalSummary> trace;
  FusionParams params;
};

/// For each batch in order: fine-tune on its train slice with best-val
/// snapshotting on its val slice, then score the test slice. Slices are
/// taken in episode order.
inline StreamResult stream_adapt(const std::vector<Pool>& batches, const EnsembleMask& mask, const StreamConfig& config,
                                 const FusionParams* init = nullptr) {
  StreamResult out;
  std::optional<FusionParams> current;
  if (init) current = *init;
  const std::size_t need = config.train_size + config.val_size + config.test_size;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& pool = batches[b];
    const auto table = make_table(pool, config.split);
    if (table.episodes < need)
      throw Error(ErrorKind::BatchTooSmall, "batch " + std::to_string(b) + " has " + std::to_string(table.episodes) +
                                                " episodes, needs " + std::to_string(need));
    const auto norm = config.train.normalization;
    const auto tr = make_dataset(table, mask, norm, 0, config.train_size);
    const auto va = make_dataset(table, mask, norm, config.train_size, config.train_size + config.val_size);
    TrainConfig cfg = config.train;
    cfg.seed = detail::derive_seed(config.train.seed, b);
    const bool warm = current.has_value() && !config.cold_start;
    auto params = train(tr, va, cfg, warm ? &*current : nullptr);
    stamp_members(params, pool, mask);
    const std::size_t t0 = config.train_size + config.val_size;
    const auto preds = predict(params, table, mask, t0, t0 + config.test_size);
    std::vector<bool> ok(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) ok[i] = preds[i] == table.y_true[t0 + i];
    out.trace.push_back(summarize(ok, "fusion", config.split + "[" + std::to_string(b) + "]/test"));
    current = std::move(params);
  }
  if (current) out.params = std::move(*current);
  return out;
}

// ---------------------------------------------------------------------------
// JSON: layer dims plus row-major weight arrays, full double precision.

inline void to_json(nlohmann::json& j, const FusionParams& p) {
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(p.weights[l].size()));
    for (Eigen::Index r = 0; r < p.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < p.weights[l].cols(); ++c) w.push_back(p.weights[l](r, c));
    weights.push_back(w);
    biases.push_back(std::vector<double>(p.biases[l].data(), p.biases[l].data() + p.biases[l].size()));
  }
  const auto& m = p.meta;
  j = {{"layer_dims", p.layer_dims()},
       {"activation", "sigmoid"},
       {"output", "softmax"},
       {"weights", weights},
       {"biases", biases},
       {"meta",
        {{"mask_bits", m.mask_bits},
         {"pool_size", m.pool_size},
         {"member_ids", m.member_ids},
         {"K", m.K},
         {"m", m.m},
         {"normalization", to_string(m.normalization)},
         {"seed", m.seed},
         {"best_val_accuracy", m.best_val_accuracy},
         {"best_epoch", m.best_epoch},
         {"epochs_trained", m.epochs_trained}}}};
}

inline void from_json(const nlohmann::json& j, FusionParams& p) {
  const auto dims = j.at("layer_dims").get<std::vector<int>>();
  p = FusionParams::zeros(dims);
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  if (weights.size() != p.weights.size() || biases.size() != p.biases.size())
    throw Error(ErrorKind::ShapeMismatch, "layer count differs from layer_dims");
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const auto w = weights[l].get<std::vector<double>>();
    const auto b = biases[l].get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(p.weights[l].size()) || b.size() != static_cast<std::size_t>(p.biases[l].size()))
      throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " array size mismatch");
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < p.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < p.weights[l].cols(); ++c) p.weights[l](r, c) = w[at++];
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r) p.biases[l](r) = b[static_cast<std::size_t>(r)];
  }
  if (j.contains("meta")) {
    const auto& m = j.at("meta");
    p.meta.mask_bits = m.value("mask_bits", std::uint64_t{0});
    p.meta.pool_size = m.value("pool_size", std::size_t{0});
    p.meta.member_ids = m.value("member_ids", std::vector<std::string>{});
    p.meta.K = m.value("K", 0);
    p.meta.m = m.value("m", std::size_t{0});
    p.meta.normalization = parse_normalization(m.value("normalization", std::string("softmax")));
    p.meta.seed = m.value("seed", std::uint64_t{0});
    p.meta.best_val_accuracy = m.value("best_val_accuracy", 0.0);
    p.meta.best_epoch = m.value("best_epoch", std::size_t{0});
    p.meta.epochs_trained = m.value("epochs_trained", std::size_t{0});
  }
  p.validate();
}

}  // namespace fusionshot
