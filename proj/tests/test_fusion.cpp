#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fusionshot/fusion.hpp"
#include "fusionshot/synth.hpp"
#include "support.hpp"

using namespace fusionshot;

namespace {

struct Batch {
  Eigen::MatrixXd X;
  std::vector<int> y;
};

Batch random_batch(std::mt19937_64& rng, int features, int K, int n) {
  Batch b{Eigen::MatrixXd(features, n), std::vector<int>(static_cast<std::size_t>(n))};
  for (int c = 0; c < n; ++c) {
    for (int r = 0; r < features; ++r) b.X(r, c) = 2.0 * detail::uniform01(rng) - 1.0;
    b.y[static_cast<std::size_t>(c)] = static_cast<int>(detail::uniform_index(rng, static_cast<std::uint64_t>(K)));
  }
  return b;
}

FusionParams fixed_net() {
  auto p = FusionParams::zeros({4, 3, 2});
  p.weights[0] << 0.5, -0.25, 0.125, 1.0, -0.75, 0.3, 0.2, -0.1, 0.05, 0.6, -0.4, 0.9;
  p.biases[0] << 0.1, -0.2, 0.3;
  p.weights[1] << 1.5, -0.5, 0.25, -1.0, 0.75, 0.5;
  p.biases[1] << 0.05, -0.05;
  p.meta.K = 2;
  p.meta.m = 2;
  p.meta.normalization = Normalization::Raw;
  return p;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.patience = 30;
  return c;
}

}  // namespace

TEST(Forward, ZeroNetworkIsUniform) {
  auto p = FusionParams::zeros(default_layer_dims(3, 5));
  p.meta.K = 5;
  p.meta.m = 3;
  const std::vector<std::vector<double>> rows(3, std::vector<double>{1, 2, 3, 4, 5});
  for (double v : forward(p, rows)) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Forward, OutputIsADistribution) {
  std::mt19937_64 rng(1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = FusionParams::initialize(default_layer_dims(4, 5), seed);
    p.meta.K = 5;
    p.meta.m = 4;
    std::vector<std::vector<double>> rows(4, std::vector<double>(5));
    for (auto& r : rows)
      for (auto& v : r) v = 10.0 * detail::standard_normal(rng);
    const auto out = forward(p, rows);
    double sum = 0.0;
    for (double v : out) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Forward, FixedNetworkMatchesExtendedPrecision) {
  // reference from tests/oracles/compute_oracles.py (50-digit arithmetic)
  const auto out = forward(fixed_net(), {{0.3, -1.2}, {2.0, 0.5}});
  EXPECT_NEAR(out[0], 0.81660122399278292577, 1e-12);
  EXPECT_NEAR(out[1], 0.18339877600721707423, 1e-12);
}

TEST(Forward, ShapeMismatch) {
  const auto p = fixed_net();
  try {
    forward(p, {{0.3, -1.2}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW(forward(p, {{0.3, -1.2, 0.0}, {2.0, 0.5, 0.0}}), Error);
  EXPECT_THROW(forward_batch(p, Eigen::MatrixXd::Zero(5, 1)), Error);
}

TEST(Forward, SoftmaxInputsIgnoreRowShift) {
  auto p = FusionParams::initialize(default_layer_dims(2, 3), 4);
  p.meta.K = 3;
  p.meta.m = 2;
  const auto a = forward(p, {{1.0, 2.0, 3.0}, {0.0, -1.0, 4.0}});
  const auto b = forward(p, {{11.0, 12.0, 13.0}, {-5.0, -6.0, -1.0}});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
}

TEST(GradientCheck, RandomNetworksAndBatches) {
  std::mt19937_64 rng(2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int K = 2 + static_cast<int>(seed % 4);
    const int m = 2 + static_cast<int>(seed % 3);
    const auto p = FusionParams::initialize({m * K, 7, 5, K}, seed);
    const auto b = random_batch(rng, m * K, K, 8);
    const auto gc = gradient_check(p, b.X, b.y);
    EXPECT_LE(gc.max_relative_error, 1e-4) << "seed " << seed;
    EXPECT_EQ(gc.parameters, p.parameter_count());
  }
}

TEST(GradientCheck, DefaultWidthNetwork) {
  std::mt19937_64 rng(3);
  const auto p = FusionParams::initialize(default_layer_dims(3, 5), 11);
  const auto b = random_batch(rng, 15, 5, 8);
  EXPECT_LE(gradient_check(p, b.X, b.y).max_relative_error, 1e-4);
}

TEST(GradientCheck, ZeroGradientAtDegenerateMinimum) {
  // A single output class: the softmax is identically 1 and the loss is 0.
  std::mt19937_64 rng(4);
  const auto p = FusionParams::initialize({3, 4, 1}, 5);
  const auto b = random_batch(rng, 3, 1, 1);
  Gradients g;
  EXPECT_NEAR(loss_and_gradient(p, b.X, b.y, g), 0.0, 1e-15);
  const auto num = numeric_gradient(p, b.X, b.y);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    EXPECT_LE(g.weights[l].cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(num.weights[l].cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(g.biases[l].cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(num.biases[l].cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GradientCheck, CentralDifferenceErrorIsQuadratic) {
  std::mt19937_64 rng(5);
  const auto p = FusionParams::initialize({6, 5, 3}, 6);
  const auto b = random_batch(rng, 6, 3, 8);
  auto max_diff = [&](double h) {
    const auto a = numeric_gradient(p, b.X, b.y, h);
    const auto c = numeric_gradient(p, b.X, b.y, 2.0 * h);
    double d = 0.0;
    for (std::size_t l = 0; l < a.weights.size(); ++l) {
      d = std::max(d, (a.weights[l] - c.weights[l]).cwiseAbs().maxCoeff());
      d = std::max(d, (a.biases[l] - c.biases[l]).cwiseAbs().maxCoeff());
    }
    return d;
  };
  // h = 1e-5 vs 2e-5: the truncation term is ~h^2, far below 1e-6
  EXPECT_LT(max_diff(1e-5), 1e-6);
  // at step sizes where truncation dominates round-off, halving h cuts the change by ~4
  const double ratio = max_diff(2e-2) / max_diff(1e-2);
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.5);
}

TEST(Train, CopiesTheReliableMember) {
  const auto synth = plant_copy_pool(1);
  const auto mask = EnsembleMask::full(2);
  const auto params = train(synth.pool, mask, quick_config());
  EXPECT_GE(params.meta.best_val_accuracy, 0.99);
  const auto s = predict_eval(params, synth.pool, mask, "novel");
  const double member = 100.0 * make_table(synth.pool, "novel").member_accuracy(0);
  EXPECT_NEAR(s.accuracy, member, 1.0);
  EXPECT_EQ(params.meta.member_ids, (std::vector<std::string>{"m00", "m01"}));
  EXPECT_EQ(params.meta.mask_bits, 3u);
}

TEST(Train, ComplementaryPoolBeatsEveryMemberAndPlurality) {
  const auto synth = plant_complementary_pool(3);
  const auto mask = EnsembleMask::full(3);
  const auto params = train(synth.pool, mask, quick_config());
  const auto fused = predict_eval(params, synth.pool, mask, "novel");
  const auto t = make_table(synth.pool, "novel");
  double best_member = 0.0;
  for (std::size_t i = 0; i < 3; ++i) best_member = std::max(best_member, 100.0 * t.member_accuracy(i));
  EXPECT_GE(fused.accuracy, best_member + 2.0);
  EXPECT_GE(fused.accuracy, evaluate("plurality", plurality_combiner(), t, mask).accuracy);
}

TEST(Train, AblationPoolFusionAtLeastPlurality) {
  const auto synth = plant_ablation_pool(4);
  const auto mask = EnsembleMask::full(10);
  const auto params = train(synth.pool, mask, quick_config());
  const auto t = make_table(synth.pool, "novel");
  EXPECT_GE(predict_eval(params, synth.pool, mask, "novel").accuracy,
            evaluate("plurality", plurality_combiner(), t, mask).accuracy);
}

TEST(Train, DeterministicGivenSeed) {
  const auto synth = plant_copy_pool(2, 300, 100, 100);
  TrainConfig cfg;
  cfg.max_epochs = 15;
  const auto a = train(synth.pool, EnsembleMask::full(2), cfg);
  const auto b = train(synth.pool, EnsembleMask::full(2), cfg);
  ASSERT_EQ(a.weights.size(), b.weights.size());
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    EXPECT_TRUE((a.weights[l].array() == b.weights[l].array()).all());
    EXPECT_TRUE((a.biases[l].array() == b.biases[l].array()).all());
  }
  EXPECT_EQ(predict_eval(a, synth.pool, EnsembleMask::full(2), "novel", 0),
            predict_eval(b, synth.pool, EnsembleMask::full(2), "novel", 0));
}

TEST(Train, FullBatchLossIsNonIncreasing) {
  const auto synth = plant_complementary_pool(5, 100);
  const auto t = make_table(synth.pool, "train");
  const auto mask = EnsembleMask::full(3);
  const auto tr = make_dataset(t, mask, Normalization::Softmax, 0, 500);
  const auto va = make_dataset(make_table(synth.pool, "val"), mask, Normalization::Softmax);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::FullBatchGD;
  cfg.learning_rate = 0.1;
  cfg.max_epochs = 60;
  TrainTrace trace;
  train(tr, va, cfg, nullptr, &trace);
  ASSERT_EQ(trace.train_loss.size(), 60u);
  for (std::size_t i = 1; i < trace.train_loss.size(); ++i) EXPECT_LE(trace.train_loss[i], trace.train_loss[i - 1]);
  EXPECT_LT(trace.train_loss.back(), trace.train_loss.front());
}

TEST(Train, SnapshotHasBestValidationAccuracy) {
  const auto synth = plant_complementary_pool(6, 100);
  const auto mask = EnsembleMask::full(3);
  TrainConfig cfg;
  cfg.max_epochs = 25;
  TrainTrace trace;
  const auto p = train(synth.pool, mask, cfg, &trace);
  const auto best = std::max_element(trace.val_accuracy.begin(), trace.val_accuracy.end());
  EXPECT_DOUBLE_EQ(p.meta.best_val_accuracy, *best);
  EXPECT_EQ(p.meta.best_epoch, static_cast<std::size_t>(best - trace.val_accuracy.begin()) + 1);
  const auto va = make_dataset(make_table(synth.pool, "val"), mask, Normalization::Softmax);
  EXPECT_DOUBLE_EQ(accuracy(p, va), *best);
}

TEST(Train, AttackedSplitIsConcatenated) {
  auto synth = plant_copy_pool(7, 200, 100, 100);
  PoolManifest manifest = synth.pool.manifest();
  manifest.episode_counts.clear();
  std::map<std::string, std::vector<LogitMatrix>> data;
  for (const auto& s : synth.pool.splits()) data[s] = synth.pool.matrices(s);
  data["train_attacked"] = synth.pool.matrices("train");
  const auto pool = Pool::assemble(manifest, data);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  TrainTrace plain, attacked;
  train(synth.pool, EnsembleMask::full(2), cfg, &plain);
  train(pool, EnsembleMask::full(2), cfg, &attacked);
  EXPECT_NE(plain.train_loss, attacked.train_loss);
}

TEST(Train, RejectsBadConfig) {
  const auto synth = plant_copy_pool(8, 50, 20, 20);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train(synth.pool, EnsembleMask::full(2), cfg), Error);
  cfg = {};
  cfg.max_epochs = 0;
  EXPECT_THROW(train(synth.pool, EnsembleMask::full(2), cfg), Error);
}

TEST(Train, DivergenceIsReported) {
  const auto synth = plant_copy_pool(9, 100, 20, 20);
  const auto t = make_table(synth.pool, "train");
  auto tr = make_dataset(t, EnsembleMask::full(2), Normalization::Raw, 0, 100);
  const auto va = make_dataset(t, EnsembleMask::full(2), Normalization::Raw, 0, 20);
  tr.X(3, 17) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.normalization = Normalization::Raw;
  cfg.max_epochs = 5;
  try {
    train(tr, va, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteLoss);
  }
}

TEST(PredictEval, ZeroParamsGiveChanceAccuracy) {
  const auto synth = plant_complementary_pool(10);
  auto p = FusionParams::zeros(default_layer_dims(3, 5));
  p.meta.K = 5;
  p.meta.m = 3;
  const auto s = predict_eval(p, synth.pool, EnsembleMask::full(3), "novel");
  EXPECT_NEAR(s.accuracy, 20.0, 5.0);
}

TEST(PredictEval, MemberCountMustMatch) {
  const auto synth = plant_ablation_pool(1, 50);
  auto p = FusionParams::zeros(default_layer_dims(3, 5));
  p.meta.K = 5;
  p.meta.m = 3;
  EXPECT_THROW(predict_eval(p, synth.pool, EnsembleMask::full(10), "novel", 0), Error);
}

TEST(Permutation, BlockPermutedWeightsGiveSameOutput) {
  const auto synth = plant_complementary_pool(11, 100);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  const auto p = train(synth.pool, EnsembleMask::full(3), cfg);
  const std::vector<std::size_t> perm{2, 0, 1};  // new block b holds old member perm[b]
  FusionParams q = p;
  for (std::size_t b = 0; b < 3; ++b) q.weights[0].middleCols(static_cast<Eigen::Index>(b) * 5, 5) =
                                          p.weights[0].middleCols(static_cast<Eigen::Index>(perm[b]) * 5, 5);
  const auto t = make_table(synth.pool, "novel");
  for (std::size_t e = 0; e < 50; ++e) {
    std::vector<std::vector<double>> rows, permuted;
    for (std::size_t i = 0; i < 3; ++i) rows.emplace_back(t.logit_row(i, e).begin(), t.logit_row(i, e).end());
    for (std::size_t b = 0; b < 3; ++b) permuted.push_back(rows[perm[b]]);
    const auto a = forward(p, rows);
    const auto c = forward(q, permuted);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(a[k], c[k], 1e-12);
  }
}

TEST(Json, RoundTripIsExact) {
  const auto synth = plant_copy_pool(12, 100, 50, 50);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.hidden = {7, 4};
  const auto p = train(synth.pool, EnsembleMask::full(2), cfg);
  const nlohmann::json j = p;
  const auto text = j.dump();
  const auto q = nlohmann::json::parse(text).get<FusionParams>();
  EXPECT_EQ(q.layer_dims(), (std::vector<int>{10, 7, 4, 5}));
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    EXPECT_TRUE((p.weights[l].array() == q.weights[l].array()).all());
    EXPECT_TRUE((p.biases[l].array() == q.biases[l].array()).all());
  }
  EXPECT_EQ(q.meta.member_ids, p.meta.member_ids);
  EXPECT_EQ(q.meta.best_epoch, p.meta.best_epoch);
  EXPECT_EQ(nlohmann::json(q).dump(), text);
}

TEST(Json, RejectsWrongArraySize) {
  nlohmann::json j = fixed_net();
  j["weights"][0].erase(0);
  EXPECT_THROW(j.get<FusionParams>(), Error);
}

TEST(Stream, SingleBatchGivesOneSummary) {
  auto spec = switch_stream_spec(1, 1, 1);
  const auto pools = generate_stream(spec);
  std::vector<Pool> batches{pools[0].pool};
  StreamConfig cfg;
  cfg.train.max_epochs = 5;
  const auto r = stream_adapt(batches, EnsembleMask::full(3), cfg);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].episodes, 200u);
}

TEST(Stream, BatchTooSmall) {
  auto spec = switch_stream_spec(1, 1, 1);
  spec.batch_episodes = 1999;
  const auto pools = generate_stream(spec);
  try {
    stream_adapt({pools[0].pool}, EnsembleMask::full(3), StreamConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BatchTooSmall);
  }
}

TEST(Stream, StationaryTraceIsFlat) {
  // Stationary stream: member 0 is right 98% of the time throughout.
  const auto pools = generate_stream(switch_stream_spec(5, 10, 10, 0.98, 0.45));
  std::vector<Pool> batches;
  for (const auto& p : pools) batches.push_back(p.pool);
  StreamConfig cfg;
  cfg.train.patience = 20;
  const auto r = stream_adapt(batches, EnsembleMask::full(3), cfg);
  ASSERT_EQ(r.trace.size(), 10u);
  double mean = 0.0;
  for (std::size_t b = 1; b < 10; ++b) mean += r.trace[b].accuracy / 9.0;
  for (std::size_t b = 1; b < 10; ++b) EXPECT_LE(std::abs(r.trace[b].accuracy - mean), 3.0) << "batch " << b;
}
