#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "axi/ingest/split.hpp"
#include "axi/ingest/synth.hpp"
#include "axi/train/adam.hpp"
#include "axi/train/metrics.hpp"
#include "axi/train/report.hpp"
#include "axi/train/trainer.hpp"
#include "temp_dir.hpp"

namespace axi::train {
namespace {

using nn::Shape;
using nn::Tensor;

void step(Tensor<double>& p, const Tensor<double>& g, AdamState<double>& s, const AdamConfig& c) {
  std::vector<Tensor<double>*> ps{&p};
  std::vector<const Tensor<double>*> gs{&g};
  adam_step<double>(ps, gs, s, c);
}

TEST(AdamTest, FirstStepIsSignTimesRate) {
  AdamConfig c;
  c.learning_rate = 1e-3;
  for (double g : {3.0, -0.25, 1e-2}) {
    Tensor<double> p(Shape{1}, 2.0);
    AdamState<double> s;
    step(p, Tensor<double>(Shape{1}, g), s, c);
    const double lr1 = 1e-3 / (1.0 + 1e-6);
    EXPECT_NEAR(p[0], 2.0 - lr1 * (g > 0 ? 1 : -1), lr1 * 1e-5);
  }
}

TEST(AdamTest, ZeroGradientLeavesParamsAndDecaysMoments) {
  AdamConfig c;
  c.learning_rate = 0.1;
  Tensor<double> p(Shape{3}, {1.0, -2.0, 0.5});
  const auto before = p;
  AdamState<double> s;
  step(p, Tensor<double>(Shape{3}, 0.0), s, c);
  EXPECT_EQ(p, before);
  step(p, Tensor<double>(Shape{3}, 1.0), s, c);
  const double m1 = s.m[0][0], v1 = s.v[0][0];
  auto q = p;
  Tensor<double> zero(Shape{3}, 0.0);
  step(q, zero, s, c);
  EXPECT_NEAR(s.m[0][0], 0.9 * m1, 1e-15);
  EXPECT_NEAR(s.v[0][0], 0.999 * v1, 1e-15);
}

TEST(AdamTest, ThreeStepHandTrace) {
  // lr 0.01, decay 0.1 so the schedule shows: rates 0.01/1.1, 0.01/1.2, 0.01/1.3.
  AdamConfig c;
  c.learning_rate = 0.01;
  c.decay = 0.1;
  Tensor<double> p(Shape{1}, 1.0);
  AdamState<double> s;
  const double grads[] = {0.5, -0.2, 0.1};
  const double params[] = {0.99090909109090908727, 0.98802904243395163939, 0.98511064418158124176};
  const double m[] = {0.05, 0.025, 0.0325};
  const double v[] = {0.00025, 0.00028975, 0.00029946025};
  for (int t = 0; t < 3; ++t) {
    step(p, Tensor<double>(Shape{1}, grads[t]), s, c);
    EXPECT_NEAR(p[0], params[t], 1e-10) << "step " << t + 1;
    EXPECT_NEAR(s.m[0][0], m[t], 1e-12);
    EXPECT_NEAR(s.v[0][0], v[t], 1e-12);
  }
  EXPECT_EQ(s.step, 3u);
}

TEST(AdamTest, ShapeMismatchAndBadConfig) {
  Tensor<double> p(Shape{2});
  AdamState<double> s;
  EXPECT_THROW(step(p, Tensor<double>(Shape{3}), s, {}), nn::ShapeError);
  AdamConfig c;
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.decay = -1e-6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// --- metrics ---------------------------------------------------------------

double mann_whitney(const std::vector<double>& s, const std::vector<int>& l) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[i] == 1 && l[j] == 0) {
        pairs += 1;
        good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
  }
  return good / pairs;
}

EvalReport report(std::vector<double> scores, std::vector<int> labels) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < scores.size(); ++i) ids.push_back("J" + std::to_string(i));
  return make_report(ids, std::move(scores), std::move(labels));
}

TEST(MetricsTest, PerfectSeparation) {
  const auto r = report({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
  const auto c = confusion_at(r.scores, r.labels, 0.5);
  EXPECT_EQ(c.recall(), 1.0);
  EXPECT_EQ(c.fpr(), 0.0);
  EXPECT_DOUBLE_EQ(r.auroc, 1.0);
  EXPECT_DOUBLE_EQ(report({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}).auroc, 0.0);
}

TEST(MetricsTest, ThreeOfFourPairsOrdered) {
  EXPECT_DOUBLE_EQ(report({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0}).auroc, 0.75);
}

TEST(MetricsTest, RocIsSortedAndAnchored) {
  const auto r = report({0.9, 0.4, 0.6, 0.1, 0.4}, {1, 1, 0, 0, 0});
  ASSERT_FALSE(r.roc.empty());
  EXPECT_TRUE(std::isinf(r.roc.front().threshold));
  EXPECT_EQ(r.roc.front().fpr, 0.0);
  EXPECT_EQ(r.roc.back().fpr, 1.0);
  EXPECT_EQ(r.roc.back().tpr, 1.0);
  for (std::size_t i = 1; i < r.roc.size(); ++i) {
    EXPECT_LE(r.roc[i - 1].fpr, r.roc[i].fpr);
    if (r.roc[i - 1].fpr == r.roc[i].fpr) EXPECT_LE(r.roc[i - 1].tpr, r.roc[i].tpr);
  }
}

TEST(MetricsTest, TrapezoidMatchesPairCount) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + gen() % 40;
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(gen() % 11) / 10.0;  // coarse grid forces ties
      l[i] = static_cast<int>(gen() % 2);
    }
    l[0] = 1;
    l[1] = 0;
    EXPECT_NEAR(report(s, l).auroc, mann_whitney(s, l), 1e-9);
  }
}

TEST(MetricsTest, UninformativeScoresGiveHalf) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(2000);
  std::vector<int> l(2000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(gen);
    l[i] = u(gen) < 0.3;
  }
  EXPECT_NEAR(report(s, l).auroc, 0.5, 0.05);
}

TEST(MetricsTest, RecallAndFprNonIncreasing) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(500);
  std::vector<int> l(500);
  for (std::size_t i = 0; i < s.size(); ++i) {
    l[i] = u(gen) < 0.4;
    s[i] = std::clamp(u(gen) * 0.7 + 0.3 * l[i], 0.0, 1.0);
  }
  double prev_r = 2, prev_f = 2;
  for (int k = 0; k <= 100; ++k) {
    const auto c = confusion_at(s, l, k / 100.0);
    EXPECT_LE(c.recall(), prev_r);
    EXPECT_LE(c.fpr(), prev_f);
    EXPECT_EQ(c.positives() + c.negatives(), s.size());
    prev_r = c.recall();
    prev_f = c.fpr();
  }
}

TEST(MetricsTest, NeedsBothClasses) {
  EXPECT_THROW(report({0.2, 0.3}, {1, 1}), MetricError);
  EXPECT_THROW(report({0.2, 0.3}, {0, 0}), MetricError);
  EXPECT_THROW(report({0.2}, {2}), MetricError);
}

TEST(ThresholdTest, PicksLargestFeasibleThreshold) {
  // 100 defects: 89 score at or above 0.35, 3 exactly at 0.30, 8 below, so
  // recall(0.35) = 0.89 and recall(0.30) = 0.92. Negatives fill the gap.
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 89; ++i) s.push_back(0.35 + 0.6 * i / 88.0), l.push_back(1);
  for (int i = 0; i < 3; ++i) s.push_back(0.30), l.push_back(1);
  for (int i = 0; i < 8; ++i) s.push_back(0.05 + 0.02 * i), l.push_back(0 + 1);
  for (int i = 0; i < 25; ++i) s.push_back(0.01 + 0.039 * i), l.push_back(0);
  const auto r = report(s, l);
  EXPECT_DOUBLE_EQ(confusion_at(r.scores, r.labels, 0.35).recall(), 0.89);
  EXPECT_DOUBLE_EQ(confusion_at(r.scores, r.labels, 0.30).recall(), 0.92);
  const double tau = select_threshold(r, 0.90);
  EXPECT_DOUBLE_EQ(tau, 0.30);
  // Postcondition over a fine sweep.
  EXPECT_GE(confusion_at(r.scores, r.labels, tau).recall(), 0.90);
  for (int k = 1; k <= 1000; ++k) {
    const double above = tau + k * 1e-3;
    EXPECT_LT(confusion_at(r.scores, r.labels, above).recall(), 0.90);
  }
}

TEST(ThresholdTest, ExtremeTargets) {
  const auto r = report({0.9, 0.75, 0.6, 0.2, 0.1}, {1, 1, 1, 0, 0});
  EXPECT_EQ(select_threshold(r, 0.0), 1.0);
  const double tau = select_threshold(r, 1.0);
  EXPECT_EQ(tau, 0.6);
  EXPECT_EQ(confusion_at(r.scores, r.labels, tau).fpr(), 0.0);
  EXPECT_THROW(select_threshold(r, 1.5), MetricError);
  ASSERT_EQ(r.operating_points.size(), 2u);
  EXPECT_EQ(r.operating_points[0].target_recall, 0.90);
  EXPECT_EQ(r.operating_points[0].threshold, 0.6);
}

TEST(WorkloadTest, FilteredIsComplementOfFpr) {
  EXPECT_NEAR(filtered_fraction(0.3349), 0.6651, 1e-12);
  EXPECT_EQ(filtered_fraction(1.0), 0.0);
  const auto a = report({0.9, 0.8, 0.7, 0.6, 0.3, 0.2}, {1, 1, 0, 1, 0, 0});
  const auto b = report({0.9, 0.5, 0.7, 0.6, 0.3, 0.2}, {1, 1, 0, 0, 0, 1});
  const auto row = workload_row("cnn3d", a, {0.90, 0.95});
  EXPECT_NEAR(row.fpr[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(row.filtered[0], 2.0 / 3.0, 1e-12);
  const std::string text = format_workload({row, workload_row("lstm", b, {0.90, 0.95})});
  std::istringstream lines(text);
  std::string header, r1, r2, extra;
  std::getline(lines, header);
  std::getline(lines, r1);
  std::getline(lines, r2);
  EXPECT_FALSE(std::getline(lines, extra));
  EXPECT_EQ(header, "model\tauroc\tfpr@90%recall\tfpr@95%recall\tfiltered@90%recall\tfiltered@95%recall");
  EXPECT_TRUE(r1.starts_with("cnn3d\t"));
  EXPECT_TRUE(r2.starts_with("lstm\t"));
}

TEST(ReportTest, JsonRoundTrip) {
  const auto r = report({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0});
  const auto back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.auroc, r.auroc);
  EXPECT_EQ(back.scores, r.scores);
  EXPECT_EQ(back.joint_ids, r.joint_ids);
  ASSERT_EQ(back.roc.size(), r.roc.size());
  EXPECT_TRUE(std::isinf(back.roc[0].threshold));
  EXPECT_EQ(report_to_json(back), report_to_json(r));
  EXPECT_THROW(report_from_json("{\"positives\": 1}"), MetricError);
  std::ostringstream roc;
  write_roc_tsv(roc, r);
  EXPECT_TRUE(roc.str().starts_with("#fpr\ttpr\n0.000000\t0.000000\n"));
}

// --- training ----------------------------------------------------------------

struct SmallData {
  std::vector<preprocess::Patch> train, val;
  std::int64_t bound = 64;
};

const SmallData& small_data() {
  static const SmallData data = [] {
    testing::TempDir dir;
    ingest::SynthConfig c;
    c.seed = 31;
    c.joints = 200;
    c.image_bound = 64;
    c.defect_fraction = 0.3;
    const auto manifest = ingest::generate_synthetic(c, dir.path());
    const auto split = ingest::split_by_board(manifest, {}, 1);
    const auto balanced = ingest::balance_downsample(split.train, 1);
    SmallData d;
    d.train = preprocess::preprocess_records(balanced, {.side = 16}).patches;
    d.val = preprocess::preprocess_records(split.val, {.side = 16}).patches;
    return d;
  }();
  return data;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.adam.learning_rate = 1e-2;
  c.batch_size = 16;
  c.epochs = 5;
  c.seed = 4;
  return c;
}

TEST(TrainTest, LossDecreasesOnShrunkenCnn3d) {
  const auto& d = small_data();
  ASSERT_GT(d.train.size(), 20u);
  const auto spec = models::ModelSpec::shrunken(models::Arch::kCnn3d);
  std::size_t epochs_seen = 0;
  const auto r = train(spec, d.train, d.val, quick_config(), d.bound, [&](const EpochLog&) { ++epochs_seen; });
  EXPECT_EQ(epochs_seen, 5u);
  ASSERT_EQ(r.log.size(), 5u);
  EXPECT_LT(r.final_loss, r.initial_loss);
  std::printf("initial %.6f final %.6f\n", r.initial_loss, r.final_loss);
}

TEST(TrainTest, FixedSeedGivesIdenticalCheckpoint) {
  const auto& d = small_data();
  for (auto arch : {models::Arch::kCnn3d, models::Arch::kLstm}) {
    const auto spec = models::ModelSpec::shrunken(arch);
    auto cfg = quick_config();
    cfg.epochs = 2;
    const auto a = train(spec, d.train, d.val, cfg, d.bound);
    const auto b = train(spec, d.train, d.val, cfg, d.bound);
    EXPECT_EQ(models::encode_checkpoint(a.checkpoint), models::encode_checkpoint(b.checkpoint));
    cfg.seed = 5;
    const auto c = train(spec, d.train, d.val, cfg, d.bound);
    EXPECT_NE(models::encode_checkpoint(a.checkpoint), models::encode_checkpoint(c.checkpoint));
  }
}

TEST(TrainTest, ZeroLearningRateKeepsInitialWeights) {
  const auto& d = small_data();
  const auto spec = models::ModelSpec::shrunken(models::Arch::kCnn3d);
  auto cfg = quick_config();
  cfg.adam.learning_rate = 0.0;
  cfg.epochs = 2;
  const auto r = train(spec, d.train, d.val, cfg, d.bound);
  const auto init = initial_params(spec, cfg.seed);
  for (std::size_t i = 0; i < init.entries.size(); ++i) {
    // Running statistics still track the batches.
    if (init.entries[i].trainable) EXPECT_EQ(r.checkpoint.params.entries[i].value, init.entries[i].value);
  }
  EXPECT_NE(r.checkpoint.params.at("bn.running_mean"), init.at("bn.running_mean"));
}

TEST(TrainTest, EmptySplitsAndDivergence) {
  const auto& d = small_data();
  const auto spec = models::ModelSpec::shrunken(models::Arch::kCnn3d);
  EXPECT_THROW(train(spec, {}, d.val, quick_config(), d.bound), TrainingError);
  EXPECT_THROW(train(spec, d.train, {}, quick_config(), d.bound), TrainingError);
  auto wild = quick_config();
  wild.adam.learning_rate = 1e30;
  try {
    train(spec, d.train, d.val, wild, d.bound);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
  auto wrong = d.train;
  wrong[0].data = Tensor<float>(Shape{32, 32, 6, 1});
  EXPECT_THROW(train(spec, wrong, d.val, quick_config(), d.bound), nn::ShapeError);
}

TEST(TrainTest, EvaluationIsPure) {
  const auto& d = small_data();
  const auto spec = models::ModelSpec::shrunken(models::Arch::kLstm);
  auto cfg = quick_config();
  cfg.epochs = 1;
  auto r = train(spec, d.train, d.val, cfg, d.bound);
  const auto a = evaluate(r.checkpoint, d.val);
  const auto b = evaluate(r.checkpoint, d.val);
  EXPECT_EQ(report_to_json(a), report_to_json(b));
  EXPECT_GE(a.auroc, 0.0);
  EXPECT_LE(a.auroc, 1.0);
  EXPECT_EQ(a.scores.size(), d.val.size());
}

TEST(TrainTest, LogFormat) {
  std::ostringstream os;
  write_training_log(os, quick_config(), {{1, 0.5, 0.75, 0.25, 0.875}});
  const std::string s = os.str();
  EXPECT_TRUE(s.starts_with("# adam lr=0.01 decay=1e-06 schedule=lr/(1+decay*step)"));
  EXPECT_NE(s.find("#epoch\ttrain_loss\tval_recall@0.5\tval_fpr@0.5\tval_auroc\n1\t0.5\t0.75\t0.25\t0.875\n"),
            std::string::npos);
}

TEST(TrainTest, KeepBestValReturnsBestEpoch) {
  const auto& d = small_data();
  const auto spec = models::ModelSpec::shrunken(models::Arch::kCnn3d);
  auto cfg = quick_config();
  cfg.keep_best_val = true;
  auto r = train(spec, d.train, d.val, cfg, d.bound);
  ASSERT_EQ(r.log.size(), cfg.epochs);
  std::size_t want = 1;
  for (const auto& e : r.log) {
    if (e.val_auroc > r.log[want - 1].val_auroc) want = e.epoch;
  }
  EXPECT_EQ(r.best_epoch, want);
  // the returned weights reproduce that epoch's validation AUROC
  EXPECT_DOUBLE_EQ(evaluate(r.checkpoint, d.val).auroc, r.log[want - 1].val_auroc);

  // same run truncated at the best epoch gives the same weights
  auto cut = quick_config();
  cut.epochs = want;
  const auto r2 = train(spec, d.train, d.val, cut, d.bound);
  for (std::size_t i = 0; i < r.checkpoint.params.entries.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(r.checkpoint.params.entries[i].value.data(), r2.checkpoint.params.entries[i].value.data()))
        << r.checkpoint.params.entries[i].name;
  }
}

}  // namespace
}  // namespace axi::train
