#include <algorithm>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "camulenet/metrics.hpp"
#include "camulenet/rng.hpp"

using namespace camulenet;

namespace {

// Straight from the definitions, with no confusion matrix in between.
Metrics brute_force(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::set<int> classes(truth.begin(), truth.end());
  double recall_sum = 0.0, wf1 = 0.0;
  for (const int k : classes) {
    double tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (truth[i] == k) ++support;
      if (truth[i] == k && pred[i] == k) ++tp;
      if (truth[i] != k && pred[i] == k) ++fp;
      if (truth[i] == k && pred[i] != k) ++fn;
    }
    const double r = tp / (tp + fn);
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    recall_sum += r;
    wf1 += support / pred.size() * (p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
  return {recall_sum / classes.size(), wf1};
}

}  // namespace

TEST(Metrics, HandWorkedCase) {
  // class 0: 2 of 2 right, class 1: 1 of 2 right (one predicted as 0)
  const auto m = weighted_metrics({0, 0, 1, 0}, {0, 0, 1, 1}, 2);
  EXPECT_NEAR(m.wa, 0.75, 1e-12);
  // F1_0 = 2*(2/3)*1/(5/3) = 0.8, F1_1 = 2*1*0.5/1.5 = 2/3
  EXPECT_NEAR(m.wf1, 0.5 * 0.8 + 0.5 * 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(weighted_metrics({0, 0, 1, 0}, {0, 0, 1, 1}, 2, AccuracyKind::plain).wa, 0.75, 1e-12);
}

TEST(Metrics, BalancedDiffersFromPlainOnImbalance) {
  const std::vector<int> truth{0, 0, 0, 0, 0, 0, 0, 0, 0, 1};
  const std::vector<int> pred(10, 0);
  EXPECT_NEAR(weighted_metrics(pred, truth, 2).wa, 0.5, 1e-12);
  EXPECT_NEAR(weighted_metrics(pred, truth, 2, AccuracyKind::plain).wa, 0.9, 1e-12);
}

TEST(Metrics, MatchesBruteForceOnRandomVectors) {
  CounterRng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 2 + rng.below(6);
    const std::size_t n = 1 + rng.below(60);
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(c));
      pred[i] = rng.uniform() < 0.5 ? truth[i] : static_cast<int>(rng.below(c));
    }
    const auto got = weighted_metrics(pred, truth, c);
    const auto want = brute_force(pred, truth);
    ASSERT_NEAR(got.wa, want.wa, 1e-12) << "trial " << trial;
    ASSERT_NEAR(got.wf1, want.wf1, 1e-12) << "trial " << trial;
    ASSERT_GE(got.wa, 0.0);
    ASSERT_LE(got.wa, 1.0);
    ASSERT_GE(got.wf1, 0.0);
    ASSERT_LE(got.wf1, 1.0);
  }
}

TEST(Metrics, InvariantToSampleOrder) {
  CounterRng rng(5);
  std::vector<int> pred(40), truth(40);
  for (std::size_t i = 0; i < 40; ++i) {
    truth[i] = static_cast<int>(rng.below(4));
    pred[i] = static_cast<int>(rng.below(4));
  }
  const auto ref = weighted_metrics(pred, truth, 4);
  std::vector<std::size_t> perm(40);
  for (std::size_t i = 0; i < 40; ++i) perm[i] = i;
  for (int k = 0; k < 20; ++k) {
    shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> p2, t2;
    for (const auto i : perm) {
      p2.push_back(pred[i]);
      t2.push_back(truth[i]);
    }
    const auto m = weighted_metrics(p2, t2, 4);
    EXPECT_EQ(m.wa, ref.wa);
    EXPECT_EQ(m.wf1, ref.wf1);
  }
}

TEST(Metrics, PerfectAndHopeless) {
  const auto perfect = weighted_metrics({0, 1, 2}, {0, 1, 2}, 3);
  EXPECT_EQ(perfect.wa, 1.0);
  EXPECT_EQ(perfect.wf1, 1.0);
  const auto zero = weighted_metrics({1, 2, 0}, {0, 1, 2}, 3);
  EXPECT_EQ(zero.wa, 0.0);
  EXPECT_EQ(zero.wf1, 0.0);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(weighted_metrics({}, {}, 3), ShapeError);
  EXPECT_THROW(weighted_metrics({0, 1}, {0}, 3), ShapeError);
  EXPECT_THROW(weighted_metrics({0, 3}, {0, 1}, 3), LabelError);
  EXPECT_THROW(weighted_metrics({0, 1}, {-1, 1}, 3), LabelError);
}

TEST(Metrics, ConfusionLayoutAndCsv) {
  const auto cm = confusion_matrix({1, 1, 0}, {0, 1, 0}, 2);
  EXPECT_EQ(cm(0, 1), 1u);
  EXPECT_EQ(cm(0, 0), 1u);
  EXPECT_EQ(cm(1, 1), 1u);
  EXPECT_EQ(confusion_to_json(cm).dump(), "[[1,1],[0,1]]");
  EXPECT_EQ(confusion_to_csv(cm, {"calm", "angry"}), "true\\pred,calm,angry\ncalm,1,1\nangry,0,1\n");
}

TEST(Metrics, ArgmaxBreaksTiesLow) {
  const std::vector<float> v{0.2f, 0.7f, 0.7f, 0.1f};
  EXPECT_EQ(argmax(v.begin(), v.end()), 1);
}
