#include <gtest/gtest.h>

#include <set>

#include "kdop/metrics.hpp"
#include "kdop/numerics.hpp"

using namespace kdop;
using namespace kdop::metrics;

namespace {

// All positive/negative pairs; ties count one half.
double roc_pairs(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

// Average precision from a direct count at every distinct threshold.
double ap_thresholds(const std::vector<int>& y, const std::vector<double>& s) {
  std::set<double, std::greater<>> cuts(s.begin(), s.end());
  double pos = 0;
  for (int v : y) pos += v;
  double ap = 0, prev_recall = 0;
  for (double cut : cuts) {
    double tp = 0, flagged = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (s[i] >= cut) {
        flagged += 1;
        tp += y[i];
      }
    ap += (tp / pos - prev_recall) * (tp / flagged);
    prev_recall = tp / pos;
  }
  return ap;
}

}  // namespace

TEST(RocAuc, PerfectAndInverted) {
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(y, std::vector<double>{0.1, 0.2, 0.8, 0.9}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(y, std::vector<double>{0.9, 0.8, 0.2, 0.1}), 0.0);
}

TEST(RocAuc, AllTiedIsHalf) {
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.5, 0.5, 0.5, 0.5}), 0.5);
}

TEST(RocAuc, SingleClassIsDomainError) {
  EXPECT_THROW(roc_auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}), DomainError);
}

TEST(PrAuc, PerfectRanking) {
  EXPECT_DOUBLE_EQ(pr_auc(std::vector<int>{0, 0, 1, 1}, std::vector<double>{0.1, 0.2, 0.8, 0.9}), 1.0);
}

TEST(PrAuc, HandComputedExample) {
  // Ranking: 1, 0, 1, 0 -> AP = 0.5 * 1 + 0.5 * (2/3).
  const double ap = pr_auc(std::vector<int>{1, 0, 1, 0}, std::vector<double>{0.9, 0.8, 0.7, 0.1});
  EXPECT_NEAR(ap, 0.5 + 1.0 / 3.0, 1e-15);
}

TEST(PrAuc, AllTiedEqualsPrevalence) {
  EXPECT_DOUBLE_EQ(pr_auc(std::vector<int>{1, 0, 0, 0}, std::vector<double>{0.3, 0.3, 0.3, 0.3}), 0.25);
}

TEST(PrAuc, NoPositivesIsDomainError) {
  EXPECT_THROW(pr_auc(std::vector<int>{0, 0}, std::vector<double>{0.1, 0.2}), DomainError);
}

TEST(Metrics, LengthMismatchIsDimensionError) {
  EXPECT_THROW(pr_auc(std::vector<int>{0, 1}, std::vector<double>{0.1}), DimensionError);
  EXPECT_THROW(roc_auc(std::vector<int>{0, 1}, std::vector<double>{0.1}), DimensionError);
}

TEST(Metrics, RandomDatasetsMatchBruteForce) {
  Rng rng(2024);
  int checked = 0;
  while (checked < 1000) {
    const std::size_t n = 2 + rng.below(11);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.4 ? 1 : 0;
      s[i] = static_cast<double>(rng.below(5)) / 4.0;  // coarse grid forces ties
    }
    const int pos = std::accumulate(y.begin(), y.end(), 0);
    if (pos == 0 || pos == static_cast<int>(n)) continue;
    ASSERT_NEAR(roc_auc(y, s), roc_pairs(y, s), 1e-12);
    ASSERT_NEAR(pr_auc(y, s), ap_thresholds(y, s), 1e-12);
    ++checked;
  }
}

TEST(Confusion, Counts) {
  const auto c = confusion(std::vector<int>{1, 1, 0, 0, 1}, std::vector<int>{1, 0, 0, 1, 1});
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 1u);
  EXPECT_EQ(c.fp, 1u);
}

TEST(MacroPrf, HandComputed) {
  // Class 1: P = 2/3, R = 2/3. Class 0: P = 1/2, R = 1/2.
  const auto m = macro_prf(std::vector<int>{1, 1, 0, 0, 1}, std::vector<int>{1, 0, 0, 1, 1});
  EXPECT_NEAR(m.precision, (2.0 / 3.0 + 0.5) / 2.0, 1e-15);
  EXPECT_NEAR(m.recall, (2.0 / 3.0 + 0.5) / 2.0, 1e-15);
  EXPECT_NEAR(m.f1, (2.0 / 3.0 + 0.5) / 2.0, 1e-15);
}

TEST(MacroPrf, AllNegativePredictionsOnImbalancedData) {
  // Recall 1 on negatives, 0 on positives; precision of the unused class is 0.
  const auto m = macro_prf(std::vector<int>{0, 0, 0, 1}, std::vector<int>{0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(m.recall, 0.5);
  EXPECT_DOUBLE_EQ(m.precision, 0.75 / 2.0);
}

TEST(ModuleContribution, ReferencePair) {
  const auto c = module_contribution(0.553, 0.909);
  EXPECT_NEAR(c.w_dynamic, 0.378, 5e-4);
  EXPECT_NEAR(c.w_dynamic + c.w_static, 1.0, 1e-15);
}

TEST(ModuleContribution, EqualInputsSplitEvenly) {
  const auto c = module_contribution(0.7, 0.7);
  EXPECT_DOUBLE_EQ(c.w_dynamic, 0.5);
  EXPECT_DOUBLE_EQ(c.w_static, 0.5);
}

TEST(ModuleContribution, RejectsOutOfRange) {
  EXPECT_THROW(module_contribution(1.2, 0.5), DomainError);
  EXPECT_THROW(module_contribution(0.0, 0.0), DomainError);
}

TEST(Evaluate, ThresholdIsInclusive) {
  const std::vector<int> y{0, 1, 1};
  const std::vector<double> p{0.2, 0.5, 0.9};
  const auto r = evaluate(y, p, 0.5);
  EXPECT_EQ(r.confusion.tp, 2u);
  EXPECT_EQ(r.confusion.fp, 0u);
  EXPECT_DOUBLE_EQ(r.macro_recall, 1.0);
  EXPECT_DOUBLE_EQ(r.gamma, 0.5);
}

TEST(Evaluate, JsonRoundTrip) {
  const auto r = evaluate(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.1, 0.7, 0.4, 0.35}, 0.3);
  const nlohmann::json j = r;
  const MetricReport back = j.get<MetricReport>();
  EXPECT_EQ(nlohmann::json(back), j);
}
