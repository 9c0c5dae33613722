#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fw/metrics.hpp"
#include "support/synthetic.hpp"

using namespace fw;

namespace {

// O(n^2) pairwise AUC: P(score_pos > score_neg) + 0.5 P(tie).
std::optional<double> pairwise_auc(std::span<const ScoredLabel> v) {
  double wins = 0;
  double n = 0;
  for (const auto& p : v) {
    if (p.label != 1) continue;
    for (const auto& q : v) {
      if (q.label != 0) continue;
      n += 1;
      wins += p.score > q.score ? 1.0 : p.score == q.score ? 0.5 : 0.0;
    }
  }
  if (n == 0) return std::nullopt;
  return wins / n;
}

std::vector<ScoredLabel> random_pairs(fwtest::Rng& rng, std::size_t n, double signal, int levels = 0) {
  std::vector<ScoredLabel> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng() & 1;
    double s = fwtest::uniform(rng) + signal * y;
    if (levels > 0) s = std::floor(s * levels) / levels;
    out.push_back({s, y});
  }
  return out;
}

}  // namespace

TEST(Auc, PerfectRanking) {
  std::vector<ScoredLabel> v{{0.1, 0}, {0.2, 0}, {0.8, 1}, {0.9, 1}};
  EXPECT_EQ(auc(v), 1.0);
  std::vector<ScoredLabel> w{{0.9, 0}, {0.1, 1}};
  EXPECT_EQ(auc(w), 0.0);
}

TEST(Auc, AllTies) {
  std::vector<ScoredLabel> v{{0.3, 0}, {0.3, 1}, {0.3, 1}, {0.3, 0}, {0.3, 0}};
  EXPECT_EQ(auc(v), 0.5);
}

TEST(Auc, SingleClassIsUndefined) {
  std::vector<ScoredLabel> v{{0.3, 1}, {0.4, 1}};
  EXPECT_FALSE(auc(v).has_value());
  EXPECT_FALSE(auc(std::span<const ScoredLabel>{}).has_value());
}

TEST(Auc, RandomScoresNearHalf) {
  fwtest::Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto v = random_pairs(rng, 30000, 0.0);
    const double a = *auc(v);
    EXPECT_GE(a, 0.48);
    EXPECT_LE(a, 0.52);
  }
}

TEST(Auc, MatchesPairwiseOracle) {
  fwtest::Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto v = random_pairs(rng, static_cast<std::size_t>(fwtest::randint(rng, 2, 2000)), 0.3,
                                trial % 2 ? 10 : 0);
    const auto a = auc(v);
    const auto b = pairwise_auc(v);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) {
      EXPECT_NEAR(*a, *b, 1e-12);
    }
  }
}

TEST(Auc, MonotoneTransformInvariant) {
  fwtest::Rng rng(8);
  auto v = random_pairs(rng, 5000, 0.2, 50);
  const auto a = rolling_auc(v, 1000);
  for (auto& p : v) p.score = std::exp(3 * p.score) - 7;
  const auto b = rolling_auc(v, 1000);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].auc, b[i].auc);
}

TEST(RollingAuc, NonOverlappingWindowsMatchBatch) {
  fwtest::Rng rng(10);
  const auto v = random_pairs(rng, 7 * 1500 + 200, 0.4, 20);
  const auto series = rolling_auc(v, 1500);
  ASSERT_EQ(series.size(), 7u);
  for (std::size_t w = 0; w < series.size(); ++w) {
    EXPECT_EQ(series[w].index, (w + 1) * 1500);
    std::span<const ScoredLabel> window(v.data() + w * 1500, 1500);
    EXPECT_NEAR(*series[w].auc, *pairwise_auc(window), 1e-12);
    EXPECT_GE(*series[w].auc, 0.0);
    EXPECT_LE(*series[w].auc, 1.0);
  }
}

TEST(RollingAuc, StrideForDiagnostics) {
  fwtest::Rng rng(12);
  const auto v = random_pairs(rng, 1000, 0.4);
  const auto series = rolling_auc(v, 400, 100);
  ASSERT_EQ(series.size(), 7u);
  std::span<const ScoredLabel> last(v.data() + 600, 400);
  EXPECT_NEAR(*series.back().auc, *pairwise_auc(last), 1e-12);
  EXPECT_THROW(RollingAuc(10, 20), ContractError);
}

TEST(RollingAuc, SingleClassWindowIsSkipped) {
  std::vector<ScoredLabel> v(20, ScoredLabel{0.5, 1});
  const auto s = rolling_auc(v, 10);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_FALSE(s[0].auc.has_value());
}

TEST(LogLoss, Values) {
  std::vector<ScoredLabel> half{{0.5, 1}, {0.5, 0}, {0.5, 0}};
  EXPECT_NEAR(logloss(half), 0.6931471805599453, 1e-15);
  std::vector<ScoredLabel> exact{{1.0, 1}, {0.0, 0}};
  EXPECT_GT(logloss(exact), 0.0);
  EXPECT_LT(logloss(exact), 2e-7);
  std::vector<ScoredLabel> fixture{{0.9, 1}, {0.2, 0}, {0.6, 0}, {0.7, 1}};
  EXPECT_NEAR(logloss(fixture), 0.40036743569623084, 1e-14);
  EXPECT_THROW(logloss(std::span<const ScoredLabel>{}), ContractError);
}

TEST(Rig, Values) {
  std::vector<ScoredLabel> fixture{{0.9, 1}, {0.2, 0}, {0.6, 0}, {0.7, 1}, {0.1, 0}, {0.3, 0}};
  EXPECT_NEAR(rig(fixture), 0.4596859726601473, 1e-12);
  std::vector<ScoredLabel> base(9, ScoredLabel{1.0 / 3.0, 0});
  for (int i = 0; i < 3; ++i) base[i].label = 1;
  EXPECT_NEAR(rig(base), 0.0, 1e-12);
  std::vector<ScoredLabel> perfect{{1.0, 1}, {0.0, 0}, {0.0, 0}};
  EXPECT_NEAR(rig(perfect), 1.0, 1e-6);
  EXPECT_LE(rig(perfect), 1.0);
  std::vector<ScoredLabel> one{{0.3, 1}};
  EXPECT_THROW(rig(one), ContractError);
}

TEST(Metrics, PropertyBounds) {
  fwtest::Rng rng(14);
  for (int t = 0; t < 50; ++t) {
    auto v = random_pairs(rng, 200, fwtest::uniform(rng, -1, 1));
    for (auto& p : v) p.score = std::clamp(p.score, 0.0, 1.0);
    EXPECT_GE(logloss(v), 0.0);
    EXPECT_LE(rig(v), 1.0);
  }
}

TEST(Metrics, LineFormat) {
  std::ostringstream os;
  write_metric(os, 30000, "auc", 0.71234567);
  write_metric(os, 60000, "auc", std::nullopt);
  EXPECT_EQ(os.str(), "30000\tauc\t0.712346\n60000\tauc\tskip\n");
}
