#include <random>

#include "camfprint/threshold.hpp"
#include "test_util.hpp"

using namespace camfp;

namespace {

// Direct scan: count the confusion matrix at every grid value.
Threshold brute_force(const std::vector<double>& scores, const std::vector<int>& labels,
                      const std::vector<double>& grid) {
  Threshold best{-1, -1};
  for (double eta : grid) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool pred = scores[i] >= eta;
      if (pred && labels[i]) ++tp;
      if (pred && !labels[i]) ++fp;
      if (!pred && labels[i]) ++fn;
    }
    const double f1 = 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    if (f1 > best.selection_f1 || (f1 == best.selection_f1 && eta > best.eta)) best = {eta, f1};
  }
  return best;
}

}  // namespace

TEST(SelectThreshold, AgreesWithBruteForceOnRandomSets) {
  std::mt19937_64 rng(2024);
  const auto grid = default_threshold_grid();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 300;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    std::uniform_real_distribution<double> u(0, 1);
    const bool quantised = trial % 3 == 0;  // exercise ties with grid values
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = u(rng) < 0.3 ? 1 : 0;
      double s = labels[i] ? std::pow(u(rng), 0.3) : std::pow(u(rng), 2.0);
      if (quantised) s = grid[rng() % grid.size()];
      scores[i] = s;
    }
    labels[0] = 1;
    labels[1] = 0;
    const auto got = select_threshold(scores, labels, grid);
    const auto want = brute_force(scores, labels, grid);
    ASSERT_EQ(got.selection_f1, want.selection_f1) << "trial " << trial;
    ASSERT_EQ(got.eta, want.eta) << "trial " << trial;
  }
}

TEST(SelectThreshold, PerfectSeparationAndTieBreak) {
  const std::vector<double> scores{0.2, 0.3, 0.96, 0.995};
  const std::vector<int> labels{0, 0, 1, 1};
  const auto t = select_threshold(scores, labels, default_threshold_grid());
  EXPECT_EQ(t.selection_f1, 1.0);
  EXPECT_EQ(t.eta, 0.96);  // every eta in (0.3, 0.96] is perfect; largest wins
}

TEST(SelectThreshold, ScoreEqualToEtaCountsAsSame) {
  const std::vector<double> scores{0.99, 0.5};
  const std::vector<int> labels{1, 0};
  const std::vector<double> grid{0.99};
  EXPECT_EQ(select_threshold(scores, labels, grid).selection_f1, 1.0);
  const auto c = confusion_at(scores, labels, 0.99);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.tn, 1u);
}

TEST(SelectThreshold, Errors) {
  const std::vector<double> s{0.1, 0.9};
  const std::vector<int> same{1, 1};
  try {
    select_threshold(s, same, default_threshold_grid());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("F1 undefined"), std::string::npos);
  }
  const std::vector<int> mixed{0, 1};
  EXPECT_THROW(select_threshold(s, mixed, std::vector<double>{}), ConfigError);
  EXPECT_THROW(select_threshold(s, mixed, std::vector<double>{1.5}), ConfigError);
}

TEST(DefaultGrid, Values) {
  const auto g = default_threshold_grid();
  ASSERT_EQ(g.size(), 15u);
  EXPECT_EQ(g.front(), 0.5);
  EXPECT_EQ(g[9], 0.95);
  EXPECT_EQ(g[13], 0.99);
  EXPECT_EQ(g.back(), 0.995);
}

TEST(ThresholdArtifact, RoundTrip) {
  testutil::TempDir dir;
  ThresholdArtifact a;
  a.threshold = {0.97, 0.8125};
  a.grid = default_threshold_grid();
  a.extractor_version[1] = 9;
  a.similarity_version[2] = 8;
  save_threshold(dir / "t.json", a);
  const auto b = load_threshold(dir / "t.json");
  EXPECT_EQ(b.threshold.eta, 0.97);
  EXPECT_EQ(b.threshold.selection_f1, 0.8125);
  EXPECT_EQ(b.grid, a.grid);
  EXPECT_EQ(b.extractor_version, a.extractor_version);
  EXPECT_EQ(b.similarity_version, a.similarity_version);
}
