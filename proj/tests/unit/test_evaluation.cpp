#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "camfprint/evaluation.hpp"
#include "camfprint/heatmap.hpp"
#include "camfprint/image_io.hpp"
#include "test_util.hpp"

using namespace camfp;

namespace {

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back("Model" + std::to_string(i / 2) + "_" + std::to_string(i % 2));
  return d;
}

std::vector<std::vector<std::uint32_t>> rows(std::size_t devices, std::size_t per) {
  std::vector<std::vector<std::uint32_t>> m(devices);
  std::uint32_t r = 0;
  for (auto& v : m) {
    for (std::size_t k = 0; k < per; ++k) v.push_back(r++);
  }
  return m;
}

PairScoreFn constant(double value) {
  return [value](std::span<const std::uint32_t> a, std::span<const std::uint32_t>) {
    return std::vector<double>(a.size(), value);
  };
}

SimilarityMatrix matrix_of(std::vector<double> cells) {
  SimilarityMatrix m;
  const auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(cells.size()))));
  m.devices = names(n);
  m.cells = std::move(cells);
  return m;
}

SimilarityMatrix identity(std::size_t n) {
  std::vector<double> c(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) c[i * n + i] = 1.0;
  return matrix_of(c);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(SimilarityMatrix, ConstantScorerFillsEveryCell) {
  EvalConfig cfg;
  cfg.eta = 0.9;
  const auto m = similarity_matrix(names(5), rows(5, 3), constant(0.95), cfg);
  ASSERT_EQ(m.cells.size(), 25u);
  for (double c : m.cells) EXPECT_EQ(c, 1.0);
  const auto below = similarity_matrix(names(5), rows(5, 3), constant(0.85), cfg);
  for (double c : below.cells) EXPECT_EQ(c, 0.0);
  // score == eta counts as "same".
  const auto equal = similarity_matrix(names(2), rows(2, 2), constant(0.9), cfg);
  for (double c : equal.cells) EXPECT_EQ(c, 1.0);
}

TEST(SimilarityMatrix, CellsAreMultiplesOfOneOverN) {
  EvalConfig cfg;
  cfg.n_pairs_per_cell = 10;
  cfg.seed = 5;
  const PairScoreFn score = [](std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    std::vector<double> s;
    for (std::size_t k = 0; k < a.size(); ++k) s.push_back(((a[k] * 7 + b[k] * 3) % 10) / 10.0);
    return s;
  };
  const auto m = similarity_matrix(names(4), rows(4, 6), score, cfg);
  for (double c : m.cells) {
    EXPECT_NEAR(c * 10, std::round(c * 10), 1e-12);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(SimilarityMatrix, SamplingMatchesEnumeratedExpectation) {
  // Deterministic score table; the exact cell expectation is the fraction of
  // all |A| x |B| pairs at or above eta.
  const std::size_t devices = 3, per = 5;
  const auto members = rows(devices, per);
  auto value = [](std::uint32_t a, std::uint32_t b) { return std::fmod(std::sin(a * 12.9898 + b * 78.233) * 43758.5453, 1.0); };
  const PairScoreFn score = [&](std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    std::vector<double> s;
    for (std::size_t k = 0; k < a.size(); ++k) s.push_back(std::abs(value(a[k], b[k])));
    return s;
  };
  EvalConfig cfg;
  cfg.eta = 0.5;
  cfg.n_pairs_per_cell = 100;
  const int runs = 30;
  std::vector<double> mean(devices * devices, 0.0);
  for (int r = 0; r < runs; ++r) {
    cfg.seed = static_cast<std::uint64_t>(1000 + r);
    const auto m = similarity_matrix(names(devices), members, score, cfg);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += m.cells[c] / runs;
  }
  for (std::size_t i = 0; i < devices; ++i) {
    for (std::size_t j = 0; j < devices; ++j) {
      int hits = 0;
      for (auto a : members[i]) {
        for (auto b : members[j]) hits += std::abs(value(a, b)) >= cfg.eta ? 1 : 0;
      }
      const double p = static_cast<double>(hits) / (per * per);
      const double se = std::sqrt(p * (1 - p) / (cfg.n_pairs_per_cell * runs));
      EXPECT_NEAR(mean[i * devices + j], p, 3 * se + 1e-12) << "cell " << i << "," << j;
    }
  }
}

TEST(SimilarityMatrix, WorkerCountDoesNotChangeResult) {
  EvalConfig cfg;
  cfg.seed = 77;
  cfg.eta = 0.4;
  const PairScoreFn score = [](std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    std::vector<double> s;
    for (std::size_t k = 0; k < a.size(); ++k) s.push_back(((a[k] * 31 + b[k] * 17) % 100) / 100.0);
    return s;
  };
  cfg.workers = 1;
  const auto one = similarity_matrix(names(6), rows(6, 7), score, cfg);
  cfg.workers = 4;
  const auto four = similarity_matrix(names(6), rows(6, 7), score, cfg);
  EXPECT_EQ(one.cells, four.cells);
  cfg.seed = 78;
  EXPECT_NE(similarity_matrix(names(6), rows(6, 7), score, cfg).cells, one.cells);
}

TEST(SimilarityMatrix, DeviceWithoutSignaturesIsNamed) {
  auto members = rows(3, 2);
  members[1].clear();
  try {
    similarity_matrix(names(3), members, constant(1.0), EvalConfig{});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("Model0_1"), std::string::npos);
  }
  EvalConfig bad;
  bad.n_pairs_per_cell = 0;
  EXPECT_THROW(similarity_matrix(names(3), rows(3, 2), constant(1.0), bad), ConfigError);
}

TEST(SimilarityMatrix, WorkerExceptionsPropagate) {
  EvalConfig cfg;
  cfg.workers = 3;
  const PairScoreFn boom = [](std::span<const std::uint32_t>, std::span<const std::uint32_t>) -> std::vector<double> {
    throw DataError("scorer failed");
  };
  EXPECT_THROW(similarity_matrix(names(3), rows(3, 2), boom, cfg), DataError);
}

TEST(OverallAccuracy, Arithmetic) {
  const auto perfect = overall_accuracy(identity(31));
  EXPECT_DOUBLE_EQ(perfect.overall_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(perfect.diagonal_mean, 1.0);
  EXPECT_TRUE(perfect.worst_confusions.empty());

  const auto zeros = overall_accuracy(matrix_of(std::vector<double>(31 * 31, 0.0)));
  EXPECT_DOUBLE_EQ(zeros.overall_accuracy, (31.0 * 31 - 31) / (31.0 * 31));
  EXPECT_DOUBLE_EQ(zeros.diagonal_mean, 0.0);

  auto flipped = identity(31);
  flipped.at(3, 7) = 1.0;
  EXPECT_NEAR(overall_accuracy(flipped).overall_accuracy, 1.0 - 1.0 / (31 * 31), 1e-15);
  flipped.at(3, 3) = 0.0;
  EXPECT_NEAR(overall_accuracy(flipped).overall_accuracy, 1.0 - 2.0 / (31 * 31), 1e-15);
}

TEST(OverallAccuracy, ConfusionsRankedAndGroupedByModel) {
  // Devices: Model0_0, Model0_1, Model1_0 (first two share a model).
  const auto r = overall_accuracy(matrix_of({0.9, 0.6, 0.1,  //
                                             0.3, 0.8, 0.0,  //
                                             0.2, 0.0, 1.0}));
  ASSERT_EQ(r.worst_confusions.size(), 4u);
  EXPECT_EQ(r.worst_confusions[0].device_a, "Model0_0");
  EXPECT_EQ(r.worst_confusions[0].device_b, "Model0_1");
  EXPECT_DOUBLE_EQ(r.worst_confusions[0].error, 0.6);
  EXPECT_TRUE(r.worst_confusions[0].same_model);
  EXPECT_DOUBLE_EQ(r.worst_confusions[1].error, 0.3);
  EXPECT_DOUBLE_EQ(r.worst_confusions[3].error, 0.1);
  EXPECT_FALSE(r.worst_confusions[3].same_model);
  ASSERT_EQ(r.same_model_confusions.size(), 2u);

  const auto g = same_model_report(r);
  EXPECT_EQ(g.same_model_cells, 2u);
  EXPECT_EQ(g.cross_model_cells, 4u);
  EXPECT_NEAR(g.same_model_mean_error, 0.45, 1e-12);
  EXPECT_NEAR(g.cross_model_mean_error, 0.075, 1e-12);
  EXPECT_EQ(g.cross_model.size(), 2u);
}

TEST(OverallAccuracy, NoConfusionsWhenPerfect) {
  const auto r = overall_accuracy(identity(4));
  EXPECT_TRUE(r.same_model_confusions.empty());
  const auto g = same_model_report(r);
  EXPECT_TRUE(g.same_model.empty());
  EXPECT_EQ(g.same_model_mean_error, 0.0);
}

TEST(ReportSerialisation, JsonAndCsvRoundTrip) {
  auto m = matrix_of({0.97, 0.01, 1.0 / 3.0, 0.88});
  m.n_pairs_per_cell = 100;
  m.eta = 0.96;
  m.seed = 12345678901234ull;
  const auto r = overall_accuracy(m);
  const auto json = report_to_json(r, same_model_report(r));
  const auto back = matrix_from_json(json);
  EXPECT_EQ(back.devices, m.devices);
  EXPECT_EQ(back.cells, m.cells);
  EXPECT_EQ(back.eta, m.eta);
  EXPECT_EQ(back.seed, m.seed);
  EXPECT_NE(json.find("\"overall_accuracy\""), std::string::npos);

  const auto csv = matrix_to_csv(m);
  std::istringstream in(csv);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "device,Model0_0,Model0_1");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 9), "Model0_0,");
  std::getline(in, line);
  const double parsed = std::stod(line.substr(line.find(',') + 1));
  EXPECT_EQ(parsed, 1.0 / 3.0);
  EXPECT_THROW(matrix_from_json("{\"devices\": [\"a\"]}"), DataError);
}

TEST(Heatmap, LabelsEveryDeviceOnBothAxes) {
  testutil::TempDir dir;
  std::vector<double> cells(31 * 31);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& c : cells) c = u(rng);
  const auto m = matrix_of(cells);
  const auto layout = render_heatmap(m, dir / "h.png");
  EXPECT_EQ(layout.row_labels.size(), 31u);
  EXPECT_EQ(layout.column_labels.size(), 31u);
  EXPECT_TRUE(layout.annotated);

  const auto img = load_rgb(dir / "h.png");
  EXPECT_EQ(img.width, layout.width);
  EXPECT_EQ(img.height, layout.height);
  auto has_ink = [&](const PixelRect& r) {
    for (int y = r.y; y < r.y + r.height; ++y) {
      for (int x = r.x; x < r.x + r.width; ++x) {
        if (img.at(y, x, 0) < 128) return true;
      }
    }
    return false;
  };
  for (const auto& r : layout.row_labels) {
    ASSERT_GE(r.x, 0);
    ASSERT_LE(r.x + r.width, img.width);
    EXPECT_TRUE(has_ink(r));
  }
  for (const auto& r : layout.column_labels) {
    ASSERT_LE(r.y + r.height, img.height);
    EXPECT_TRUE(has_ink(r));
  }
  // Row labels do not overlap each other.
  for (std::size_t k = 1; k < layout.row_labels.size(); ++k) {
    EXPECT_GE(layout.row_labels[k].y, layout.row_labels[k - 1].y + layout.row_labels[k - 1].height);
  }
  EXPECT_GT(layout.colorbar.height, 0);
}

TEST(Heatmap, SingleDeviceAndDeterminism) {
  testutil::TempDir dir;
  const auto one = matrix_of({0.5});
  const auto layout = render_heatmap(one, dir / "one.png");
  EXPECT_EQ(layout.row_labels.size(), 1u);
  EXPECT_FALSE(load_rgb(dir / "one.png").empty());

  const auto m = identity(6);
  render_heatmap(m, dir / "a.png");
  render_heatmap(m, dir / "b.png");
  EXPECT_EQ(slurp(dir / "a.png"), slurp(dir / "b.png"));
}

TEST(Heatmap, LargeMatrixSkipsAnnotations) {
  testutil::TempDir dir;
  EXPECT_FALSE(render_heatmap(identity(41), dir / "big.png").annotated);
}

TEST(Heatmap, UnwritablePathThrows) {
  EXPECT_THROW(render_heatmap(identity(2), "/nonexistent-dir/x/heat.png"), DataError);
}
