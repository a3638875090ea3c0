#include "camfprint/threshold.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace camfp {

ConfusionCounts confusion_at(std::span<const double> scores, std::span<const int> labels, double eta) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= eta;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(const ConfusionCounts& c) {
  const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp) + static_cast<double>(c.fn);
  return denom > 0 ? 2.0 * static_cast<double>(c.tp) / denom : 0.0;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int k = 50; k <= 95; k += 5) grid.push_back(k / 100.0);
  for (int k = 96; k <= 99; ++k) grid.push_back(k / 100.0);
  grid.push_back(0.995);
  return grid;
}

Threshold select_threshold(std::span<const double> scores, std::span<const int> labels, std::span<const double> grid) {
  if (scores.size() != labels.size()) throw ConfigError("select_threshold: scores and labels differ in length");
  if (grid.empty()) throw ConfigError("select_threshold: empty grid");
  for (double g : grid) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("select_threshold: grid values must lie in [0, 1]");
  }
  const std::size_t n_pos =
      static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
  if (n_pos == 0 || n_pos == labels.size()) throw DataError("F1 undefined: validation pairs contain a single label");

  // Sort scores descending; predicted positives at eta are a prefix.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> sorted(scores.size());
  std::vector<std::size_t> pos_prefix(scores.size() + 1, 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted[k] = scores[order[k]];
    pos_prefix[k + 1] = pos_prefix[k] + (labels[order[k]] != 0 ? 1 : 0);
  }

  Threshold best{-1.0, -1.0};
  for (double eta : grid) {
    // number of scores >= eta
    const auto predicted = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), eta, [](double e, double s) { return e > s; }) - sorted.begin());
    ConfusionCounts c;
    c.tp = pos_prefix[predicted];
    c.fp = predicted - c.tp;
    c.fn = n_pos - c.tp;
    c.tn = scores.size() - predicted - c.fn;
    const double f1 = f1_score(c);
    if (f1 > best.selection_f1 || (f1 == best.selection_f1 && eta > best.eta)) best = {eta, f1};
  }
  return best;
}

void save_threshold(const std::filesystem::path& path, const ThresholdArtifact& artifact) {
  nlohmann::ordered_json j;
  j["eta"] = artifact.threshold.eta;
  j["selection_f1"] = artifact.threshold.selection_f1;
  j["grid"] = artifact.grid;
  j["extractor_version"] = to_hex(artifact.extractor_version);
  j["similarity_version"] = to_hex(artifact.similarity_version);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

ThresholdArtifact load_threshold(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    const auto j = nlohmann::json::parse(ss.str());
    ThresholdArtifact a;
    a.threshold.eta = j.at("eta").get<double>();
    a.threshold.selection_f1 = j.at("selection_f1").get<double>();
    a.grid = j.at("grid").get<std::vector<double>>();
    a.extractor_version = digest_from_hex(j.at("extractor_version").get<std::string>());
    a.similarity_version = digest_from_hex(j.at("similarity_version").get<std::string>());
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(path.string() + ": malformed threshold artifact: " + e.what());
  }
}

}  // namespace camfp
