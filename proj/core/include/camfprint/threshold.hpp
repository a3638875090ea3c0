#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "camfprint/common.hpp"

namespace camfp {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Counts with the rule "score >= eta predicts same device".
ConfusionCounts confusion_at(std::span<const double> scores, std::span<const int> labels, double eta);

/// 2TP / (2TP + FP + FN); 0 when there are no positives at all.
double f1_score(const ConfusionCounts& c);

struct Threshold {
  double eta = 0.5;
  double selection_f1 = 0.0;
};

/// {0.50, 0.55, ..., 0.95, 0.96, 0.97, 0.98, 0.99, 0.995}
std::vector<double> default_threshold_grid();

/// Grid value with maximal validation F1; ties go to the larger eta.
/// Throws DataError("F1 undefined") if the labels are all one class and
/// ConfigError for an empty grid or values outside [0, 1].
Threshold select_threshold(std::span<const double> scores, std::span<const int> labels, std::span<const double> grid);

/// JSON {eta, selection_f1, grid, extractor_version, similarity_version}.
struct ThresholdArtifact {
  Threshold threshold;
  std::vector<double> grid;
  Digest extractor_version{};
  Digest similarity_version{};
};

void save_threshold(const std::filesystem::path& path, const ThresholdArtifact& artifact);
ThresholdArtifact load_threshold(const std::filesystem::path& path);

}  // namespace camfp
