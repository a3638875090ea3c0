#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "camfprint/signature_store.hpp"
#include "camfprint/similarity_net.hpp"

namespace camfp {

/// N x N grid of mean binarised scores, row-major; cells[i*N + j] is the
/// ordered device pair (devices[i], devices[j]).
struct SimilarityMatrix {
  std::vector<std::string> devices;
  std::vector<double> cells;
  int n_pairs_per_cell = 100;
  double eta = 0.5;
  std::uint64_t seed = 0;

  std::size_t size() const { return devices.size(); }
  double at(std::size_t i, std::size_t j) const { return cells[i * devices.size() + j]; }
  double& at(std::size_t i, std::size_t j) { return cells[i * devices.size() + j]; }
};

struct EvalConfig {
  int n_pairs_per_cell = 100;
  double eta = 0.5;
  std::uint64_t seed = 0;
  /// Cells are independent; results do not depend on this.
  int workers = 1;
};

/// Scores pairs of rows of some signature table.
using PairScoreFn =
    std::function<std::vector<double>(std::span<const std::uint32_t> first, std::span<const std::uint32_t> second)>;

/// For every ordered (i, j): draws n_pairs_per_cell pairs uniformly with
/// replacement from members[i] x members[j], scores them, counts those with
/// score >= eta, and stores the fraction. `members[d]` lists table rows of
/// device d. Throws DataError naming any device without signatures.
SimilarityMatrix similarity_matrix(const std::vector<std::string>& devices,
                                   const std::vector<std::vector<std::uint32_t>>& members, const PairScoreFn& score,
                                   const EvalConfig& cfg);

/// Store-backed overload: the signatures of each device under
/// `extractor_version` whose image path is in `allowed_paths` (the test split).
SimilarityMatrix similarity_matrix(const SignatureStore& store, const SimilarityNet<float>& f_sim,
                                   const Digest& extractor_version, const std::vector<std::string>& devices,
                                   const std::set<std::string>& allowed_paths, const EvalConfig& cfg);

struct Confusion {
  std::string device_a;
  std::string device_b;
  double cell = 0;
  double error = 0;
  bool same_model = false;
};

struct EvalReport {
  SimilarityMatrix matrix;
  double overall_accuracy = 0;
  double diagonal_mean = 0;
  /// cells on the diagonal, 1 - cells elsewhere.
  std::vector<double> per_cell_accuracy;
  /// Off-diagonal cells with non-zero error, largest error first.
  std::vector<Confusion> worst_confusions;
  /// The subset of worst_confusions between devices of one camera model.
  std::vector<Confusion> same_model_confusions;
};

/// Unweighted mean of per-cell accuracy over all N^2 cells.
EvalReport overall_accuracy(const SimilarityMatrix& matrix);

struct ModelGroupReport {
  std::vector<Confusion> same_model;   // ranked by error
  std::vector<Confusion> cross_model;  // ranked by error
  double same_model_mean_error = 0;
  double cross_model_mean_error = 0;
  std::size_t same_model_cells = 0;
  std::size_t cross_model_cells = 0;
};

/// Groups every off-diagonal cell by whether the two devices share a
/// model_id and reports the mean error of each group.
ModelGroupReport same_model_report(const EvalReport& report);

std::string report_to_json(const EvalReport& report, const ModelGroupReport& groups);
std::string matrix_to_csv(const SimilarityMatrix& matrix);
SimilarityMatrix matrix_from_json(std::string_view json);

}  // namespace camfp
