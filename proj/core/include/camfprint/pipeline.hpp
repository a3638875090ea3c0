#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "camfprint/data_ingest.hpp"
#include "camfprint/evaluation.hpp"
#include "camfprint/phase1_trainer.hpp"
#include "camfprint/similarity_net.hpp"
#include "camfprint/threshold.hpp"

namespace camfp {

struct IngestSettings {
  /// Dresden image root; empty selects the synthetic generator.
  std::string dresden_root;
  SynthConfig synthetic;
  std::size_t min_images = 2;
  double train_frac = 0.7;
  double val_frac = 0.15;
};

struct EvalSettings {
  int n_pairs_per_cell = 100;
  std::vector<double> grid = default_threshold_grid();
  int workers = 1;
  /// evaluate fails when overall accuracy is below this.
  double min_accuracy = 0.0;
};

/// Everything needed to re-run an experiment. Every stage seed is derived
/// from `seed`.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "camfprint-out";
  /// Defaults to <output_dir>/manifest.json.
  std::string manifest_path;
  /// 0 = decided at ingest: the synthetic image size, or 256 for Dresden.
  int input_height = 0;
  int input_width = 0;
  IngestSettings ingest;
  Phase1Config phase1;
  SimilarityNetSpec similarity;
  Phase2Config phase2;
  EvalSettings eval;

  void validate() const;
};

std::string config_to_json(const ExperimentConfig& cfg);
/// Keys absent from `json` keep the values already in `base`.
ExperimentConfig config_from_json(std::string_view json, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Fixed artifact names under output_dir.
struct ArtifactPaths {
  explicit ArtifactPaths(const ExperimentConfig& cfg);

  std::filesystem::path root;
  std::filesystem::path config;
  std::filesystem::path manifest;
  std::filesystem::path images;  // synthetic corpus
  std::filesystem::path phase1_ckpt;
  std::filesystem::path phase1_log;
  std::filesystem::path store;
  std::filesystem::path pairs;
  std::filesystem::path val_pairs;
  std::filesystem::path phase2_ckpt;
  std::filesystem::path phase2_log;
  std::filesystem::path threshold;
  std::filesystem::path eval_dir;
  std::filesystem::path report;
  std::filesystem::path matrix_csv;
  std::filesystem::path heatmap;
};

struct IngestSummary {
  Manifest manifest;
  std::size_t skipped_unparseable = 0;
  std::size_t skipped_undecodable = 0;
  std::size_t devices_dropped = 0;
};

struct Phase1Summary {
  std::vector<EpochLog> log;
  int epoch = 0;
  Digest extractor_version{};
};

struct ExtractSummary {
  std::size_t extracted = 0;
  std::size_t already_stored = 0;
  Digest extractor_version{};
};

struct Phase2Summary {
  std::vector<EpochLog> log;
  std::size_t train_pairs = 0;
  std::size_t val_pairs = 0;
  Threshold threshold;
  /// Mean |f(a,b) - f(b,a)| over the validation pairs.
  double symmetry_gap = 0;
  std::optional<ExtractSummary> extraction;  // set when signatures were missing
};

struct MatchResult {
  double score = 0;
  double eta = 0;
  bool same = false;
};

struct EvalOutcome {
  EvalReport report;
  ModelGroupReport groups;
};

/// Runs the stages against the artifacts of one output directory. A stage
/// whose output already exists refuses to run unless `force` is set; a stage
/// whose input is missing throws ConfigError naming the command to run.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, bool force = false, std::ostream* log = nullptr);

  const ExperimentConfig& config() const { return cfg_; }
  const ArtifactPaths& paths() const { return paths_; }

  IngestSummary ingest();
  Phase1Summary train_phase1();
  /// Embeds every manifest record not yet in the store under the current
  /// phase-I extractor.
  ExtractSummary extract();
  /// Extracts first if any train/val signature is missing.
  Phase2Summary train_phase2();
  MatchResult match(const std::filesystem::path& image_a, const std::filesystem::path& image_b) const;
  EvalOutcome evaluate();
  /// Re-renders the heatmap from the saved report.
  void plot(const std::filesystem::path& out) const;

  /// Writes the effective configuration to <output_dir>/config.json.
  void save_config() const;

 private:
  void guard_output(const std::filesystem::path& artifact) const;
  void require(const std::filesystem::path& artifact, const char* producer) const;
  Manifest manifest() const;
  std::string store_key(const std::string& path) const;
  void say(const std::string& line) const;

  ExperimentConfig cfg_;
  ArtifactPaths paths_;
  bool force_;
  std::ostream* log_;
};

}  // namespace camfp
