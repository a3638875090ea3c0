#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "camfprint/data_ingest.hpp"
#include "camfprint/signature_net.hpp"

namespace camfp {

struct Phase1Config {
  int epochs = 15;
  /// Epoch whose end-of-epoch weights are returned.
  int stop_epoch = 5;
  double learning_rate = 0.001;
  double momentum = 0.95;
  double weight_decay = 0.0005;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double train_acc = 0;
  double val_acc = 0;
  /// Phase II only; negative when not measured.
  double val_f1 = -1;
  double learning_rate = 0;
};

/// {epoch, train_loss, val_loss, train_acc, val_acc[, val_f1]} per line.
std::string epoch_log_jsonl(const std::vector<EpochLog>& log);

/// Images already resized to the network input, with device-index labels.
struct LabeledImages {
  std::vector<RgbImage> images;
  std::vector<int> labels;
};

/// Loads the records of one split, resized to height x width. Labels are
/// indices into manifest.devices.
LabeledImages load_split(const Manifest& manifest, Split split, int height, int width);

template <typename T>
struct Phase1Result {
  SignatureNet<T> weights;  // snapshot at stop_epoch
  std::vector<EpochLog> log;
};

/// Trains `model` in place for cfg.epochs epochs of SGD on categorical
/// cross-entropy and returns the snapshot taken at the end of
/// cfg.stop_epoch. Preprocessing means are estimated from `train` first.
/// Throws TrainingError on a non-finite loss.
template <typename T>
Phase1Result<T> train_phase1(SignatureNet<T>& model, const LabeledImages& train, const LabeledImages& val,
                             const Phase1Config& cfg,
                             const std::function<void(const EpochLog&)>& on_epoch = {});

Preprocessing estimate_preprocessing(const std::vector<RgbImage>& images);

}  // namespace camfp
