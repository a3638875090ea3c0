#include "camfprint/phase1_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "camfprint/optim.hpp"

namespace camfp {

void Phase1Config::validate() const {
  if (epochs < 1) throw ConfigError("phase1: epochs must be >= 1");
  if (stop_epoch < 1 || stop_epoch > epochs) throw ConfigError("phase1: stop_epoch must be in [1, epochs]");
  if (!(learning_rate > 0)) throw ConfigError("phase1: learning_rate must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("phase1: momentum must be in [0, 1)");
  if (weight_decay < 0) throw ConfigError("phase1: weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("phase1: batch_size must be >= 1");
}

std::string epoch_log_jsonl(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["train_acc"] = e.train_acc;
    j["val_acc"] = e.val_acc;
    if (e.val_f1 >= 0) j["val_f1"] = e.val_f1;
    j["learning_rate"] = e.learning_rate;
    out += j.dump() + "\n";
  }
  return out;
}

LabeledImages load_split(const Manifest& manifest, Split split, int height, int width) {
  LabeledImages out;
  for (const auto i : manifest.indices(split)) {
    const auto& r = manifest.records[i];
    out.images.push_back(resize_image(load_rgb(r.path), width, height));
    out.labels.push_back(manifest.device_index(r.device_id));
  }
  return out;
}

Preprocessing estimate_preprocessing(const std::vector<RgbImage>& images) {
  std::array<double, 3> sum{0, 0, 0};
  double count = 0;
  for (const auto& img : images) {
    for (std::size_t p = 0; p < img.pixels.size(); p += 3) {
      for (int c = 0; c < 3; ++c) sum[c] += img.pixels[p + c];
    }
    count += static_cast<double>(img.pixels.size() / 3);
  }
  Preprocessing pre;
  if (count > 0) {
    for (int c = 0; c < 3; ++c) pre.channel_mean[c] = static_cast<float>(sum[c] / count / 255.0);
  }
  return pre;
}

namespace {

template <typename T>
Tensor<T> gather(const LabeledImages& set, std::span<const std::size_t> idx, Shape3 input, const Preprocessing& pre,
                 std::vector<int>& labels) {
  std::vector<RgbImage> batch;
  batch.reserve(idx.size());
  labels.clear();
  for (auto i : idx) {
    batch.push_back(set.images[i]);
    labels.push_back(set.labels[i]);
  }
  return images_to_tensor<T>(batch, input.height, input.width, pre);
}

int count_correct(const std::vector<double>& logits, int classes, const std::vector<int>& labels) {
  int correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto* row = logits.data() + r * classes;
    const int arg = static_cast<int>(std::max_element(row, row + classes) - row);
    correct += arg == labels[r];
  }
  return correct;
}

}  // namespace

template <typename T>
Phase1Result<T> train_phase1(SignatureNet<T>& model, const LabeledImages& train, const LabeledImages& val,
                             const Phase1Config& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (train.images.empty()) throw ConfigError("phase1: empty training split");
  for (int label : train.labels) {
    if (label < 0 || label >= model.num_devices()) throw ConfigError("phase1: label out of range");
  }

  model.preprocessing = estimate_preprocessing(train.images);
  nn::Sgd<T> opt(model.params(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  const int k = model.num_devices();
  const Shape3 input = model.input_shape();

  std::optional<SignatureNet<T>> snapshot;
  std::vector<EpochLog> log;
  std::vector<std::size_t> order(train.images.size());
  std::vector<int> labels;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "phase1/shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0;
    int correct = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto idx = std::span<const std::size_t>(order).subspan(start, end - start);
      const Tensor<T> x = gather<T>(train, idx, input, model.preprocessing, labels);

      opt.zero_grad();
      Tensor<T> logits = model.forward(x);
      Tensor<T> dlogits(logits.batch, logits.shape);
      const T loss = nn::softmax_cross_entropy<T>(logits.data, k, labels, dlogits.data);
      if (!std::isfinite(static_cast<double>(loss))) {
        throw TrainingError("phase1: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch_index));
      }
      model.backward(dlogits);
      opt.step();

      loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());
      correct += count_correct(std::vector<double>(logits.data.begin(), logits.data.end()), k, labels);
    }

    EpochLog e;
    e.epoch = epoch;
    e.learning_rate = cfg.learning_rate;
    e.train_loss = loss_sum / static_cast<double>(order.size());
    e.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val.images.empty()) {
      double vloss = 0;
      int vcorrect = 0;
      std::vector<std::size_t> all(val.images.size());
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(all.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const auto idx = std::span<const std::size_t>(all).subspan(start, end - start);
        const Tensor<T> x = gather<T>(val, idx, input, model.preprocessing, labels);
        const Tensor<T> logits = model.logits(x);
        std::vector<T> scratch(logits.data.size());
        vloss += static_cast<double>(nn::softmax_cross_entropy<T>(logits.data, k, labels, scratch)) *
                 static_cast<double>(idx.size());
        vcorrect += count_correct(std::vector<double>(logits.data.begin(), logits.data.end()), k, labels);
      }
      e.val_loss = vloss / static_cast<double>(all.size());
      e.val_acc = static_cast<double>(vcorrect) / static_cast<double>(all.size());
    }
    log.push_back(e);
    if (on_epoch) on_epoch(e);
    if (epoch == cfg.stop_epoch) snapshot = model;
  }
  return {std::move(*snapshot), std::move(log)};
}

template Phase1Result<float> train_phase1(SignatureNet<float>&, const LabeledImages&, const LabeledImages&,
                                          const Phase1Config&, const std::function<void(const EpochLog&)>&);
template Phase1Result<double> train_phase1(SignatureNet<double>&, const LabeledImages&, const LabeledImages&,
                                           const Phase1Config&, const std::function<void(const EpochLog&)>&);

}  // namespace camfp
