#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "camfprint/common.hpp"
#include "camfprint/data_ingest.hpp"
#include "camfprint/image_io.hpp"
#include "camfprint/layers.hpp"

namespace camfp {

inline constexpr int kSignatureDim = 1024;

/// Pixel preprocessing stored with the weights: RGB / 255 minus a per-channel
/// mean estimated on the training split.
struct Preprocessing {
  std::array<float, 3> channel_mean{0.f, 0.f, 0.f};
};

/// Resizes each image to the network input and converts to NCHW.
template <typename T>
Tensor<T> images_to_tensor(std::span<const RgbImage> images, int height, int width, const Preprocessing& pre);

/// Device-classification CNN:
///   block 1    conv 96x7x7 -> batchnorm -> tanh -> maxpool 3x3
///   block 2,3  conv 64x5x5 -> batchnorm -> tanh -> maxpool 3x3
///   block 4    conv 128x1x1 -> batchnorm -> tanh -> maxpool 3x3
///   block 5    dense 1024, tanh  (signature tap)
///   block 6    dense 200, tanh -> dense num_devices (softmax)
/// Blocks 1-5 form the trunk, block 6 the classification head.
template <typename T>
class SignatureNet {
 public:
  /// Throws ConfigError if num_devices < 2 or the spatial size collapses to
  /// zero before block 5 (the message names the block).
  SignatureNet(int num_devices, int input_height, int input_width, std::uint64_t seed = 0);

  int num_devices() const { return num_devices_; }
  Shape3 input_shape() const { return {3, height_, width_}; }
  /// Spatial shape entering block 5.
  Shape3 trunk_feature_shape() const;

  nn::Sequential<T>& trunk() { return trunk_; }
  const nn::Sequential<T>& trunk() const { return trunk_; }
  nn::Sequential<T>& head() { return head_; }
  const nn::Sequential<T>& head() const { return head_; }

  /// Block-5 activations (batch x 1024), inference mode.
  Tensor<T> signatures(const Tensor<T>& x) const;
  /// Pre-softmax block-6 outputs, inference mode.
  Tensor<T> logits(const Tensor<T>& x) const;
  /// Softmax over devices, (batch x num_devices) row-major.
  std::vector<T> probabilities(const Tensor<T>& x) const;

  /// Training-mode pass returning logits; caches for backward().
  Tensor<T> forward(const Tensor<T>& x);
  void backward(const Tensor<T>& dlogits);
  std::vector<nn::Param<T>> params();
  void zero_grad();

  /// Content hash of blocks 1-5, input size and preprocessing.
  Digest trunk_digest() const;

  Preprocessing preprocessing;

 private:
  int num_devices_;
  int height_, width_;
  nn::Sequential<T> trunk_;
  nn::Sequential<T> head_;
};

/// The truncated network f_sig: image -> 1024-d signature. Immutable once
/// constructed and safe to share across threads.
template <typename T>
class SignatureExtractor {
 public:
  SignatureExtractor(nn::Sequential<T> trunk, Shape3 input, Preprocessing pre);

  const Digest& version() const { return version_; }
  Shape3 input_shape() const { return input_; }
  const Preprocessing& preprocessing() const { return pre_; }

  /// Batch of preprocessed inputs -> (batch x 1024).
  Tensor<T> extract(const Tensor<T>& x) const;
  std::vector<float> extract(const RgbImage& image) const;

 private:
  nn::Sequential<T> trunk_;
  Shape3 input_;
  Preprocessing pre_;
  Digest version_;
};

/// Drops block 6; the extractor carries an identical copy of blocks 1-5.
template <typename T>
SignatureExtractor<T> truncate(const SignatureNet<T>& model);

struct Signature {
  std::vector<float> values;
  std::string image_path;
  std::string device_id;
  Digest extractor_version{};
};

/// Decodes, preprocesses and embeds one image. Throws DataError with the path
/// if the image cannot be decoded.
Signature extract_signature(const SignatureExtractor<float>& f_sig, const ImageRecord& image);

/// Same as calling extract_signature per record, in batches for throughput.
std::vector<Signature> extract_signatures(const SignatureExtractor<float>& f_sig, std::span<const ImageRecord> images,
                                          int batch_size = 16);

/// Phase-I checkpoint: weights, preprocessing, input size and device labels.
struct SignatureCheckpoint {
  SignatureNet<float> net;
  std::vector<std::string> devices;
  int epoch = 0;
};

void save_signature_checkpoint(const std::filesystem::path& path, const SignatureCheckpoint& ckpt);
SignatureCheckpoint load_signature_checkpoint(const std::filesystem::path& path);

}  // namespace camfp
