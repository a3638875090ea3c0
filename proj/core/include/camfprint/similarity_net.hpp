#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "camfprint/common.hpp"
#include "camfprint/layers.hpp"
#include "camfprint/pairs.hpp"
#include "camfprint/phase1_trainer.hpp"

namespace camfp {

struct SimilarityNetSpec {
  int signature_dim = 1024;
  int fc1_units = 2048;
  int fc2_units = 64;

  /// Length of [fc1(s1) | fc1(s2) | s1*s2].
  int fusion_size() const { return 2 * fc1_units + signature_dim; }
  void validate() const;
};

/// Siamese similarity head.
///
///   h_k   = relu(W1 s_k + b1)            k = 1, 2 (one shared fc1)
///   f     = [h_1 | h_2 | s_1 * s_2]
///   z     = relu(W2 f + b2)
///   score = sigmoid(w3 . z + b3)
///
/// Batched entry points take a row-major table of signatures and two index
/// arrays; fc1 runs once per distinct row, which is exact and lets a batch of
/// pairs over few images share work.
template <typename T>
class SimilarityNet {
 public:
  explicit SimilarityNet(SimilarityNetSpec spec = {}, std::uint64_t seed = 0);

  const SimilarityNetSpec& spec() const { return spec_; }

  /// Throws ConfigError when a signature length differs from spec().signature_dim.
  T score(std::span<const T> s1, std::span<const T> s2) const;
  std::vector<T> fusion(std::span<const T> s1, std::span<const T> s2) const;

  /// Scores pairs (table[first[b]], table[second[b]]).
  std::vector<T> score_indexed(std::span<const T> table, std::span<const std::uint32_t> first,
                               std::span<const std::uint32_t> second) const;

  /// Mean binary cross-entropy over the batch; accumulates parameter
  /// gradients. Writes the batch probabilities to `probs` when non-null.
  T accumulate_gradients(std::span<const T> table, std::span<const std::uint32_t> first,
                         std::span<const std::uint32_t> second, std::span<const std::uint8_t> labels,
                         std::vector<T>* probs = nullptr);

  std::vector<nn::Param<T>> params();
  std::vector<nn::StateRef<T>> state();
  void zero_grad();

  /// fc1 parameters seen by branch 0 or 1. Both branches read one tensor.
  std::span<const T> branch_weights(int branch) const;

  Digest digest() const;

  std::vector<T> w1, b1, w2, b2, w3, b3;
  std::vector<T> gw1, gb1, gw2, gb2, gw3, gb3;

 private:
  struct Forward;
  Forward run(std::span<const T> table, std::span<const std::uint32_t> first,
              std::span<const std::uint32_t> second) const;

  SimilarityNetSpec spec_;
};

/// Mean |f(a,b) - f(b,a)| over the given pairs; the head is not symmetric by
/// construction, so this is reported rather than assumed.
template <typename T>
double symmetry_gap(const SimilarityNet<T>& net, std::span<const T> table, std::span<const SignaturePair> pairs);

struct Phase2Config {
  int epochs = 30;
  double learning_rate = 0.005;
  double lr_decay_factor = 0.5;
  int lr_decay_every = 3;
  double momentum = 0.9;
  int batch_size = 128;
  PairSampling pair_sampling = PairSampling::all;
  std::uint64_t seed = 0;

  void validate() const;
  /// Step schedule: lr * factor^floor((epoch - 1) / every), epochs from 1.
  double learning_rate_at(int epoch) const;
};

struct Phase2Result {
  std::vector<EpochLog> log;
};

/// Trains with SGD on binary cross-entropy. Validation loss, accuracy and F1
/// (at score >= 0.5) are logged per epoch when `val_pairs` is non-empty.
template <typename T>
Phase2Result train_phase2(SimilarityNet<T>& model, std::span<const T> table, std::span<const SignaturePair> train_pairs,
                          std::span<const SignaturePair> val_pairs, const Phase2Config& cfg,
                          const std::function<void(const EpochLog&)>& on_epoch = {});

/// Row-major float table of signature values, one row per signature.
std::vector<float> signature_table(std::span<const Signature> signatures);

void save_similarity_checkpoint(const std::filesystem::path& path, const SimilarityNet<float>& net,
                                const Digest& extractor_version);
struct SimilarityCheckpoint {
  SimilarityNet<float> net;
  Digest extractor_version{};
};
SimilarityCheckpoint load_similarity_checkpoint(const std::filesystem::path& path);

/// score(f_sim, s1, s2): rejects signatures from a different extractor.
double score(const SimilarityNet<float>& f_sim, const Digest& trained_on, const Signature& s1, const Signature& s2);

}  // namespace camfp
