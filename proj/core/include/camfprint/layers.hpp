#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "camfprint/tensor.hpp"

namespace camfp::nn {

/// Trainable parameter view. `grad` accumulates across backward calls until
/// zero_grad().
template <typename T>
struct Param {
  std::string name;
  std::vector<T>* value = nullptr;
  std::vector<T>* grad = nullptr;
  bool weight_decay = false;
};

/// Serialisable tensor view (parameters plus non-trainable buffers).
template <typename T>
struct StateRef {
  std::string name;
  std::vector<T>* value = nullptr;
};

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual Shape3 output_shape(Shape3 in) const = 0;

  /// Inference pass. Stateless; safe to call concurrently.
  virtual Tensor<T> infer(const Tensor<T>& x) const = 0;
  /// Training pass; caches what backward() needs.
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  /// Accumulates parameter gradients and returns dL/dx (empty when the layer
  /// was told its input gradient is not needed).
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;

  virtual std::vector<Param<T>> params() { return {}; }
  virtual std::vector<StateRef<T>> state() { return {}; }
  virtual void init(std::mt19937_64& /*rng*/) {}
  virtual std::unique_ptr<Layer> clone() const = 0;

  void set_needs_input_grad(bool v) { needs_input_grad_ = v; }

 protected:
  bool needs_input_grad_ = true;

 private:
  std::string name_;
};

/// Stride-1 convolution with zero "same" padding (odd kernel).
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel);

  Shape3 output_shape(Shape3 in) const override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::vector<Param<T>> params() override;
  std::vector<StateRef<T>> state() override;
  void init(std::mt19937_64& rng) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }

  std::vector<T> weight, bias, weight_grad, bias_grad;

 private:
  int in_, out_, k_;
  Tensor<T> input_;
};

/// Per-channel batch normalisation over (N, H, W).
template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  BatchNorm2d(std::string name, int channels, T momentum = T(0.1), T eps = T(1e-5));

  Shape3 output_shape(Shape3 in) const override { return in; }
  Tensor<T> infer(const Tensor<T>& x) const override;
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::vector<Param<T>> params() override;
  std::vector<StateRef<T>> state() override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

  /// When false, forward() normalises with running statistics (used for
  /// gradient checks of the inference-mode function).
  bool use_batch_stats = true;

  std::vector<T> gamma, beta, gamma_grad, beta_grad, running_mean, running_var;

 private:
  int channels_;
  T momentum_, eps_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

enum class Activation { tanh, relu };

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  ActivationLayer(std::string name, Activation kind) : Layer<T>(std::move(name)), kind_(kind) {}

  Shape3 output_shape(Shape3 in) const override { return in; }
  Tensor<T> infer(const Tensor<T>& x) const override;
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ActivationLayer>(*this); }

 private:
  Activation kind_;
  Tensor<T> cache_;  // output for tanh, input for relu
};

/// Max pooling with stride equal to the window. Partial windows at the
/// right/bottom border are kept, so output size is ceil(in / window).
template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(std::string name, int window) : Layer<T>(std::move(name)), window_(window) {}

  Shape3 output_shape(Shape3 in) const override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  Tensor<T> pool(const Tensor<T>& x, std::vector<std::size_t>* argmax) const;

  int window_;
  Shape3 in_shape_;
  int in_batch_ = 0;
  std::vector<std::size_t> argmax_;
};

/// Fully connected layer; flattens its input.
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::string name, int in_features, int out_features);

  Shape3 output_shape(Shape3 in) const override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::vector<Param<T>> params() override;
  std::vector<StateRef<T>> state() override;
  void init(std::mt19937_64& rng) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  /// Row-major (out x in).
  std::vector<T> weight, bias, weight_grad, bias_grad;

 private:
  int in_, out_;
  Tensor<T> input_;
  Shape3 in_shape_;
};

/// Ordered stack of layers with value semantics (deep copy on copy).
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  Shape3 output_shape(Shape3 in) const;
  Tensor<T> infer(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

  std::vector<Param<T>> params();
  std::vector<StateRef<T>> state();
  void init(std::mt19937_64& rng);
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace camfp::nn
