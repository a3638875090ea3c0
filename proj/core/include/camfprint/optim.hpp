#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "camfprint/layers.hpp"

namespace camfp::nn {

/// SGD with classical momentum and L2 weight decay on weight tensors:
///   v <- momentum * v - lr * (g + decay * w);  w <- w + v
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Param<T>> params, double learning_rate, double momentum = 0.0, double weight_decay = 0.0)
      : params_(std::move(params)), lr_(learning_rate), momentum_(momentum), decay_(weight_decay) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.value->size(), T(0));
  }

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

  void step() {
    const T lr = static_cast<T>(lr_), mu = static_cast<T>(momentum_), wd = static_cast<T>(decay_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& w = *params_[i].value;
      const auto& g = *params_[i].grad;
      auto& v = velocity_[i];
      const T d = params_[i].weight_decay ? wd : T(0);
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = mu * v[k] - lr * (g[k] + d * w[k]);
        w[k] += v[k];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad->begin(), p.grad->end(), T(0));
  }

 private:
  std::vector<Param<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double lr_, momentum_, decay_;
};

/// Numerically stable softmax over each row of a (batch x classes) block.
template <typename T>
void softmax_rows(std::span<const T> logits, int classes, std::span<T> out) {
  const std::size_t rows = logits.size() / static_cast<std::size_t>(classes);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * classes;
    T* p = out.data() + r * classes;
    const T zmax = *std::max_element(z, z + classes);
    T sum = 0;
    for (int c = 0; c < classes; ++c) {
      p[c] = std::exp(z[c] - zmax);
      sum += p[c];
    }
    for (int c = 0; c < classes; ++c) p[c] /= sum;
  }
}

/// Mean categorical cross-entropy of softmax(logits); writes dL/dlogits.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, int classes, std::span<const int> labels, std::span<T> dlogits) {
  const std::size_t rows = labels.size();
  softmax_rows<T>(logits, classes, dlogits);
  T loss = 0;
  const T inv = T(1) / static_cast<T>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T* p = dlogits.data() + r * classes;
    const int y = labels[r];
    loss -= std::log(std::max(p[y], std::numeric_limits<T>::min()));
    p[y] -= T(1);
    for (int c = 0; c < classes; ++c) p[c] *= inv;
  }
  return loss * inv;
}

}  // namespace camfp::nn
