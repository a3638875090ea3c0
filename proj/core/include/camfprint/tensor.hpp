#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace camfp {

/// Per-sample activation shape (channels, height, width).
struct Shape3 {
  int channels = 0;
  int height = 1;
  int width = 1;

  std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense NCHW batch. Fully connected activations use height = width = 1.
template <typename T>
struct Tensor {
  int batch = 0;
  Shape3 shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n, Shape3 s) : batch(n), shape(s), data(static_cast<std::size_t>(n) * s.size(), T(0)) {}

  std::size_t sample_size() const { return shape.size(); }
  T* sample(int n) { return data.data() + static_cast<std::size_t>(n) * sample_size(); }
  const T* sample(int n) const { return data.data() + static_cast<std::size_t>(n) * sample_size(); }
  std::span<const T> sample_span(int n) const { return {sample(n), sample_size()}; }
};

}  // namespace camfp
