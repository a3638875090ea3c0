#include "camfprint/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Core>

#include "camfprint/common.hpp"
#include "reduce.hpp"

namespace camfp::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecC = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void glorot_uniform(std::vector<T>& w, double fan_in, double fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& v : w) v = static_cast<T>(u(rng));
}

// cols is (C*k*k) x (H*W), row-major; zero padding of k/2.
template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, T* cols) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * hw;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(width, width + pad - kx);
        for (int y = 0; y < height; ++y) {
          T* out = dst + static_cast<std::size_t>(y) * width;
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= height || x_lo >= x_hi) {
            std::fill(out, out + width, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * height + iy) * width;
          std::fill(out, out + x_lo, T(0));
          std::memcpy(out + x_lo, src + x_lo + kx - pad, sizeof(T) * static_cast<std::size_t>(x_hi - x_lo));
          std::fill(out + x_hi, out + width, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int channels, int height, int width, int k, T* dx) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * hw;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(width, width + pad - kx);
        for (int y = 0; y < height; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= height) continue;
          const T* in = src + static_cast<std::size_t>(y) * width;
          T* dst = dx + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int xo = x_lo; xo < x_hi; ++xo) dst[xo + kx - pad] += in[xo];
        }
      }
    }
  }
}

template <typename T>
void check_input(const std::string& layer, const Tensor<T>& x, Shape3 expected_channels_only) {
  if (x.shape.channels != expected_channels_only.channels) {
    throw ConfigError(layer + ": expected " + std::to_string(expected_channels_only.channels) + " input channels, got " +
                      std::to_string(x.shape.channels));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel)
    : Layer<T>(std::move(name)), in_(in_channels), out_(out_channels), k_(kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError(this->name() + ": kernel must be odd and positive");
  const std::size_t kk = static_cast<std::size_t>(in_) * k_ * k_;
  weight.assign(static_cast<std::size_t>(out_) * kk, T(0));
  weight_grad.assign(weight.size(), T(0));
  bias.assign(static_cast<std::size_t>(out_), T(0));
  bias_grad.assign(bias.size(), T(0));
}

template <typename T>
Shape3 Conv2d<T>::output_shape(Shape3 in) const {
  return {out_, in.height, in.width};
}

template <typename T>
Tensor<T> Conv2d<T>::infer(const Tensor<T>& x) const {
  check_input(this->name(), x, Shape3{in_, 0, 0});
  const int H = x.shape.height, W = x.shape.width;
  const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
  const Eigen::Index K = static_cast<Eigen::Index>(in_) * k_ * k_;
  Tensor<T> y(x.batch, output_shape(x.shape));
  Eigen::Map<const MatR<T>> w(weight.data(), out_, K);
  Eigen::Map<const VecC<T>> b(bias.data(), out_);
  std::vector<T> cols;
  if (k_ > 1) cols.resize(static_cast<std::size_t>(K * HW));
  for (int n = 0; n < x.batch; ++n) {
    const T* c_ptr = x.sample(n);
    if (k_ > 1) {
      im2col(x.sample(n), in_, H, W, k_, cols.data());
      c_ptr = cols.data();
    }
    Eigen::Map<const MatR<T>> c(c_ptr, K, HW);
    Eigen::Map<MatR<T>> out(y.sample(n), out_, HW);
    out.noalias() = w * c;
    out.colwise() += b;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  input_ = x;
  return infer(x);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  const Tensor<T>& x = input_;
  const int H = x.shape.height, W = x.shape.width;
  const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
  const Eigen::Index K = static_cast<Eigen::Index>(in_) * k_ * k_;
  Eigen::Map<const MatR<T>> w(weight.data(), out_, K);
  Eigen::Map<MatR<T>> dw(weight_grad.data(), out_, K);
  Eigen::Map<VecC<T>> db(bias_grad.data(), out_);
  Tensor<T> dx;
  if (this->needs_input_grad_) dx = Tensor<T>(x.batch, x.shape);
  std::vector<T> cols;
  std::vector<T> dcols;
  if (k_ > 1) cols.resize(static_cast<std::size_t>(K * HW));
  if (k_ > 1 && this->needs_input_grad_) dcols.resize(cols.size());
  for (int n = 0; n < x.batch; ++n) {
    const T* c_ptr = x.sample(n);
    if (k_ > 1) {
      im2col(x.sample(n), in_, H, W, k_, cols.data());
      c_ptr = cols.data();
    }
    Eigen::Map<const MatR<T>> c(c_ptr, K, HW);
    Eigen::Map<const MatR<T>> g(dy.sample(n), out_, HW);
    dw.noalias() += g * c.transpose();
    detail::add_row_sums(g, db);
    if (!this->needs_input_grad_) continue;
    if (k_ > 1) {
      Eigen::Map<MatR<T>> dc(dcols.data(), K, HW);
      dc.noalias() = w.transpose() * g;
      col2im_add(dcols.data(), in_, H, W, k_, dx.sample(n));
    } else {
      Eigen::Map<MatR<T>> dc(dx.sample(n), K, HW);
      dc.noalias() = w.transpose() * g;
    }
  }
  return dx;
}

template <typename T>
std::vector<Param<T>> Conv2d<T>::params() {
  return {{this->name() + ".weight", &weight, &weight_grad, true}, {this->name() + ".bias", &bias, &bias_grad, false}};
}

template <typename T>
std::vector<StateRef<T>> Conv2d<T>::state() {
  return {{this->name() + ".weight", &weight}, {this->name() + ".bias", &bias}};
}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng) {
  glorot_uniform(weight, static_cast<double>(in_) * k_ * k_, static_cast<double>(out_) * k_ * k_, rng);
  std::fill(bias.begin(), bias.end(), T(0));
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, int channels, T momentum, T eps)
    : Layer<T>(std::move(name)),
      gamma(static_cast<std::size_t>(channels), T(1)),
      beta(static_cast<std::size_t>(channels), T(0)),
      gamma_grad(static_cast<std::size_t>(channels), T(0)),
      beta_grad(static_cast<std::size_t>(channels), T(0)),
      running_mean(static_cast<std::size_t>(channels), T(0)),
      running_var(static_cast<std::size_t>(channels), T(1)),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::infer(const Tensor<T>& x) const {
  check_input(this->name(), x, Shape3{channels_, 0, 0});
  Tensor<T> y(x.batch, x.shape);
  const std::size_t hw = static_cast<std::size_t>(x.shape.height) * x.shape.width;
  for (int n = 0; n < x.batch; ++n) {
    for (int c = 0; c < channels_; ++c) {
      const T scale = gamma[c] / std::sqrt(running_var[c] + eps_);
      const T shift = beta[c] - running_mean[c] * scale;
      const T* in = x.sample(n) + c * hw;
      T* out = y.sample(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) out[i] = in[i] * scale + shift;
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x) {
  check_input(this->name(), x, Shape3{channels_, 0, 0});
  const std::size_t hw = static_cast<std::size_t>(x.shape.height) * x.shape.width;
  const double m = static_cast<double>(x.batch) * static_cast<double>(hw);
  xhat_ = Tensor<T>(x.batch, x.shape);
  inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
  Tensor<T> y(x.batch, x.shape);
  for (int c = 0; c < channels_; ++c) {
    T mean, inv_std;
    if (use_batch_stats) {
      double sum = 0.0;
      for (int n = 0; n < x.batch; ++n) {
        const T* in = x.sample(n) + c * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += in[i];
      }
      const double mu = sum / m;
      double sq = 0.0;
      for (int n = 0; n < x.batch; ++n) {
        const T* in = x.sample(n) + c * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (in[i] - mu) * (in[i] - mu);
      }
      const double var = sq / m;
      mean = static_cast<T>(mu);
      inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
      const double unbiased = m > 1 ? var * m / (m - 1) : var;
      running_mean[c] = (T(1) - momentum_) * running_mean[c] + momentum_ * mean;
      running_var[c] = (T(1) - momentum_) * running_var[c] + momentum_ * static_cast<T>(unbiased);
    } else {
      mean = running_mean[c];
      inv_std = T(1) / std::sqrt(running_var[c] + eps_);
    }
    inv_std_[c] = inv_std;
    for (int n = 0; n < x.batch; ++n) {
      const T* in = x.sample(n) + c * hw;
      T* xh = xhat_.sample(n) + c * hw;
      T* out = y.sample(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (in[i] - mean) * inv_std;
        out[i] = gamma[c] * xh[i] + beta[c];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  const std::size_t hw = static_cast<std::size_t>(dy.shape.height) * dy.shape.width;
  const T m = static_cast<T>(static_cast<double>(dy.batch) * static_cast<double>(hw));
  Tensor<T> dx;
  if (this->needs_input_grad_) dx = Tensor<T>(dy.batch, dy.shape);
  for (int c = 0; c < channels_; ++c) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < dy.batch; ++n) {
      const T* g = dy.sample(n) + c * hw;
      const T* xh = xhat_.sample(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * xh[i];
      }
    }
    gamma_grad[c] += sum_dy_xhat;
    beta_grad[c] += sum_dy;
    if (!this->needs_input_grad_) continue;
    const T k = gamma[c] * inv_std_[c];
    for (int n = 0; n < dy.batch; ++n) {
      const T* g = dy.sample(n) + c * hw;
      const T* xh = xhat_.sample(n) + c * hw;
      T* out = dx.sample(n) + c * hw;
      if (use_batch_stats) {
        for (std::size_t i = 0; i < hw; ++i) out[i] = k / m * (m * g[i] - sum_dy - xh[i] * sum_dy_xhat);
      } else {
        for (std::size_t i = 0; i < hw; ++i) out[i] = k * g[i];
      }
    }
  }
  return dx;
}

template <typename T>
std::vector<Param<T>> BatchNorm2d<T>::params() {
  return {{this->name() + ".gamma", &gamma, &gamma_grad, false}, {this->name() + ".beta", &beta, &beta_grad, false}};
}

template <typename T>
std::vector<StateRef<T>> BatchNorm2d<T>::state() {
  return {{this->name() + ".gamma", &gamma},
          {this->name() + ".beta", &beta},
          {this->name() + ".running_mean", &running_mean},
          {this->name() + ".running_var", &running_var}};
}

// ---------------------------------------------------------------- activations

template <typename T>
Tensor<T> ActivationLayer<T>::infer(const Tensor<T>& x) const {
  Tensor<T> y = x;
  if (kind_ == Activation::tanh) {
    for (auto& v : y.data) v = std::tanh(v);
  } else {
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
  }
  return y;
}

template <typename T>
Tensor<T> ActivationLayer<T>::forward(const Tensor<T>& x) {
  Tensor<T> y = infer(x);
  cache_ = kind_ == Activation::tanh ? y : x;
  return y;
}

template <typename T>
Tensor<T> ActivationLayer<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  if (kind_ == Activation::tanh) {
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= T(1) - cache_.data[i] * cache_.data[i];
  } else {
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
      if (!(cache_.data[i] > T(0))) dx.data[i] = T(0);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

template <typename T>
Shape3 MaxPool2d<T>::output_shape(Shape3 in) const {
  return {in.channels, (in.height + window_ - 1) / window_, (in.width + window_ - 1) / window_};
}

template <typename T>
Tensor<T> MaxPool2d<T>::pool(const Tensor<T>& x, std::vector<std::size_t>* argmax) const {
  const Shape3 os = output_shape(x.shape);
  Tensor<T> y(x.batch, os);
  if (argmax) argmax->assign(y.data.size(), 0);
  const int H = x.shape.height, W = x.shape.width;
  std::size_t o = 0;
  for (int n = 0; n < x.batch; ++n) {
    for (int c = 0; c < x.shape.channels; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * x.shape.channels + c) * H * W;
      for (int oy = 0; oy < os.height; ++oy) {
        const int y0 = oy * window_, y1 = std::min(H, y0 + window_);
        for (int ox = 0; ox < os.width; ++ox, ++o) {
          const int x0 = ox * window_, x1 = std::min(W, x0 + window_);
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = base + static_cast<std::size_t>(y0) * W + x0;
          for (int yy = y0; yy < y1; ++yy) {
            for (int xx = x0; xx < x1; ++xx) {
              const std::size_t i = base + static_cast<std::size_t>(yy) * W + xx;
              if (x.data[i] > best) {
                best = x.data[i];
                best_i = i;
              }
            }
          }
          y.data[o] = best;
          if (argmax) (*argmax)[o] = best_i;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::infer(const Tensor<T>& x) const {
  return pool(x, nullptr);
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape;
  in_batch_ = x.batch;
  return pool(x, &argmax_);
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx(in_batch_, in_shape_);
  for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax_[o]] += dy.data[o];
  return dx;
}

// ---------------------------------------------------------------- Dense

template <typename T>
Dense<T>::Dense(std::string name, int in_features, int out_features)
    : Layer<T>(std::move(name)), in_(in_features), out_(out_features) {
  weight.assign(static_cast<std::size_t>(out_) * in_, T(0));
  weight_grad.assign(weight.size(), T(0));
  bias.assign(static_cast<std::size_t>(out_), T(0));
  bias_grad.assign(bias.size(), T(0));
}

template <typename T>
Shape3 Dense<T>::output_shape(Shape3 in) const {
  if (static_cast<int>(in.size()) != in_) {
    throw ConfigError(this->name() + ": expected " + std::to_string(in_) + " input features, got " +
                      std::to_string(in.size()));
  }
  return {out_, 1, 1};
}

template <typename T>
Tensor<T> Dense<T>::infer(const Tensor<T>& x) const {
  Tensor<T> y(x.batch, output_shape(x.shape));
  Eigen::Map<const MatR<T>> in(x.data.data(), x.batch, in_);
  Eigen::Map<const MatR<T>> w(weight.data(), out_, in_);
  Eigen::Map<const VecC<T>> b(bias.data(), out_);
  Eigen::Map<MatR<T>> out(y.data.data(), x.batch, out_);
  out.noalias() = in * w.transpose();
  out.rowwise() += b.transpose();
  return y;
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x) {
  input_ = x;
  in_shape_ = x.shape;
  return infer(x);
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& dy) {
  Eigen::Map<const MatR<T>> g(dy.data.data(), dy.batch, out_);
  Eigen::Map<const MatR<T>> in(input_.data.data(), input_.batch, in_);
  Eigen::Map<MatR<T>> dw(weight_grad.data(), out_, in_);
  Eigen::Map<VecC<T>> db(bias_grad.data(), out_);
  dw.noalias() += g.transpose() * in;
  detail::add_col_sums(g, db);
  Tensor<T> dx;
  if (!this->needs_input_grad_) return dx;
  dx = Tensor<T>(dy.batch, in_shape_);
  Eigen::Map<const MatR<T>> w(weight.data(), out_, in_);
  Eigen::Map<MatR<T>> out(dx.data.data(), dy.batch, in_);
  out.noalias() = g * w;
  return dx;
}

template <typename T>
std::vector<Param<T>> Dense<T>::params() {
  return {{this->name() + ".weight", &weight, &weight_grad, true}, {this->name() + ".bias", &bias, &bias_grad, false}};
}

template <typename T>
std::vector<StateRef<T>> Dense<T>::state() {
  return {{this->name() + ".weight", &weight}, {this->name() + ".bias", &bias}};
}

template <typename T>
void Dense<T>::init(std::mt19937_64& rng) {
  glorot_uniform(weight, in_, out_, rng);
  std::fill(bias.begin(), bias.end(), T(0));
}

// ---------------------------------------------------------------- Sequential

template <typename T>
Sequential<T>::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Sequential<T>& Sequential<T>::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential tmp(other);
    layers_ = std::move(tmp.layers_);
  }
  return *this;
}

template <typename T>
Shape3 Sequential<T>::output_shape(Shape3 in) const {
  for (const auto& l : layers_) in = l->output_shape(in);
  return in;
}

template <typename T>
Tensor<T> Sequential<T>::infer(const Tensor<T>& x) const {
  if (layers_.empty()) return x;
  Tensor<T> h = layers_.front()->infer(x);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->infer(h);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) {
  if (layers_.empty()) return x;
  Tensor<T> h = layers_.front()->forward(x);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& dy) {
  Tensor<T> g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

template <typename T>
std::vector<Param<T>> Sequential<T>::params() {
  std::vector<Param<T>> out;
  for (auto& l : layers_) {
    auto p = l->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
std::vector<StateRef<T>> Sequential<T>::state() {
  std::vector<StateRef<T>> out;
  for (auto& l : layers_) {
    auto s = l->state();
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

template <typename T>
void Sequential<T>::init(std::mt19937_64& rng) {
  for (auto& l : layers_) l->init(rng);
}

template <typename T>
void Sequential<T>::zero_grad() {
  for (auto& p : params()) std::fill(p.grad->begin(), p.grad->end(), T(0));
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ActivationLayer<float>;
template class ActivationLayer<double>;
template class MaxPool2d<float>;
template class MaxPool2d<double>;
template class Dense<float>;
template class Dense<double>;
template class Sequential<float>;
template class Sequential<double>;

}  // namespace camfp::nn
