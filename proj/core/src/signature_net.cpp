#include "camfprint/signature_net.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "camfprint/checkpoint.hpp"

namespace camfp {

namespace {

template <typename T>
Digest digest_trunk(const nn::Sequential<T>& trunk, Shape3 input, const Preprocessing& pre) {
  // state() only hands out views; nothing is modified.
  auto& mutable_trunk = const_cast<nn::Sequential<T>&>(trunk);
  Hasher h;
  h.update("camfprint.f_sig.v1");
  h.update_pod(static_cast<std::int32_t>(input.height));
  h.update_pod(static_cast<std::int32_t>(input.width));
  for (float m : pre.channel_mean) h.update_pod(m);
  for (const auto& s : mutable_trunk.state()) {
    h.update(s.name);
    h.update_pod(static_cast<std::uint64_t>(s.value->size()));
    for (T v : *s.value) h.update_pod(static_cast<float>(v));
  }
  return h.finish();
}

}  // namespace

template <typename T>
Tensor<T> images_to_tensor(std::span<const RgbImage> images, int height, int width, const Preprocessing& pre) {
  Tensor<T> x(static_cast<int>(images.size()), Shape3{3, height, width});
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RgbImage sized = resize_image(images[n], width, height);
    T* dst = x.sample(static_cast<int>(n));
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) {
        dst[c * plane + p] = static_cast<T>(sized.pixels[p * 3 + c] / 255.0f - pre.channel_mean[c]);
      }
    }
  }
  return x;
}

template <typename T>
SignatureNet<T>::SignatureNet(int num_devices, int input_height, int input_width, std::uint64_t seed)
    : num_devices_(num_devices), height_(input_height), width_(input_width) {
  if (num_devices < 2) throw ConfigError("signature net: num_devices must be >= 2");

  struct ConvBlock {
    int filters, kernel;
  };
  const ConvBlock blocks[4] = {{96, 7}, {64, 5}, {64, 5}, {128, 1}};
  Shape3 shape{3, input_height, input_width};
  for (int b = 0; b < 4; ++b) {
    const std::string tag = "block" + std::to_string(b + 1);
    if (shape.height < 1 || shape.width < 1) {
      throw ConfigError("signature net: input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                        " collapses to zero spatial size at block " + std::to_string(b + 1));
    }
    auto& conv = trunk_.template add<nn::Conv2d<T>>(tag + ".conv", shape.channels, blocks[b].filters, blocks[b].kernel);
    if (b == 0) conv.set_needs_input_grad(false);
    trunk_.template add<nn::BatchNorm2d<T>>(tag + ".bn", blocks[b].filters);
    trunk_.template add<nn::ActivationLayer<T>>(tag + ".tanh", nn::Activation::tanh);
    trunk_.template add<nn::MaxPool2d<T>>(tag + ".pool", 3);
    shape = trunk_.output_shape(Shape3{3, input_height, input_width});
  }
  if (shape.height < 1 || shape.width < 1) {
    throw ConfigError("signature net: input collapses to zero spatial size at block 5");
  }
  trunk_.template add<nn::Dense<T>>("block5.signature", static_cast<int>(shape.size()), kSignatureDim);
  trunk_.template add<nn::ActivationLayer<T>>("block5.tanh", nn::Activation::tanh);

  head_.template add<nn::Dense<T>>("block6.dense", kSignatureDim, 200);
  head_.template add<nn::ActivationLayer<T>>("block6.tanh", nn::Activation::tanh);
  head_.template add<nn::Dense<T>>("block6.logits", 200, num_devices);

  std::mt19937_64 rng(derive_seed(seed, "signature_net/init"));
  trunk_.init(rng);
  head_.init(rng);
}

template <typename T>
Shape3 SignatureNet<T>::trunk_feature_shape() const {
  Shape3 s = input_shape();
  for (std::size_t i = 0; i + 2 < trunk_.size(); ++i) s = trunk_.layer(i).output_shape(s);
  return s;
}

template <typename T>
Tensor<T> SignatureNet<T>::signatures(const Tensor<T>& x) const {
  return trunk_.infer(x);
}

template <typename T>
Tensor<T> SignatureNet<T>::logits(const Tensor<T>& x) const {
  return head_.infer(trunk_.infer(x));
}

template <typename T>
std::vector<T> SignatureNet<T>::probabilities(const Tensor<T>& x) const {
  const auto z = logits(x);
  std::vector<T> p(z.data.size());
  const int k = num_devices_;
  for (int n = 0; n < z.batch; ++n) {
    const T* row = z.sample(n);
    T zmax = row[0];
    for (int c = 1; c < k; ++c) zmax = std::max(zmax, row[c]);
    T sum = 0;
    for (int c = 0; c < k; ++c) sum += (p[static_cast<std::size_t>(n) * k + c] = std::exp(row[c] - zmax));
    for (int c = 0; c < k; ++c) p[static_cast<std::size_t>(n) * k + c] /= sum;
  }
  return p;
}

template <typename T>
Tensor<T> SignatureNet<T>::forward(const Tensor<T>& x) {
  return head_.forward(trunk_.forward(x));
}

template <typename T>
void SignatureNet<T>::backward(const Tensor<T>& dlogits) {
  trunk_.backward(head_.backward(dlogits));
}

template <typename T>
std::vector<nn::Param<T>> SignatureNet<T>::params() {
  auto p = trunk_.params();
  auto h = head_.params();
  p.insert(p.end(), h.begin(), h.end());
  return p;
}

template <typename T>
void SignatureNet<T>::zero_grad() {
  trunk_.zero_grad();
  head_.zero_grad();
}

template <typename T>
Digest SignatureNet<T>::trunk_digest() const {
  return digest_trunk(trunk_, input_shape(), preprocessing);
}

template <typename T>
SignatureExtractor<T>::SignatureExtractor(nn::Sequential<T> trunk, Shape3 input, Preprocessing pre)
    : trunk_(std::move(trunk)), input_(input), pre_(pre), version_(digest_trunk(trunk_, input_, pre_)) {}

template <typename T>
Tensor<T> SignatureExtractor<T>::extract(const Tensor<T>& x) const {
  if (x.shape != input_) throw ConfigError("extractor: input shape does not match the network input");
  return trunk_.infer(x);
}

template <typename T>
std::vector<float> SignatureExtractor<T>::extract(const RgbImage& image) const {
  const auto x = images_to_tensor<T>(std::span<const RgbImage>(&image, 1), input_.height, input_.width, pre_);
  const auto s = trunk_.infer(x);
  return std::vector<float>(s.data.begin(), s.data.end());
}

template <typename T>
SignatureExtractor<T> truncate(const SignatureNet<T>& model) {
  return SignatureExtractor<T>(model.trunk(), model.input_shape(), model.preprocessing);
}

Signature extract_signature(const SignatureExtractor<float>& f_sig, const ImageRecord& image) {
  Signature s;
  s.values = f_sig.extract(load_rgb(image.path));
  s.image_path = image.path;
  s.device_id = image.device_id;
  s.extractor_version = f_sig.version();
  return s;
}

std::vector<Signature> extract_signatures(const SignatureExtractor<float>& f_sig, std::span<const ImageRecord> images,
                                          int batch_size) {
  if (batch_size < 1) throw ConfigError("extract_signatures: batch_size must be >= 1");
  std::vector<Signature> out;
  out.reserve(images.size());
  const auto in = f_sig.input_shape();
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<RgbImage> decoded;
    for (std::size_t i = start; i < end; ++i) decoded.push_back(load_rgb(images[i].path));
    const auto x = images_to_tensor<float>(decoded, in.height, in.width, f_sig.preprocessing());
    const auto s = f_sig.extract(x);
    for (std::size_t i = start; i < end; ++i) {
      Signature sig;
      const auto row = s.data.begin() + static_cast<std::ptrdiff_t>((i - start) * kSignatureDim);
      sig.values.assign(row, row + kSignatureDim);
      sig.image_path = images[i].path;
      sig.device_id = images[i].device_id;
      sig.extractor_version = f_sig.version();
      out.push_back(std::move(sig));
    }
  }
  return out;
}

void save_signature_checkpoint(const std::filesystem::path& path, const SignatureCheckpoint& ckpt) {
  nlohmann::ordered_json meta;
  meta["kind"] = "signature_net";
  meta["num_devices"] = ckpt.net.num_devices();
  meta["input_height"] = ckpt.net.input_shape().height;
  meta["input_width"] = ckpt.net.input_shape().width;
  meta["epoch"] = ckpt.epoch;
  meta["devices"] = ckpt.devices;
  meta["extractor_version"] = to_hex(ckpt.net.trunk_digest());

  TensorArchive a;
  a.meta_json = meta.dump();
  const auto& mean = ckpt.net.preprocessing.channel_mean;
  a.tensors.emplace_back("preprocessing.channel_mean", std::vector<float>(mean.begin(), mean.end()));
  auto& net = const_cast<SignatureNet<float>&>(ckpt.net);
  for (auto* seq : {&net.trunk(), &net.head()}) {
    for (const auto& s : seq->state()) a.tensors.emplace_back(s.name, *s.value);
  }
  save_archive(path, a);
}

SignatureCheckpoint load_signature_checkpoint(const std::filesystem::path& path) {
  const TensorArchive a = load_archive(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(a.meta_json);
    if (meta.at("kind").get<std::string>() != "signature_net") {
      throw StoreError(path.string() + ": not a signature network checkpoint");
    }
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(path.string() + ": bad metadata: " + e.what());
  }
  SignatureCheckpoint ckpt{SignatureNet<float>(meta.at("num_devices").get<int>(), meta.at("input_height").get<int>(),
                                               meta.at("input_width").get<int>()),
                           meta.at("devices").get<std::vector<std::string>>(), meta.at("epoch").get<int>()};
  const auto& mean = a.tensor("preprocessing.channel_mean");
  if (mean.size() != 3) throw StoreError(path.string() + ": bad preprocessing tensor");
  std::copy(mean.begin(), mean.end(), ckpt.net.preprocessing.channel_mean.begin());
  for (auto* seq : {&ckpt.net.trunk(), &ckpt.net.head()}) {
    for (auto& s : seq->state()) {
      const auto& v = a.tensor(s.name);
      if (v.size() != s.value->size()) throw StoreError(path.string() + ": shape mismatch for " + s.name);
      *s.value = v;
    }
  }
  return ckpt;
}

template Tensor<float> images_to_tensor<float>(std::span<const RgbImage>, int, int, const Preprocessing&);
template Tensor<double> images_to_tensor<double>(std::span<const RgbImage>, int, int, const Preprocessing&);
template class SignatureNet<float>;
template class SignatureNet<double>;
template class SignatureExtractor<float>;
template class SignatureExtractor<double>;
template SignatureExtractor<float> truncate(const SignatureNet<float>&);
template SignatureExtractor<double> truncate(const SignatureNet<double>&);

}  // namespace camfp
