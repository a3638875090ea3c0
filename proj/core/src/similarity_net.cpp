#include "camfprint/similarity_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Core>
#include <json.hpp>

#include "camfprint/checkpoint.hpp"
#include "camfprint/optim.hpp"
#include "camfprint/threshold.hpp"
#include "reduce.hpp"

namespace camfp {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecC = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void glorot(std::vector<T>& w, double fan_in, double fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& v : w) v = static_cast<T>(u(rng));
}

// log(1 + exp(x)) without overflow.
template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

void SimilarityNetSpec::validate() const {
  if (signature_dim < 1 || fc1_units < 1 || fc2_units < 1) throw ConfigError("similarity net: sizes must be positive");
}

template <typename T>
struct SimilarityNet<T>::Forward {
  std::vector<std::uint32_t> rows;  // distinct table rows, in first-seen order
  std::vector<std::uint32_t> a, c;  // pair endpoints as positions in `rows`
  MatR<T> u;                        // rows x D
  MatR<T> h;                        // rows x F1, post-ReLU
  MatR<T> f;                        // B x fusion
  MatR<T> z;                        // B x F2, post-ReLU
  VecC<T> logit;                    // B
};

template <typename T>
SimilarityNet<T>::SimilarityNet(SimilarityNetSpec spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  const auto d = static_cast<std::size_t>(spec_.signature_dim);
  const auto f1 = static_cast<std::size_t>(spec_.fc1_units);
  const auto f2 = static_cast<std::size_t>(spec_.fc2_units);
  const auto fu = static_cast<std::size_t>(spec_.fusion_size());
  w1.assign(f1 * d, T(0));
  b1.assign(f1, T(0));
  w2.assign(f2 * fu, T(0));
  b2.assign(f2, T(0));
  w3.assign(f2, T(0));
  b3.assign(1, T(0));
  gw1.assign(w1.size(), T(0));
  gb1.assign(b1.size(), T(0));
  gw2.assign(w2.size(), T(0));
  gb2.assign(b2.size(), T(0));
  gw3.assign(w3.size(), T(0));
  gb3.assign(b3.size(), T(0));
  std::mt19937_64 rng(derive_seed(seed, "similarity_net/init"));
  glorot(w1, static_cast<double>(d), static_cast<double>(f1), rng);
  glorot(w2, static_cast<double>(fu), static_cast<double>(f2), rng);
  glorot(w3, static_cast<double>(f2), 1.0, rng);
}

template <typename T>
typename SimilarityNet<T>::Forward SimilarityNet<T>::run(std::span<const T> table, std::span<const std::uint32_t> first,
                                                         std::span<const std::uint32_t> second) const {
  const int D = spec_.signature_dim, F1 = spec_.fc1_units, F2 = spec_.fc2_units;
  if (table.size() % static_cast<std::size_t>(D) != 0) {
    throw ConfigError("similarity net: signature length does not match signature_dim " + std::to_string(D));
  }
  if (first.size() != second.size()) throw ConfigError("similarity net: index arrays differ in length");
  const std::size_t n_rows = table.size() / static_cast<std::size_t>(D);

  Forward fw;
  std::vector<std::int64_t> slot(n_rows, -1);
  auto place = [&](std::uint32_t r) -> std::uint32_t {
    if (r >= n_rows) throw ConfigError("similarity net: pair index out of range");
    if (slot[r] < 0) {
      slot[r] = static_cast<std::int64_t>(fw.rows.size());
      fw.rows.push_back(r);
    }
    return static_cast<std::uint32_t>(slot[r]);
  };
  fw.a.resize(first.size());
  fw.c.resize(first.size());
  for (std::size_t b = 0; b < first.size(); ++b) {
    fw.a[b] = place(first[b]);
    fw.c[b] = place(second[b]);
  }

  const auto U = static_cast<Eigen::Index>(fw.rows.size());
  const auto B = static_cast<Eigen::Index>(first.size());
  fw.u.resize(U, D);
  for (Eigen::Index i = 0; i < U; ++i) {
    fw.u.row(i) = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        table.data() + static_cast<std::size_t>(fw.rows[static_cast<std::size_t>(i)]) * D, D);
  }
  Eigen::Map<const MatR<T>> W1(w1.data(), F1, D);
  Eigen::Map<const VecC<T>> B1(b1.data(), F1);
  fw.h.noalias() = fw.u * W1.transpose();
  fw.h.rowwise() += B1.transpose();
  fw.h = fw.h.cwiseMax(T(0));

  fw.f.resize(B, spec_.fusion_size());
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto ia = fw.a[static_cast<std::size_t>(b)], ic = fw.c[static_cast<std::size_t>(b)];
    fw.f.row(b).segment(0, F1) = fw.h.row(ia);
    fw.f.row(b).segment(F1, F1) = fw.h.row(ic);
    fw.f.row(b).segment(2 * F1, D) = fw.u.row(ia).cwiseProduct(fw.u.row(ic));
  }
  Eigen::Map<const MatR<T>> W2(w2.data(), F2, spec_.fusion_size());
  Eigen::Map<const VecC<T>> B2(b2.data(), F2);
  fw.z.noalias() = fw.f * W2.transpose();
  fw.z.rowwise() += B2.transpose();
  fw.z = fw.z.cwiseMax(T(0));
  Eigen::Map<const VecC<T>> W3(w3.data(), F2);
  fw.logit = fw.z * W3;
  fw.logit.array() += b3[0];
  return fw;
}

template <typename T>
std::vector<T> SimilarityNet<T>::score_indexed(std::span<const T> table, std::span<const std::uint32_t> first,
                                               std::span<const std::uint32_t> second) const {
  const auto fw = run(table, first, second);
  std::vector<T> out(static_cast<std::size_t>(fw.logit.size()));
  for (std::size_t b = 0; b < out.size(); ++b) out[b] = T(1) / (T(1) + std::exp(-fw.logit[static_cast<Eigen::Index>(b)]));
  return out;
}

template <typename T>
T SimilarityNet<T>::score(std::span<const T> s1, std::span<const T> s2) const {
  const auto d = static_cast<std::size_t>(spec_.signature_dim);
  if (s1.size() != d || s2.size() != d) {
    throw ConfigError("similarity net: expected signatures of length " + std::to_string(d) + ", got " +
                      std::to_string(s1.size()) + " and " + std::to_string(s2.size()));
  }
  std::vector<T> table(s1.begin(), s1.end());
  table.insert(table.end(), s2.begin(), s2.end());
  const std::uint32_t a[1] = {0}, c[1] = {1};
  return score_indexed(table, a, c)[0];
}

template <typename T>
std::vector<T> SimilarityNet<T>::fusion(std::span<const T> s1, std::span<const T> s2) const {
  const auto d = static_cast<std::size_t>(spec_.signature_dim);
  if (s1.size() != d || s2.size() != d) throw ConfigError("similarity net: signature length mismatch");
  std::vector<T> table(s1.begin(), s1.end());
  table.insert(table.end(), s2.begin(), s2.end());
  const std::uint32_t a[1] = {0}, c[1] = {1};
  const auto fw = run(table, a, c);
  return std::vector<T>(fw.f.data(), fw.f.data() + fw.f.size());
}

template <typename T>
T SimilarityNet<T>::accumulate_gradients(std::span<const T> table, std::span<const std::uint32_t> first,
                                         std::span<const std::uint32_t> second, std::span<const std::uint8_t> labels,
                                         std::vector<T>* probs) {
  if (labels.size() != first.size()) throw ConfigError("similarity net: label count mismatch");
  const int D = spec_.signature_dim, F1 = spec_.fc1_units, F2 = spec_.fc2_units, FU = spec_.fusion_size();
  const auto fw = run(table, first, second);
  const auto B = fw.logit.size();
  const T inv_b = T(1) / static_cast<T>(B);

  T loss = 0;
  VecC<T> dlogit(B);
  if (probs) probs->resize(static_cast<std::size_t>(B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const T z = fw.logit[b];
    const T y = static_cast<T>(labels[static_cast<std::size_t>(b)]);
    // BCE on the logit: y*softplus(-z) + (1-y)*softplus(z)
    loss += y * softplus(-z) + (T(1) - y) * softplus(z);
    const T p = T(1) / (T(1) + std::exp(-z));
    if (probs) (*probs)[static_cast<std::size_t>(b)] = p;
    dlogit[b] = (p - y) * inv_b;
  }

  Eigen::Map<VecC<T>> gW3(gw3.data(), F2);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index j = 0; j < F2; ++j) gW3(j) += fw.z(b, j) * dlogit(b);
    gb3[0] += dlogit(b);
  }

  Eigen::Map<const VecC<T>> W3(w3.data(), F2);
  MatR<T> dz = dlogit * W3.transpose();
  dz.array() *= (fw.z.array() > T(0)).template cast<T>();

  Eigen::Map<MatR<T>> gW2(gw2.data(), F2, FU);
  Eigen::Map<VecC<T>> gB2(gb2.data(), F2);
  gW2.noalias() += dz.transpose() * fw.f;
  detail::add_col_sums(dz, gB2);

  Eigen::Map<const MatR<T>> W2(w2.data(), F2, FU);
  // Only the fc1 part of the fusion gradient is needed; signatures are inputs.
  MatR<T> df = dz * W2.leftCols(2 * F1);
  MatR<T> dh = MatR<T>::Zero(fw.h.rows(), F1);
  for (Eigen::Index b = 0; b < B; ++b) {
    dh.row(fw.a[static_cast<std::size_t>(b)]) += df.row(b).segment(0, F1);
    dh.row(fw.c[static_cast<std::size_t>(b)]) += df.row(b).segment(F1, F1);
  }
  dh.array() *= (fw.h.array() > T(0)).template cast<T>();

  Eigen::Map<MatR<T>> gW1(gw1.data(), F1, D);
  Eigen::Map<VecC<T>> gB1(gb1.data(), F1);
  gW1.noalias() += dh.transpose() * fw.u;
  detail::add_col_sums(dh, gB1);
  return loss * inv_b;
}

template <typename T>
std::vector<nn::Param<T>> SimilarityNet<T>::params() {
  return {{"fc1.weight", &w1, &gw1, true}, {"fc1.bias", &b1, &gb1, false}, {"fc2.weight", &w2, &gw2, true},
          {"fc2.bias", &b2, &gb2, false},  {"head.weight", &w3, &gw3, true}, {"head.bias", &b3, &gb3, false}};
}

template <typename T>
std::vector<nn::StateRef<T>> SimilarityNet<T>::state() {
  std::vector<nn::StateRef<T>> out;
  for (const auto& p : params()) out.push_back({p.name, p.value});
  return out;
}

template <typename T>
void SimilarityNet<T>::zero_grad() {
  for (auto& p : params()) std::fill(p.grad->begin(), p.grad->end(), T(0));
}

template <typename T>
std::span<const T> SimilarityNet<T>::branch_weights(int branch) const {
  if (branch != 0 && branch != 1) throw ConfigError("similarity net: branch must be 0 or 1");
  return w1;
}

template <typename T>
Digest SimilarityNet<T>::digest() const {
  Hasher h;
  h.update("camfprint.f_sim.v1");
  h.update_pod(static_cast<std::int32_t>(spec_.signature_dim));
  h.update_pod(static_cast<std::int32_t>(spec_.fc1_units));
  h.update_pod(static_cast<std::int32_t>(spec_.fc2_units));
  for (const auto* v : {&w1, &b1, &w2, &b2, &w3, &b3}) {
    for (T x : *v) h.update_pod(static_cast<float>(x));
  }
  return h.finish();
}

template <typename T>
double symmetry_gap(const SimilarityNet<T>& net, std::span<const T> table, std::span<const SignaturePair> pairs) {
  if (pairs.empty()) return 0.0;
  std::vector<std::uint32_t> a, c;
  for (const auto& p : pairs) {
    a.push_back(p.first);
    c.push_back(p.second);
  }
  const auto fwd = net.score_indexed(table, a, c);
  const auto rev = net.score_indexed(table, c, a);
  double gap = 0;
  for (std::size_t i = 0; i < fwd.size(); ++i) gap += std::abs(static_cast<double>(fwd[i] - rev[i]));
  return gap / static_cast<double>(fwd.size());
}

void Phase2Config::validate() const {
  if (epochs < 1) throw ConfigError("phase2: epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("phase2: learning_rate must be > 0");
  if (!(lr_decay_factor > 0 && lr_decay_factor <= 1)) throw ConfigError("phase2: lr_decay_factor must be in (0, 1]");
  if (lr_decay_every < 1) throw ConfigError("phase2: lr_decay_every must be >= 1");
  if (momentum < 0 || momentum >= 1) throw ConfigError("phase2: momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("phase2: batch_size must be >= 1");
}

double Phase2Config::learning_rate_at(int epoch) const {
  return learning_rate * std::pow(lr_decay_factor, (epoch - 1) / lr_decay_every);
}

namespace {

template <typename T>
struct PairBatch {
  std::vector<std::uint32_t> a, c;
  std::vector<std::uint8_t> y;

  void fill(std::span<const SignaturePair> pairs, std::span<const std::size_t> idx) {
    a.clear();
    c.clear();
    y.clear();
    for (auto i : idx) {
      a.push_back(pairs[i].first);
      c.push_back(pairs[i].second);
      y.push_back(pairs[i].label);
    }
  }
};

}  // namespace

template <typename T>
Phase2Result train_phase2(SimilarityNet<T>& model, std::span<const T> table, std::span<const SignaturePair> train_pairs,
                          std::span<const SignaturePair> val_pairs, const Phase2Config& cfg,
                          const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (train_pairs.empty()) throw ConfigError("phase2: no training pairs");
  const bool has_pos = std::any_of(train_pairs.begin(), train_pairs.end(), [](auto& p) { return p.label == 1; });
  const bool has_neg = std::any_of(train_pairs.begin(), train_pairs.end(), [](auto& p) { return p.label == 0; });
  if (!has_pos || !has_neg) throw ConfigError("phase2: training pairs must contain both labels");

  nn::Sgd<T> opt(model.params(), cfg.learning_rate, cfg.momentum, 0.0);
  std::vector<std::size_t> order(train_pairs.size());
  PairBatch<T> batch;
  std::vector<T> probs;
  Phase2Result result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch);
    opt.set_learning_rate(lr);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "phase2/shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const auto oriented = orient_randomly(train_pairs, derive_seed(cfg.seed, "phase2/orient", static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0;
    std::size_t correct = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.fill(oriented, std::span<const std::size_t>(order).subspan(start, end - start));
      opt.zero_grad();
      const T loss = model.accumulate_gradients(table, batch.a, batch.c, batch.y, &probs);
      if (!std::isfinite(static_cast<double>(loss))) {
        throw TrainingError("phase2: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch_index));
      }
      opt.step();
      loss_sum += static_cast<double>(loss) * static_cast<double>(end - start);
      for (std::size_t k = 0; k < probs.size(); ++k) correct += (probs[k] >= T(0.5)) == (batch.y[k] == 1);
    }

    EpochLog e;
    e.epoch = epoch;
    e.learning_rate = lr;
    e.train_loss = loss_sum / static_cast<double>(order.size());
    e.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val_pairs.empty()) {
      std::vector<std::size_t> all(val_pairs.size());
      std::iota(all.begin(), all.end(), 0);
      std::vector<double> scores;
      std::vector<int> labels;
      double vloss = 0;
      for (std::size_t start = 0; start < all.size(); start += 4096) {
        const std::size_t end = std::min(all.size(), start + 4096);
        batch.fill(val_pairs, std::span<const std::size_t>(all).subspan(start, end - start));
        const auto s = model.score_indexed(table, batch.a, batch.c);
        for (std::size_t k = 0; k < s.size(); ++k) {
          const double p = std::clamp(static_cast<double>(s[k]), 1e-12, 1.0 - 1e-12);
          vloss -= batch.y[k] ? std::log(p) : std::log(1.0 - p);
          scores.push_back(static_cast<double>(s[k]));
          labels.push_back(batch.y[k]);
        }
      }
      const auto counts = confusion_at(scores, labels, 0.5);
      e.val_loss = vloss / static_cast<double>(all.size());
      e.val_acc = static_cast<double>(counts.tp + counts.tn) / static_cast<double>(all.size());
      e.val_f1 = f1_score(counts);
    }
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return result;
}

std::vector<float> signature_table(std::span<const Signature> signatures) {
  std::vector<float> table;
  if (signatures.empty()) return table;
  const std::size_t d = signatures.front().values.size();
  table.reserve(signatures.size() * d);
  for (const auto& s : signatures) {
    if (s.values.size() != d) throw ConfigError("signature_table: inconsistent signature lengths");
    table.insert(table.end(), s.values.begin(), s.values.end());
  }
  return table;
}

void save_similarity_checkpoint(const std::filesystem::path& path, const SimilarityNet<float>& net,
                                const Digest& extractor_version) {
  nlohmann::ordered_json meta;
  meta["kind"] = "similarity_net";
  meta["signature_dim"] = net.spec().signature_dim;
  meta["fc1_units"] = net.spec().fc1_units;
  meta["fc2_units"] = net.spec().fc2_units;
  meta["extractor_version"] = to_hex(extractor_version);
  meta["similarity_version"] = to_hex(net.digest());
  TensorArchive a;
  a.meta_json = meta.dump();
  for (const auto& s : const_cast<SimilarityNet<float>&>(net).state()) a.tensors.emplace_back(s.name, *s.value);
  save_archive(path, a);
}

SimilarityCheckpoint load_similarity_checkpoint(const std::filesystem::path& path) {
  const TensorArchive a = load_archive(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(a.meta_json);
    if (meta.at("kind").get<std::string>() != "similarity_net") {
      throw StoreError(path.string() + ": not a similarity network checkpoint");
    }
    SimilarityNetSpec spec;
    spec.signature_dim = meta.at("signature_dim").get<int>();
    spec.fc1_units = meta.at("fc1_units").get<int>();
    spec.fc2_units = meta.at("fc2_units").get<int>();
    SimilarityCheckpoint out{SimilarityNet<float>(spec), digest_from_hex(meta.at("extractor_version").get<std::string>())};
    for (auto& s : out.net.state()) {
      const auto& v = a.tensor(s.name);
      if (v.size() != s.value->size()) throw StoreError(path.string() + ": shape mismatch for " + s.name);
      *s.value = v;
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(path.string() + ": bad metadata: " + e.what());
  }
}

double score(const SimilarityNet<float>& f_sim, const Digest& trained_on, const Signature& s1, const Signature& s2) {
  if (s1.extractor_version != trained_on || s2.extractor_version != trained_on) {
    throw ConfigError("score: signature extractor version does not match the similarity network");
  }
  return static_cast<double>(f_sim.score(s1.values, s2.values));
}

template class SimilarityNet<float>;
template class SimilarityNet<double>;
template double symmetry_gap(const SimilarityNet<float>&, std::span<const float>, std::span<const SignaturePair>);
template double symmetry_gap(const SimilarityNet<double>&, std::span<const double>, std::span<const SignaturePair>);
template Phase2Result train_phase2(SimilarityNet<float>&, std::span<const float>, std::span<const SignaturePair>,
                                   std::span<const SignaturePair>, const Phase2Config&,
                                   const std::function<void(const EpochLog&)>&);
template Phase2Result train_phase2(SimilarityNet<double>&, std::span<const double>, std::span<const SignaturePair>,
                                   std::span<const SignaturePair>, const Phase2Config&,
                                   const std::function<void(const EpochLog&)>&);

}  // namespace camfp
