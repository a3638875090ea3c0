#include <cmath>

#include "camfprint/optim.hpp"
#include "camfprint/similarity_net.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace camfp;
using camfp::testutil::GradCheck;
using camfp::testutil::random_vector;

namespace {

SimilarityNetSpec toy_spec() { return {8, 6, 4}; }

std::vector<double> toy_table(std::size_t rows, std::uint64_t seed) {
  auto t = random_vector(rows * 8, seed, 0.7);
  for (auto& v : t) v = std::tanh(v);
  return t;
}

}  // namespace

TEST(SimilarityNet, FusionWidthIsTwoBranchesPlusProduct) {
  SimilarityNet<float> net({}, 1);
  EXPECT_EQ(net.spec().fusion_size(), 5120);
  std::vector<float> s1(1024, 0.5f), s2(1024, -0.25f);
  const auto f = net.fusion(s1, s2);
  ASSERT_EQ(f.size(), 5120u);
  EXPECT_FLOAT_EQ(f[4096], -0.125f);
  const float s = net.score(s1, s2);
  EXPECT_GE(s, 0.f);
  EXPECT_LE(s, 1.f);
}

TEST(SimilarityNet, RejectsWrongSignatureLength) {
  SimilarityNet<float> net({}, 1);
  std::vector<float> s1(1024), s2(1023);
  EXPECT_THROW(net.score(s1, s2), ConfigError);
}

TEST(SimilarityNet, BranchesShareOneWeightTensor) {
  SimilarityNet<float> net({}, 2);
  EXPECT_EQ(net.branch_weights(0).data(), net.branch_weights(1).data());
  EXPECT_EQ(net.branch_weights(0).size(), 2048u * 1024u);
}

TEST(SimilarityNet, IndexedScoringMatchesPairwise) {
  SimilarityNet<double> net(toy_spec(), 3);
  const auto table = toy_table(5, 4);
  const std::vector<std::uint32_t> a{0, 1, 1, 4, 2}, b{1, 1, 3, 0, 2};
  const auto batched = net.score_indexed(table, a, b);
  for (std::size_t k = 0; k < a.size(); ++k) {
    const std::span<const double> s1(table.data() + a[k] * 8, 8), s2(table.data() + b[k] * 8, 8);
    EXPECT_NEAR(batched[k], net.score(s1, s2), 1e-12);
  }
}

TEST(SimilarityNet, GradientCheck) {
  SimilarityNet<double> net(toy_spec(), 5);
  // Non-zero biases so every ReLU path is exercised.
  net.b1 = random_vector(net.b1.size(), 6, 0.2);
  net.b2 = random_vector(net.b2.size(), 7, 0.2);
  const auto table = toy_table(4, 8);
  const std::vector<std::uint32_t> a{0, 1, 2, 0}, b{1, 3, 2, 2};
  const std::vector<std::uint8_t> y{1, 0, 1, 0};
  auto loss = [&] {
    SimilarityNet<double> probe = net;
    return probe.accumulate_gradients(table, a, b, y);
  };
  net.zero_grad();
  net.accumulate_gradients(table, a, b, y);
  GradCheck gc;
  for (auto& p : net.params()) {
    const auto analytic = *p.grad;
    camfp::testutil::check_entries(p.name, *p.value, analytic, loss, gc, 48);
  }
  EXPECT_LE(gc.max_rel_error, 1e-3) << gc.worst;
  EXPECT_GT(gc.checked, 100);
}

TEST(SimilarityNet, LossIsBinaryCrossEntropy) {
  SimilarityNet<double> net(toy_spec(), 9);
  const auto table = toy_table(2, 10);
  const std::vector<std::uint32_t> a{0}, b{1};
  const double p = net.score_indexed(table, a, b)[0];
  const std::vector<std::uint8_t> one{1}, zero{0};
  EXPECT_NEAR(net.accumulate_gradients(table, a, b, one), -std::log(p), 1e-12);
  EXPECT_NEAR(net.accumulate_gradients(table, a, b, zero), -std::log(1 - p), 1e-12);
}

TEST(SimilarityNet, SymmetryGapIsMeasured) {
  SimilarityNet<double> net(toy_spec(), 11);
  const auto table = toy_table(3, 12);
  const std::vector<SignaturePair> pairs{{0, 1, 0}, {1, 2, 0}};
  EXPECT_GE(symmetry_gap(net, std::span<const double>(table), std::span<const SignaturePair>(pairs)), 0.0);
  const std::vector<SignaturePair> self{{1, 1, 1}};
  EXPECT_EQ(symmetry_gap(net, std::span<const double>(table), std::span<const SignaturePair>(self)), 0.0);
}

TEST(Phase2, StepScheduleHalvesEveryThreeEpochs) {
  Phase2Config cfg;
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(1), 0.005);
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(3), 0.005);
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(4), 0.0025);
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(7), 0.00125);
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(30), 0.005 * std::pow(0.5, 9));
}

TEST(Phase2, LearnsToSeparateDevices) {
  // Each "device" is a noisy copy of its own prototype.
  const int devices = 4, per = 6, dim = 16;
  std::vector<Signature> sigs;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int d = 0; d < devices; ++d) {
    std::vector<double> proto(dim);
    for (auto& v : proto) v = n(rng);
    for (int k = 0; k < per; ++k) {
      Signature s;
      s.device_id = "D_" + std::to_string(d);
      for (int i = 0; i < dim; ++i) s.values.push_back(static_cast<float>(std::tanh(proto[i] + 0.3 * n(rng))));
      sigs.push_back(std::move(s));
    }
  }
  const auto pairs = make_pairs(sigs, PairSampling::all);
  const auto table = signature_table(sigs);
  SimilarityNet<float> net({dim, 32, 16}, 2);
  Phase2Config cfg;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  const auto r = train_phase2<float>(net, table, pairs, pairs, cfg);
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
  EXPECT_GT(r.log.back().val_f1, 0.9);

  // make_pairs() puts the lower device first; the trained head must not
  // depend on that orientation.
  std::vector<std::uint32_t> a, b;
  for (const auto& p : pairs) {
    a.push_back(p.second);
    b.push_back(p.first);
  }
  const auto reversed = net.score_indexed(table, a, b);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < pairs.size(); ++k) correct += (reversed[k] >= 0.5f) == (pairs[k].label == 1);
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(pairs.size()), 0.9);
}

TEST(Phase2, DeterministicGivenSeed) {
  const auto t = toy_table(6, 13);
  const std::vector<float> table(t.begin(), t.end());
  const std::vector<SignaturePair> pairs{{0, 1, 1}, {0, 2, 0}, {1, 2, 0}, {3, 4, 1}, {4, 5, 0}};
  Phase2Config cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 4;
  SimilarityNet<float> a(toy_spec(), 1), b(toy_spec(), 1);
  const auto ra = train_phase2<float>(a, table, pairs, {}, cfg);
  const auto rb = train_phase2<float>(b, table, pairs, {}, cfg);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(ra.log.back().train_loss, rb.log.back().train_loss);
}

TEST(Phase2, NeedsBothLabels) {
  const std::vector<float> table(16, 0.1f);
  const std::vector<SignaturePair> pos{{0, 1, 1}};
  SimilarityNet<float> net({8, 4, 2}, 1);
  EXPECT_THROW(train_phase2<float>(net, table, pos, {}, Phase2Config{}), ConfigError);
}

TEST(SimilarityCheckpoint, RoundTripAndVersionGuard) {
  testutil::TempDir dir;
  SimilarityNet<float> net({32, 16, 8}, 3);
  Digest version{};
  version[0] = 42;
  save_similarity_checkpoint(dir / "p2.ckpt", net, version);
  const auto back = load_similarity_checkpoint(dir / "p2.ckpt");
  EXPECT_EQ(back.net.digest(), net.digest());
  EXPECT_EQ(back.extractor_version, version);
  EXPECT_EQ(back.net.w1, net.w1);

  Signature s1, s2;
  s1.values.assign(32, 0.1f);
  s2.values.assign(32, -0.1f);
  s1.extractor_version = s2.extractor_version = version;
  const double v = score(back.net, version, s1, s2);
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
  s2.extractor_version[0] = 7;
  EXPECT_THROW(score(back.net, version, s1, s2), ConfigError);
}

TEST(SimilarityNet, ZeroSignatureZeroesTheProductBlock) {
  SimilarityNet<float> net({}, 4);
  std::vector<float> s1(1024, 0.7f), zero(1024, 0.f);
  const auto f = net.fusion(s1, zero);
  for (std::size_t i = 4096; i < 5120; ++i) ASSERT_EQ(f[i], 0.f);
}

TEST(Phase2, RepeatedPositivePairScoreRisesMonotonically) {
  // train_phase2 needs both labels, so drive the optimiser directly.
  SimilarityNet<float> net({16, 8, 4}, 6);
  std::vector<float> table(32);
  for (std::size_t i = 0; i < table.size(); ++i) table[i] = std::sin(static_cast<float>(i));
  const std::vector<std::uint32_t> a{0}, b{1};
  const std::vector<std::uint8_t> y{1};
  nn::Sgd<float> opt(net.params(), 0.05, 0.0, 0.0);
  float prev = net.score_indexed(table, a, b)[0];
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    net.accumulate_gradients(table, a, b, y);
    opt.step();
    const float now = net.score_indexed(table, a, b)[0];
    EXPECT_GE(now, prev) << "step " << step;
    prev = now;
  }
  EXPECT_GT(prev, 0.9f);
}
