#include <random>

#include <benchmark/benchmark.h>

#include "camfprint/evaluation.hpp"
#include "camfprint/layers.hpp"
#include "camfprint/optim.hpp"
#include "camfprint/signature_net.hpp"
#include "camfprint/similarity_net.hpp"

using namespace camfp;

namespace {

Tensor<float> noise(int n, Shape3 shape) {
  Tensor<float> x(n, shape);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d(0.f, 1.f);
  for (auto& v : x.data) v = d(rng);
  return x;
}

void BM_Conv7x7Forward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  nn::Conv2d<float> conv("conv1", 3, 96, 7);
  std::mt19937_64 rng(2);
  conv.init(rng);
  const auto x = noise(16, {3, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(conv.infer(x).data.data());
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv7x7Forward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_SignatureNetTrainStep(benchmark::State& state) {
  SignatureNet<float> net(8, 64, 64, 3);
  const auto x = noise(32, {3, 64, 64});
  std::vector<int> labels(32);
  for (int i = 0; i < 32; ++i) labels[static_cast<std::size_t>(i)] = i % 8;
  for (auto _ : state) {
    net.zero_grad();
    auto z = net.forward(x);
    Tensor<float> dz(z.batch, z.shape);
    benchmark::DoNotOptimize(nn::softmax_cross_entropy<float>(z.data, 8, labels, dz.data));
    net.backward(dz);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_SignatureNetTrainStep)->Unit(benchmark::kMillisecond);

void BM_SignatureExtraction(benchmark::State& state) {
  SignatureNet<float> net(8, 64, 64, 4);
  const auto x = noise(16, {3, 64, 64});
  for (auto _ : state) benchmark::DoNotOptimize(net.signatures(x).data.data());
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_SignatureExtraction)->Unit(benchmark::kMillisecond);

// Scores a batch of pairs drawn from a table of `rows` signatures; fc1 runs
// once per distinct row.
void BM_SimilarityScoreIndexed(benchmark::State& state) {
  const auto rows = static_cast<std::uint32_t>(state.range(0));
  SimilarityNet<float> net({}, 5);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> table(static_cast<std::size_t>(rows) * 1024);
  for (auto& v : table) v = u(rng);
  std::vector<std::uint32_t> a(128), b(128);
  for (std::size_t k = 0; k < a.size(); ++k) {
    a[k] = static_cast<std::uint32_t>(rng() % rows);
    b[k] = static_cast<std::uint32_t>(rng() % rows);
  }
  for (auto _ : state) benchmark::DoNotOptimize(net.score_indexed(table, a, b).data());
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_SimilarityScoreIndexed)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_SimilarityMatrix8Devices(benchmark::State& state) {
  SimilarityNet<float> net({}, 7);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> table(8 * 6 * 1024);
  for (auto& v : table) v = u(rng);
  std::vector<std::string> devices;
  std::vector<std::vector<std::uint32_t>> members(8);
  for (std::uint32_t d = 0; d < 8; ++d) {
    devices.push_back("Cam" + std::to_string(d) + "_0");
    for (std::uint32_t k = 0; k < 6; ++k) members[d].push_back(d * 6 + k);
  }
  const PairScoreFn score = [&](std::span<const std::uint32_t> x, std::span<const std::uint32_t> y) {
    const auto s = net.score_indexed(table, x, y);
    return std::vector<double>(s.begin(), s.end());
  };
  EvalConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(similarity_matrix(devices, members, score, cfg).cells.data());
}
BENCHMARK(BM_SimilarityMatrix8Devices)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
