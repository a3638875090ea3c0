// Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//
//   camfprint_acceptance [criterion ...]
//
// With no arguments every criterion runs. Criterion 1 needs a Dresden image
// root in CAMFPRINT_DRESDEN_ROOT and is skipped otherwise. Scratch output goes
// under $CAMFPRINT_ACCEPTANCE_DIR (default: the system temp dir). Criterion 2
// runs configs/synthetic.json, whose phase-1 stop epoch was fixed by a pilot.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "camfprint/evaluation.hpp"
#include "camfprint/optim.hpp"
#include "camfprint/pairs.hpp"
#include "camfprint/pipeline.hpp"
#include "camfprint/signature_net.hpp"
#include "camfprint/signature_store.hpp"
#include "camfprint/similarity_net.hpp"
#include "camfprint/threshold.hpp"

using namespace camfp;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::fail;
  std::string detail;
};

Outcome pass(std::string d) { return {Status::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::fail, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return {ok ? Status::pass : Status::fail, std::move(d)}; }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

fs::path scratch(const std::string& name) {
  const char* env = std::getenv("CAMFPRINT_ACCEPTANCE_DIR");
  const fs::path base = env && *env ? fs::path(env) : fs::temp_directory_path() / "camfprint-acceptance";
  const fs::path p = base / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

EvalOutcome run_pipeline(Pipeline& p) {
  p.ingest();
  p.train_phase1();
  p.train_phase2();
  return p.evaluate();
}

// ---------------------------------------------------------------------------

Outcome dresden() {
  const char* root = std::getenv("CAMFPRINT_DRESDEN_ROOT");
  if (!root || !*root) return {Status::skip, "set CAMFPRINT_DRESDEN_ROOT to run (informative, hours of CPU)"};
  ExperimentConfig cfg;
  cfg.output_dir = scratch("dresden");
  cfg.ingest.dresden_root = root;
  cfg.ingest.min_images = 2;
  Pipeline p(cfg, true, &std::cerr);
  const auto out = run_pipeline(p);
  const double acc = out.report.overall_accuracy;
  return verdict(std::abs(acc - 0.85) <= 0.05,
                 "overall accuracy " + fmt(acc) + " over " + std::to_string(out.report.matrix.size()) +
                     " devices (target 0.85 +- 0.05)");
}

Outcome synthetic() {
  ExperimentConfig cfg = load_config(CAMFPRINT_SYNTHETIC_CONFIG);  // the shipped synthetic experiment
  cfg.output_dir = scratch("synthetic");
  const auto& s = cfg.ingest.synthetic;
  if (!(s.prnu_strength > s.shot_noise_scale)) return fail("synthetic defaults: PRNU not above shot noise");
  const auto t0 = std::chrono::steady_clock::now();
  Pipeline p(cfg, true, &std::cerr);
  const auto out = run_pipeline(p);
  const double elapsed = seconds_since(t0);
  const auto& r = out.report;
  const bool ok = r.overall_accuracy >= 0.90 && r.diagonal_mean >= 0.80 && elapsed <= 900.0 &&
                  p.config().input_height == 64 && p.config().input_width == 64 && r.matrix.size() == 8;
  return verdict(ok, "overall " + fmt(r.overall_accuracy) + " (>= 0.90), diagonal " + fmt(r.diagonal_mean) +
                         " (>= 0.80), " + fmt(elapsed, 3) + " s (<= 900), eta " + fmt(r.matrix.eta));
}

Outcome architecture() {
  std::vector<std::string> bad;
  SignatureNet<float> net(31, 64, 64, 7);
  Tensor<float> x(2, {3, 64, 64});
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.f, 2.f);  // large inputs push tanh to saturation
  for (auto& v : x.data) v = n(rng);
  const auto sig = net.signatures(x);
  if (sig.shape.size() != 1024) bad.push_back("signature width " + std::to_string(sig.shape.size()));
  for (float v : sig.data) {
    if (!(v >= -1.f && v <= 1.f)) {
      bad.push_back("signature value outside [-1, 1]");
      break;
    }
  }
  if (net.logits(x).shape.size() != 31) bad.push_back("head width != device count");
  SignatureNet<float> net8(8, 64, 64, 7);
  if (net8.logits(x).shape.size() != 8) bad.push_back("head width != 8 for 8 devices");
  SimilarityNet<float> sim({}, 1);
  const std::vector<float> s1(1024, 0.1f), s2(1024, 0.2f);
  if (sim.fusion(s1, s2).size() != 5120) bad.push_back("fusion width");
  const float score = sim.score(s1, s2);
  if (!(score >= 0.f && score <= 1.f)) bad.push_back("score outside [0, 1]");
  if (bad.empty()) return pass("signature 1024-d in [-1,1], head = devices (31, 8), fusion 5120-d");
  std::string d;
  for (const auto& b : bad) d += (d.empty() ? "" : "; ") + b;
  return fail(d);
}

struct Worst {
  double rel = 0;
  std::string where;
  int checked = 0;

  void check(const std::string& name, std::vector<double>& values, const std::vector<double>& analytic,
             const std::function<double()>& loss, std::size_t max_entries) {
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(values.size());
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() > max_entries) idx.resize(max_entries);
    const double h = 1e-5;
    for (auto i : idx) {
      const double keep = values[i];
      values[i] = keep + h;
      const double up = loss();
      values[i] = keep - h;
      const double down = loss();
      values[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double e = std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      ++checked;
      if (e > rel) {
        rel = e;
        where = name + "[" + std::to_string(i) + "]";
      }
    }
  }
};

Outcome gradients() {
  Worst sig;
  {
    SignatureNet<double> net(3, 8, 8, 11);
    Tensor<double> x(2, {3, 8, 8});
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& v : x.data) v = n(rng);
    const std::vector<int> labels{0, 2};
    auto loss = [&] {
      auto z = net.forward(x);
      std::vector<double> scratch(z.data.size());
      return nn::softmax_cross_entropy<double>(z.data, 3, labels, scratch);
    };
    net.zero_grad();
    auto z = net.forward(x);
    Tensor<double> dz(z.batch, z.shape);
    nn::softmax_cross_entropy<double>(z.data, 3, labels, dz.data);
    net.backward(dz);
    for (auto& p : net.params()) {
      const auto analytic = *p.grad;
      sig.check(p.name, *p.value, analytic, loss, 16);
    }
  }
  Worst sim;
  {
    SimilarityNet<double> net({8, 6, 4}, 3);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 0.2);
    for (auto& v : net.b1) v = n(rng);
    for (auto& v : net.b2) v = n(rng);
    std::vector<double> table(4 * 8);
    for (auto& v : table) v = std::tanh(3.0 * n(rng));
    const std::vector<std::uint32_t> a{0, 1, 2, 3}, b{1, 2, 2, 0};
    const std::vector<std::uint8_t> y{1, 0, 1, 0};
    auto loss = [&] {
      SimilarityNet<double> probe = net;
      return probe.accumulate_gradients(table, a, b, y);
    };
    net.zero_grad();
    net.accumulate_gradients(table, a, b, y);
    for (auto& p : net.params()) {
      const auto analytic = *p.grad;
      sim.check(p.name, *p.value, analytic, loss, 64);
    }
  }
  return verdict(sig.rel <= 1e-3 && sim.rel <= 1e-3 && sig.checked > 0 && sim.checked > 0,
                 "signature net max rel err " + fmt(sig.rel, 3) + " (" + std::to_string(sig.checked) +
                     " entries, worst " + sig.where + "), similarity net " + fmt(sim.rel, 3) + " (" +
                     std::to_string(sim.checked) + " entries)");
}

Outcome pair_count() {
  std::vector<Signature> sigs(1294);
  for (std::size_t i = 0; i < sigs.size(); ++i) sigs[i].device_id = "Dev_" + std::to_string(i % 31);
  const auto pairs = make_pairs(sigs, PairSampling::all);
  std::size_t wrong = 0;
  for (const auto& p : pairs) wrong += p.label != (sigs[p.first].device_id == sigs[p.second].device_id);
  return verdict(pairs.size() == 836571 && wrong == 0,
                 std::to_string(pairs.size()) + " pairs (expected 836571), " + std::to_string(wrong) + " bad labels");
}

Outcome threshold_oracle() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0, 1);
  const auto grid = default_threshold_grid();
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 400;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = u(rng) < 0.4;
      scores[i] = trial % 4 == 0 ? grid[rng() % grid.size()] : (labels[i] ? std::sqrt(u(rng)) : u(rng) * u(rng));
    }
    labels[0] = 1;
    labels[1] = 0;
    double best = -1;
    for (double eta : grid) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool pred = scores[i] >= eta;
        tp += pred && labels[i];
        fp += pred && !labels[i];
        fn += !pred && labels[i];
      }
      best = std::max(best, 2 * tp / (2 * tp + fp + fn));
    }
    if (select_threshold(scores, labels, grid).selection_f1 != best) ++mismatches;
  }
  return verdict(mismatches == 0, std::to_string(mismatches) + " of 1000 random sets disagree with brute force");
}

Outcome evaluation_oracle() {
  // 2 devices x 3 images; fixed pairwise scores.
  const std::vector<std::string> devices{"ModelA_0", "ModelB_0"};
  const std::vector<std::vector<std::uint32_t>> members{{0, 1, 2}, {3, 4, 5}};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> table(36);
  for (auto& v : table) v = u(rng);
  const PairScoreFn score = [&](std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    std::vector<double> s(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) s[k] = table[a[k] * 6 + b[k]];
    return s;
  };
  EvalConfig cfg;
  cfg.eta = 0.5;
  cfg.n_pairs_per_cell = 100;
  const int runs = 30;
  std::vector<std::vector<double>> samples(4);
  bool multiples = true;
  for (int r = 0; r < runs; ++r) {
    cfg.seed = 500 + static_cast<std::uint64_t>(r);
    const auto m = similarity_matrix(devices, members, score, cfg);
    for (std::size_t c = 0; c < 4; ++c) {
      samples[c].push_back(m.cells[c]);
      const double k = m.cells[c] * cfg.n_pairs_per_cell;
      multiples = multiples && std::abs(k - std::round(k)) < 1e-9;
    }
  }
  double worst_z = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    int hits = 0;
    for (auto a : members[c / 2]) {
      for (auto b : members[c % 2]) hits += table[a * 6 + b] >= cfg.eta;
    }
    const double p = hits / 9.0;
    double mean = 0;
    for (double v : samples[c]) mean += v / runs;
    const double se = std::sqrt(p * (1 - p) / (cfg.n_pairs_per_cell * runs));
    const double z = se > 0 ? std::abs(mean - p) / se : (mean == p ? 0 : INFINITY);
    worst_z = std::max(worst_z, z);
  }
  return verdict(worst_z <= 3.0 && multiples, "worst deviation " + fmt(worst_z, 3) + " SE over " +
                                                  std::to_string(runs) + " runs; cells multiples of 1/100: " +
                                                  (multiples ? "yes" : "no"));
}

std::vector<double> losses(const fs::path& jsonl) {
  std::vector<double> out;
  std::ifstream in(jsonl);
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    out.push_back(j.at("train_loss").get<double>());
    out.push_back(j.at("val_loss").get<double>());
  }
  return out;
}

Outcome determinism() {
  auto run = [](const std::string& name) {
    ExperimentConfig cfg;
    cfg.seed = 2024;
    cfg.output_dir = scratch(name);
    cfg.ingest.synthetic.n_devices = 3;
    cfg.ingest.synthetic.images_per_device = 20;
    cfg.phase1.epochs = 2;
    cfg.phase1.stop_epoch = 2;
    cfg.phase2.epochs = 2;
    cfg.eval.n_pairs_per_cell = 20;
    Pipeline p(cfg, true, nullptr);
    run_pipeline(p);
    return p.paths();
  };
  const auto a = run("determinism-a");
  const auto b = run("determinism-b");
  std::vector<std::string> differ;
  const std::vector<std::pair<std::string, fs::path ArtifactPaths::*>> files{
      {"manifest", &ArtifactPaths::manifest},   {"pairs", &ArtifactPaths::pairs},
      {"val_pairs", &ArtifactPaths::val_pairs}, {"matrix.csv", &ArtifactPaths::matrix_csv},
      {"report", &ArtifactPaths::report},       {"threshold", &ArtifactPaths::threshold},
      {"store", &ArtifactPaths::store}};
  for (const auto& [name, member] : files) {
    const auto x = slurp(a.*member), y = slurp(b.*member);
    if (x.empty() || x != y) differ.push_back(name);
  }
  double worst = 0;
  for (auto member : {&ArtifactPaths::phase1_log, &ArtifactPaths::phase2_log}) {
    const auto la = losses(a.*member), lb = losses(b.*member);
    if (la.size() != lb.size() || la.empty()) {
      differ.push_back("log length");
      continue;
    }
    for (std::size_t i = 0; i < la.size(); ++i) worst = std::max(worst, std::abs(la[i] - lb[i]));
  }
  if (worst > 1e-6) differ.push_back("losses");
  std::string d = "manifest, split, pairs, store, threshold, matrix byte-identical; max loss diff " + fmt(worst, 3);
  if (!differ.empty()) {
    d = "differ:";
    for (const auto& s : differ) d += " " + s;
  }
  return verdict(differ.empty(), d);
}

Outcome store_round_trip() {
  const fs::path dir = scratch("store");
  std::mt19937_64 rng(9);
  std::normal_distribution<float> n(0.f, 1.f);
  std::vector<StoreRecord> recs(10000);
  Digest version{};
  version[3] = 0xAB;
  {
    SignatureStore store(dir / "sigs.store");
    for (std::size_t i = 0; i < recs.size(); ++i) {
      auto& r = recs[i];
      r.image_path = "img/" + std::to_string(i) + ".png";
      r.device_id = "Dev" + std::to_string(i % 13) + "_" + std::to_string(i % 3);
      r.extractor_version = version;
      r.values.resize(SignatureStore::kValues);
      for (auto& v : r.values) v = n(rng);
      r.sig_id = store.put(r);
    }
    store.flush();
  }
  SignatureStore store(dir / "sigs.store");
  std::size_t mismatched = 0;
  for (const auto& r : recs) {
    const auto got = store.get(r.sig_id);
    if (!got || got->image_path != r.image_path || got->device_id != r.device_id ||
        std::memcmp(got->values.data(), r.values.data(), r.values.size() * sizeof(float)) != 0) {
      ++mismatched;
    }
  }
  const std::size_t before = store.size();
  bool same_ids = true;
  for (const auto& r : recs) same_ids = same_ids && store.put(r) == r.sig_id;
  return verdict(mismatched == 0 && before == 10000 && store.size() == before && same_ids,
                 std::to_string(mismatched) + " mismatches after reopen; size " + std::to_string(before) + " -> " +
                     std::to_string(store.size()) + " after re-putting all records");
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"Dresden reproduction", dresden}},
      {2, {"synthetic end-to-end", synthetic}},
      {3, {"architecture shapes", architecture}},
      {4, {"gradient correctness", gradients}},
      {5, {"pair count", pair_count}},
      {6, {"threshold oracle", threshold_oracle}},
      {7, {"evaluation oracle", evaluation_oracle}},
      {8, {"determinism", determinism}},
      {9, {"store round trip", store_round_trip}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [k, v] : criteria) selected.push_back(k);
  }
  int failed = 0;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = fail(std::string("threw: ") + e.what());
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::skip ? "SKIP" : "FAIL";
    failed += o.status == Status::fail;
    std::cout << "criterion " << k << " " << tag << " [" << it->second.first << "] " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
