#include "camfprint/pipeline.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "camfprint/binary_io.hpp"
#include "camfprint/heatmap.hpp"
#include "camfprint/signature_store.hpp"

namespace camfp {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kDefaultInput = 256;

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<StoredPair> to_stored(std::span<const SignaturePair> pairs, const std::vector<std::uint64_t>& ids) {
  std::vector<StoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({ids[p.first], ids[p.second], p.label});
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("config: output_dir is empty");
  if (input_height < 0 || input_width < 0) throw ConfigError("config: input size must be positive");
  if ((input_height == 0) != (input_width == 0)) throw ConfigError("config: set both input dimensions or neither");
  if (ingest.min_images < 2) throw ConfigError("config: ingest.min_images must be >= 2");
  if (!(ingest.train_frac > 0 && ingest.train_frac < 1)) throw ConfigError("config: ingest.train_frac must be in (0, 1)");
  if (!(ingest.val_frac > 0 && ingest.val_frac < 1)) throw ConfigError("config: ingest.val_frac must be in (0, 1)");
  if (ingest.dresden_root.empty()) ingest.synthetic.validate();
  phase1.validate();
  similarity.validate();
  phase2.validate();
  if (eval.n_pairs_per_cell < 1) throw ConfigError("config: eval.n_pairs_per_cell must be >= 1");
  if (eval.grid.empty()) throw ConfigError("config: eval.grid is empty");
  if (eval.workers < 1) throw ConfigError("config: eval.workers must be >= 1");
}

std::string config_to_json(const ExperimentConfig& cfg) {
  ojson j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  j["manifest_path"] = cfg.manifest_path;
  j["input_size"] = {cfg.input_height, cfg.input_width};

  const auto& s = cfg.ingest.synthetic;
  ojson synth;
  synth["devices"] = s.n_devices;
  synth["per_device"] = s.images_per_device;
  synth["height"] = s.height;
  synth["width"] = s.width;
  synth["prnu_strength"] = s.prnu_strength;
  synth["fpn_strength"] = s.fpn_strength;
  synth["shot_noise_scale"] = s.shot_noise_scale;
  synth["scene_pool"] = s.scene_pool;
  ojson ingest;
  ingest["dresden_root"] = cfg.ingest.dresden_root;
  ingest["min_images"] = cfg.ingest.min_images;
  ingest["train_frac"] = cfg.ingest.train_frac;
  ingest["val_frac"] = cfg.ingest.val_frac;
  ingest["synthetic"] = std::move(synth);
  j["ingest"] = std::move(ingest);

  ojson p1;
  p1["epochs"] = cfg.phase1.epochs;
  p1["stop_epoch"] = cfg.phase1.stop_epoch;
  p1["learning_rate"] = cfg.phase1.learning_rate;
  p1["momentum"] = cfg.phase1.momentum;
  p1["weight_decay"] = cfg.phase1.weight_decay;
  p1["batch_size"] = cfg.phase1.batch_size;
  j["phase1"] = std::move(p1);

  ojson sim;
  sim["fc1_units"] = cfg.similarity.fc1_units;
  sim["fc2_units"] = cfg.similarity.fc2_units;
  j["similarity"] = std::move(sim);

  ojson p2;
  p2["epochs"] = cfg.phase2.epochs;
  p2["learning_rate"] = cfg.phase2.learning_rate;
  p2["lr_decay_factor"] = cfg.phase2.lr_decay_factor;
  p2["lr_decay_every"] = cfg.phase2.lr_decay_every;
  p2["momentum"] = cfg.phase2.momentum;
  p2["batch_size"] = cfg.phase2.batch_size;
  p2["pair_sampling"] = std::string(to_string(cfg.phase2.pair_sampling));
  j["phase2"] = std::move(p2);

  ojson ev;
  ev["n_pairs_per_cell"] = cfg.eval.n_pairs_per_cell;
  ev["grid"] = cfg.eval.grid;
  ev["workers"] = cfg.eval.workers;
  ev["min_accuracy"] = cfg.eval.min_accuracy;
  j["eval"] = std::move(ev);
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(std::string_view json, ExperimentConfig cfg) {
  try {
    const auto j = nlohmann::json::parse(json);
    read_key(j, "seed", cfg.seed);
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    read_key(j, "manifest_path", cfg.manifest_path);
    if (j.contains("input_size")) {
      const auto v = j.at("input_size").get<std::vector<int>>();
      if (v.size() != 2) throw ConfigError("config: input_size must be [height, width]");
      cfg.input_height = v[0];
      cfg.input_width = v[1];
    }
    if (j.contains("ingest")) {
      const auto& in = j.at("ingest");
      read_key(in, "dresden_root", cfg.ingest.dresden_root);
      read_key(in, "min_images", cfg.ingest.min_images);
      read_key(in, "train_frac", cfg.ingest.train_frac);
      read_key(in, "val_frac", cfg.ingest.val_frac);
      if (in.contains("synthetic")) {
        const auto& s = in.at("synthetic");
        auto& out = cfg.ingest.synthetic;
        read_key(s, "devices", out.n_devices);
        read_key(s, "per_device", out.images_per_device);
        read_key(s, "height", out.height);
        read_key(s, "width", out.width);
        read_key(s, "prnu_strength", out.prnu_strength);
        read_key(s, "fpn_strength", out.fpn_strength);
        read_key(s, "shot_noise_scale", out.shot_noise_scale);
        read_key(s, "scene_pool", out.scene_pool);
      }
    }
    if (j.contains("phase1")) {
      const auto& p = j.at("phase1");
      read_key(p, "epochs", cfg.phase1.epochs);
      read_key(p, "stop_epoch", cfg.phase1.stop_epoch);
      read_key(p, "learning_rate", cfg.phase1.learning_rate);
      read_key(p, "momentum", cfg.phase1.momentum);
      read_key(p, "weight_decay", cfg.phase1.weight_decay);
      read_key(p, "batch_size", cfg.phase1.batch_size);
    }
    if (j.contains("similarity")) {
      const auto& p = j.at("similarity");
      read_key(p, "fc1_units", cfg.similarity.fc1_units);
      read_key(p, "fc2_units", cfg.similarity.fc2_units);
    }
    if (j.contains("phase2")) {
      const auto& p = j.at("phase2");
      read_key(p, "epochs", cfg.phase2.epochs);
      read_key(p, "learning_rate", cfg.phase2.learning_rate);
      read_key(p, "lr_decay_factor", cfg.phase2.lr_decay_factor);
      read_key(p, "lr_decay_every", cfg.phase2.lr_decay_every);
      read_key(p, "momentum", cfg.phase2.momentum);
      read_key(p, "batch_size", cfg.phase2.batch_size);
      if (p.contains("pair_sampling")) {
        cfg.phase2.pair_sampling = pair_sampling_from_string(p.at("pair_sampling").get<std::string>());
      }
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      read_key(e, "n_pairs_per_cell", cfg.eval.n_pairs_per_cell);
      read_key(e, "grid", cfg.eval.grid);
      read_key(e, "workers", cfg.eval.workers);
      read_key(e, "min_accuracy", cfg.eval.min_accuracy);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path, ExperimentConfig base) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return config_from_json(read_text(path), std::move(base));
}

ArtifactPaths::ArtifactPaths(const ExperimentConfig& cfg)
    : root(cfg.output_dir),
      config(root / "config.json"),
      manifest(cfg.manifest_path.empty() ? root / "manifest.json" : fs::path(cfg.manifest_path)),
      images(root / "images"),
      phase1_ckpt(root / "phase1.ckpt"),
      phase1_log(root / "phase1_log.jsonl"),
      store(root / "sigs.store"),
      pairs(root / "pairs.bin"),
      val_pairs(root / "val_pairs.bin"),
      phase2_ckpt(root / "phase2.ckpt"),
      phase2_log(root / "phase2_log.jsonl"),
      threshold(root / "threshold.json"),
      eval_dir(root / "eval"),
      report(eval_dir / "report.json"),
      matrix_csv(eval_dir / "matrix.csv"),
      heatmap(eval_dir / "heatmap.png") {}

Pipeline::Pipeline(ExperimentConfig cfg, bool force, std::ostream* log)
    : cfg_(std::move(cfg)), paths_(cfg_), force_(force), log_(log) {
  cfg_.validate();
}

void Pipeline::say(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
}

void Pipeline::guard_output(const fs::path& artifact) const {
  if (fs::exists(artifact) && !force_) {
    throw ConfigError(artifact.string() + " already exists; pass --force to recompute it");
  }
}

void Pipeline::require(const fs::path& artifact, const char* producer) const {
  if (!fs::exists(artifact)) {
    throw ConfigError("missing " + artifact.string() + "; run `" + producer + "` first");
  }
}

void Pipeline::save_config() const {
  fs::create_directories(paths_.root);
  write_text(paths_.config, config_to_json(cfg_));
}

namespace {

// Unset input size follows the corpus: synthetic image size, else the default.
std::pair<int, int> input_size(const ExperimentConfig& cfg) {
  if (cfg.input_height > 0) return {cfg.input_height, cfg.input_width};
  if (cfg.ingest.dresden_root.empty()) return {cfg.ingest.synthetic.height, cfg.ingest.synthetic.width};
  return {kDefaultInput, kDefaultInput};
}

}  // namespace

// Synthetic records are stored relative to the output directory so that the
// manifest does not depend on where the experiment lives.
Manifest Pipeline::manifest() const {
  require(paths_.manifest, "ingest");
  Manifest m = load_manifest(paths_.manifest);
  for (auto& r : m.records) {
    if (fs::path(r.path).is_relative()) r.path = (paths_.root / r.path).string();
  }
  return m;
}

// Store keys for files inside the output directory are relative too, so a
// store can be compared or moved along with the experiment.
std::string Pipeline::store_key(const std::string& path) const {
  const auto rel = fs::path(path).lexically_relative(paths_.root);
  if (rel.empty() || *rel.begin() == "..") return path;
  return rel.generic_string();
}

IngestSummary Pipeline::ingest() {
  guard_output(paths_.manifest);
  fs::create_directories(paths_.root);
  IngestSummary out;
  Manifest m;
  if (!cfg_.ingest.dresden_root.empty()) {
    auto built = build_manifest(cfg_.ingest.dresden_root);
    out.skipped_unparseable = built.skipped_unparseable.size();
    out.skipped_undecodable = built.skipped_undecodable.size();
    m = std::move(built.manifest);
  } else {
    SynthConfig s = cfg_.ingest.synthetic;
    s.seed = derive_seed(cfg_.seed, "synthetic");
    s.output_dir = paths_.images;
    if (force_ && fs::exists(paths_.images)) fs::remove_all(paths_.images);
    say("generating " + std::to_string(s.n_devices * s.images_per_device) + " synthetic images");
    m = generate_synthetic(s);
    for (auto& r : m.records) r.path = fs::relative(r.path, paths_.root).generic_string();
  }
  std::tie(cfg_.input_height, cfg_.input_width) = input_size(cfg_);
  const std::size_t before = m.devices.size();
  m = filter_min_images(m, cfg_.ingest.min_images);
  out.devices_dropped = before - m.devices.size();
  m = stratified_split(m, cfg_.ingest.train_frac, derive_seed(cfg_.seed, "split"), cfg_.ingest.val_frac);
  save_manifest(paths_.manifest, m);
  save_config();
  out.manifest = std::move(m);
  return out;
}

Phase1Summary Pipeline::train_phase1() {
  const Manifest m = manifest();
  guard_output(paths_.phase1_ckpt);
  const auto [h, w] = input_size(cfg_);

  say("loading images at " + std::to_string(h) + "x" + std::to_string(w));
  const auto train = load_split(m, Split::train, h, w);
  const auto val = load_split(m, Split::val, h, w);
  SignatureNet<float> net(static_cast<int>(m.devices.size()), h, w, derive_seed(cfg_.seed, "phase1/init"));
  Phase1Config pc = cfg_.phase1;
  pc.seed = derive_seed(cfg_.seed, "phase1");
  auto result = camfp::train_phase1(net, train, val, pc, [&](const EpochLog& e) {
    std::ostringstream line;
    line << "phase1 epoch " << e.epoch << " train_loss " << e.train_loss << " train_acc " << e.train_acc
         << " val_loss " << e.val_loss << " val_acc " << e.val_acc;
    say(line.str());
  });

  SignatureCheckpoint ckpt{std::move(result.weights), m.devices, pc.stop_epoch};
  save_signature_checkpoint(paths_.phase1_ckpt, ckpt);
  write_text(paths_.phase1_log, epoch_log_jsonl(result.log));
  save_config();
  return {std::move(result.log), pc.stop_epoch, ckpt.net.trunk_digest()};
}

ExtractSummary Pipeline::extract() {
  const Manifest m = manifest();
  require(paths_.phase1_ckpt, "train --phase 1");
  const auto ckpt = load_signature_checkpoint(paths_.phase1_ckpt);
  const auto f_sig = truncate(ckpt.net);

  SignatureStore store(paths_.store);
  ExtractSummary out;
  out.extractor_version = f_sig.version();
  std::vector<ImageRecord> todo;
  for (const auto& r : m.records) {
    if (store.find(store_key(r.path), f_sig.version())) {
      ++out.already_stored;
    } else {
      todo.push_back(r);
    }
  }
  if (!todo.empty()) say("extracting " + std::to_string(todo.size()) + " signatures");
  for (const auto& sig : extract_signatures(f_sig, todo)) {
    store.put({0, store_key(sig.image_path), sig.device_id, sig.extractor_version, sig.values});
    ++out.extracted;
  }
  store.flush();
  return out;
}

Phase2Summary Pipeline::train_phase2() {
  const Manifest m = manifest();
  require(paths_.phase1_ckpt, "train --phase 1");
  guard_output(paths_.phase2_ckpt);
  Phase2Summary out;

  const auto ckpt = load_signature_checkpoint(paths_.phase1_ckpt);
  const Digest version = ckpt.net.trunk_digest();
  {
    SignatureStore store(paths_.store);
    bool missing = false;
    for (const auto& r : m.records) {
      if (r.split != Split::test && !store.find(store_key(r.path), version)) missing = true;
    }
    if (missing) {
      say("signatures missing from the store; extracting");
      out.extraction = extract();
    }
  }

  SignatureStore store(paths_.store);
  std::vector<Signature> pool;
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> val_positions;
  std::vector<bool> is_val;
  for (const auto& r : m.records) {
    if (r.split != Split::train && r.split != Split::val) continue;
    const auto id = store.find(store_key(r.path), version);
    const auto rec = store.get(*id);
    if (r.split == Split::val) val_positions.push_back(static_cast<std::uint32_t>(pool.size()));
    is_val.push_back(r.split == Split::val);
    ids.push_back(*id);
    pool.push_back({rec->values, r.path, r.device_id, version});
  }

  // Validation-validation pairs are held out for choosing the threshold.
  auto train_pairs = make_pairs(pool, cfg_.phase2.pair_sampling, derive_seed(cfg_.seed, "pairs"));
  std::erase_if(train_pairs, [&](const SignaturePair& p) { return is_val[p.first] && is_val[p.second]; });
  const auto val_pairs = orient_randomly(make_pairs_subset(pool, val_positions, PairSampling::all),
                                         derive_seed(cfg_.seed, "val/orient"));
  write_pair_file(paths_.pairs, to_stored(train_pairs, ids));
  write_pair_file(paths_.val_pairs, to_stored(val_pairs, ids));
  out.train_pairs = train_pairs.size();
  out.val_pairs = val_pairs.size();
  say("phase2 on " + std::to_string(train_pairs.size()) + " training pairs, " + std::to_string(val_pairs.size()) +
      " validation pairs");

  const auto table = signature_table(pool);
  SimilarityNet<float> net(cfg_.similarity, derive_seed(cfg_.seed, "phase2/init"));
  Phase2Config pc = cfg_.phase2;
  pc.seed = derive_seed(cfg_.seed, "phase2");
  auto result = camfp::train_phase2<float>(net, table, train_pairs, val_pairs, pc, [&](const EpochLog& e) {
    std::ostringstream line;
    line << "phase2 epoch " << e.epoch << " lr " << e.learning_rate << " train_loss " << e.train_loss
         << " val_loss " << e.val_loss << " val_acc " << e.val_acc << " val_f1 " << e.val_f1;
    say(line.str());
  });
  out.log = std::move(result.log);

  std::vector<std::uint32_t> a, b;
  std::vector<int> labels;
  for (const auto& p : val_pairs) {
    a.push_back(p.first);
    b.push_back(p.second);
    labels.push_back(p.label);
  }
  const auto s = net.score_indexed(table, a, b);
  const std::vector<double> scores(s.begin(), s.end());
  out.threshold = select_threshold(scores, labels, cfg_.eval.grid);
  out.symmetry_gap = symmetry_gap(net, std::span<const float>(table), std::span<const SignaturePair>(val_pairs));
  say("symmetry gap on validation pairs " + std::to_string(out.symmetry_gap));
  say("threshold " + std::to_string(out.threshold.eta) + " (validation F1 " +
      std::to_string(out.threshold.selection_f1) + ")");

  save_similarity_checkpoint(paths_.phase2_ckpt, net, version);
  save_threshold(paths_.threshold, {out.threshold, cfg_.eval.grid, version, net.digest()});
  write_text(paths_.phase2_log, epoch_log_jsonl(out.log));
  save_config();
  return out;
}

MatchResult Pipeline::match(const fs::path& image_a, const fs::path& image_b) const {
  require(paths_.phase1_ckpt, "train --phase 1");
  require(paths_.phase2_ckpt, "train --phase 2");
  require(paths_.threshold, "train --phase 2");
  const auto ckpt = load_signature_checkpoint(paths_.phase1_ckpt);
  const auto f_sig = truncate(ckpt.net);
  const auto sim = load_similarity_checkpoint(paths_.phase2_ckpt);
  const auto thr = load_threshold(paths_.threshold);
  if (thr.similarity_version != sim.net.digest() || thr.extractor_version != f_sig.version()) {
    throw StoreError("threshold artifact does not belong to the current checkpoints; retrain phase 2");
  }
  const ImageRecord ra{image_a.string(), "?", "?", 0, 0, Split::unassigned};
  const ImageRecord rb{image_b.string(), "?", "?", 0, 0, Split::unassigned};
  const auto sigs = extract_signatures(f_sig, std::vector<ImageRecord>{ra, rb});
  MatchResult r;
  r.score = score(sim.net, sim.extractor_version, sigs[0], sigs[1]);
  r.eta = thr.threshold.eta;
  r.same = r.score >= r.eta;
  return r;
}

EvalOutcome Pipeline::evaluate() {
  const Manifest m = manifest();
  require(paths_.phase2_ckpt, "train --phase 2");
  require(paths_.threshold, "train --phase 2");
  guard_output(paths_.report);
  const auto sim = load_similarity_checkpoint(paths_.phase2_ckpt);
  const auto thr = load_threshold(paths_.threshold);
  if (thr.similarity_version != sim.net.digest()) {
    throw StoreError("threshold artifact does not belong to phase2.ckpt; retrain phase 2");
  }
  require(paths_.store, "extract");
  const SignatureStore store(paths_.store);

  std::set<std::string> test_paths;
  for (const auto& r : m.records) {
    if (r.split == Split::test) test_paths.insert(store_key(r.path));
  }
  EvalConfig ec;
  ec.n_pairs_per_cell = cfg_.eval.n_pairs_per_cell;
  ec.eta = thr.threshold.eta;
  ec.seed = derive_seed(cfg_.seed, "eval");
  ec.workers = cfg_.eval.workers;
  const auto matrix = similarity_matrix(store, sim.net, sim.extractor_version, m.devices, test_paths, ec);

  EvalOutcome out{overall_accuracy(matrix), {}};
  out.groups = same_model_report(out.report);
  fs::create_directories(paths_.eval_dir);
  write_text(paths_.report, report_to_json(out.report, out.groups));
  write_text(paths_.matrix_csv, matrix_to_csv(matrix));
  render_heatmap(matrix, paths_.heatmap);
  save_config();
  return out;
}

void Pipeline::plot(const fs::path& out) const {
  require(paths_.report, "evaluate");
  render_heatmap(matrix_from_json(read_text(paths_.report)), out.empty() ? paths_.heatmap : out);
}

}  // namespace camfp
