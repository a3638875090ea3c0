// camfprint: source camera identification from sensor noise.
#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "camfprint/pipeline.hpp"

namespace fs = std::filesystem;
using namespace camfp;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitBelowFloor = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  bool json = false;
  bool force = false;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg;
  if (!g.config.empty()) cfg = load_config(g.config);
  fs::path out = cfg.output_dir;
  if (!g.output_dir.empty()) {
    out = g.output_dir;
  } else if (const char* env = std::getenv("CAMFPRINT_OUTPUT_DIR"); env && *env) {
    out = env;
  }
  if (g.config.empty() && fs::exists(out / "config.json")) cfg = load_config(out / "config.json");
  cfg.output_dir = out;
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

void print_json(const ojson& j) { std::cout << j.dump(2) << "\n"; }

ojson log_json(const std::vector<EpochLog>& log) {
  auto arr = ojson::array();
  for (const auto& e : log) {
    ojson o;
    o["epoch"] = e.epoch;
    o["train_loss"] = e.train_loss;
    o["val_loss"] = e.val_loss;
    o["train_acc"] = e.train_acc;
    o["val_acc"] = e.val_acc;
    if (e.val_f1 >= 0) o["val_f1"] = e.val_f1;
    arr.push_back(std::move(o));
  }
  return arr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camfprint: source camera identification from sensor noise"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--output-dir", g.output_dir, "Artifact directory (default: $CAMFPRINT_OUTPUT_DIR)");
  app.add_flag("--json", g.json, "Machine-readable output");
  app.add_flag("--force", g.force, "Recompute artifacts that already exist");

  auto* ingest = app.add_subcommand("ingest", "Build the labelled, split manifest");
  std::string dresden;
  bool synthetic = false;
  std::optional<int> devices, per_device, size, scene_pool;
  std::optional<double> prnu, fpn, shot, train_frac;
  std::optional<std::size_t> min_images;
  auto* dresden_opt = ingest->add_option("--dresden", dresden, "Dresden image root");
  auto* synth_opt = ingest->add_flag("--synthetic", synthetic, "Generate a synthetic sensor-noise corpus");
  dresden_opt->excludes(synth_opt);
  ingest->add_option("--devices", devices, "Synthetic device count")->needs(synth_opt);
  ingest->add_option("--per-device", per_device, "Synthetic images per device")->needs(synth_opt);
  ingest->add_option("--size", size, "Synthetic image side in pixels")->needs(synth_opt);
  ingest->add_option("--prnu", prnu, "Synthetic PRNU strength")->needs(synth_opt);
  ingest->add_option("--fpn", fpn, "Synthetic FPN strength (8-bit units)")->needs(synth_opt);
  ingest->add_option("--shot-noise", shot, "Synthetic shot-noise scale")->needs(synth_opt);
  ingest->add_option("--scene-pool", scene_pool, "Number of distinct synthetic scenes")->needs(synth_opt);
  ingest->add_option("--min-images", min_images, "Drop devices with fewer images");
  ingest->add_option("--train-frac", train_frac, "Train+validation fraction");

  auto* train = app.add_subcommand("train", "Train phase 1 (signature net) or phase 2 (similarity net)");
  int phase = 0;
  std::optional<int> stop_epoch, epochs, input_size;
  train->add_option("--phase", phase, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--stop-epoch", stop_epoch, "Phase 1: epoch whose weights are kept");
  train->add_option("--epochs", epochs, "Number of epochs");
  train->add_option("--input-size", input_size, "Phase 1: square network input side");

  auto* extract = app.add_subcommand("extract", "Embed every manifest image into the signature store");

  auto* match = app.add_subcommand("match", "Score whether two images come from the same camera");
  std::string image_a, image_b;
  match->add_option("image_a", image_a)->required();
  match->add_option("image_b", image_b)->required();

  auto* evaluate = app.add_subcommand("evaluate", "Device similarity matrix on the test split");
  std::optional<int> n_pairs, workers;
  std::optional<double> min_accuracy;
  evaluate->add_option("--n-pairs", n_pairs, "Sampled pairs per cell");
  evaluate->add_option("--workers", workers, "Worker threads");
  evaluate->add_option("--min-accuracy", min_accuracy, "Exit non-zero below this overall accuracy");

  auto* plot = app.add_subcommand("plot", "Render the similarity heatmap from the saved report");
  std::string plot_out;
  plot->add_option("--out", plot_out, "PNG path (default: eval/heatmap.png)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    ExperimentConfig cfg = resolve_config(g);

    if (ingest->parsed()) {
      auto& in = cfg.ingest;
      if (!dresden.empty()) {
        in.dresden_root = dresden;
      } else if (synthetic) {
        in.dresden_root.clear();
      }
      if (devices) in.synthetic.n_devices = *devices;
      if (per_device) in.synthetic.images_per_device = *per_device;
      if (size) in.synthetic.height = in.synthetic.width = *size;
      if (prnu) in.synthetic.prnu_strength = *prnu;
      if (fpn) in.synthetic.fpn_strength = *fpn;
      if (shot) in.synthetic.shot_noise_scale = *shot;
      if (scene_pool) in.synthetic.scene_pool = *scene_pool;
      if (min_images) in.min_images = *min_images;
      if (train_frac) in.train_frac = *train_frac;
      if (in.dresden_root.empty() && !synthetic && g.config.empty()) {
        throw ConfigError("ingest: pass --dresden ROOT or --synthetic");
      }
      // Input size follows the new corpus unless set explicitly.
      if (g.config.empty()) cfg.input_height = cfg.input_width = 0;
      Pipeline p(cfg, g.force, &std::cerr);
      const auto s = p.ingest();
      const auto& m = s.manifest;
      if (g.json) {
        ojson j;
        j["manifest"] = p.paths().manifest.string();
        j["devices"] = m.devices.size();
        j["images"] = m.records.size();
        j["train"] = m.count(Split::train);
        j["val"] = m.count(Split::val);
        j["test"] = m.count(Split::test);
        j["devices_dropped"] = s.devices_dropped;
        j["skipped_unparseable"] = s.skipped_unparseable;
        j["skipped_undecodable"] = s.skipped_undecodable;
        print_json(j);
      } else {
        std::cout << m.devices.size() << " devices, " << m.records.size() << " images (train "
                  << m.count(Split::train) << ", val " << m.count(Split::val) << ", test " << m.count(Split::test)
                  << ")\n";
        if (s.devices_dropped) std::cout << s.devices_dropped << " devices dropped below min-images\n";
        if (s.skipped_unparseable || s.skipped_undecodable) {
          std::cout << "skipped " << s.skipped_unparseable << " unparseable names, " << s.skipped_undecodable
                    << " undecodable files\n";
        }
      }
    } else if (train->parsed()) {
      if (phase == 1) {
        if (epochs) cfg.phase1.epochs = *epochs;
        if (stop_epoch) cfg.phase1.stop_epoch = *stop_epoch;
        if (input_size) cfg.input_height = cfg.input_width = *input_size;
        Pipeline p(cfg, g.force, &std::cerr);
        const auto s = p.train_phase1();
        if (g.json) {
          ojson j;
          j["checkpoint"] = p.paths().phase1_ckpt.string();
          j["epoch"] = s.epoch;
          j["extractor_version"] = to_hex(s.extractor_version);
          j["log"] = log_json(s.log);
          print_json(j);
        } else {
          std::cout << "phase 1 checkpoint (epoch " << s.epoch << ") -> " << p.paths().phase1_ckpt.string() << "\n";
        }
      } else {
        if (stop_epoch) throw ConfigError("--stop-epoch applies to phase 1 only");
        if (epochs) cfg.phase2.epochs = *epochs;
        Pipeline p(cfg, g.force, &std::cerr);
        const auto s = p.train_phase2();
        if (g.json) {
          ojson j;
          j["checkpoint"] = p.paths().phase2_ckpt.string();
          j["train_pairs"] = s.train_pairs;
          j["val_pairs"] = s.val_pairs;
          j["eta"] = s.threshold.eta;
          j["selection_f1"] = s.threshold.selection_f1;
          j["symmetry_gap"] = s.symmetry_gap;
          j["log"] = log_json(s.log);
          print_json(j);
        } else {
          std::cout << "phase 2: " << s.train_pairs << " training pairs, eta " << s.threshold.eta
                    << " (validation F1 " << s.threshold.selection_f1 << ", symmetry gap " << s.symmetry_gap
                    << ")\n";
        }
      }
    } else if (extract->parsed()) {
      Pipeline p(cfg, g.force, &std::cerr);
      const auto s = p.extract();
      if (g.json) {
        ojson j;
        j["extracted"] = s.extracted;
        j["already_stored"] = s.already_stored;
        j["extractor_version"] = to_hex(s.extractor_version);
        print_json(j);
      } else {
        std::cout << s.extracted << " signatures extracted, " << s.already_stored << " already stored\n";
      }
    } else if (match->parsed()) {
      const Pipeline p(cfg, false);
      const auto r = p.match(image_a, image_b);
      if (g.json) {
        ojson j;
        j["image_a"] = image_a;
        j["image_b"] = image_b;
        j["score"] = r.score;
        j["eta"] = r.eta;
        j["verdict"] = r.same ? "SAME" : "DIFFERENT";
        print_json(j);
      } else {
        std::cout << "score " << r.score << " eta " << r.eta << " " << (r.same ? "SAME" : "DIFFERENT") << "\n";
      }
    } else if (evaluate->parsed()) {
      if (n_pairs) cfg.eval.n_pairs_per_cell = *n_pairs;
      if (workers) cfg.eval.workers = *workers;
      if (min_accuracy) cfg.eval.min_accuracy = *min_accuracy;
      Pipeline p(cfg, g.force, &std::cerr);
      const auto out = p.evaluate();
      const auto& r = out.report;
      if (g.json) {
        ojson j;
        j["overall_accuracy"] = r.overall_accuracy;
        j["diagonal_mean"] = r.diagonal_mean;
        j["devices"] = r.matrix.size();
        j["report"] = p.paths().report.string();
        j["heatmap"] = p.paths().heatmap.string();
        print_json(j);
      } else {
        std::cout << "overall accuracy " << r.overall_accuracy << " (diagonal mean " << r.diagonal_mean << ", "
                  << r.matrix.size() << " devices)\n";
        for (std::size_t k = 0; k < std::min<std::size_t>(5, r.worst_confusions.size()); ++k) {
          const auto& c = r.worst_confusions[k];
          std::cout << "  confused " << c.device_a << " / " << c.device_b << " error " << c.error
                    << (c.same_model ? " (same model)" : "") << "\n";
        }
      }
      if (r.overall_accuracy < cfg.eval.min_accuracy) {
        std::cerr << "overall accuracy " << r.overall_accuracy << " below floor " << cfg.eval.min_accuracy << "\n";
        return kExitBelowFloor;
      }
    } else if (plot->parsed()) {
      const Pipeline p(cfg, false);
      p.plot(plot_out);
      if (!g.json) std::cout << (plot_out.empty() ? p.paths().heatmap.string() : plot_out) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
