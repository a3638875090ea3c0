#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "camfprint/pipeline.hpp"
#include "test_util.hpp"

using namespace camfp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run cli(const testutil::TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + CAMFPRINT_CLI + "\" --output-dir \"" + (dir / "run").string() + "\" " +
                          args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace

TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig cfg;
  cfg.seed = 99;
  cfg.output_dir = "somewhere";
  cfg.input_height = cfg.input_width = 128;
  cfg.ingest.synthetic.n_devices = 5;
  cfg.ingest.synthetic.prnu_strength = 0.125;
  cfg.phase1.stop_epoch = 7;
  cfg.phase1.learning_rate = 0.0025;
  cfg.similarity.fc2_units = 32;
  cfg.phase2.pair_sampling = PairSampling::balanced;
  cfg.eval.grid = {0.5, 0.9};
  cfg.eval.min_accuracy = 0.75;
  const auto text = config_to_json(cfg);
  const auto back = config_from_json(text);
  EXPECT_EQ(config_to_json(back), text);
  EXPECT_EQ(back.phase1.stop_epoch, 7);
  EXPECT_EQ(back.phase2.pair_sampling, PairSampling::balanced);
  EXPECT_EQ(back.eval.grid, cfg.eval.grid);
}

TEST(ExperimentConfig, PartialJsonKeepsBase) {
  ExperimentConfig base;
  base.phase1.epochs = 4;
  const auto cfg = config_from_json(R"({"phase1": {"stop_epoch": 2}, "seed": 3})", base);
  EXPECT_EQ(cfg.phase1.epochs, 4);
  EXPECT_EQ(cfg.phase1.stop_epoch, 2);
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_THROW(config_from_json("{\"phase1\": {\"stop_epoch\": 99}}"), ConfigError);
  EXPECT_THROW(config_from_json("not json"), ConfigError);
}

TEST(Cli, UsageErrorsAndMissingInputs) {
  testutil::TempDir dir;
  EXPECT_EQ(cli(dir, "").code, 2);
  EXPECT_EQ(cli(dir, "train").code, 2);  // --phase is required

  const auto missing = cli(dir, "ingest --dresden /definitely/not/here");
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("/definitely/not/here"), std::string::npos);

  const auto phase2 = cli(dir, "train --phase 2");
  EXPECT_EQ(phase2.code, 1);
  EXPECT_NE(phase2.err.find("ingest"), std::string::npos) << phase2.err;
}

TEST(Cli, SyntheticIngestCounts) {
  testutil::TempDir dir;
  const auto r = cli(dir, "--json ingest --synthetic --devices 8 --per-device 40");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["devices"], 8);
  EXPECT_EQ(j["images"], 320);
  EXPECT_EQ(j["train"].get<int>() + j["val"].get<int>() + j["test"].get<int>(), 320);
  EXPECT_TRUE(fs::exists(dir / "run" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "run" / "config.json"));

  // A second ingest refuses to overwrite without --force.
  const auto again = cli(dir, "ingest --synthetic --devices 8 --per-device 40");
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.err.find("--force"), std::string::npos);
  EXPECT_EQ(cli(dir, "--force ingest --synthetic --devices 8 --per-device 40").code, 0);
}

TEST(Cli, TinyEndToEnd) {
  testutil::TempDir dir;
  // Three devices (3 validation images each), tiny budgets: checks wiring, not accuracy.
  ASSERT_EQ(cli(dir, "ingest --synthetic --devices 3 --per-device 20 --size 64").code, 0);
  auto r = cli(dir, "--json train --phase 1 --epochs 2 --stop-epoch 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["epoch"], 1);

  // Phase 2 extracts on demand.
  r = cli(dir, "--json train --phase 2 --epochs 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto p2 = nlohmann::json::parse(r.out);
  EXPECT_GT(p2["train_pairs"].get<int>(), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "sigs.store"));
  EXPECT_TRUE(fs::exists(dir / "run" / "threshold.json"));

  r = cli(dir, "--json extract");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ex = nlohmann::json::parse(r.out);
  EXPECT_EQ(ex["extracted"], 0);
  EXPECT_EQ(ex["already_stored"], 60);
  {
    // Keys are relative to the output directory.
    std::ifstream in(dir / "run" / "sigs.store", std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    EXPECT_NE(bytes.find("images/SynthCam0_0_1.png"), std::string::npos);
    EXPECT_EQ(bytes.find(dir.path().string()), std::string::npos);
  }

  const auto a = (dir / "run" / "images" / "SynthCam0_0_1.png").string();
  const auto b = (dir / "run" / "images" / "SynthCam0_1_2.png").string();
  ASSERT_TRUE(fs::exists(a));
  ASSERT_TRUE(fs::exists(b));
  r = cli(dir, "--json match \"" + a + "\" \"" + b + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(r.out);
  EXPECT_GE(m["score"].get<double>(), 0.0);
  EXPECT_LE(m["score"].get<double>(), 1.0);
  EXPECT_EQ(m["verdict"].get<std::string>() == "SAME", m["score"].get<double>() >= m["eta"].get<double>());

  r = cli(dir, "evaluate --n-pairs 10 --workers 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(dir / "run" / "eval" / "report.json"));
  for (const auto& row : report["matrix"]["cells"]) {
    for (double c : row) EXPECT_NEAR(c * 10, std::round(c * 10), 1e-9);
  }
  EXPECT_TRUE(fs::exists(dir / "run" / "eval" / "matrix.csv"));
  EXPECT_TRUE(fs::exists(dir / "run" / "eval" / "heatmap.png"));

  EXPECT_EQ(cli(dir, "--force evaluate --n-pairs 10 --min-accuracy 1.01").code, 3);

  r = cli(dir, "plot --out \"" + (dir / "again.png").string() + "\"");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "again.png"));

  // Re-training phase 1 is refused without --force.
  r = cli(dir, "train --phase 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
}

TEST(Cli, MatchBeforeTrainingNamesTheMissingStep) {
  testutil::TempDir dir;
  ASSERT_EQ(cli(dir, "ingest --synthetic --devices 2 --per-device 4 --size 64").code, 0);
  const auto r = cli(dir, "match a.png b.png");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("train"), std::string::npos) << r.err;
}
