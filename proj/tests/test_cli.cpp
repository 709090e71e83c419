#include <fstream>
#include <sstream>

#include <json.hpp>

#include "clcagan/cli/commands.hpp"
#include "clcagan/cli/reports.hpp"
#include "clcagan/cli/run_config.hpp"
#include "clcagan/binary_io.hpp"
#include "test_support.hpp"

using namespace clcagan;
using nlohmann::json;
using testing_support::TempDir;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "clcagan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void synth(const TempDir& dir, const std::string& name, int seed, const std::string& size = "14x14x4") {
  const auto r = invoke({"synth", "--seed", std::to_string(seed), "--size", size, "--anomalies", "1", "--max-radius",
                         "1", "--out", (dir / name).string()});
  ASSERT_EQ(r.code, 0) << r.err;
}

std::vector<std::string> quick_train() {
  return {"train", "--epochs", "1", "--set", "batch_size=32", "--set", "arch.g_hidden=16", "--set",
          "arch.dec_hidden=16", "--set", "replay_capacity=10"};
}

}  // namespace

TEST(Cli, SynthWritesSceneFiles) {
  TempDir dir("cli");
  synth(dir, "s", 3);
  const auto cube = load_hsi(dir / "s" / "scene.hsib");
  EXPECT_EQ(cube.channels(), 4u);
  EXPECT_NO_THROW(load_mask(dir / "s" / "truth.msk"));
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"bogus"}).code, 2);
  EXPECT_EQ(invoke({"synth"}).code, 2);
  TempDir dir("cli");
  EXPECT_EQ(invoke({"synth", "--size", "12x12", "--out", (dir / "x").string()}).code, 2);
  EXPECT_EQ(invoke({"train", "--out", (dir / "t").string()}).code, 2);
  synth(dir, "s", 3);
  auto r = invoke({"train", "--scene", (dir / "s").string(), "--out", (dir / "t").string(), "--mode", "nope"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("mode"), std::string::npos);
  EXPECT_EQ(invoke({"train", "--scene", (dir / "s").string(), "--out", (dir / "t").string(), "--set", "nokey=1"}).code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "t" / "manifest.json"));
}

TEST(Cli, DataErrorsExitThreeBeforeWriting) {
  TempDir dir("cli");
  auto r = invoke({"train", "--scene", (dir / "missing").string(), "--out", (dir / "t").string(), "--epochs", "1"});
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(std::filesystem::exists(dir / "t"));
  synth(dir, "s", 3);
  synth(dir, "big", 4, "16x16x4");
  const auto mismatched = (dir / "s" / "scene.hsib").string() + "," + (dir / "big" / "truth.msk").string();
  EXPECT_EQ(invoke({"train", "--scene", mismatched, "--out", (dir / "t").string()}).code, 3);
  EXPECT_FALSE(std::filesystem::exists(dir / "t"));
}

TEST(Cli, TrainDetectReportRoundTrip) {
  TempDir dir("cli");
  synth(dir, "a", 3);
  synth(dir, "b", 4);
  auto args = quick_train();
  args.insert(args.end(), {"--scene", (dir / "a").string(), "--scene", (dir / "b").string(), "--out", (dir / "run").string(), "--seed", "5"});
  const auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("stage 2"), std::string::npos);

  const auto manifest = read_json(dir / "run" / "manifest.json");
  EXPECT_EQ(manifest["seed"], 5);
  EXPECT_EQ(manifest["mode"], "full");
  EXPECT_EQ(manifest["config"]["flags"]["epochs"], 1);
  EXPECT_EQ(manifest["config"]["resolved"]["batch_size"], 32);
  EXPECT_EQ(manifest["config"]["defaults"]["batch_size"], 64);
  EXPECT_EQ(manifest["tasks"].size(), 2u);
  ASSERT_EQ(manifest["stages"].size(), 2u);
  for (const char* f : {"stage_1.caps", "stage_2.caps", "buffer_stage_1.rply", "buffer_stage_2.rply", "buffer.rply",
                        "auc_matrix.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
  }
  const auto matrix = cli::auc_matrix_from_json(read_json(dir / "run" / "auc_matrix.json"));
  ASSERT_EQ(matrix.size(), 2u);

  // detect on task b with the final checkpoint reproduces the matrix entry
  const auto d = invoke({"detect", "--checkpoint", (dir / "run" / "stage_2.caps").string(), "--scene",
                         (dir / "b").string(), "--out", (dir / "det").string()});
  ASSERT_EQ(d.code, 0) << d.err;
  const auto report = read_json(dir / "det" / "report.json");
  EXPECT_EQ(report["auc_df"].get<double>(), *matrix[1][1]);
  EXPECT_LT(report["identity_residual"].get<double>(), 1e-9);
  const auto scores = load_score_map(dir / "det" / "scores.scm");
  EXPECT_EQ(scores.height, 14u);
  EXPECT_TRUE(scores.normalized);

  const auto rep = invoke({"report", "--matrix", (dir / "run" / "auc_matrix.json").string(), "--out",
                           (dir / "rep").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  const auto metrics = read_json(dir / "rep" / "metrics.json");
  const auto want = cl_metrics(matrix);
  EXPECT_EQ(metrics["acc"].get<double>(), want.acc);
  EXPECT_EQ(metrics["bwt"].get<double>(), *want.bwt);
}

TEST(Cli, DetectRejectsBandMismatch) {
  TempDir dir("cli");
  synth(dir, "a", 3);
  synth(dir, "narrow", 4, "14x14x2");
  auto args = quick_train();
  args.insert(args.end(), {"--scene", (dir / "a").string(), "--out", (dir / "run").string()});
  ASSERT_EQ(invoke(args).code, 0);
  const auto d = invoke({"detect", "--checkpoint", (dir / "run" / "stage_1.caps").string(), "--scene",
                         (dir / "narrow").string(), "--out", (dir / "det").string()});
  EXPECT_EQ(d.code, 3);
  EXPECT_NE(d.err.find("model needs 4"), std::string::npos) << d.err;
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  TempDir dir("cli");
  synth(dir, "a", 3);
  for (const char* out : {"r1", "r2"}) {
    auto args = quick_train();
    args.insert(args.end(), {"--scene", (dir / "a").string(), "--out", (dir / out).string()});
    ASSERT_EQ(invoke(args).code, 0);
  }
  for (const char* f : {"stage_1.caps", "buffer.rply", "auc_matrix.json"}) {
    EXPECT_EQ(io::read_file(dir / "r1" / f), io::read_file(dir / "r2" / f)) << f;
  }
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
  TempDir dir("cli");
  synth(dir, "a", 3);
  synth(dir, "b", 4);
  const auto a = (dir / "a").string();
  const auto b = (dir / "b").string();
  auto full = quick_train();
  full.insert(full.end(), {"--scene", a, "--scene", b, "--out", (dir / "full").string()});
  ASSERT_EQ(invoke(full).code, 0);
  auto first = quick_train();
  first.insert(first.end(), {"--scene", a, "--out", (dir / "first").string()});
  ASSERT_EQ(invoke(first).code, 0);
  auto rest = quick_train();
  rest.insert(rest.end(), {"--scene", a, "--scene", b, "--out", (dir / "rest").string(), "--resume",
                           (dir / "first").string()});
  const auto r = invoke(rest);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("stage 1"), std::string::npos);
  for (const char* f : {"stage_1.caps", "stage_2.caps", "buffer.rply", "auc_matrix.json"}) {
    EXPECT_EQ(io::read_file(dir / "full" / f), io::read_file(dir / "rest" / f)) << f;
  }
  auto changed = quick_train();
  changed.insert(changed.end(), {"--scene", a, "--scene", b, "--out", (dir / "bad").string(), "--resume",
                                 (dir / "first").string(), "--seed", "99"});
  EXPECT_EQ(invoke(changed).code, 2);
}

TEST(Cli, ConfigFileAndFlagsMerge) {
  TempDir dir("cli");
  synth(dir, "a", 3);
  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"epochs": 1, "batch_size": 32, "mode": "fine_tune", "arch": {"g_hidden": 16}})";
  }
  const auto r = invoke({"train", "--config", (dir / "cfg.json").string(), "--scene", (dir / "a").string(), "--out",
                         (dir / "run").string(), "--mode", "replay_only"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(dir / "run" / "manifest.json");
  EXPECT_EQ(m["mode"], "replay_only");
  EXPECT_EQ(m["config"]["file"]["mode"], "fine_tune");
  EXPECT_EQ(m["config"]["resolved"]["arch"]["g_hidden"], 16);
  EXPECT_EQ(m["config"]["resolved"]["epochs"], 1);
}

TEST(RunConfig, JsonRoundTripAndAssignments) {
  cli::RunConfig c;
  c.train.epochs = 3;
  c.train.augment.brightness = 0.05;
  c.train.arch.coupling = CouplingMode::RawLogits;
  c.scenes = {"x", "y"};
  const auto back = cli::config_from_json(cli::config_to_json(c));
  EXPECT_EQ(back.train, c.train);
  EXPECT_EQ(back.scenes, c.scenes);
  json j = json::object();
  cli::apply_assignment(j, "arch.latent_dim=8");
  cli::apply_assignment(j, "mode=joint");
  EXPECT_EQ(j["arch"]["latent_dim"], 8);
  EXPECT_EQ(j["mode"], "joint");
  EXPECT_ERROR_CODE(cli::apply_assignment(j, "novalue"), ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(cli::config_from_json(json{{"unknown", 1}}), ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(cli::config_from_json(json{{"epochs", "many"}}), ErrorCode::ConfigError);
  EXPECT_EQ(cli::config_from_json(json{{"replay_policy", "append"}}).train.replay_policy, ReplayPolicy::Append);
  EXPECT_ERROR_CODE(cli::config_from_json(json{{"replay_policy", "reselect"}}), ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(cli::config_from_json(json{{"replay_policy", "merge"}}), ErrorCode::ConfigError);
}

TEST(Reports, NumbersAndMatricesRoundTrip) {
  AucReport r = auc_from_bases(0.9, 0.1, 0.0);
  const auto back = cli::auc_report_from_json(cli::auc_report_json(r));
  EXPECT_TRUE(std::isinf(back.auc_snpr));
  EXPECT_EQ(back.auc_df, 0.9);
  AucMatrix m = {{0.5, std::nullopt}, {0.25, 0.75}};
  EXPECT_EQ(cli::auc_matrix_from_json(cli::auc_matrix_json(m)), m);
}
