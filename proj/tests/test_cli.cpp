#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "amda/cli.hpp"
#include "support.hpp"

using namespace amda;
namespace fs = std::filesystem;

namespace {

ExperimentConfig toy_config(const fs::path& out) {
  auto c = load_config(test::data_path("toy/toy.cfg"));
  c.output_dir = out.string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void run_quiet(const std::string& cmd, const ExperimentConfig& c, cli::RunOptions opts = {}) {
  std::ostringstream log;
  cli::run(cmd, c, opts, log);
}

}  // namespace

TEST(Cli, TrainThenTargetedEvaluationOnToyData) {
  auto out = test::scratch_dir("cli_smoke");
  auto c = toy_config(out);
  const auto start = std::chrono::steady_clock::now();
  run_quiet("train", c);
  run_quiet("eval-tae", c);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::minutes(15));
  ASSERT_TRUE(fs::exists(out / "model.ckpt"));
  auto report = report_from_json(nlohmann::json::parse(slurp(out / "report_tae_model_pwws.json")));
  EXPECT_EQ(report.mode, EvalMode::tae);
  EXPECT_EQ(report.examples, 200u);
  EXPECT_EQ(report.config_hash, c.hash());
  EXPECT_EQ(report.seed, 1u);
  EXPECT_LE(report.after_attack_accuracy, report.clean_accuracy);
  EXPECT_EQ(load_checkpoint((out / "model.ckpt").string()).config_hash, c.hash());
  auto records = slurp(out / "tae_model_pwws.jsonl");
  auto header = nlohmann::json::parse(records.substr(0, records.find('\n')));
  EXPECT_EQ(header["_meta"]["config_hash"], c.hash());
  EXPECT_EQ(header["_meta"]["seed"], 1);
}

TEST(Cli, ReportOnEmptyDirectoryFails) {
  auto out = test::scratch_dir("cli_empty");
  auto c = toy_config(out);
  try {
    run_quiet("report", c);
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("no reports found"), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(out / "report.failed"));
}

TEST(Cli, RerunsProduceIdenticalBytes) {
  auto a = test::scratch_dir("cli_det_a"), b = test::scratch_dir("cli_det_b");
  for (const auto& dir : {a, b}) {
    auto c = toy_config(dir);
    run_quiet("train", c);
    run_quiet("eval-sae", c);
    run_quiet("report", c);
  }
  for (const char* f : {"model.ckpt", "train_model.json", "sae_model_pwws.jsonl", "report_sae_model_pwws.json",
                        "report.md", "sweep_curves.csv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  // Same directory again: overwritten with the same bytes.
  const auto before = slurp(a / "model.ckpt");
  run_quiet("train", toy_config(a));
  EXPECT_EQ(slurp(a / "model.ckpt"), before);
}

TEST(Cli, StaticSetIsRebuiltWhenAttackerChanges) {
  auto out = test::scratch_dir("cli_sae");
  auto c = toy_config(out);
  run_quiet("train", c);
  run_quiet("eval-sae", c);
  const auto first = slurp(out / "sae_model_pwws.jsonl");
  c.attack.top_k = 2;
  std::ostringstream log;
  cli::run("eval-sae", c, {}, log);
  EXPECT_NE(log.str().find("stale SAE set"), std::string::npos);
  EXPECT_NE(slurp(out / "sae_model_pwws.jsonl"), first);
}

TEST(Cli, MissingCheckpointIsFlagged) {
  auto out = test::scratch_dir("cli_missing");
  auto c = toy_config(out);
  EXPECT_THROW(run_quiet("eval-tae", c), InputError);
  EXPECT_TRUE(fs::exists(out / "eval-tae.failed"));
  EXPECT_THROW(run_quiet("train-amda", c), InputError);  // no augmented.jsonl yet
}

TEST(Cli, UnknownSubcommandRejected) {
  auto c = toy_config(test::scratch_dir("cli_unknown"));
  EXPECT_THROW(run_quiet("fly", c), ConfigError);
}

TEST(Cli, ExecutableReportsFieldLevelConfigErrors) {
  auto out = test::scratch_dir("cli_exe");
  const auto err = out / "stderr.txt";
  const std::string cmd = std::string(AMDA_CLI_PATH) + " train -c " + test::data_path("toy/toy.cfg") +
                          " --set train.lr=fast 2> " + err.string();
  const int status = std::system(cmd.c_str());
  EXPECT_NE(status, 0);
  EXPECT_NE(slurp(err).find("train.lr"), std::string::npos);
  const std::string ok = "AMDA_OUTPUT_DIR=" + out.string() + " " + AMDA_CLI_PATH + " train -c " +
                         test::data_path("toy/toy.cfg") + " --set train.epochs=1 > /dev/null";
  EXPECT_EQ(std::system(ok.c_str()), 0);
  EXPECT_TRUE(fs::exists(out / "model.ckpt"));
}
