#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "sphereat/cli/commands.hpp"
#include "support.hpp"

using namespace sphereat;
using namespace sphereat::cli;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& body) {
  const fs::path p = dir / (name + ".cfg");
  std::ofstream(p) << "name = " << name << "\noutput_dir = " << (dir / name).string() << "\n" << body;
  return p;
}

const std::string kBase =
    "data = two-moons\n"
    "moons.train = 200\n"
    "moons.test = 100\n"
    "attack.steps = 3\n"
    "eval.steps = 5\n";
const std::string kMinimal = kBase + "train.framework = pgd-at\ntrain.epochs = 3\n";

/// Trains the minimal config once per process and returns its output directory.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const fs::path root = fixtures::temp_dir("cli-run");
    std::ostringstream out, err;
    const int code = cmd_train(write_config(root, "minimal", kMinimal), out, err);
    if (code != 0) throw std::runtime_error("training failed: " + err.str());
    return root / "minimal";
  }();
  return dir;
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(SPHEREAT_CLI_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST(Config, UnknownKeyNamesTheKey) {
  try {
    parse_config("epslon = 0.1\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key, "epslon");
  }
  EXPECT_THROW(parse_config("train.epochs = 3\ntrain.epochs = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("train.epochs = three\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  const ExperimentConfig c = parse_config("# comment\n\n  train.epochs   =   7  \n");
  EXPECT_EQ(c.train.epochs, 7);
  // only whole-line comments: a trailing '#' is part of the value
  EXPECT_THROW(parse_config("train.epochs = 7 # seven\n"), ConfigError);
}

TEST(Config, ResolvedTextParsesBackToTheSameConfig) {
  const ExperimentConfig a = parse_config("data = mnist\nattack.eps = 8/255\nhead.mode = m-he\n");
  EXPECT_DOUBLE_EQ(a.train.attack.eps, 8.0 / 255.0);
  EXPECT_EQ(a.train.head.margin, 0.1);
  const ExperimentConfig b = parse_config(a.resolved);
  EXPECT_EQ(a.resolved, b.resolved);
}

TEST(Train, ExitCodesAndOutputs) {
  const fs::path& run = trained_run();
  for (const char* f : {"model.ckpt", "history.csv", "config.resolved", "VERSION", "timing.csv"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_EQ(read_file(run / "VERSION"), version_string() + "\n");

  const fs::path root = fixtures::temp_dir("cli-train");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(write_config(root, "typo", "epslon = 0.1\n"), out, err), kExitUsage);
  EXPECT_NE(err.str().find("epslon"), std::string::npos) << err.str();
  EXPECT_EQ(cmd_train(root / "missing.cfg", out, err), kExitUsage);
  EXPECT_EQ(cmd_train(write_config(root, "blowup", kBase + "train.lr = 1e305\ntrain.framework = standard\n"
                                                           "train.lr_decay_at =\n"),
                      out, err),
            kExitNumeric);
}

TEST(Train, RerunIsByteIdentical) {
  const fs::path root = fixtures::temp_dir("cli-rerun");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(write_config(root, "again", kMinimal), out, err), 0) << err.str();
  EXPECT_EQ(read_file(root / "again" / "history.csv"), read_file(trained_run() / "history.csv"));
  EXPECT_EQ(read_file(root / "again" / "model.ckpt"), read_file(trained_run() / "model.ckpt"));
}

TEST(Attack, ZeroBudgetEqualsEvalAndFlagsAreRecorded) {
  const fs::path& run = trained_run();
  std::ostringstream out, err;
  EvalOptions ev;
  ev.target.checkpoint = run / "model.ckpt";
  ev.target.out_dir = run / "eval";
  ASSERT_EQ(cmd_eval(ev, out, err), 0) << err.str();
  const auto eval = nlohmann::json::parse(read_file(run / "eval" / "eval.json"));

  AttackOptions a;
  a.target.checkpoint = run / "model.ckpt";
  a.target.out_dir = run / "zero";
  a.eps = 0.0;
  ASSERT_EQ(cmd_attack(a, out, err), 0) << err.str();
  const auto zero = nlohmann::json::parse(read_file(run / "zero" / "attack.json"));
  EXPECT_EQ(zero["robust_acc"].get<double>(), eval["accuracy"].get<double>());
  EXPECT_EQ(zero["adaptive"].get<bool>(), false);

  AttackOptions bad = a;
  bad.adaptive = true;
  EXPECT_EQ(cmd_attack(bad, out, err), kExitUsage);
  bad = a;
  bad.steps = 0;
  EXPECT_EQ(cmd_attack(bad, out, err), kExitUsage);
  bad = a;
  bad.attack = "deepfool";
  EXPECT_EQ(cmd_attack(bad, out, err), kExitUsage);
}

TEST(Attack, AdaptiveObjectiveOnAnHeRunIsRecordedAndDumped) {
  const fs::path root = fixtures::temp_dir("cli-adaptive");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(write_config(root, "he", kBase + "train.framework = pgd-at\nhead.mode = he\ntrain.epochs = 2\n"),
                      out, err),
            0)
      << err.str();
  AttackOptions ad;
  ad.target.checkpoint = root / "he" / "model.ckpt";
  ad.adaptive = true;
  ad.steps = 3;
  ad.dump = root / "adv.bin";
  ASSERT_EQ(cmd_attack(ad, out, err), 0) << err.str();
  const auto adaptive = nlohmann::json::parse(read_file(root / "he" / "attack" / "attack.json"));
  EXPECT_EQ(adaptive["adaptive"].get<bool>(), true);
  EXPECT_EQ(adaptive["objective"].get<std::string>(), "margin-ce");
  EXPECT_EQ(adaptive["head"].get<std::string>(), "he");
  const Dataset dumped = import_dataset(load_archive(root / "adv.bin"));
  EXPECT_EQ(dumped.size(), 100u);
  for (double v : dumped.inputs.storage()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Attack, CheckpointVersionMismatchIsAUsageError) {
  const fs::path root = fixtures::temp_dir("cli-version");
  std::string bytes = read_file(trained_run() / "model.ckpt");
  bytes[8] = 9;
  std::ofstream(root / "model.ckpt", std::ios::binary) << bytes;
  fs::copy_file(trained_run() / "config.resolved", root / "config.resolved");
  AttackOptions a;
  a.target.checkpoint = root / "model.ckpt";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_attack(a, out, err), kExitUsage);
}

TEST(GradRatio, WritesOneRowPerLayer) {
  GradRatioOptions g;
  g.target.checkpoint = trained_run() / "model.ckpt";
  g.probes = 50;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_grad_ratio(g, out, err), 0) << err.str();
  const std::string csv = read_file(trained_run() / "grad-ratio" / "grad_ratio.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);  // header + fc1 fc2 feature softmax
}

TEST(Verify, SelectorsAndJson) {
  EXPECT_TRUE(valid_selector("all"));
  EXPECT_FALSE(valid_selector("lemma3"));
  std::ostringstream out, err;
  EXPECT_EQ(cmd_verify("lemma3", "", out, err), kExitUsage);
  const fs::path root = fixtures::temp_dir("cli-verify");
  ASSERT_EQ(cmd_verify("lemma2", root, out, err), 0) << err.str();
  const auto j = nlohmann::json::parse(read_file(root / "verify.json"));
  ASSERT_FALSE(j["checks"].empty());
  for (const auto& c : j["checks"]) EXPECT_LT(c["value"].get<double>(), 1e-10);
}

TEST(Report, SchemaRowsAndErrors) {
  const fs::path root = fixtures::temp_dir("cli-report");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(write_config(root, "he", kBase + "train.framework = pgd-at\nhead.mode = he\ntrain.epochs = 2\n"), out, err), 0);
  std::ostringstream rep;
  ASSERT_EQ(cmd_report({trained_run(), root / "he"}, root / "table.csv", rep, err), 0) << err.str();
  const std::string csv = read_file(root / "table.csv");
  std::istringstream lines(csv);
  std::string header, first, second, extra;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  EXPECT_FALSE(static_cast<bool>(std::getline(lines, extra)));
  EXPECT_EQ(header, "run,framework,he,clean_acc,robust_acc,attack,eps,steps");
  EXPECT_EQ(first.substr(0, 22), "minimal,pgd-at,standar");
  EXPECT_EQ(second.substr(0, 13), "he,pgd-at,he,");
  EXPECT_NE(rep.str().find("framework"), std::string::npos);

  EXPECT_EQ(cmd_report({}, "", out, err), kExitUsage);
  EXPECT_EQ(cmd_report({root / "nothing-here"}, "", out, err), kExitUsage);
}

TEST(Binary, ExitCodes) {
  EXPECT_EQ(run_binary("--version"), 0);
  EXPECT_EQ(run_binary(""), 2);
  EXPECT_EQ(run_binary("frobnicate"), 2);
  EXPECT_EQ(run_binary("verify lemma3"), 2);
  EXPECT_EQ(run_binary("verify eq16"), 0);
  EXPECT_EQ(run_binary("attack " + (trained_run() / "model.ckpt").string() + " --steps 0"), 2);
  EXPECT_EQ(run_binary("attack " + (trained_run() / "model.ckpt").string() + " --steps nine"), 2);
  EXPECT_EQ(run_binary("eval " + (trained_run() / "model.ckpt").string() + " --corruption fog"), 2);
  EXPECT_EQ(run_binary("report"), 2);
}
