#include <iostream>

#include <CLI11.hpp>

#include "sphereat/cli/commands.hpp"

using namespace sphereat;
using namespace sphereat::cli;

namespace {

void add_target(CLI::App* cmd, TargetOptions& t) {
  cmd->add_option("checkpoint", t.checkpoint, "Checkpoint file")->required();
  cmd->add_option("--config", t.config, "Experiment config (default: config.resolved beside the checkpoint)");
  cmd->add_option("--limit", t.limit, "Use only the first N test examples (0 = all)");
  cmd->add_option("--out", t.out_dir, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_env();
  CLI::App app{"Adversarial training with hypersphere embedding"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  std::string train_config;
  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("config", train_config, "Config file (key = value lines)")->required();

  EvalOptions eval;
  std::string corruption;
  int severity = 1;
  auto* ev = app.add_subcommand("eval", "Clean or corrupted accuracy of a checkpoint");
  add_target(ev, eval.target);
  ev->add_option("--corruption", corruption, "gaussian-noise | brightness | contrast | pixelate");
  ev->add_option("--severity", severity, "Corruption severity 1..5");
  ev->add_option("--seed", eval.seed, "Corruption seed");

  AttackOptions attack;
  double eps = 0.0, step = 0.0;
  auto* at = app.add_subcommand("attack", "Robust accuracy under an attack");
  add_target(at, attack.target);
  at->add_option("--attack", attack.attack, "fgsm | bim | pgd | mim | nes | spsa");
  at->add_option("--steps", attack.steps, "Iterations K");
  auto* eps_opt = at->add_option("--eps", eps, "Budget (default: data source budget)");
  auto* step_opt = at->add_option("--step", step, "Step size");
  at->add_option("--restarts", attack.restarts, "Random restarts");
  at->add_option("--norm", attack.norm, "linf | l2");
  at->add_flag("--adaptive", attack.adaptive, "Use the scaled margin training loss (he / m-he heads)");
  at->add_flag("--fn", attack.fn, "Feature-normalise inside the attack objective");
  at->add_option("--mu", attack.mu, "MIM momentum decay");
  at->add_option("--q", attack.q, "Zeroth-order samples per estimate");
  at->add_option("--sigma", attack.sigma, "Zeroth-order smoothing");
  at->add_option("--seed", attack.seed, "Attack seed");
  at->add_option("--dump", attack.dump, "Write the adversarial inputs to this archive");

  GradRatioOptions ratio;
  auto* gr = app.add_subcommand("grad-ratio", "Per-layer adversarial/clean gradient-norm ratios");
  add_target(gr, ratio.target);
  gr->add_option("--probes", ratio.probes, "Number of test examples");

  std::string selector;
  std::string verify_out;
  auto* ver = app.add_subcommand("verify", "Run identity checks");
  ver->add_option("selector", selector, "lemma1 | lemma2 | eq14 | eq15 | eq16 | directions | all")->required();
  ver->add_option("--out", verify_out, "Directory for verify.json");

  std::vector<std::string> dirs;
  std::string csv;
  auto* rep = app.add_subcommand("report", "Merge run directories into a comparison table");
  rep->add_option("runs", dirs, "Run directories");
  rep->add_option("--csv", csv, "Write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (train->parsed()) return cmd_train(train_config, std::cout, std::cerr);
  if (ev->parsed()) {
    if (!corruption.empty()) {
      try {
        eval.corruption = CorruptionSpec{parse_corruption(corruption), severity};
      } catch (const std::exception& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
      }
    }
    return cmd_eval(eval, std::cout, std::cerr);
  }
  if (at->parsed()) {
    if (eps_opt->count()) attack.eps = eps;
    if (step_opt->count()) attack.step = step;
    return cmd_attack(attack, std::cout, std::cerr);
  }
  if (gr->parsed()) return cmd_grad_ratio(ratio, std::cout, std::cerr);
  if (ver->parsed()) return cmd_verify(selector, verify_out, std::cout, std::cerr);
  if (rep->parsed()) return cmd_report({dirs.begin(), dirs.end()}, csv, std::cout, std::cerr);
  return kExitUsage;
}
