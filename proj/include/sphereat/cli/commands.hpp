#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sphereat/cli/config.hpp"

namespace sphereat::cli {

enum ExitCode : int { kExitOk = 0, kExitAssertion = 1, kExitUsage = 2, kExitNumeric = 3 };

std::string version_string();

/// Applies SPHERE_AT_THREADS (default 1) to the attack worker pool.
void apply_thread_env();

int cmd_train(const std::filesystem::path& config, std::ostream& out, std::ostream& err);

/// Where to evaluate a checkpoint. When `config` is empty the resolved config
/// next to the checkpoint (or in its parent) is used, falling back to the
/// defaults for the data source implied by the architecture.
struct TargetOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path config;
  std::size_t limit = 0;  // evaluate the first `limit` test examples (0 = all)
  std::filesystem::path out_dir;
};

struct EvalOptions {
  TargetOptions target;
  std::optional<CorruptionSpec> corruption;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);

struct AttackOptions {
  TargetOptions target;
  std::string attack = "pgd";  // fgsm | bim | pgd | mim | nes | spsa
  int steps = 20;
  std::optional<double> eps;   // default: the data source budget
  std::optional<double> step;
  int restarts = 1;
  std::string norm = "linf";
  bool adaptive = false;
  bool fn = false;
  double mu = 1.0;
  int q = 128;
  double sigma = 0.001;
  std::uint64_t seed = 0;
  std::filesystem::path dump;  // write the adversarial batch as a tensor archive
};

int cmd_attack(const AttackOptions& opt, std::ostream& out, std::ostream& err);

/// Per-layer E(|grad L(x*)| / |grad L(x)|) over the first `probes` test
/// examples, x* crafted with the run's evaluation attack. Writes grad_ratio.csv.
struct GradRatioOptions {
  TargetOptions target;
  std::size_t probes = 512;
};

int cmd_grad_ratio(const GradRatioOptions& opt, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// verify

struct CheckResult {
  std::string suite;
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<", ">=", or "info" for ungated diagnostics
  bool passed = true;
};

/// Selectors: lemma1, lemma2, eq14, eq15, eq16, directions, all.
bool valid_selector(const std::string& selector);
std::vector<CheckResult> run_verify(const std::string& selector, std::uint64_t seed = 0);
std::string checks_json(const std::string& selector, const std::vector<CheckResult>& checks);

int cmd_verify(const std::string& selector, const std::filesystem::path& out_dir, std::ostream& out,
               std::ostream& err);

// ---------------------------------------------------------------------------
// report

struct ReportRow {
  std::string run;
  std::string framework;
  std::string he;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  std::string attack;
  double eps = 0.0;
  int steps = 0;
};

ReportRow summarize_run(const std::filesystem::path& dir);
std::string report_csv(const std::vector<ReportRow>& rows);
std::string report_table(const std::vector<ReportRow>& rows);

int cmd_report(const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& out_csv,
               std::ostream& out, std::ostream& err);

/// Writes `config.resolved` and `VERSION` into `dir`.
void write_run_metadata(const std::filesystem::path& dir, const std::string& resolved);

}  // namespace sphereat::cli
