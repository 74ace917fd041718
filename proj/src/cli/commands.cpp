#include "sphereat/cli/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sphereat/analysis/analysis.hpp"
#include "sphereat/diffcore/rng.hpp"
#include "sphereat/kv.hpp"

#ifndef SPHEREAT_VERSION
#define SPHEREAT_VERSION "0.0.0"
#endif

namespace sphereat::cli {

namespace fs = std::filesystem;
using diff::Tensor;
using json = nlohmann::ordered_json;

std::string version_string() { return std::string("sphere_at ") + SPHEREAT_VERSION; }

void apply_thread_env() {
  unsigned n = 1;
  if (const char* v = std::getenv("SPHERE_AT_THREADS")) {
    try {
      const auto parsed = parse_int(v);
      if (parsed >= 1) n = static_cast<unsigned>(parsed);
    } catch (const std::exception&) {
    }
  }
  set_attack_threads(n);
}

void write_run_metadata(const fs::path& dir, const std::string& resolved) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.resolved", std::ios::binary) << resolved;
  std::ofstream(dir / "VERSION", std::ios::binary) << version_string() << '\n';
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
}

std::string timing_csv(const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch,wall_ms\n";
  for (const auto& r : h.epochs) os << r.epoch << ',' << format_double(r.wall_ms) << '\n';
  return os.str();
}

/// Maps exceptions onto the exit-code contract.
template <typename F>
int guarded(std::ostream& err, F body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CheckpointVersionError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContractViolation& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  }
}

}  // namespace

int cmd_train(const fs::path& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(config);
    write_run_metadata(cfg.output_dir, cfg.resolved);
    const LoadedData data = load_data(cfg);
    out << version_string() << ": training " << to_string(cfg.train.framework) << " / "
        << to_string(cfg.train.head.mode) << " on " << cfg.data.source << " (" << data.train.size() << " train, "
        << data.test.size() << " test)\n";
    TrainResult result;
    try {
      result = train(cfg.train, data.train, data.test, [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << "  loss " << format_double(r.train_loss) << "  clean "
            << format_double(r.clean_acc) << "  robust " << format_double(r.robust_acc) << '\n';
      });
    } catch (const TrainingAborted& e) {
      save_checkpoint(cfg.output_dir / "last_good.ckpt", e.last_good, cfg.train.head);
      write_history_csv(e.history, cfg.output_dir / "history.csv", cfg.record_wall_time);
      err << "numeric error: " << e.what() << "\nlast good parameters written to "
          << (cfg.output_dir / "last_good.ckpt").string() << '\n';
      return static_cast<int>(kExitNumeric);
    }
    save_checkpoint(cfg.output_dir / "model.ckpt", result.params, cfg.train.head);
    write_history_csv(result.history, cfg.output_dir / "history.csv", cfg.record_wall_time);
    write_text(cfg.output_dir / "timing.csv", timing_csv(result.history));
    out << "wrote " << (cfg.output_dir / "model.ckpt").string() << '\n';
    return static_cast<int>(kExitOk);
  });
}

// ---------------------------------------------------------------------------

namespace {

struct Target {
  Checkpoint ckpt;
  ExperimentConfig cfg;
  Dataset test;
};

Target resolve_target(const TargetOptions& opt) {
  Target t{load_checkpoint(opt.checkpoint), {}, {}};
  fs::path cfg_path = opt.config;
  if (cfg_path.empty()) {
    const fs::path dir = opt.checkpoint.parent_path();
    for (const fs::path& p : {dir / "config.resolved", dir.parent_path() / "config.resolved"}) {
      if (fs::exists(p)) {
        cfg_path = p;
        break;
      }
    }
  }
  if (!cfg_path.empty()) {
    t.cfg = load_config(cfg_path);
  } else {
    t.cfg = parse_config(t.ckpt.params.arch.input_size() == 2 ? "data = two-moons\n" : "data = mnist\n");
  }
  t.test = load_data(t.cfg).test;
  if (t.test.example_shape().empty() ||
      diff::shape_size(t.test.example_shape()) != t.ckpt.params.arch.input_size()) {
    throw ContractViolation("checkpoint input size does not match the " + t.cfg.data.source + " data");
  }
  if (opt.limit > 0) t.test = t.test.head(opt.limit);
  return t;
}

fs::path output_dir_for(const TargetOptions& opt, const char* fallback) {
  return opt.out_dir.empty() ? opt.checkpoint.parent_path() / fallback : opt.out_dir;
}

}  // namespace

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Target t = resolve_target(opt.target);
    Dataset data = t.test;
    if (opt.corruption) data = corrupt(t.test, *opt.corruption, derive_seed(opt.seed, "corrupt"));
    const double acc = evaluate(t.ckpt.params, t.ckpt.head, nullptr, data);

    const fs::path dir = output_dir_for(opt.target, "eval");
    std::ostringstream resolved;
    resolved << "checkpoint = " << opt.target.checkpoint.string() << "\nlimit = " << opt.target.limit
             << "\ncorruption = " << (opt.corruption ? std::string(to_string(opt.corruption->kind)) : "none")
             << "\nseverity = " << (opt.corruption ? opt.corruption->severity : 0) << "\nseed = " << opt.seed << '\n';
    write_run_metadata(dir, resolved.str() + t.cfg.resolved);
    json j;
    j["version"] = version_string();
    j["checkpoint"] = opt.target.checkpoint.string();
    j["head"] = std::string(to_string(t.ckpt.head.mode));
    j["split"] = data.split;
    j["examples"] = data.size();
    if (opt.corruption) {
      j["corruption"] = std::string(to_string(opt.corruption->kind));
      j["severity"] = opt.corruption->severity;
      j["parameter"] = corruption_parameter(opt.corruption->kind, opt.corruption->severity);
    }
    j["accuracy"] = acc;
    write_text(dir / "eval.json", j.dump(2) + "\n");
    out << "accuracy " << format_double(acc) << " on " << data.size() << " examples (" << data.split << ")\n";
    return static_cast<int>(kExitOk);
  });
}

int cmd_attack(const AttackOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Target t = resolve_target(opt.target);
    const auto budget = default_budget(t.cfg.data.source);
    AttackSpec a;
    a.norm = parse_norm(opt.norm);
    a.eps = opt.eps.value_or(budget.first);
    a.step = opt.step.value_or(opt.eps ? a.eps / 4.0 : budget.second);
    a.steps = opt.steps;
    a.restarts = opt.restarts;
    a.seed = derive_seed(opt.seed, "cli-attack");
    a.objective = ObjectiveSpec{opt.adaptive ? ObjectiveKind::margin_ce : ObjectiveKind::ce_vs_label, t.ckpt.head};
    a.fn_in_objective = opt.fn;
    a.mu = opt.mu;
    const std::string& kind = opt.attack;
    bool zo = false;
    GradEstimatorSpec est;
    if (kind == "fgsm") {
      a.steps = 1;
      a.step = a.eps;
      a.rand_init = false;
    } else if (kind == "bim") {
      a.rand_init = false;
    } else if (kind == "pgd") {
      a.rand_init = true;
    } else if (kind == "mim") {
      a.rand_init = false;
      a.momentum = true;
    } else if (kind == "nes" || kind == "spsa") {
      zo = true;
      a.rand_init = false;
      est.family = parse_estimator(kind);
      est.q = opt.q;
      est.sigma = opt.sigma;
      est.seed = derive_seed(opt.seed, "cli-zo");
      est.validate();
    } else {
      throw ContractViolation("unknown attack '" + kind + "' (expected fgsm, bim, pgd, mim, nes, spsa)");
    }
    if (opt.steps < 1) throw ContractViolation("--steps must be >= 1, got " + std::to_string(opt.steps));
    a.validate();
    if (opt.fn && t.ckpt.head.mode != HeadMode::standard) {
      throw ContractViolation("--fn requires a checkpoint with a standard head");
    }

    const Dataset& data = t.test;
    Tensor x_adv(data.inputs.shape());
    std::size_t clean_ok = 0, robust_ok = 0;
    constexpr std::size_t kChunk = 256;
    for (std::size_t b = 0; b < data.size(); b += kChunk) {
      const auto e = std::min(data.size(), b + kChunk);
      const Tensor x = diff::slice_rows(data.inputs, b, e);
      const Labels y(data.labels.begin() + static_cast<std::ptrdiff_t>(b),
                     data.labels.begin() + static_cast<std::ptrdiff_t>(e));
      AttackSpec ab = a;
      ab.seed = derive_seed(a.seed, "batch", b);
      const Tensor adv = zo ? zo_attack(t.ckpt.params, ab, est, x, y) : iterative_attack(t.ckpt.params, ab, x, y);
      const auto pc = argmax_rows(model_scores(t.ckpt.params, t.ckpt.head, x));
      const auto pa = argmax_rows(model_scores(t.ckpt.params, t.ckpt.head, adv));
      for (std::size_t i = 0; i < y.size(); ++i) {
        clean_ok += pc[i] == y[i];
        robust_ok += pa[i] == y[i];
      }
      std::copy(adv.storage().begin(), adv.storage().end(), x_adv.storage().begin() + static_cast<std::ptrdiff_t>(b * x_adv.row_size()));
    }
    const double n = static_cast<double>(data.size());
    const double clean = static_cast<double>(clean_ok) / n, robust = static_cast<double>(robust_ok) / n;

    const fs::path dir = output_dir_for(opt.target, "attack");
    std::ostringstream resolved;
    resolved << "checkpoint = " << opt.target.checkpoint.string() << "\nattack = " << kind << "\nnorm = "
             << to_string(a.norm) << "\neps = " << format_double(a.eps) << "\nstep = " << format_double(a.step)
             << "\nsteps = " << a.steps << "\nrestarts = " << a.restarts << "\nadaptive = "
             << (opt.adaptive ? "true" : "false") << "\nfn = " << (opt.fn ? "true" : "false") << "\nlimit = "
             << opt.target.limit << "\nseed = " << opt.seed << '\n';
    if (zo) resolved << "q = " << est.q << "\nsigma = " << format_double(est.sigma) << '\n';
    write_run_metadata(dir, resolved.str() + t.cfg.resolved);
    json j;
    j["version"] = version_string();
    j["checkpoint"] = opt.target.checkpoint.string();
    j["head"] = std::string(to_string(t.ckpt.head.mode));
    j["attack"] = kind;
    j["objective"] = std::string(to_string(a.objective.kind));
    j["adaptive"] = opt.adaptive;
    j["fn_in_objective"] = opt.fn;
    j["norm"] = std::string(to_string(a.norm));
    j["eps"] = a.eps;
    j["step"] = a.step;
    j["steps"] = a.steps;
    j["restarts"] = a.restarts;
    j["examples"] = data.size();
    j["clean_acc"] = clean;
    j["robust_acc"] = robust;
    write_text(dir / "attack.json", j.dump(2) + "\n");
    if (!opt.dump.empty()) {
      Dataset adv{x_adv, data.labels, data.name, data.split + "+" + kind, data.num_classes};
      save_archive(opt.dump, export_dataset(adv));
    }
    out << kind << "-" << a.steps << (opt.adaptive ? " (adaptive)" : "") << (opt.fn ? " (fn)" : "") << "  eps "
        << format_double(a.eps) << "  clean " << format_double(clean) << "  robust " << format_double(robust) << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_grad_ratio(const GradRatioOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.probes == 0) throw ContractViolation("--probes must be positive");
    const Target t = resolve_target(opt.target);
    const Dataset probe = t.test.head(opt.probes);
    AttackSpec a = t.cfg.train.eval_attack;
    a.objective.head = t.ckpt.head;
    a.seed = derive_seed(t.cfg.seed, "grad-ratio");
    const Tensor x_adv = iterative_attack(t.ckpt.params, a, probe.inputs, probe.labels);
    const auto report = grad_ratio(t.ckpt.params, pgdat_objective(t.ckpt.head), probe.inputs, x_adv, probe.labels);

    const fs::path dir = output_dir_for(opt.target, "grad-ratio");
    std::ostringstream resolved;
    resolved << "checkpoint = " << opt.target.checkpoint.string() << "\nprobes = " << probe.size() << '\n';
    write_run_metadata(dir, resolved.str() + t.cfg.resolved);
    const std::string csv = grad_ratio_csv(report);
    write_text(dir / "grad_ratio.csv", csv);
    out << csv;
    return static_cast<int>(kExitOk);
  });
}

int cmd_verify(const std::string& selector, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!valid_selector(selector)) {
      throw ContractViolation("unknown verify selector '" + selector +
                              "' (expected lemma1, lemma2, eq14, eq15, eq16, directions, all)");
    }
    const auto checks = run_verify(selector);
    bool ok = true;
    for (const auto& c : checks) {
      ok = ok && c.passed;
      out << (c.passed ? "PASS " : "FAIL ") << c.suite << ' ' << c.name << "  " << format_double(c.value);
      if (c.relation != "info") out << ' ' << c.relation << ' ' << format_double(c.threshold);
      out << '\n';
    }
    if (!out_dir.empty()) {
      write_run_metadata(out_dir, "selector = " + selector + "\n");
      write_text(out_dir / "verify.json", checks_json(selector, checks));
    }
    if (!ok) {
      for (const auto& c : checks) {
        if (!c.passed) err << "assertion failed: " << c.suite << ' ' << c.name << " = " << format_double(c.value) << '\n';
      }
      return static_cast<int>(kExitAssertion);
    }
    return static_cast<int>(kExitOk);
  });
}

std::string checks_json(const std::string& selector, const std::vector<CheckResult>& checks) {
  json j;
  j["version"] = version_string();
  j["selector"] = selector;
  bool ok = true;
  json arr = json::array();
  for (const auto& c : checks) {
    ok = ok && c.passed;
    arr.push_back({{"suite", c.suite},
                   {"name", c.name},
                   {"value", c.value},
                   {"relation", c.relation},
                   {"threshold", c.threshold},
                   {"passed", c.passed}});
  }
  j["passed"] = ok;
  j["checks"] = arr;
  return j.dump(2) + "\n";
}

}  // namespace sphereat::cli
