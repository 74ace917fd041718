#include "sphereat/cli/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "sphereat/diffcore/rng.hpp"
#include "sphereat/kv.hpp"

#ifndef SPHEREAT_DATA_DIR
#define SPHEREAT_DATA_DIR "data"
#endif

namespace sphereat::cli {

std::filesystem::path default_mnist_dir() { return std::filesystem::path(SPHEREAT_DATA_DIR) / "mnist5k"; }

std::pair<double, double> default_budget(std::string_view data_source) {
  if (data_source == "two-moons") return {0.04, 0.01};
  return {8.0 / 255.0, 2.0 / 255.0};
}

std::vector<std::pair<std::string, std::string>> default_entries(std::string_view data_source) {
  const bool moons = data_source == "two-moons";
  const auto [eps, step] = default_budget(data_source);
  const std::string eps_text = moons ? format_double(eps) : "8/255";
  const std::string step_text = moons ? format_double(step) : "2/255";
  return {
      {"name", "run"},
      {"output_dir", "out"},
      {"seed", "0"},
      {"data", std::string(data_source)},
      {"data.dir", default_mnist_dir().string()},
      {"data.train_size", "0"},
      {"data.test_size", "0"},
      {"moons.train", "1000"},
      {"moons.test", "500"},
      {"moons.noise", "0.1"},
      {"arch.kind", moons ? "mlp" : "conv"},
      {"arch.conv_channels", moons ? "" : "8,16"},
      {"arch.hidden", moons ? "32,32" : "64"},
      {"arch.activation", "relu"},
      {"arch.feature_dim", moons ? "16" : "32"},
      {"head.mode", "standard"},
      {"head.scale", "15"},
      {"head.margin", "0.2"},
      {"train.framework", "pgd-at"},
      {"train.epochs", moons ? "60" : "10"},
      {"train.batch_size", moons ? "50" : "64"},
      {"train.lr", "0.02"},
      {"train.momentum", "0.9"},
      {"train.weight_decay", "5e-4"},
      {"train.lr_decay_at", "0.75,0.9"},
      {"train.lr_decay_factor", "0.1"},
      {"train.free_replays", "4"},
      {"train.fast_step_factor", "1.25"},
      {"train.fast_random_init", "true"},
      {"train.alp_alpha", "0.5"},
      {"train.alp_lambda", "0.5"},
      {"train.trades_lambda", "6"},
      {"train.checkpoint_every", "0"},
      {"train.record_wall_time", "false"},
      {"attack.norm", "linf"},
      {"attack.eps", eps_text},
      {"attack.step", step_text},
      {"attack.steps", "10"},
      {"attack.rand_init", "true"},
      {"attack.restarts", "1"},
      {"attack.momentum", "false"},
      {"attack.mu", "1"},
      {"attack.lo", "0"},
      {"attack.hi", "1"},
      {"eval.eps", eps_text},
      {"eval.step", step_text},
      {"eval.steps", "20"},
      {"eval.restarts", "1"},
      {"eval.limit", "500"},
      {"eval.every_epoch", "true"},
  };
}

namespace {

template <typename F>
auto convert(const std::string& key, const std::string& value, F f) -> decltype(f(value)) {
  try {
    return f(value);
  } catch (const std::exception& e) {
    throw ConfigError(key, key + ": " + e.what());
  }
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  for (const auto& part : split(text, ',')) {
    const auto t = trim(part);
    if (!t.empty()) out.push_back(parse_double(t));
  }
  return out;
}

std::size_t parse_count(const std::string& text) {
  const auto v = parse_int(text);
  if (v < 0) throw ContractViolation("expected a non-negative integer, got '" + text + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  std::vector<KvEntry> entries;
  try {
    entries = parse_kv(text);
  } catch (const ParseError& e) {
    throw ConfigError("", e.what());
  }

  std::map<std::string, std::string> user;
  std::map<std::string, std::size_t> line_of;
  for (const auto& e : entries) {
    if (user.count(e.key)) {
      throw ConfigError(e.key, "line " + std::to_string(e.line) + ": duplicate key '" + e.key + "'");
    }
    user[e.key] = e.value;
    line_of[e.key] = e.line;
  }
  const std::string source = user.count("data") ? user["data"] : "two-moons";
  if (source != "two-moons" && source != "mnist") {
    throw ConfigError("data", "data: unknown source '" + source + "' (expected two-moons or mnist)");
  }

  auto table = default_entries(source);
  std::set<std::string> known;
  for (const auto& [k, v] : table) known.insert(k);
  for (const auto& [k, v] : user) {
    if (!known.count(k)) {
      throw ConfigError(k, "line " + std::to_string(line_of[k]) + ": unknown key '" + k + "'");
    }
  }
  std::map<std::string, std::string> val;
  for (auto& [k, v] : table) {
    if (auto it = user.find(k); it != user.end()) v = it->second;
    val[k] = v;
  }
  // Dependent defaults.
  auto inherit = [&](const std::string& key, const std::string& from) {
    if (!user.count(key)) val[key] = val[from];
  };
  inherit("eval.eps", "attack.eps");
  inherit("eval.step", "attack.step");
  if (!user.count("head.margin") && val["head.mode"] == "m-he") val["head.margin"] = "0.1";

  ExperimentConfig cfg;
  auto s = [&](const char* k) { return val.at(k); };
  auto d = [&](const char* k) { return convert(k, val.at(k), [](const std::string& t) { return parse_double(t); }); };
  auto n = [&](const char* k) { return convert(k, val.at(k), parse_count); };
  auto b = [&](const char* k) { return convert(k, val.at(k), [](const std::string& t) { return parse_bool(t); }); };

  cfg.name = s("name");
  if (cfg.name.empty()) throw ConfigError("name", "name: must not be empty");
  cfg.output_dir = s("output_dir");
  cfg.seed = n("seed");

  cfg.data.source = source;
  cfg.data.dir = s("data.dir");
  cfg.data.train_size = n("data.train_size");
  cfg.data.test_size = n("data.test_size");
  cfg.data.moons_train = n("moons.train");
  cfg.data.moons_test = n("moons.test");
  cfg.data.moons_noise = d("moons.noise");
  if (source == "two-moons" && (cfg.data.moons_train % 2 || cfg.data.moons_test % 2 || !cfg.data.moons_train ||
                                !cfg.data.moons_test)) {
    throw ConfigError("moons.train", "moons.train / moons.test: counts must be even and positive");
  }

  std::ostringstream arch;
  for (const char* k : {"arch.kind", "arch.conv_channels", "arch.hidden", "arch.activation", "arch.feature_dim"}) {
    arch << k << " = " << val[k] << '\n';
  }
  arch << "arch.input_shape = " << (source == "two-moons" ? "2" : "1x28x28") << '\n';
  arch << "arch.num_classes = " << (source == "two-moons" ? "2" : "10") << '\n';
  TrainSpec& t = cfg.train;
  t.arch = convert("arch", arch.str(), [](const std::string& a) { return ArchitectureSpec::from_kv(a); });

  t.head.mode = convert("head.mode", val["head.mode"], [](const std::string& m) { return parse_head_mode(m); });
  t.head.scale = d("head.scale");
  t.head.margin = d("head.margin");
  convert("head", std::string(), [&](const std::string&) { t.head.validate(); return 0; });

  t.framework = convert("train.framework", val["train.framework"], [](const std::string& f) { return parse_framework(f); });
  t.epochs = static_cast<int>(n("train.epochs"));
  t.batch_size = n("train.batch_size");
  t.lr = d("train.lr");
  t.momentum = d("train.momentum");
  t.weight_decay = d("train.weight_decay");
  t.lr_decay_at = convert("train.lr_decay_at", val["train.lr_decay_at"], parse_fractions);
  t.lr_decay_factor = d("train.lr_decay_factor");
  t.free_replays = static_cast<int>(n("train.free_replays"));
  t.fast_step_factor = d("train.fast_step_factor");
  t.fast_random_init = b("train.fast_random_init");
  t.alp_alpha = d("train.alp_alpha");
  t.alp_lambda = d("train.alp_lambda");
  t.trades_lambda = d("train.trades_lambda");
  t.checkpoint_every = static_cast<int>(n("train.checkpoint_every"));
  cfg.record_wall_time = b("train.record_wall_time");
  t.seed = derive_seed(cfg.seed, "train");

  AttackSpec& a = t.attack;
  a.norm = convert("attack.norm", val["attack.norm"], [](const std::string& p) { return parse_norm(p); });
  a.eps = d("attack.eps");
  a.step = d("attack.step");
  a.steps = static_cast<int>(n("attack.steps"));
  a.rand_init = b("attack.rand_init");
  a.restarts = static_cast<int>(n("attack.restarts"));
  a.momentum = b("attack.momentum");
  a.mu = d("attack.mu");
  a.lo = d("attack.lo");
  a.hi = d("attack.hi");

  AttackSpec& e = t.eval_attack;
  e = a;
  e.momentum = false;
  e.rand_init = true;
  e.eps = d("eval.eps");
  e.step = d("eval.step");
  e.steps = static_cast<int>(n("eval.steps"));
  e.restarts = static_cast<int>(n("eval.restarts"));
  e.seed = derive_seed(cfg.seed, "eval-attack");
  e.objective = ObjectiveSpec{ObjectiveKind::ce_vs_label, t.head};
  t.eval_limit = n("eval.limit");
  t.eval_every_epoch = b("eval.every_epoch");

  cfg.output_dir = s("output_dir");
  t.checkpoint_dir = cfg.output_dir / "checkpoints";

  try {
    t.validate();
  } catch (const ContractViolation& ex) {
    throw ConfigError("", std::string("invalid configuration: ") + ex.what());
  }

  std::ostringstream resolved;
  for (const auto& [k, v] : table) resolved << k << " = " << val[k] << '\n';
  cfg.resolved = resolved.str();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData d;
  if (cfg.data.source == "two-moons") {
    d.train = make_two_moons(cfg.data.moons_train, cfg.data.moons_noise, derive_seed(cfg.seed, "moons-train"));
    d.test = make_two_moons(cfg.data.moons_test, cfg.data.moons_noise, derive_seed(cfg.seed, "moons-test"));
    d.test.split = "test";
  } else {
    d.train = load_mnist_dir(cfg.data.dir, "train");
    d.test = load_mnist_dir(cfg.data.dir, "test");
  }
  if (cfg.data.train_size > 0) d.train = d.train.head(cfg.data.train_size);
  if (cfg.data.test_size > 0) d.test = d.test.head(cfg.data.test_size);
  return d;
}

}  // namespace sphereat::cli
