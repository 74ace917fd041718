#include "sphereat/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sphereat/diffcore/rng.hpp"
#include "sphereat/kv.hpp"

namespace sphereat {

using diff::Tensor;

std::string_view to_string(Framework f) {
  switch (f) {
    case Framework::standard: return "standard";
    case Framework::pgd_at: return "pgd-at";
    case Framework::alp: return "alp";
    case Framework::trades: return "trades";
    case Framework::free_at: return "free-at";
    case Framework::fast_at: return "fast-at";
  }
  return "standard";
}

Framework parse_framework(std::string_view text) {
  for (auto f : {Framework::standard, Framework::pgd_at, Framework::alp, Framework::trades, Framework::free_at,
                 Framework::fast_at}) {
    if (text == to_string(f)) return f;
  }
  throw ContractViolation("unknown framework '" + std::string(text) + "'");
}

ObjectiveSpec TrainSpec::objective() const {
  switch (framework) {
    case Framework::alp: return alp_objective(head, alp_alpha, alp_lambda);
    case Framework::trades: return trades_objective(head, trades_lambda);
    default: return pgdat_objective(head);
  }
}

void TrainSpec::validate() const {
  arch.validate();
  head.validate();
  if (epochs < 1) throw ContractViolation("epochs must be >= 1");
  if (batch_size < 1) throw ContractViolation("batch size must be >= 1");
  if (!(lr > 0.0)) throw ContractViolation("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractViolation("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ContractViolation("weight decay must be >= 0");
  if (free_replays < 1) throw ContractViolation("free replays must be >= 1");
  if (!(lr_decay_factor > 0.0)) throw ContractViolation("lr decay factor must be > 0");
  double prev = 0.0;
  for (double f : lr_decay_at) {
    if (!(f > prev && f < 1.0)) throw ContractViolation("lr decay fractions must be strictly increasing in (0, 1)");
    prev = f;
  }
  if (framework != Framework::standard) {
    AttackSpec a = attack;
    a.objective = objective();
    a.validate();
    if ((framework == Framework::fast_at || framework == Framework::free_at) && a.norm != NormKind::linf) {
      throw ContractViolation(std::string(to_string(framework)) + " requires the linf norm");
    }
  }
  AttackSpec e = eval_attack;
  e.objective.head = head;
  e.validate();
  objective().validate();
}

double TrainSpec::lr_at(double epoch, double total) const {
  double rate = lr;
  for (double f : lr_decay_at) {
    if (epoch >= f * total) rate *= lr_decay_factor;
  }
  return rate;
}

// ---------------------------------------------------------------------------
// History CSV

std::string history_csv(const TrainHistory& history, bool include_wall_time) {
  std::ostringstream os;
  os << "epoch,clean_acc,robust_acc,train_loss,wall_ms\n";
  for (const auto& r : history.epochs) {
    os << r.epoch << ',' << format_double(r.clean_acc) << ',' << format_double(r.robust_acc) << ','
       << format_double(r.train_loss) << ',' << (include_wall_time ? format_double(std::round(r.wall_ms)) : "0")
       << '\n';
  }
  return os.str();
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path, bool include_wall_time) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << history_csv(history, include_wall_time);
}

TrainHistory read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "epoch,clean_acc,robust_acc,train_loss,wall_ms") {
    throw ParseError(path.string() + ": unexpected history header");
  }
  TrainHistory h;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 5) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    EpochRecord r;
    r.epoch = static_cast<int>(parse_int(f[0]));
    r.clean_acc = parse_double(f[1]);
    r.robust_acc = parse_double(f[2]);
    r.train_loss = parse_double(f[3]);
    r.wall_ms = parse_double(f[4]);
    h.epochs.push_back(r);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Per-batch updates

namespace {

std::vector<bool> frozen_mask(const ModelParams& params, const HeadConfig& head) {
  std::vector<bool> m(params.blocks.size(), false);
  if (!head.reads_bias()) m[params.bias_index()] = true;
  return m;
}

bool all_params_finite(const ModelParams& p) {
  return std::all_of(p.blocks.begin(), p.blocks.end(), [](const ParamBlock& b) { return b.value.all_finite(); });
}

/// One update on L_T; fills `input_grad` with dL_T/dx_adv when requested.
double update(const TrainSpec& spec, ModelParams& params, TrainState& state, const Tensor& x, const Tensor& x_adv,
              const Labels& y, double lr, Tensor* input_grad) {
  diff::Tape tape;
  auto model = bind(tape, params, true);
  Var xc = tape.constant(x);
  Var xa = input_grad ? tape.leaf(x_adv) : tape.constant(x_adv);
  Var loss = training_loss(spec.objective(), model, xc, xa, y);
  if (!spec.head.reads_bias() && tape.consumed(model.b())) {
    state.bias_read = true;
    throw std::logic_error("head mode " + std::string(to_string(spec.head.mode)) + " read the softmax bias");
  }
  auto grads = tape.backward(loss);
  std::vector<Tensor> g;
  g.reserve(model.params.size());
  for (Var p : model.params) g.push_back(grads[p]);
  if (input_grad) *input_grad = grads[xa];

  ModelParams backup = params;
  sgd_momentum_step(params, g, state.opt, lr, spec.momentum, spec.weight_decay, frozen_mask(params, spec.head));
  if (!all_params_finite(params)) {
    params = std::move(backup);
    throw NumericError("parameters became non-finite after an optimizer step");
  }
  ++state.step;
  return loss.value().item();
}

AttackSpec inner_attack(const TrainSpec& spec, const TrainState& state) {
  AttackSpec a = spec.attack;
  a.objective = spec.objective();
  a.seed = derive_seed(spec.seed, "train-attack", state.step);
  return a;
}

}  // namespace

double training_step(const TrainSpec& spec, ModelParams& params, TrainState& state, const Tensor& x,
                     const Tensor& x_adv, const Labels& y, double lr) {
  return update(spec, params, state, x, x_adv, y, lr, nullptr);
}

Tensor craft_batch(const TrainSpec& spec, const ModelParams& params, TrainState& state, const Tensor& x,
                   const Labels& y) {
  switch (spec.framework) {
    case Framework::standard: return x;
    case Framework::pgd_at:
    case Framework::alp:
    case Framework::trades: {
      ++state.attack_calls;
      return iterative_attack(params, inner_attack(spec, state), x, y);
    }
    case Framework::fast_at: {
      AttackSpec a = inner_attack(spec, state);
      if (a.norm != NormKind::linf) throw ContractViolation("fast-at requires the linf norm");
      a.steps = 1;
      a.step = spec.fast_step_factor * a.eps;
      a.rand_init = spec.fast_random_init;
      a.restarts = 1;
      a.momentum = false;
      ++state.attack_calls;
      return iterative_attack(params, a, x, y);
    }
    case Framework::free_at: break;
  }
  throw ContractViolation("free-at crafts its perturbation inside free_at_epoch");
}

double fast_at_step(const TrainSpec& spec, const Batch& batch, ModelParams& params, TrainState& state, double lr) {
  Tensor x_adv = craft_batch(spec, params, state, batch.x, batch.y);
  return training_step(spec, params, state, batch.x, x_adv, batch.y, lr);
}

double free_at_epoch(const TrainSpec& spec, BatchIterator& it, ModelParams& params, TrainState& state, double lr) {
  const AttackSpec& a = spec.attack;
  if (a.norm != NormKind::linf) throw ContractViolation("free-at requires the linf norm");
  if (spec.free_replays < 1) throw ContractViolation("free replays must be >= 1");
  Batch b;
  double total = 0.0;
  std::size_t count = 0;
  while (it.next(b)) {
    const auto n = b.x.dim(0);
    const auto per = b.x.row_size();
    Tensor& delta = state.free_delta;
    if (delta.empty() || delta.row_size() != per || delta.dim(0) < n) {
      diff::Shape s = b.x.shape();
      s[0] = std::max(n, spec.batch_size);
      delta = Tensor(s);
    }
    if (!state.persist_delta) std::fill(delta.storage().begin(), delta.storage().end(), 0.0);
    for (int r = 0; r < spec.free_replays; ++r) {
      Tensor x_adv = b.x;
      for (std::size_t i = 0; i < n * per; ++i) x_adv[i] = std::clamp(b.x[i] + delta[i], a.lo, a.hi);
      Tensor gx;
      total += update(spec, params, state, b.x, x_adv, b.y, lr, &gx);
      ++count;
      for (std::size_t i = 0; i < n * per; ++i) {
        const double s = gx[i] > 0.0 ? 1.0 : (gx[i] < 0.0 ? -1.0 : 0.0);
        const double d = std::clamp(delta[i] + a.eps * s, -a.eps, a.eps);
        delta[i] = std::clamp(b.x[i] + d, a.lo, a.hi) - b.x[i];
      }
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------
// Evaluation

double evaluate(const ModelParams& params, const HeadConfig& head, const AttackSpec* attack, const Dataset& data,
                std::size_t limit) {
  const std::size_t n = limit > 0 ? std::min(limit, data.size()) : data.size();
  if (n == 0) throw ContractViolation("evaluate: empty dataset");
  constexpr std::size_t kEvalBatch = 256;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n; b += kEvalBatch) {
    const auto e = std::min(n, b + kEvalBatch);
    Tensor x = diff::slice_rows(data.inputs, b, e);
    Labels y(data.labels.begin() + static_cast<std::ptrdiff_t>(b), data.labels.begin() + static_cast<std::ptrdiff_t>(e));
    if (attack) {
      AttackSpec a = *attack;
      a.objective.head = head;
      // Keep example randomness tied to the global index, not the eval batch.
      a.seed = derive_seed(attack->seed, "eval-batch", b);
      x = iterative_attack(params, a, x, y);
    }
    const auto pred = argmax_rows(model_scores(params, head, x));
    for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Outer loop

namespace {

EpochRecord evaluate_epoch(const TrainSpec& spec, const ModelParams& params, const Dataset& eval_data, bool do_eval) {
  EpochRecord r;
  if (!do_eval) return r;
  r.clean_acc = evaluate(params, spec.head, nullptr, eval_data);
  AttackSpec ea = spec.eval_attack;
  ea.objective.head = spec.head;
  r.robust_acc = evaluate(params, spec.head, &ea, eval_data, spec.eval_limit);
  return r;
}

}  // namespace

TrainResult train(const TrainSpec& spec, const Dataset& train_data, const Dataset& eval_data,
                  const EpochCallback& on_epoch) {
  spec.validate();
  train_data.validate();
  eval_data.validate();
  if (train_data.size() == 0 || eval_data.size() == 0) throw ContractViolation("train: empty dataset");
  if (train_data.example_shape() != eval_data.example_shape()) {
    throw ContractViolation("train: train and eval examples differ in shape");
  }
  if (diff::shape_size(train_data.example_shape()) != spec.arch.input_size()) {
    throw ContractViolation("train: dataset examples do not match the architecture input");
  }
  if (train_data.num_classes > spec.arch.num_classes) {
    throw ContractViolation("train: dataset has more classes than the architecture");
  }

  TrainResult result;
  result.params = init_model(spec.arch, derive_seed(spec.seed, "init"));
  TrainState state;
  ModelParams& params = result.params;

  const bool free = spec.framework == Framework::free_at;
  const int passes = free ? (spec.epochs + spec.free_replays - 1) / spec.free_replays : spec.epochs;
  if (!spec.checkpoint_dir.empty() && spec.checkpoint_every > 0) {
    std::filesystem::create_directories(spec.checkpoint_dir);
  }

  for (int p = 0; p < passes; ++p) {
    const auto t0 = std::chrono::steady_clock::now();
    const int done = free ? std::min(spec.epochs, (p + 1) * spec.free_replays) : p + 1;
    const double lr = free ? spec.lr_at(static_cast<double>(p * spec.free_replays), spec.epochs)
                           : spec.lr_at(static_cast<double>(p), spec.epochs);
    BatchIterator it(train_data, spec.batch_size, derive_seed(spec.seed, "epoch-order", static_cast<std::uint64_t>(p)));
    double loss = 0.0;
    try {
      if (free) {
        state.free_delta = Tensor();
        loss = free_at_epoch(spec, it, params, state, lr);
      } else {
        Batch b;
        std::size_t count = 0;
        while (it.next(b)) {
          Tensor x_adv = craft_batch(spec, params, state, b.x, b.y);
          loss += training_step(spec, params, state, b.x, x_adv, b.y, lr);
          ++count;
        }
        loss /= static_cast<double>(count);
      }
    } catch (const NumericError& e) {
      throw TrainingAborted(std::string("training aborted in epoch ") + std::to_string(done) + ": " + e.what(),
                            params, result.history);
    }

    EpochRecord rec = evaluate_epoch(spec, params, eval_data, spec.eval_every_epoch || p + 1 == passes);
    rec.epoch = done;
    rec.train_loss = loss;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (spec.checkpoint_every > 0 && !spec.checkpoint_dir.empty() && done % spec.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%03d.ckpt", done);
      save_checkpoint(spec.checkpoint_dir / name, params, spec.head);
      rec.snapshot = name;
    }
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.attack_calls = state.attack_calls;
  return result;
}

}  // namespace sphereat
