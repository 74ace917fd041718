#include "sphereat/attacks/attacks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "sphereat/diffcore/rng.hpp"

namespace sphereat {

using diff::Tensor;

std::string_view to_string(NormKind p) { return p == NormKind::l2 ? "l2" : "linf"; }

NormKind parse_norm(std::string_view text) {
  if (text == "l2" || text == "2") return NormKind::l2;
  if (text == "linf" || text == "inf") return NormKind::linf;
  throw ContractViolation("unknown norm '" + std::string(text) + "' (expected l2 or linf)");
}

void AttackSpec::validate() const {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw ContractViolation("attack eps must be a finite value >= 0");
  if (!(step >= 0.0) || !std::isfinite(step)) throw ContractViolation("attack step must be a finite value >= 0");
  if (steps < 1) throw ContractViolation("attack steps must be >= 1, got " + std::to_string(steps));
  if (restarts < 1) throw ContractViolation("attack restarts must be >= 1, got " + std::to_string(restarts));
  if (!(lo < hi)) throw ContractViolation("attack input range requires lo < hi");
  if (momentum && !(mu >= 0.0)) throw ContractViolation("momentum decay mu must be >= 0");
  objective.validate();
}

AttackSpec pgd(const ObjectiveSpec& objective, double eps, double step, int steps, std::uint64_t seed) {
  AttackSpec a;
  a.objective = objective;
  a.eps = eps;
  a.step = step;
  a.steps = steps;
  a.seed = seed;
  return a;
}

void steepest_direction_inplace(std::span<double> u, NormKind p) {
  if (p == NormKind::linf) {
    for (double& v : u) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    return;
  }
  const double n = diff::l2_norm(u);
  if (n < 1e-12) {
    std::fill(u.begin(), u.end(), 0.0);
    return;
  }
  for (double& v : u) v /= n;
}

Tensor steepest_direction(const Tensor& u, NormKind p) {
  if (!u.all_finite()) throw NumericError("steepest_direction: non-finite input");
  Tensor out = u;
  steepest_direction_inplace(out.data(), p);
  return out;
}

double dual_norm(std::span<const double> u, NormKind p) {
  if (p == NormKind::l2) return diff::l2_norm(u);
  double s = 0.0;
  for (double v : u) s += std::abs(v);
  return s;
}

void project(Tensor& x_adv, const Tensor& x, NormKind p, double eps, double lo, double hi) {
  if (x_adv.shape() != x.shape()) throw ContractViolation("project: shape mismatch");
  const auto n = x.dim(0);
  for (std::size_t r = 0; r < n; ++r) {
    auto a = x_adv.row(r);
    auto c = x.row(r);
    if (p == NormKind::linf) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i], c[i] - eps, c[i] + eps);
    } else {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - c[i]) * (a[i] - c[i]);
      const double norm = std::sqrt(s);
      if (norm > eps) {
        const double f = eps / norm;
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = c[i] + (a[i] - c[i]) * f;
      }
    }
    for (double& v : a) v = std::clamp(v, lo, hi);
  }
}

// ---------------------------------------------------------------------------
// Threading

namespace {

std::atomic<unsigned> g_threads{1};

/// Runs task(k) for k in [0, count) on up to attack_threads() workers.
template <typename Task>
void for_each_chunk(std::size_t count, Task task) {
  const unsigned workers = std::min<std::size_t>(attack_threads(), count);
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) task(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) {
        try {
          task(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void random_start(Tensor& x0, const Tensor& x, const AttackSpec& spec, std::size_t first_index, int restart) {
  const auto per = x.row_size();
  const std::uint64_t restart_seed = derive_seed(spec.seed, "attack-init", static_cast<std::uint64_t>(restart));
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    Rng rng(derive_seed(restart_seed, "example", first_index + r));
    auto a = x0.row(r);
    if (spec.norm == NormKind::linf) {
      for (std::size_t i = 0; i < per; ++i) a[i] += rng.uniform(-spec.eps, spec.eps);
    } else {
      std::vector<double> dir(per);
      for (auto& v : dir) v = rng.normal();
      const double n = diff::l2_norm(dir);
      const double radius = spec.eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(per));
      if (n > 0.0) {
        for (std::size_t i = 0; i < per; ++i) a[i] += radius * dir[i] / n;
      }
    }
  }
  project(x0, x, spec.norm, spec.eps, spec.lo, spec.hi);
}

AttackResult run_chunk(const AttackSpec& spec, const OracleFactory& factory, const Tensor& x, std::size_t begin,
                       bool record_trace) {
  const auto n = x.dim(0);
  const auto per = x.row_size();
  AttackResult best;
  for (int r = 0; r < spec.restarts; ++r) {
    LossGradFn oracle = factory(begin, begin + n, r);
    Tensor cur = x;
    if (spec.rand_init && spec.eps > 0.0) random_start(cur, x, spec, begin, r);
    Tensor velocity(x.shape());
    const bool keep_trace = record_trace && r == 0;
    std::size_t call = 0;
    for (int t = 0; t < spec.steps; ++t) {
      LossGrad lg = oracle(cur, call++);
      if (keep_trace) best.trace.push_back(lg.loss);
      Tensor& g = lg.grad;
      if (spec.momentum) {
        for (std::size_t e = 0; e < n; ++e) {
          auto gv = g.row(e);
          auto vv = velocity.row(e);
          double l1 = 0.0;
          for (double v : gv) l1 += std::abs(v);
          for (std::size_t i = 0; i < per; ++i) vv[i] = spec.mu * vv[i] + (l1 > 0.0 ? gv[i] / l1 : 0.0);
        }
        g = velocity;
      }
      for (std::size_t e = 0; e < n; ++e) {
        auto gv = g.row(e);
        steepest_direction_inplace(gv, spec.norm);
        auto cv = cur.row(e);
        for (std::size_t i = 0; i < per; ++i) cv[i] += spec.step * gv[i];
      }
      project(cur, x, spec.norm, spec.eps, spec.lo, spec.hi);
    }
    const bool need_final = spec.restarts > 1 || keep_trace || r == 0;
    std::vector<double> final_loss;
    if (need_final) {
      final_loss = oracle(cur, call++).loss;
      if (keep_trace) best.trace.push_back(final_loss);
    }
    if (r == 0) {
      best.x_adv = std::move(cur);
      best.loss = std::move(final_loss);
      continue;
    }
    for (std::size_t e = 0; e < n; ++e) {
      if (final_loss[e] > best.loss[e]) {
        best.loss[e] = final_loss[e];
        auto src = cur.row(e);
        std::copy(src.begin(), src.end(), best.x_adv.row(e).begin());
      }
    }
  }
  return best;
}

}  // namespace

void set_attack_threads(unsigned n) { g_threads = std::max(1u, n); }
unsigned attack_threads() { return g_threads; }

AttackResult run_iterative(const AttackSpec& spec, const OracleFactory& oracle, const Tensor& x, bool record_trace) {
  spec.validate();
  if (x.rank() == 0) throw ContractViolation("attack input must have a batch axis");
  const auto n = x.dim(0);
  const std::size_t chunks = (n + kAttackChunk - 1) / kAttackChunk;
  std::vector<AttackResult> parts(chunks);
  for_each_chunk(chunks, [&](std::size_t k) {
    const auto b = k * kAttackChunk;
    const auto e = std::min(n, b + kAttackChunk);
    parts[k] = run_chunk(spec, oracle, chunks == 1 ? x : diff::slice_rows(x, b, e), b, record_trace);
  });
  if (chunks == 1) return std::move(parts.front());

  AttackResult out;
  out.x_adv = Tensor(x.shape());
  std::size_t offset = 0;
  for (auto& p : parts) {
    std::copy(p.x_adv.storage().begin(), p.x_adv.storage().end(), out.x_adv.storage().begin() + offset);
    offset += p.x_adv.size();
    out.loss.insert(out.loss.end(), p.loss.begin(), p.loss.end());
    if (out.trace.size() < p.trace.size()) out.trace.resize(p.trace.size());
    for (std::size_t t = 0; t < p.trace.size(); ++t) {
      out.trace[t].insert(out.trace[t].end(), p.trace[t].begin(), p.trace[t].end());
    }
  }
  return out;
}

AttackSpec fn_in_objective_toggle(AttackSpec spec, bool flag) {
  spec.fn_in_objective = flag;
  return spec;
}

namespace {

ObjectiveSpec effective_objective(const AttackSpec& spec) {
  ObjectiveSpec obj = spec.objective.composite() ? attack_objective_for(spec.objective) : spec.objective;
  if (spec.fn_in_objective) {
    if (obj.head.mode != HeadMode::standard) {
      throw ContractViolation("fn-in-objective attacks require a standard head, got " +
                              std::string(to_string(obj.head.mode)));
    }
    obj.head.mode = HeadMode::fn_only;
  }
  return obj;
}

}  // namespace

OracleFactory white_box_oracle(const AttackSpec& spec, const ModelParams& params, const Tensor& x, const Labels& y) {
  check_labels(y, x.dim(0), params.num_classes());
  const ObjectiveSpec obj = effective_objective(spec);
  const bool needs_target = obj.kind == ObjectiveKind::ce_vs_prediction;
  return [obj, needs_target, &params, &x, &y](std::size_t begin, std::size_t end, int) -> LossGradFn {
    const bool whole = begin == 0 && end == x.dim(0);
    Labels ys(y.begin() + static_cast<std::ptrdiff_t>(begin), y.begin() + static_cast<std::ptrdiff_t>(end));
    Tensor target;
    if (needs_target) target = clean_target(obj, params, whole ? x : diff::slice_rows(x, begin, end));
    return [obj, needs_target, &params, ys = std::move(ys), target = std::move(target)](const Tensor& xc,
                                                                                         std::size_t) {
      diff::Tape tape;
      auto model = bind(tape, params, false);
      Var xv = tape.leaf(xc);
      Var per = adversarial_loss_per_example(obj, model, xv, ys, needs_target ? &target : nullptr);
      auto grads = tape.backward(diff::sum(per));
      LossGrad out;
      out.loss.assign(per.value().data().begin(), per.value().data().end());
      out.grad = Tensor(xc.shape(), std::vector<double>(grads[xv].data().begin(), grads[xv].data().end()));
      return out;
    };
  };
}

AttackResult iterative_attack_detailed(const ModelParams& params, const AttackSpec& spec, const Tensor& x,
                                       const Labels& y, bool record_trace) {
  return run_iterative(spec, white_box_oracle(spec, params, x, y), x, record_trace);
}

Tensor iterative_attack(const ModelParams& params, const AttackSpec& spec, const Tensor& x, const Labels& y) {
  return iterative_attack_detailed(params, spec, x, y).x_adv;
}

Tensor fgsm(const ModelParams& params, const AttackSpec& spec, const Tensor& x, const Labels& y) {
  if (spec.norm != NormKind::linf) throw ContractViolation("fgsm requires the linf norm");
  AttackSpec one = spec;
  one.steps = 1;
  one.step = spec.eps;
  one.rand_init = false;
  one.restarts = 1;
  one.momentum = false;
  return iterative_attack(params, one, x, y);
}

}  // namespace sphereat
