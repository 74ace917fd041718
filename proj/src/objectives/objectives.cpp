#include "sphereat/objectives/objectives.hpp"

#include <cmath>

namespace sphereat {

namespace d = diff;

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::ce_vs_label: return "ce-vs-label";
    case ObjectiveKind::ce_vs_prediction: return "ce-vs-prediction";
    case ObjectiveKind::margin_ce: return "margin-ce";
    case ObjectiveKind::cw_inf: return "cw-inf";
    case ObjectiveKind::pairing_norm: return "pairing-norm";
    case ObjectiveKind::composite_pgdat: return "composite-pgdat";
    case ObjectiveKind::composite_alp: return "composite-alp";
    case ObjectiveKind::composite_trades: return "composite-trades";
  }
  return "ce-vs-label";
}

ObjectiveKind parse_objective_kind(std::string_view text) {
  for (auto k : {ObjectiveKind::ce_vs_label, ObjectiveKind::ce_vs_prediction, ObjectiveKind::margin_ce,
                 ObjectiveKind::cw_inf, ObjectiveKind::pairing_norm, ObjectiveKind::composite_pgdat,
                 ObjectiveKind::composite_alp, ObjectiveKind::composite_trades}) {
    if (text == to_string(k)) return k;
  }
  throw ContractViolation("unknown objective kind '" + std::string(text) + "'");
}

void ObjectiveSpec::validate() const {
  head.validate();
  if (kind == ObjectiveKind::composite_alp && !(alpha >= 0.0 && alpha <= 1.0)) {
    throw ContractViolation("ALP alpha must lie in [0, 1]");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ContractViolation("objective lambda must be >= 0");
  if (kind == ObjectiveKind::margin_ce && !head.hypersphere()) {
    throw ContractViolation("margin-ce requires an he or m-he head, got " + std::string(to_string(head.mode)));
  }
}

ObjectiveSpec pgdat_objective(const HeadConfig& head) { return {ObjectiveKind::composite_pgdat, head, 0.5, 0.0}; }

ObjectiveSpec alp_objective(const HeadConfig& head, double alpha, double lambda) {
  return {ObjectiveKind::composite_alp, head, alpha, lambda};
}

ObjectiveSpec trades_objective(const HeadConfig& head, double lambda) {
  return {ObjectiveKind::composite_trades, head, 0.5, lambda};
}

ObjectiveSpec attack_objective_for(const ObjectiveSpec& training) {
  ObjectiveSpec a = training;
  switch (training.kind) {
    case ObjectiveKind::composite_pgdat:
    case ObjectiveKind::composite_alp: a.kind = ObjectiveKind::ce_vs_label; break;
    case ObjectiveKind::composite_trades: a.kind = ObjectiveKind::ce_vs_prediction; break;
    default: break;
  }
  return a;
}

Tensor one_hot(const Labels& y, std::size_t num_classes) {
  Tensor t(Shape{y.size(), num_classes});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= num_classes) {
      throw ContractViolation("label " + std::to_string(y[i]) + " out of range [0, " + std::to_string(num_classes) + ")");
    }
    t.at(i, static_cast<std::size_t>(y[i])) = 1.0;
  }
  return t;
}

void check_labels(const Labels& y, std::size_t rows, std::size_t num_classes) {
  if (y.size() != rows) {
    throw ContractViolation("got " + std::to_string(y.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (int v : y) {
    if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
      throw ContractViolation("label " + std::to_string(v) + " out of range [0, " + std::to_string(num_classes) + ")");
    }
  }
}

namespace {

void require_rows(Var v, const char* what) {
  if (v.value().rank() != 2) throw ContractViolation(std::string(what) + ": expects (N, L) scores");
}

Var labels_onehot(Var like, const Labels& y) {
  const auto& s = like.shape();
  check_labels(y, s[0], s[1]);
  return like.tape->constant(one_hot(y, s[1]));
}

}  // namespace

Var ce_per_example(Var logits, const Labels& y) {
  require_rows(logits, "ce_loss");
  return -d::sum_axis(d::log_softmax(logits) * labels_onehot(logits, y), 1);
}

Var ce_loss(Var logits, const Labels& y) { return d::mean(ce_per_example(logits, y)); }

Var ce_between_per_example(Var logits_adv, Var target_probs) {
  require_rows(logits_adv, "ce_between");
  const Tensor& p = target_probs.value();
  if (p.shape() != logits_adv.shape()) throw ContractViolation("ce_between: target shape mismatch");
  for (std::size_t r = 0; r < p.dim(0); ++r) {
    double s = 0.0;
    for (double v : p.row(r)) {
      if (v < 0.0) throw ContractViolation("ce_between: target row has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ContractViolation("ce_between: target row does not sum to 1");
  }
  return -d::sum_axis(d::log_softmax(logits_adv) * target_probs, 1);
}

Var ce_between(Var logits_adv, Var target_probs) { return d::mean(ce_between_per_example(logits_adv, target_probs)); }

Var margin_ce_per_example(Var scores, const Labels& y, const HeadConfig& head) {
  if (!head.hypersphere()) {
    throw ContractViolation("margin_ce_loss: requires an he or m-he head, got " + std::string(to_string(head.mode)));
  }
  head.validate();
  require_rows(scores, "margin_ce_loss");
  const auto& s = scores.shape();
  check_labels(y, s[0], s[1]);
  Tensor shift = one_hot(y, s[1]);
  for (auto& v : shift.storage()) v *= head.margin;
  Var logits = d::scale(scores - scores.tape->constant(std::move(shift)), head.scale);
  return ce_per_example(logits, y);
}

Var margin_ce_loss(Var scores, const Labels& y, const HeadConfig& head) {
  return d::mean(margin_ce_per_example(scores, y, head));
}

Var pairing_norm(Var W_eff, Var z_clean, Var z_adv) {
  if (z_clean.shape() != z_adv.shape()) throw ContractViolation("pairing_norm: feature shapes differ");
  return d::mean(d::l2norm_axis(d::matmul(z_clean - z_adv, W_eff), 1));
}

Var logit_margin_per_example(Var logits, const Labels& y) {
  require_rows(logits, "logit_margin");
  Var onehot = labels_onehot(logits, y);
  const Tensor& z = logits.value();
  double lo = z[0], hi = z[0];
  for (double v : z.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Push the true class below every other entry before the max.
  Var masked = logits - d::scale(onehot, (hi - lo) + 1.0);
  return d::sum_axis(logits * onehot, 1) - d::max_axis(masked, 1);
}

Var cw_inf_per_example(Var logits, const Labels& y) { return d::relu(logit_margin_per_example(logits, y)); }

Var cw_inf_objective(Var logits, const Labels& y) { return d::mean(cw_inf_per_example(logits, y)); }

double ce_loss(const Tensor& logits, const Labels& y) {
  d::Tape t;
  return ce_loss(t.constant(logits), y).value().item();
}

double ce_between(const Tensor& q_adv, const Tensor& p_clean) {
  if (q_adv.rank() != 2 || q_adv.shape() != p_clean.shape()) throw ContractViolation("ce_between: shape mismatch");
  for (const Tensor* t : {&q_adv, &p_clean}) {
    for (std::size_t r = 0; r < t->dim(0); ++r) {
      double s = 0.0;
      for (double v : t->row(r)) {
        if (v < 0.0 || v > 1.0) throw ContractViolation("ce_between: input is not a probability row");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ContractViolation("ce_between: row does not sum to 1");
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < q_adv.size(); ++i) {
    if (p_clean[i] == 0.0) continue;
    if (q_adv[i] == 0.0) throw NumericError("ce_between: zero probability under a supported target");
    total -= p_clean[i] * std::log(q_adv[i]);
  }
  return total / static_cast<double>(q_adv.dim(0));
}

double margin_ce_loss(const Tensor& scores, const Labels& y, const HeadConfig& head) {
  d::Tape t;
  return margin_ce_loss(t.constant(scores), y, head).value().item();
}

double pairing_norm(const Tensor& W_eff, const Tensor& z_clean, const Tensor& z_adv) {
  d::Tape t;
  return pairing_norm(t.constant(W_eff), t.constant(z_clean), t.constant(z_adv)).value().item();
}

double cw_inf_objective(const Tensor& logits, const Labels& y) {
  d::Tape t;
  return cw_inf_objective(t.constant(logits), y).value().item();
}

// ---------------------------------------------------------------------------
// Composite rows

namespace {

/// Per-row label term: margin CE for HE heads, plain CE otherwise.
Var label_term(const HeadConfig& head, Var scores, const Labels& y) {
  return head.hypersphere() ? margin_ce_loss(scores, y, head) : ce_loss(scores, y);
}

Var probabilities(Var scores) { return d::exp(d::log_softmax(scores)); }

}  // namespace

Var training_loss(const ObjectiveSpec& spec, const BoundModel& model, Var x_clean, Var x_adv, const Labels& y) {
  spec.validate();
  if (!spec.composite()) {
    throw ContractViolation("training_loss: objective kind " + std::string(to_string(spec.kind)) + " is not a training row");
  }
  const auto& head = spec.head;
  switch (spec.kind) {
    case ObjectiveKind::composite_pgdat:
      return label_term(head, model_scores(model, head, x_adv), y);
    case ObjectiveKind::composite_alp: {
      Var z = extract_features(model, x_clean);
      Var z_adv = extract_features(model, x_adv);
      Var clean = label_term(head, head_logits(model, head, z), y);
      Var adv = label_term(head, head_logits(model, head, z_adv), y);
      Var W_eff = head.normalizes_weights() ? wn_normalize(model.W()) : model.W();
      Var zc = head.normalizes_features() ? fn_normalize(z) : z;
      Var za = head.normalizes_features() ? fn_normalize(z_adv) : z_adv;
      return d::scale(clean, spec.alpha) + d::scale(adv, 1.0 - spec.alpha) +
             d::scale(pairing_norm(W_eff, zc, za), spec.lambda);
    }
    case ObjectiveKind::composite_trades: {
      Var clean_scores = model_scores(model, head, x_clean);
      Var adv_scores = model_scores(model, head, x_adv);
      // Robust term compares unscaled, margin-free predictions.
      return label_term(head, clean_scores, y) +
             d::scale(ce_between(adv_scores, probabilities(clean_scores)), spec.lambda);
    }
    default: break;
  }
  throw ContractViolation("training_loss: unsupported objective");
}

Tensor clean_target(const ObjectiveSpec& spec, const ModelParams& params, const Tensor& x_clean) {
  return softmax_rows(model_scores(params, spec.head, x_clean));
}

Var adversarial_loss_per_example(const ObjectiveSpec& spec, const BoundModel& model, Var x_candidate, const Labels& y,
                                 const Tensor* target) {
  spec.validate();
  ObjectiveSpec a = spec.composite() ? attack_objective_for(spec) : spec;
  Var scores = model_scores(model, a.head, x_candidate);
  switch (a.kind) {
    case ObjectiveKind::ce_vs_label: return ce_per_example(scores, y);
    case ObjectiveKind::ce_vs_prediction:
      if (!target) throw ContractViolation("adversarial_loss: ce-vs-prediction needs the clean prediction");
      return ce_between_per_example(scores, x_candidate.tape->constant(*target));
    case ObjectiveKind::margin_ce: return margin_ce_per_example(scores, y, a.head);
    case ObjectiveKind::cw_inf: return -cw_inf_per_example(scores, y);
    default: break;
  }
  throw ContractViolation("adversarial_loss: objective kind " + std::string(to_string(a.kind)) +
                          " cannot drive an attack");
}

double adversarial_loss(const ObjectiveSpec& spec, const ModelParams& params, const Tensor& x_candidate,
                        const Tensor& x_clean, const Labels& y) {
  const ObjectiveSpec a = spec.composite() ? attack_objective_for(spec) : spec;
  Tensor target;
  if (a.kind == ObjectiveKind::ce_vs_prediction) target = clean_target(a, params, x_clean);
  d::Tape tape;
  auto m = bind(tape, params, false);
  Var per = adversarial_loss_per_example(a, m, tape.constant(x_candidate), y,
                                         a.kind == ObjectiveKind::ce_vs_prediction ? &target : nullptr);
  return d::mean(per).value().item();
}

}  // namespace sphereat
