#pragma once

#include <string_view>
#include <vector>

#include "sphereat/spherehead/model.hpp"

namespace sphereat {

using Labels = std::vector<int>;

/// Adversarial objectives (maximised by attacks) and training composites.
enum class ObjectiveKind {
  ce_vs_label,       // L_CE(f(x'), y)
  ce_vs_prediction,  // L_CE(f(x'), f(x)), f(x) frozen
  margin_ce,         // L^m_CE with scale and margin (adaptive attacks)
  cw_inf,            // -max(Z_y - max_{i!=y} Z_i, 0)
  pairing_norm,      // ||W^T (z - z*)||
  composite_pgdat,
  composite_alp,
  composite_trades,
};

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind parse_objective_kind(std::string_view text);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::ce_vs_label;
  HeadConfig head;
  double alpha = 0.5;   // ALP clean/adversarial mixing
  double lambda = 0.5;  // ALP pairing weight, or TRADES robust weight

  bool composite() const {
    return kind == ObjectiveKind::composite_pgdat || kind == ObjectiveKind::composite_alp ||
           kind == ObjectiveKind::composite_trades;
  }
  void validate() const;
};

ObjectiveSpec pgdat_objective(const HeadConfig& head);
ObjectiveSpec alp_objective(const HeadConfig& head, double alpha = 0.5, double lambda = 0.5);
ObjectiveSpec trades_objective(const HeadConfig& head, double lambda = 6.0);

/// The inner-maximisation objective paired with a training composite.
/// HE rows use softmax over the raw cosine (or -theta) scores: no scale, no margin.
ObjectiveSpec attack_objective_for(const ObjectiveSpec& training);

Tensor one_hot(const Labels& y, std::size_t num_classes);
void check_labels(const Labels& y, std::size_t rows, std::size_t num_classes);

// Per-example losses have shape (N, 1); the unsuffixed forms are batch means.
Var ce_per_example(Var logits, const Labels& y);
Var ce_loss(Var logits, const Labels& y);
/// -sum_i p_i log softmax(logits_adv)_i per row; p rows must be probability vectors.
Var ce_between_per_example(Var logits_adv, Var target_probs);
Var ce_between(Var logits_adv, Var target_probs);
/// CE of softmax(s * (scores - m * 1_y)) against y.
Var margin_ce_per_example(Var scores, const Labels& y, const HeadConfig& head);
Var margin_ce_loss(Var scores, const Labels& y, const HeadConfig& head);
/// Batch mean of ||(z_clean - z_adv) W_eff|| per row.
Var pairing_norm(Var W_eff, Var z_clean, Var z_adv);
/// max(Z_y - max_{i != y} Z_i, 0) per row.
Var cw_inf_per_example(Var logits, const Labels& y);
Var cw_inf_objective(Var logits, const Labels& y);
/// Z_y - max_{i != y} Z_i per row (no hinge).
Var logit_margin_per_example(Var logits, const Labels& y);

double ce_loss(const Tensor& logits, const Labels& y);
/// Both arguments are probability rows; mean over rows of -sum p log q.
double ce_between(const Tensor& q_adv, const Tensor& p_clean);
double margin_ce_loss(const Tensor& scores, const Labels& y, const HeadConfig& head);
double pairing_norm(const Tensor& W_eff, const Tensor& z_clean, const Tensor& z_adv);
double cw_inf_objective(const Tensor& logits, const Labels& y);

/// The scalar L_T of a Table-style training row. HE heads (he, m-he) route the
/// label terms through margin_ce_loss; other heads through ce_loss.
Var training_loss(const ObjectiveSpec& spec, const BoundModel& model, Var x_clean, Var x_adv, const Labels& y);

/// Frozen clean prediction used by ce_vs_prediction: softmax of raw head scores.
Tensor clean_target(const ObjectiveSpec& spec, const ModelParams& params, const Tensor& x_clean);

/// Per-example L_A, shape (N,1). `target` is required for ce_vs_prediction.
Var adversarial_loss_per_example(const ObjectiveSpec& spec, const BoundModel& model, Var x_candidate, const Labels& y,
                                 const Tensor* target = nullptr);

/// Mean L_A; evaluates the frozen target from x_clean when the kind needs it.
double adversarial_loss(const ObjectiveSpec& spec, const ModelParams& params, const Tensor& x_candidate,
                        const Tensor& x_clean, const Labels& y);

}  // namespace sphereat
