#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sphereat/attacks/attacks.hpp"

namespace sphereat {

// ---------------------------------------------------------------------------
// Input-gradient identities

/// Max |autodiff - double sum| over the gradient of sum_n CE(f(x'_n), target_n)
/// w.r.t. x', where the double sum is -sum_{i != j} target_i f(x')_j grad(W_ij^T z').
/// `target` rows are probability vectors. Requires a standard head.
double verify_ce_gradient_decomposition(const ModelParams& params, const diff::Tensor& x_adv,
                                        const diff::Tensor& target);

struct DecompositionRow {
  double full_norm = 0.0;
  double dominant_norm = 0.0;
  double cosine = 0.0;
  double residual_norm = 0.0;
};

struct DecompositionReport {
  std::vector<DecompositionRow> rows;
  double mean_cosine = 0.0;
  double min_cosine = 0.0;
  double mean_residual_ratio = 0.0;  // residual_norm / full_norm
};

/// Compares the full input gradient of CE(f(x'), f(x)) with its single
/// (y, y*) term f(x)_y f(x')_{y*} grad(W_{y y*}^T z'). With hard_target the
/// clean prediction is replaced by the one-hot label.
DecompositionReport dominant_term_report(const ModelParams& params, const diff::Tensor& x, const diff::Tensor& x_adv,
                                         const Labels& y, const Labels& y_star, bool hard_target = false);

struct DirectionReport {
  double scale_deviation = 0.0;  // max |U_p(c u) - U_p(u)| over the probed scalars
  std::vector<double> fn_cosines;  // fn-only head: cos(U_p(grad CE), -U_p(grad cos theta_{y y*})) per row
  double fn_mean_cosine = 0.0;
  double fn_min_cosine = 0.0;
};

/// Scale invariance of U_p on the CE input gradient, and for fn-only heads the
/// agreement of the attack step with -U_p(grad cos theta_{y y*}).
DirectionReport verify_direction_factorization(const ModelParams& params, const HeadConfig& head,
                                               const diff::Tensor& x_adv, const Labels& y, const Labels& y_star,
                                               NormKind p);

// ---------------------------------------------------------------------------
// Parameter-gradient identities

struct ParameterFormReport {
  /// Relative deviation |lhs - rhs| / |lhs| over all extractor parameters.
  double eq14_deviation = 0.0;
  double eq15_deviation = 0.0;
  /// Largest |grad_omega sum_n a_n |z~_n||: the feature-norm term of the fn-only form.
  double eq15_norm_term = 0.0;
};

/// Rebuilds -grad_omega CE for the standard head (norm and cosine factors) and
/// for the fn-only head (cosine factor only) and compares with autodiff.
ParameterFormReport verify_parameter_gradient_forms(const ModelParams& params, const diff::Tensor& x,
                                                    const Labels& y);

/// Max |grad_W sum_k CE_k + (Z^T (onehot - F))| for the standard head with sum reduction.
double verify_softmax_weight_gradient(const ModelParams& params, const diff::Tensor& x, const Labels& y);

// ---------------------------------------------------------------------------
// Diagnostics

struct GradRatioEntry {
  std::string block;
  std::optional<double> ratio;  // empty when every probe had a zero clean gradient
  std::size_t probes = 0;
};

struct GradRatioReport {
  std::vector<GradRatioEntry> blocks;
};

/// Layer name of a parameter block ("conv1.w" -> "conv1").
std::string layer_of(const std::string& block_name);

/// E_n(|grad_block L(x*_n)| / |grad_block L(x_n)|) per layer, with L the
/// label term of `objective` (margin CE for he/m-he heads, CE otherwise).
GradRatioReport grad_ratio(const ModelParams& params, const ObjectiveSpec& objective, const diff::Tensor& x,
                           const diff::Tensor& x_adv, const Labels& y);
std::string grad_ratio_csv(const GradRatioReport& report);

struct Lemma1Result {
  std::vector<double> eps;
  std::vector<double> remainder;  // |L(x + eps U_p(g)) - L(x) - eps |g|_q|
  double slope = 0.0;             // least-squares slope of log remainder vs log eps
  double max_remainder = 0.0;
};

/// `value` and `grad` describe a smooth scalar objective of one input vector.
Lemma1Result lemma1_scaling_check(const std::function<double(const std::vector<double>&)>& value,
                                  const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                                  const std::vector<double>& x, const std::vector<double>& eps_grid, NormKind p);

/// Model form: the remainder is averaged over examples of the batch, each
/// example stepping along its own U_p(grad L_A).
Lemma1Result lemma1_scaling_check(const ModelParams& params, const ObjectiveSpec& objective, const diff::Tensor& x,
                                  const Labels& y, const std::vector<double>& eps_grid, NormKind p);

/// Slope of the least-squares line through (log a_i, log b_i).
double log_log_slope(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sphereat
