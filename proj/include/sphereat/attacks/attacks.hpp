#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "sphereat/objectives/objectives.hpp"

namespace sphereat {

enum class NormKind { l2, linf };

std::string_view to_string(NormKind p);
NormKind parse_norm(std::string_view text);

struct AttackSpec {
  NormKind norm = NormKind::linf;
  double eps = 8.0 / 255.0;
  double step = 2.0 / 255.0;
  int steps = 10;
  bool rand_init = true;
  int restarts = 1;
  ObjectiveSpec objective;
  bool momentum = false;  // MIM when set
  double mu = 1.0;
  double lo = 0.0;
  double hi = 1.0;
  bool fn_in_objective = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// PGD-K: K iterations, random start, one restart.
AttackSpec pgd(const ObjectiveSpec& objective, double eps, double step, int steps, std::uint64_t seed = 0);

/// U_p(u): sgn(u) for linf (sgn(0) = 0), u/|u| for l2 (zero when |u| < 1e-12).
diff::Tensor steepest_direction(const diff::Tensor& u, NormKind p);
void steepest_direction_inplace(std::span<double> u, NormKind p);
/// The dual norm |u|_q of a linf (q = 1) or l2 (q = 2) step.
double dual_norm(std::span<const double> u, NormKind p);

/// Projects each row of x_adv onto the eps-ball around x, then onto [lo, hi].
void project(diff::Tensor& x_adv, const diff::Tensor& x, NormKind p, double eps, double lo, double hi);

/// Per-example objective values and the gradient of their sum w.r.t. the input.
struct LossGrad {
  std::vector<double> loss;
  diff::Tensor grad;
};

/// Evaluates a batch slice; `call` counts evaluations within one restart so
/// stochastic estimators can draw fresh samples per step.
using LossGradFn = std::function<LossGrad(const diff::Tensor& x_candidate, std::size_t call)>;
/// Builds an evaluator for rows [begin, end) of the attacked batch at a given restart.
using OracleFactory = std::function<LossGradFn(std::size_t begin, std::size_t end, int restart)>;

struct AttackResult {
  diff::Tensor x_adv;
  std::vector<double> loss;  // L_A at x_adv per example
  /// Per-step per-example L_A of the first restart (x^(0) .. x^(K)), when requested.
  std::vector<std::vector<double>> trace;
};

/// BIM / PGD / MIM driven by an arbitrary oracle; ascends the oracle loss.
AttackResult run_iterative(const AttackSpec& spec, const OracleFactory& oracle, const diff::Tensor& x,
                           bool record_trace = false);

/// White-box oracle for L_A of `spec.objective` against fixed parameters.
OracleFactory white_box_oracle(const AttackSpec& spec, const ModelParams& params, const diff::Tensor& x,
                               const Labels& y);

diff::Tensor fgsm(const ModelParams& params, const AttackSpec& spec, const diff::Tensor& x, const Labels& y);
diff::Tensor iterative_attack(const ModelParams& params, const AttackSpec& spec, const diff::Tensor& x,
                              const Labels& y);
AttackResult iterative_attack_detailed(const ModelParams& params, const AttackSpec& spec, const diff::Tensor& x,
                                       const Labels& y, bool record_trace = false);

/// Routes the attack objective through the fn-only head (softmax(W^T z/|z|)).
AttackSpec fn_in_objective_toggle(AttackSpec spec, bool flag);

/// Caps worker threads used for attack crafting. Results do not depend on it.
void set_attack_threads(unsigned n);
unsigned attack_threads();
/// Rows per work unit; fixed so that thread count never changes results.
inline constexpr std::size_t kAttackChunk = 64;

// ---------------------------------------------------------------------------
// Zeroth-order estimation

enum class EstimatorFamily { nes, spsa };

std::string_view to_string(EstimatorFamily f);
EstimatorFamily parse_estimator(std::string_view text);

struct GradEstimatorSpec {
  EstimatorFamily family = EstimatorFamily::nes;
  int q = 128;
  double sigma = 0.001;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Batch of scalar black-box values, one per row of the input.
using BlackBoxFn = std::function<std::vector<double>(const diff::Tensor& xs)>;

/// (1/q) sum_i (J(x + sigma u_i) - J(x - sigma u_i)) / (2 sigma) u_i for one example.
/// `stream` selects the sample sequence.
std::vector<double> zo_estimate(const BlackBoxFn& J, std::span<const double> x, const Shape& example_shape,
                                const GradEstimatorSpec& est, std::uint64_t stream);

/// Logit-margin black box J(x) = Z_y - max_{i != y} Z_i on the model's head scores.
BlackBoxFn margin_black_box(const ModelParams& params, const HeadConfig& head, int label);

/// Estimated gradient of J per example; rows indexed like x.
diff::Tensor zo_gradient(const ModelParams& params, const HeadConfig& head, const GradEstimatorSpec& est,
                         const diff::Tensor& x, const Labels& y);

/// BIM-style attack stepping along U_p(-g_hat), g_hat estimated for J.
diff::Tensor zo_attack(const ModelParams& params, const AttackSpec& spec, const GradEstimatorSpec& est,
                       const diff::Tensor& x, const Labels& y);

}  // namespace sphereat
