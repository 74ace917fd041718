#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sphereat/attacks/attacks.hpp"
#include "sphereat/datahub/dataset.hpp"

namespace sphereat {

enum class Framework { standard, pgd_at, alp, trades, free_at, fast_at };

std::string_view to_string(Framework f);
Framework parse_framework(std::string_view text);

struct TrainSpec {
  Framework framework = Framework::pgd_at;
  ArchitectureSpec arch;
  HeadConfig head;
  /// Inner maximisation. Its objective is replaced by the framework's L_A.
  AttackSpec attack;
  int epochs = 10;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<double> lr_decay_at = {0.75, 0.9};  // fractions of the epoch budget
  double lr_decay_factor = 0.1;
  int free_replays = 4;
  double fast_step_factor = 1.25;
  bool fast_random_init = true;
  double alp_alpha = 0.5;
  double alp_lambda = 0.5;
  double trades_lambda = 6.0;
  std::uint64_t seed = 0;

  /// Fixed attack used for the robust-accuracy column of the history.
  AttackSpec eval_attack;
  std::size_t eval_limit = 500;  // examples used for robust evaluation (0 = all)
  bool eval_every_epoch = true;  // otherwise only the final epoch is evaluated

  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;

  void validate() const;
  /// The Table 1 row trained by this framework.
  ObjectiveSpec objective() const;
  /// Learning rate in effect during `epoch` (0-based) of `total` epochs.
  double lr_at(double epoch, double total) const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based count of completed epochs (optimizer-step equivalents for FreeAT)
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  double train_loss = 0.0;
  double wall_ms = 0.0;
  std::string snapshot;  // checkpoint written at this epoch, if any
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Header `epoch,clean_acc,robust_acc,train_loss,wall_ms`. With
/// include_wall_time off the wall_ms column is written as 0 so reruns match byte for byte.
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path, bool include_wall_time);
std::string history_csv(const TrainHistory& history, bool include_wall_time);
TrainHistory read_history_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  std::vector<diff::Tensor> velocity;
};

/// v <- mu v + g + wd theta; theta <- theta - lr v, for every block not frozen.
void sgd_momentum_step(ModelParams& params, const std::vector<diff::Tensor>& grads, OptimizerState& state, double lr,
                       double momentum, double weight_decay, const std::vector<bool>& frozen = {});

// ---------------------------------------------------------------------------
// Training

/// Raised on a numeric failure; carries the last parameters that were finite.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, ModelParams last_good, TrainHistory history)
      : NumericError(what), last_good(std::move(last_good)), history(std::move(history)) {}
  ModelParams last_good;
  TrainHistory history;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
  std::size_t attack_calls = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const TrainSpec& spec, const Dataset& train_data, const Dataset& eval_data,
                  const EpochCallback& on_epoch = {});

/// Everything the per-batch updates need besides the parameters.
struct TrainState {
  OptimizerState opt;
  diff::Tensor free_delta;  // FreeAT perturbation, persists across batches
  bool persist_delta = true;
  std::uint64_t step = 0;
  std::size_t attack_calls = 0;
  /// Set when an HE head trained through a tape that read the bias.
  bool bias_read = false;
};

/// One optimizer step on L_T for a crafted batch; returns the loss before the step.
double training_step(const TrainSpec& spec, ModelParams& params, TrainState& state, const diff::Tensor& x,
                     const diff::Tensor& x_adv, const Labels& y, double lr);

/// Crafts x* for one batch with the framework's inner maximisation (identity for standard).
diff::Tensor craft_batch(const TrainSpec& spec, const ModelParams& params, TrainState& state, const diff::Tensor& x,
                         const Labels& y);

/// One pass of free adversarial training; each batch is replayed free_replays times.
/// Returns the mean training loss.
double free_at_epoch(const TrainSpec& spec, BatchIterator& batches, ModelParams& params, TrainState& state, double lr);

/// FastAT: random start in the eps-ball, one signed step of fast_step_factor * eps, projection, one update.
double fast_at_step(const TrainSpec& spec, const Batch& batch, ModelParams& params, TrainState& state, double lr);

/// Fraction of argmax-correct predictions, optionally on white-box adversarial inputs.
/// `limit` > 0 evaluates only the first `limit` examples.
double evaluate(const ModelParams& params, const HeadConfig& head, const AttackSpec* attack, const Dataset& data,
                std::size_t limit = 0);

}  // namespace sphereat
