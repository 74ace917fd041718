#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sphereat/diffcore/ops.hpp"
#include "sphereat/diffcore/tensor.hpp"

namespace sphereat {

using diff::Shape;
using diff::Tensor;
using diff::Var;

/// Rows with a smaller l2 norm cannot be feature-normalised.
inline constexpr double kNormFloor = 1e-12;

/// Logit construction:
///   standard  W^T z + b
///   fn_only   W^T (z/|z|)
///   wn_only   Wn^T z           (Wn: unit-norm columns)
///   he        Wn^T (z/|z|) = cos(theta)
///   m_he      -theta = -arccos(cos(theta))
enum class HeadMode { standard, fn_only, wn_only, he, m_he };

std::string_view to_string(HeadMode mode);
HeadMode parse_head_mode(std::string_view text);

struct HeadConfig {
  HeadMode mode = HeadMode::standard;
  double scale = 15.0;   // s
  double margin = 0.2;   // m: cosine units for he, radians for m_he

  void validate() const;
  /// he and m_he: the rows trained with the scaled margin loss.
  bool hypersphere() const { return mode == HeadMode::he || mode == HeadMode::m_he; }
  bool normalizes_features() const { return mode == HeadMode::fn_only || hypersphere(); }
  bool normalizes_weights() const { return mode == HeadMode::wn_only || hypersphere(); }
  bool reads_bias() const { return mode == HeadMode::standard; }
};

enum class ExtractorKind { mlp, conv };
enum class Activation { relu, identity };

/// Feature extractor layout.
///   mlp:  [dense(h) + act] for h in hidden, then dense(feature_dim)
///   conv: [conv3x3(c) + act + maxpool2] for c in conv_channels,
///         [dense(h) + act] for h in hidden, then dense(feature_dim)
/// The final projection to z is linear.
struct ArchitectureSpec {
  ExtractorKind kind = ExtractorKind::mlp;
  Shape input_shape;                       // per example: (d) or (C,H,W)
  std::vector<std::size_t> conv_channels;  // conv only
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;

  void validate() const;
  std::size_t input_size() const;
  std::string to_kv() const;
  static ArchitectureSpec from_kv(std::string_view text);
  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

struct ParamBlock {
  std::string name;
  Tensor value;
};

/// Extractor blocks (omega) in declaration order, followed by the softmax
/// weight "softmax.W" of shape (feature_dim, L) and bias "softmax.b" of shape (L).
struct ModelParams {
  ArchitectureSpec arch;
  std::vector<ParamBlock> blocks;

  Tensor& W() { return blocks[blocks.size() - 2].value; }
  const Tensor& W() const { return blocks[blocks.size() - 2].value; }
  Tensor& b() { return blocks.back().value; }
  const Tensor& b() const { return blocks.back().value; }
  std::size_t omega_count() const { return blocks.size() - 2; }
  std::size_t bias_index() const { return blocks.size() - 1; }
  std::size_t num_classes() const { return arch.num_classes; }

  void validate() const;
};

/// He (fan-in Gaussian) initialisation of weights; biases start at zero.
ModelParams init_model(const ArchitectureSpec& arch, std::uint64_t seed);

/// Parameters placed on a tape as gradient-carrying leaves (or constants).
struct BoundModel {
  const ModelParams* source = nullptr;
  std::vector<Var> params;

  Var W() const { return params[params.size() - 2]; }
  Var b() const { return params.back(); }
  diff::Tape& tape() const { return *params.front().tape; }
};

BoundModel bind(diff::Tape& tape, const ModelParams& params, bool requires_grad = true);

/// z(x; omega) for a batch; x has N rows of input_size() values each.
Var extract_features(const BoundModel& model, Var x);
Var fn_normalize(Var z);
Var wn_normalize(Var W);
/// Raw per-class scores before any scale or margin.
Var head_logits(const BoundModel& model, const HeadConfig& cfg, Var z);
inline Var model_scores(const BoundModel& model, const HeadConfig& cfg, Var x) {
  return head_logits(model, cfg, extract_features(model, x));
}

Tensor extract_features(const ModelParams& params, const Tensor& x);
Tensor fn_normalize(const Tensor& z);
Tensor wn_normalize(const Tensor& W);
Tensor head_logits(const ModelParams& params, const HeadConfig& cfg, const Tensor& z);
Tensor model_scores(const ModelParams& params, const HeadConfig& cfg, const Tensor& x);

/// Ties break toward the smallest index.
std::vector<int> argmax_rows(const Tensor& scores);
Tensor softmax_rows(const Tensor& scores);

struct Prediction {
  Tensor probabilities;
  std::vector<int> labels;
};

/// Inference-time prediction: softmax over head_logits, no scale and no margin.
Prediction predict(const ModelParams& params, const HeadConfig& cfg, const Tensor& x);

}  // namespace sphereat
