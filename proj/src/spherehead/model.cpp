#include "sphereat/spherehead/model.hpp"

#include <cmath>
#include <sstream>

#include "sphereat/diffcore/rng.hpp"
#include "sphereat/kv.hpp"

namespace sphereat {

std::string_view to_string(HeadMode mode) {
  switch (mode) {
    case HeadMode::standard: return "standard";
    case HeadMode::fn_only: return "fn-only";
    case HeadMode::wn_only: return "wn-only";
    case HeadMode::he: return "he";
    case HeadMode::m_he: return "m-he";
  }
  return "standard";
}

HeadMode parse_head_mode(std::string_view text) {
  for (auto m : {HeadMode::standard, HeadMode::fn_only, HeadMode::wn_only, HeadMode::he, HeadMode::m_he}) {
    if (text == to_string(m)) return m;
  }
  throw ContractViolation("unknown head mode '" + std::string(text) + "'");
}

void HeadConfig::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ContractViolation("head scale s must be positive");
  if (!(margin >= 0.0 && margin < 1.0)) throw ContractViolation("head margin m must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Architecture

namespace {

std::string join(const std::vector<std::size_t>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> parse_list(const std::string& text, char sep) {
  std::vector<std::size_t> out;
  for (const auto& part : split(text, sep)) {
    const auto v = parse_int(part);
    if (v <= 0) throw ParseError("extent must be positive: '" + part + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

std::size_t ArchitectureSpec::input_size() const { return diff::shape_size(input_shape); }

void ArchitectureSpec::validate() const {
  if (input_shape.empty()) throw ContractViolation("architecture: input shape is empty");
  for (auto e : input_shape) {
    if (e == 0) throw ContractViolation("architecture: input extents must be positive");
  }
  if (feature_dim < 1) throw ContractViolation("architecture: feature_dim must be >= 1");
  if (num_classes < 2) throw ContractViolation("architecture: at least two classes required");
  if (kind == ExtractorKind::mlp) {
    if (hidden.empty()) throw ContractViolation("architecture: mlp needs at least one hidden layer");
    if (!conv_channels.empty()) throw ContractViolation("architecture: conv_channels given for an mlp");
  } else {
    if (input_shape.size() != 3) throw ContractViolation("architecture: conv input shape must be (C,H,W)");
    if (conv_channels.empty()) throw ContractViolation("architecture: conv needs at least one conv layer");
    std::size_t h = input_shape[1], w = input_shape[2];
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      if (h < 4 || w < 4) throw ContractViolation("architecture: image too small for the conv stack");
      h = (h - 2) / 2;
      w = (w - 2) / 2;
    }
  }
  for (auto h : hidden) {
    if (h == 0) throw ContractViolation("architecture: hidden widths must be positive");
  }
}

std::string ArchitectureSpec::to_kv() const {
  std::ostringstream os;
  os << "arch.kind = " << (kind == ExtractorKind::mlp ? "mlp" : "conv") << '\n';
  os << "arch.input_shape = " << join(input_shape, 'x') << '\n';
  os << "arch.conv_channels = " << join(conv_channels, ',') << '\n';
  os << "arch.hidden = " << join(hidden, ',') << '\n';
  os << "arch.activation = " << (activation == Activation::relu ? "relu" : "identity") << '\n';
  os << "arch.feature_dim = " << feature_dim << '\n';
  os << "arch.num_classes = " << num_classes << '\n';
  return os.str();
}

ArchitectureSpec ArchitectureSpec::from_kv(std::string_view text) {
  ArchitectureSpec a;
  for (const auto& e : parse_kv(text)) {
    if (e.key == "arch.kind") {
      if (e.value == "mlp") a.kind = ExtractorKind::mlp;
      else if (e.value == "conv") a.kind = ExtractorKind::conv;
      else throw ParseError("arch.kind: unknown extractor '" + e.value + "'");
    } else if (e.key == "arch.input_shape") {
      a.input_shape = parse_list(e.value, 'x');
    } else if (e.key == "arch.conv_channels") {
      a.conv_channels = parse_list(e.value, ',');
    } else if (e.key == "arch.hidden") {
      a.hidden = parse_list(e.value, ',');
    } else if (e.key == "arch.activation") {
      if (e.value == "relu") a.activation = Activation::relu;
      else if (e.value == "identity") a.activation = Activation::identity;
      else throw ParseError("arch.activation: unknown activation '" + e.value + "'");
    } else if (e.key == "arch.feature_dim") {
      a.feature_dim = static_cast<std::size_t>(parse_int(e.value));
    } else if (e.key == "arch.num_classes") {
      a.num_classes = static_cast<std::size_t>(parse_int(e.value));
    }
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Parameters

void ModelParams::validate() const {
  arch.validate();
  if (blocks.size() < 3) throw ContractViolation("model: missing parameter blocks");
  if (W().rank() != 2 || W().dim(0) != arch.feature_dim || W().dim(1) != arch.num_classes) {
    throw ContractViolation("model: softmax.W must be (feature_dim, L), got " + diff::shape_str(W().shape()));
  }
  if (b().size() != arch.num_classes) throw ContractViolation("model: softmax.b must have L entries");
  for (const auto& blk : blocks) {
    if (!blk.value.all_finite()) throw NumericError("model: block " + blk.name + " holds non-finite values");
  }
}

ModelParams init_model(const ArchitectureSpec& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(derive_seed(seed, "init"));
  ModelParams p;
  p.arch = arch;
  auto gaussian = [&](Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.storage()) v = sd * rng.normal();
    return t;
  };

  std::size_t width = arch.input_size();
  if (arch.kind == ExtractorKind::conv) {
    std::size_t c = arch.input_shape[0], h = arch.input_shape[1], w = arch.input_shape[2];
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
      const auto o = arch.conv_channels[i];
      const auto name = "conv" + std::to_string(i + 1);
      p.blocks.push_back({name + ".w", gaussian(Shape{o, c, 3, 3}, c * 9)});
      p.blocks.push_back({name + ".b", Tensor(Shape{o})});
      c = o;
      h = (h - 2) / 2;
      w = (w - 2) / 2;
    }
    width = c * h * w;
  }
  for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
    const auto name = "fc" + std::to_string(i + 1);
    p.blocks.push_back({name + ".w", gaussian(Shape{width, arch.hidden[i]}, width)});
    p.blocks.push_back({name + ".b", Tensor(Shape{arch.hidden[i]})});
    width = arch.hidden[i];
  }
  p.blocks.push_back({"feature.w", gaussian(Shape{width, arch.feature_dim}, width)});
  p.blocks.push_back({"feature.b", Tensor(Shape{arch.feature_dim})});
  p.blocks.push_back({"softmax.W", gaussian(Shape{arch.feature_dim, arch.num_classes}, arch.feature_dim)});
  p.blocks.push_back({"softmax.b", Tensor(Shape{arch.num_classes})});
  return p;
}

BoundModel bind(diff::Tape& tape, const ModelParams& params, bool requires_grad) {
  BoundModel m;
  m.source = &params;
  m.params.reserve(params.blocks.size());
  for (const auto& blk : params.blocks) m.params.push_back(tape.leaf(blk.value, requires_grad));
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

Var activate(Var v, Activation act) { return act == Activation::relu ? diff::relu(v) : v; }

}  // namespace

Var extract_features(const BoundModel& model, Var x) {
  const auto& arch = model.source->arch;
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || xv.size() % arch.input_size() != 0 || xv.size() / xv.dim(0) != arch.input_size()) {
    throw ContractViolation("extract_features: input shape " + diff::shape_str(xv.shape()) +
                            " does not match architecture input " + diff::shape_str(arch.input_shape));
  }
  const auto n = xv.dim(0);
  std::size_t k = 0;
  Var h = x;
  if (arch.kind == ExtractorKind::conv) {
    Shape img{n};
    img.insert(img.end(), arch.input_shape.begin(), arch.input_shape.end());
    if (h.shape() != img) h = diff::reshape(h, img);
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i, k += 2) {
      h = diff::maxpool2d(activate(diff::conv2d(h, model.params[k], model.params[k + 1]), arch.activation), 2);
    }
    h = diff::reshape(h, Shape{n, h.value().size() / n});
  } else if (h.shape().size() != 2) {
    h = diff::reshape(h, Shape{n, arch.input_size()});
  }
  for (std::size_t i = 0; i < arch.hidden.size(); ++i, k += 2) {
    h = activate(diff::matmul(h, model.params[k]) + model.params[k + 1], arch.activation);
  }
  return diff::matmul(h, model.params[k]) + model.params[k + 1];
}

Var fn_normalize(Var z) {
  const Tensor& zv = z.value();
  if (zv.rank() != 2) throw ContractViolation("fn_normalize: expects (N, d) features");
  for (std::size_t r = 0; r < zv.dim(0); ++r) {
    const double nrm = diff::l2_norm(zv.row(r));
    if (!(nrm >= kNormFloor)) {
      throw NumericError("fn_normalize: feature row " + std::to_string(r) + " has norm " + format_double(nrm) +
                         " below 1e-12");
    }
  }
  return z / diff::l2norm_axis(z, 1);
}

Var wn_normalize(Var W) {
  const Tensor& wv = W.value();
  if (wv.rank() != 2) throw ContractViolation("wn_normalize: expects a (d, L) matrix");
  for (std::size_t c = 0; c < wv.dim(1); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < wv.dim(0); ++r) s += wv.at(r, c) * wv.at(r, c);
    if (!(std::sqrt(s) >= kNormFloor)) {
      throw NumericError("wn_normalize: weight column " + std::to_string(c) + " has norm below 1e-12");
    }
  }
  return W / diff::l2norm_axis(W, 0);
}

Var head_logits(const BoundModel& model, const HeadConfig& cfg, Var z) {
  cfg.validate();
  const Var feat = cfg.normalizes_features() ? fn_normalize(z) : z;
  const Var weight = cfg.normalizes_weights() ? wn_normalize(model.W()) : model.W();
  Var scores = diff::matmul(feat, weight);
  switch (cfg.mode) {
    case HeadMode::standard: return scores + model.b();
    case HeadMode::m_he: return -diff::arccos(scores);
    default: return scores;
  }
}

Tensor extract_features(const ModelParams& params, const Tensor& x) {
  diff::Tape tape;
  auto m = bind(tape, params, false);
  return extract_features(m, tape.constant(x)).value();
}

Tensor fn_normalize(const Tensor& z) {
  diff::Tape tape;
  return fn_normalize(tape.constant(z)).value();
}

Tensor wn_normalize(const Tensor& W) {
  diff::Tape tape;
  return wn_normalize(tape.constant(W)).value();
}

Tensor head_logits(const ModelParams& params, const HeadConfig& cfg, const Tensor& z) {
  diff::Tape tape;
  auto m = bind(tape, params, false);
  return head_logits(m, cfg, tape.constant(z)).value();
}

Tensor model_scores(const ModelParams& params, const HeadConfig& cfg, const Tensor& x) {
  diff::Tape tape;
  auto m = bind(tape, params, false);
  return model_scores(m, cfg, tape.constant(x)).value();
}

std::vector<int> argmax_rows(const Tensor& scores) {
  const auto rows = scores.rank() == 2 ? scores.dim(0) : std::size_t{1};
  const auto cols = scores.size() / rows;
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (scores[r * cols + c] > scores[r * cols + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

Tensor softmax_rows(const Tensor& scores) {
  Tensor p = diff::stable_log_softmax(scores);
  for (auto& v : p.storage()) v = std::exp(v);
  return p;
}

Prediction predict(const ModelParams& params, const HeadConfig& cfg, const Tensor& x) {
  Tensor scores = model_scores(params, cfg, x);
  return {softmax_rows(scores), argmax_rows(scores)};
}

}  // namespace sphereat
