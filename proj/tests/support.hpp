#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sphereat/diffcore/finite_diff.hpp"
#include "sphereat/diffcore/rng.hpp"
#include "sphereat/objectives/objectives.hpp"

namespace sphereat::fixtures {

using diff::Tensor;

inline ArchitectureSpec mlp_arch(std::size_t input, std::vector<std::size_t> hidden, std::size_t feature,
                                 std::size_t classes) {
  ArchitectureSpec a;
  a.kind = ExtractorKind::mlp;
  a.input_shape = {input};
  a.hidden = std::move(hidden);
  a.feature_dim = feature;
  a.num_classes = classes;
  return a;
}

/// He-initialised MLP with Gaussian biases everywhere (init leaves them at 0).
inline ModelParams random_mlp(std::size_t input, std::vector<std::size_t> hidden, std::size_t feature,
                              std::size_t classes, std::uint64_t seed, double bias_sd = 0.2) {
  ModelParams p = init_model(mlp_arch(input, std::move(hidden), feature, classes), seed);
  Rng rng(derive_seed(seed, "test-bias"));
  for (auto& blk : p.blocks) {
    if (blk.name.ends_with(".b")) {
      for (auto& v : blk.value.storage()) v = bias_sd * rng.normal();
    }
  }
  return p;
}

inline Tensor uniform_tensor(diff::Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

inline Labels random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  Labels y(n);
  for (auto& v : y) v = static_cast<int>(rng.index(classes));
  return y;
}

inline HeadConfig head(HeadMode mode, double scale = 15.0, double margin = 0.2) {
  HeadConfig h;
  h.mode = mode;
  h.scale = scale;
  h.margin = margin;
  return h;
}

inline const std::vector<HeadMode>& all_heads() {
  static const std::vector<HeadMode> v = {HeadMode::standard, HeadMode::fn_only, HeadMode::wn_only, HeadMode::he,
                                          HeadMode::m_he};
  return v;
}

/// All parameters as one flat vector, in block order.
inline Tensor flatten(const ModelParams& p) {
  std::vector<double> out;
  for (const auto& b : p.blocks) out.insert(out.end(), b.value.storage().begin(), b.value.storage().end());
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

inline ModelParams unflatten(const ModelParams& like, const Tensor& flat) {
  ModelParams p = like;
  std::size_t k = 0;
  for (auto& b : p.blocks) {
    for (auto& v : b.value.storage()) v = flat[k++];
  }
  return p;
}

inline Tensor flatten_grads(const diff::Gradients& g, const BoundModel& m) {
  std::vector<double> out;
  for (const auto& v : m.params) {
    const auto& t = g[v].storage();
    out.insert(out.end(), t.begin(), t.end());
  }
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

/// Smallest |pre-activation| over every relu unit of an MLP on x.
inline double min_relu_margin(const ModelParams& p, const Tensor& x) {
  double m = INFINITY;
  const std::size_t n = x.dim(0);
  std::vector<double> h(x.storage());
  std::size_t width = x.row_size();
  for (std::size_t layer = 0; layer < p.arch.hidden.size(); ++layer) {
    const Tensor& W = p.blocks[2 * layer].value;
    const Tensor& b = p.blocks[2 * layer + 1].value;
    const std::size_t out = W.dim(1);
    std::vector<double> next(n * out);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < out; ++j) {
        double s = b[j];
        for (std::size_t i = 0; i < width; ++i) s += h[r * width + i] * W.at(i, j);
        m = std::min(m, std::abs(s));
        next[r * out + j] = std::max(s, 0.0);
      }
    }
    h = std::move(next);
    width = out;
  }
  return m;
}

inline double training_loss_value(const ObjectiveSpec& spec, const ModelParams& p, const Tensor& xc, const Tensor& xa,
                                  const Labels& y) {
  diff::Tape tape;
  auto m = bind(tape, p, false);
  return training_loss(spec, m, tape.constant(xc), tape.constant(xa), y).value().item();
}

inline Tensor training_loss_grad(const ObjectiveSpec& spec, const ModelParams& p, const Tensor& xc, const Tensor& xa,
                                 const Labels& y) {
  diff::Tape tape;
  auto m = bind(tape, p, true);
  Var l = training_loss(spec, m, tape.constant(xc), tape.constant(xa), y);
  return flatten_grads(tape.backward(l), m);
}

/// The Table 1 rows for a head: PGD-AT, ALP and TRADES composites.
inline std::vector<std::pair<std::string, ObjectiveSpec>> training_rows(const HeadConfig& h) {
  return {{"pgd-at", pgdat_objective(h)}, {"alp", alp_objective(h)}, {"trades", trades_objective(h)}};
}

struct GradCheck {
  double worst = 0.0;
  int probes = 0;
};

/// Reverse mode against central differences (h = 1e-5) on random small MLPs.
/// Probes whose relu pre-activations come within 1e-3 of zero are redrawn.
inline GradCheck check_training_gradients(const ObjectiveSpec& spec, int probes, std::uint64_t seed) {
  GradCheck out;
  std::uint64_t attempt = 0;
  while (out.probes < probes) {
    const std::uint64_t s = derive_seed(seed, "gradcheck", attempt++);
    Rng rng(derive_seed(s, "data"));
    const std::size_t L = 3;
    ModelParams p = random_mlp(4, {5}, 3, L, s);
    const Tensor xc = uniform_tensor({3, 4}, rng);
    Tensor xa = xc;
    for (auto& v : xa.storage()) v += rng.uniform(-0.1, 0.1);
    const Labels y = random_labels(3, L, rng);
    if (std::min(min_relu_margin(p, xc), min_relu_margin(p, xa)) < 1e-3) continue;
    const Tensor g = training_loss_grad(spec, p, xc, xa, y);
    const Tensor fd = diff::finite_diff_grad(
        [&](const Tensor& flat) { return training_loss_value(spec, unflatten(p, flat), xc, xa, y); }, flatten(p), 1e-5);
    out.worst = std::max(out.worst, diff::relative_error(g, fd));
    ++out.probes;
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sphereat-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sphereat::fixtures
