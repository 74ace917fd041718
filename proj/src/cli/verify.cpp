#include <algorithm>
#include <cmath>
#include <numeric>

#include "sphereat/analysis/analysis.hpp"
#include "sphereat/cli/commands.hpp"
#include "sphereat/diffcore/rng.hpp"

namespace sphereat::cli {

using diff::Tensor;

namespace {

constexpr int kPairs = 50;

const std::vector<std::string> kSuites = {"lemma1", "lemma2", "eq14", "eq15", "eq16", "directions"};

CheckResult below(std::string suite, std::string name, double value, double threshold) {
  return {std::move(suite), std::move(name), value, threshold, "<", value < threshold};
}

CheckResult at_least(std::string suite, std::string name, double value, double threshold) {
  return {std::move(suite), std::move(name), value, threshold, ">=", value >= threshold};
}

CheckResult info(std::string suite, std::string name, double value) {
  return {std::move(suite), std::move(name), value, 0.0, "info", true};
}

/// Small relu MLP with Gaussian biases so the standard head exercises b.
ModelParams random_model(std::size_t input, std::size_t classes, std::uint64_t seed) {
  ArchitectureSpec arch;
  arch.kind = ExtractorKind::mlp;
  arch.input_shape = {input};
  arch.hidden = {10, 8};
  arch.feature_dim = 6;
  arch.num_classes = classes;
  ModelParams p = init_model(arch, seed);
  Rng rng(derive_seed(seed, "bias"));
  for (auto& v : p.b().storage()) v = 0.3 * rng.normal();
  for (auto& blk : p.blocks) {
    if (blk.name != "softmax.b" && blk.name.ends_with(".b")) {
      for (auto& v : blk.value.storage()) v = 0.1 * rng.normal();
    }
  }
  return p;
}

Tensor random_inputs(std::size_t n, std::size_t d, Rng& rng) {
  Tensor x({n, d});
  for (auto& v : x.storage()) v = rng.uniform();
  return x;
}

Labels random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  Labels y(n);
  for (auto& v : y) v = static_cast<int>(rng.index(classes));
  return y;
}

Tensor random_probabilities(std::size_t n, std::size_t classes, Rng& rng) {
  Tensor logits({n, classes});
  for (auto& v : logits.storage()) v = 2.0 * rng.normal();
  return softmax_rows(logits);
}

/// Most likely class other than y under the model.
Labels runner_up(const ModelParams& p, const HeadConfig& head, const Tensor& x, const Labels& y) {
  const Tensor s = model_scores(p, head, x);
  const std::size_t L = s.shape()[1];
  Labels out(y.size());
  for (std::size_t r = 0; r < y.size(); ++r) {
    int best = -1;
    for (std::size_t j = 0; j < L; ++j) {
      if (static_cast<int>(j) == y[r]) continue;
      if (best < 0 || s.at(r, j) > s.at(r, static_cast<std::size_t>(best))) best = static_cast<int>(j);
    }
    out[r] = best;
  }
  return out;
}

void lemma2(std::uint64_t seed, std::vector<CheckResult>& out) {
  double worst = 0.0;
  for (int k = 0; k < kPairs; ++k) {
    const std::uint64_t s = derive_seed(seed, "lemma2", static_cast<std::uint64_t>(k));
    Rng rng(derive_seed(s, "data"));
    const std::size_t L = 2 + static_cast<std::size_t>(k % 5);
    const ModelParams p = random_model(7, L, s);
    const Tensor x = random_inputs(4, 7, rng);
    Tensor target;
    if (k % 2 == 0) {
      target = random_probabilities(4, L, rng);
    } else {
      target = Tensor({4, L});
      for (std::size_t r = 0; r < 4; ++r) target.at(r, rng.index(L)) = 1.0;
    }
    worst = std::max(worst, verify_ce_gradient_decomposition(p, x, target));
  }
  out.push_back(below("lemma2", "max_abs_deviation", worst, 1e-10));
}

void eq16(std::uint64_t seed, std::vector<CheckResult>& out) {
  double worst = 0.0;
  for (int k = 0; k < kPairs; ++k) {
    const std::uint64_t s = derive_seed(seed, "eq16", static_cast<std::uint64_t>(k));
    Rng rng(derive_seed(s, "data"));
    const ModelParams p = random_model(7, 5, s);
    const Tensor x = random_inputs(32, 7, rng);
    const Labels y = random_labels(32, 5, rng);
    worst = std::max(worst, verify_softmax_weight_gradient(p, x, y));
  }
  out.push_back(below("eq16", "max_abs_deviation", worst, 1e-10));
}

void eq14_15(std::uint64_t seed, bool want14, bool want15, std::vector<CheckResult>& out) {
  double d14 = 0.0, d15 = 0.0, norm_term = 0.0;
  for (int k = 0; k < kPairs; ++k) {
    const std::uint64_t s = derive_seed(seed, "eq14", static_cast<std::uint64_t>(k));
    Rng rng(derive_seed(s, "data"));
    const std::size_t L = 3 + static_cast<std::size_t>(k % 3);
    const ModelParams p = random_model(7, L, s);
    const Tensor x = random_inputs(6, 7, rng);
    const Labels y = random_labels(6, L, rng);
    const auto r = verify_parameter_gradient_forms(p, x, y);
    d14 = std::max(d14, r.eq14_deviation);
    d15 = std::max(d15, r.eq15_deviation);
    norm_term = std::max(norm_term, r.eq15_norm_term);
  }
  if (want14) out.push_back(below("eq14", "max_rel_deviation", d14, 1e-8));
  if (want15) {
    out.push_back(below("eq15", "max_rel_deviation", d15, 1e-8));
    out.push_back(below("eq15", "feature_norm_term", norm_term, 1e-12));
  }
}

ModelParams quick_moons_model(std::uint64_t seed, HeadConfig head, Dataset& test) {
  ExperimentConfig cfg = parse_config(
      "data = two-moons\n"
      "train.framework = standard\n"
      "train.epochs = 15\n"
      "eval.every_epoch = false\n"
      "eval.limit = 50\n"
      "eval.steps = 1\n");
  cfg.seed = seed;
  cfg.train.seed = derive_seed(seed, "train");
  cfg.train.head = head;
  cfg.train.eval_attack.objective.head = head;
  const LoadedData data = load_data(cfg);
  test = data.test;
  return train(cfg.train, data.train, data.test).params;
}

void lemma1(std::uint64_t seed, std::vector<CheckResult>& out) {
  const std::vector<double> grid = {1e-1, 1e-2, 1e-3, 1e-4};

  // Duality: u^T U_p(u) = |u|_q.
  Rng rng(derive_seed(seed, "lemma1-duality"));
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    std::vector<double> u(1 + rng.index(64));
    for (auto& v : u) v = rng.normal();
    for (NormKind p : {NormKind::l2, NormKind::linf}) {
      std::vector<double> d = u;
      steepest_direction_inplace(d, p);
      const double lhs = std::inner_product(u.begin(), u.end(), d.begin(), 0.0);
      worst = std::max(worst, std::abs(lhs - dual_norm(u, p)));
    }
  }
  out.push_back(below("lemma1", "duality_max_abs_deviation", worst, 1e-10));

  // Linear objective a^T x: no remainder beyond roundoff.
  std::vector<double> a(20), x(20);
  for (auto& v : a) v = rng.normal();
  for (auto& v : x) v = rng.uniform();
  auto lin = [&](const std::vector<double>& z) { return std::inner_product(a.begin(), a.end(), z.begin(), 0.0); };
  auto lin_grad = [&](const std::vector<double>&) { return a; };
  double lin_rem = 0.0;
  for (NormKind p : {NormKind::l2, NormKind::linf}) {
    lin_rem = std::max(lin_rem, lemma1_scaling_check(lin, lin_grad, x, grid, p).max_remainder);
  }
  out.push_back(below("lemma1", "linear_max_remainder", lin_rem, 1e-12));

  // Quadratic 0.5 |x|^2: remainder eps^2/2 for p = 2.
  auto quad = [](const std::vector<double>& z) { return 0.5 * std::inner_product(z.begin(), z.end(), z.begin(), 0.0); };
  auto quad_grad = [](const std::vector<double>& z) { return z; };
  out.push_back(at_least("lemma1", "quadratic_slope_l2",
                         lemma1_scaling_check(quad, quad_grad, x, grid, NormKind::l2).slope, 1.8));

  // CE on a briefly trained moons model.
  Dataset test;
  const HeadConfig head;
  const ModelParams m = quick_moons_model(derive_seed(seed, "lemma1-model"), head, test);
  const Dataset probe = test.head(64);
  for (NormKind p : {NormKind::linf, NormKind::l2}) {
    const auto r = lemma1_scaling_check(m, ObjectiveSpec{ObjectiveKind::ce_vs_label, head}, probe.inputs,
                                        probe.labels, grid, p);
    out.push_back(at_least("lemma1", std::string("ce_slope_") + std::string(to_string(p)), r.slope, 1.8));
  }
}

void directions(std::uint64_t seed, std::vector<CheckResult>& out) {
  double scale = 0.0;
  double fn_min = 1.0;
  double dom_l2 = 0.0;
  double dom_mean = 0.0;
  for (int k = 0; k < 20; ++k) {
    const std::uint64_t s = derive_seed(seed, "directions", static_cast<std::uint64_t>(k));
    Rng rng(derive_seed(s, "data"));
    for (NormKind p : {NormKind::l2, NormKind::linf}) {
      const ModelParams m5 = random_model(7, 5, s);
      const Tensor x = random_inputs(8, 7, rng);
      const Labels y = random_labels(8, 5, rng);
      const HeadConfig std_head;
      const Labels ys = runner_up(m5, std_head, x, y);
      scale = std::max(scale, verify_direction_factorization(m5, std_head, x, y, ys, p).scale_deviation);

      const ModelParams m2 = random_model(7, 2, derive_seed(s, "binary"));
      const Labels y2 = random_labels(8, 2, rng);
      Labels ys2(y2.size());
      for (std::size_t r = 0; r < y2.size(); ++r) ys2[r] = 1 - y2[r];
      HeadConfig fn_head;
      fn_head.mode = HeadMode::fn_only;
      const auto fr = verify_direction_factorization(m2, fn_head, x, y2, ys2, p);
      fn_min = std::min(fn_min, fr.fn_min_cosine);
      scale = std::max(scale, fr.scale_deviation);

      if (p == NormKind::l2) {
        const Tensor xa = random_inputs(8, 7, rng);
        const auto d2 = dominant_term_report(m2, x, xa, y2, ys2, true);
        dom_l2 = std::max(dom_l2, 1.0 - d2.min_cosine);
        const auto d5 = dominant_term_report(m5, x, xa, y, runner_up(m5, std_head, xa, y));
        dom_mean += d5.mean_cosine / 20.0;
      }
    }
  }
  out.push_back(below("directions", "scale_invariance_max_abs_deviation", scale, 1e-12));
  out.push_back(at_least("directions", "fn_only_binary_min_cosine", fn_min, 0.99));
  out.push_back(below("directions", "dominant_binary_one_minus_cosine", dom_l2, 1e-10));
  out.push_back(info("directions", "dominant_random_5class_mean_cosine", dom_mean));
}

}  // namespace

bool valid_selector(const std::string& selector) {
  return selector == "all" || std::find(kSuites.begin(), kSuites.end(), selector) != kSuites.end();
}

std::vector<CheckResult> run_verify(const std::string& selector, std::uint64_t seed) {
  if (!valid_selector(selector)) throw ContractViolation("unknown verify selector '" + selector + "'");
  const bool all = selector == "all";
  std::vector<CheckResult> out;
  if (all || selector == "lemma1") lemma1(seed, out);
  if (all || selector == "lemma2") lemma2(seed, out);
  if (all || selector == "eq14" || selector == "eq15") {
    eq14_15(seed, all || selector == "eq14", all || selector == "eq15", out);
  }
  if (all || selector == "eq16") eq16(seed, out);
  if (all || selector == "directions") directions(seed, out);
  return out;
}

}  // namespace sphereat::cli
