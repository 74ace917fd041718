#include <cmath>

#include "sphereat/attacks/attacks.hpp"
#include "sphereat/diffcore/rng.hpp"

namespace sphereat {

using diff::Tensor;

std::string_view to_string(EstimatorFamily f) { return f == EstimatorFamily::nes ? "nes" : "spsa"; }

EstimatorFamily parse_estimator(std::string_view text) {
  if (text == "nes") return EstimatorFamily::nes;
  if (text == "spsa") return EstimatorFamily::spsa;
  throw ContractViolation("unknown gradient estimator '" + std::string(text) + "' (expected nes or spsa)");
}

void GradEstimatorSpec::validate() const {
  if (q < 1) throw ContractViolation("estimator q must be >= 1, got " + std::to_string(q));
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ContractViolation("estimator sigma must be > 0");
}

std::vector<double> zo_estimate(const BlackBoxFn& J, std::span<const double> x, const Shape& example_shape,
                                const GradEstimatorSpec& est, std::uint64_t stream) {
  est.validate();
  const auto d = x.size();
  if (diff::shape_size(example_shape) != d) throw ContractViolation("zo_estimate: example shape does not match x");
  const auto q = static_cast<std::size_t>(est.q);
  Rng rng(derive_seed(est.seed, "zo", stream));
  std::vector<double> dirs(q * d);
  for (auto& v : dirs) v = est.family == EstimatorFamily::nes ? rng.normal() : rng.rademacher();

  Shape batch_shape{2 * q};
  batch_shape.insert(batch_shape.end(), example_shape.begin(), example_shape.end());
  Tensor queries(batch_shape);
  auto& qs = queries.storage();
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      qs[(2 * i) * d + k] = x[k] + est.sigma * dirs[i * d + k];
      qs[(2 * i + 1) * d + k] = x[k] - est.sigma * dirs[i * d + k];
    }
  }
  const std::vector<double> values = J(queries);
  if (values.size() != 2 * q) throw ContractViolation("zo_estimate: black box returned the wrong number of values");

  std::vector<double> g(d, 0.0);
  for (std::size_t i = 0; i < q; ++i) {
    const double w = (values[2 * i] - values[2 * i + 1]) / (2.0 * est.sigma);
    for (std::size_t k = 0; k < d; ++k) g[k] += w * dirs[i * d + k];
  }
  for (double& v : g) v /= static_cast<double>(q);
  return g;
}

namespace {

std::vector<double> margins(const Tensor& scores, const Labels& labels) {
  const auto L = scores.dim(1);
  std::vector<double> out(scores.dim(0));
  for (std::size_t r = 0; r < scores.dim(0); ++r) {
    const auto yr = static_cast<std::size_t>(labels[r]);
    double other = -HUGE_VAL;
    for (std::size_t c = 0; c < L; ++c) {
      if (c != yr) other = std::max(other, scores.at(r, c));
    }
    out[r] = scores.at(r, yr) - other;
  }
  return out;
}

Shape example_shape_of(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

HeadConfig attack_head(const AttackSpec& spec) {
  HeadConfig h = spec.objective.head;
  if (spec.fn_in_objective) {
    if (h.mode != HeadMode::standard) throw ContractViolation("fn-in-objective attacks require a standard head");
    h.mode = HeadMode::fn_only;
  }
  return h;
}

}  // namespace

BlackBoxFn margin_black_box(const ModelParams& params, const HeadConfig& head, int label) {
  check_labels({label}, 1, params.num_classes());
  return [&params, head, label](const Tensor& xs) {
    return margins(model_scores(params, head, xs), Labels(xs.dim(0), label));
  };
}

Tensor zo_gradient(const ModelParams& params, const HeadConfig& head, const GradEstimatorSpec& est, const Tensor& x,
                   const Labels& y) {
  check_labels(y, x.dim(0), params.num_classes());
  Tensor g(x.shape());
  const Shape ex = example_shape_of(x);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    auto row = zo_estimate(margin_black_box(params, head, y[r]), x.row(r), ex, est, r);
    std::copy(row.begin(), row.end(), g.row(r).begin());
  }
  return g;
}

Tensor zo_attack(const ModelParams& params, const AttackSpec& spec, const GradEstimatorSpec& est, const Tensor& x,
                 const Labels& y) {
  est.validate();
  check_labels(y, x.dim(0), params.num_classes());
  const HeadConfig head = attack_head(spec);
  const Shape ex = example_shape_of(x);
  OracleFactory factory = [&, head, ex](std::size_t begin, std::size_t end, int restart) -> LossGradFn {
    Labels ys(y.begin() + static_cast<std::ptrdiff_t>(begin), y.begin() + static_cast<std::ptrdiff_t>(end));
    const std::uint64_t restart_seed = derive_seed(spec.seed, "zo-attack", static_cast<std::uint64_t>(restart));
    return [&, head, ex, ys = std::move(ys), begin, restart_seed](const Tensor& xc, std::size_t call) {
      LossGrad out;
      out.loss = margins(model_scores(params, head, xc), ys);
      for (double& v : out.loss) v = -v;
      out.grad = Tensor(xc.shape());
      const std::uint64_t step_seed = derive_seed(restart_seed, "step", call);
      for (std::size_t r = 0; r < xc.dim(0); ++r) {
        auto g = zo_estimate(margin_black_box(params, head, ys[r]), xc.row(r), ex, est,
                             derive_seed(step_seed, "example", begin + r));
        auto dst = out.grad.row(r);
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] = -g[k];
      }
      return out;
    };
  };
  return run_iterative(spec, factory, x).x_adv;
}

}  // namespace sphereat
