#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "sphereat/analysis/analysis.hpp"
#include "sphereat/kv.hpp"

namespace sphereat {

namespace d = diff;
using diff::Tensor;

std::string layer_of(const std::string& block_name) {
  const auto dot = block_name.find('.');
  return dot == std::string::npos ? block_name : block_name.substr(0, dot);
}

namespace {

/// Per-layer gradient norms of the label term for a single example.
std::vector<double> layer_norms(const ModelParams& params, const HeadConfig& head, const Tensor& x, int label,
                                const std::vector<std::size_t>& layer_index, std::size_t layers) {
  d::Tape tape;
  auto model = bind(tape, params, true);
  Var scores = model_scores(model, head, tape.constant(x));
  Var loss = head.hypersphere() ? margin_ce_loss(scores, {label}, head) : ce_loss(scores, {label});
  auto g = tape.backward(loss);
  std::vector<double> sq(layers, 0.0);
  for (std::size_t k = 0; k < model.params.size(); ++k) {
    for (double v : g[model.params[k]].data()) sq[layer_index[k]] += v * v;
  }
  for (double& v : sq) v = std::sqrt(v);
  return sq;
}

}  // namespace

GradRatioReport grad_ratio(const ModelParams& params, const ObjectiveSpec& objective, const Tensor& x,
                           const Tensor& x_adv, const Labels& y) {
  if (x.shape() != x_adv.shape()) throw ContractViolation("grad_ratio: clean and adversarial batches differ in shape");
  check_labels(y, x.dim(0), params.num_classes());
  objective.head.validate();

  GradRatioReport rep;
  std::vector<std::size_t> layer_index;
  for (const auto& b : params.blocks) {
    const auto name = layer_of(b.name);
    auto it = std::find_if(rep.blocks.begin(), rep.blocks.end(), [&](const auto& e) { return e.block == name; });
    if (it == rep.blocks.end()) {
      rep.blocks.push_back({name, std::nullopt, 0});
      layer_index.push_back(rep.blocks.size() - 1);
    } else {
      layer_index.push_back(static_cast<std::size_t>(it - rep.blocks.begin()));
    }
  }
  const auto layers = rep.blocks.size();
  std::vector<double> sum(layers, 0.0);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    const auto clean = layer_norms(params, objective.head, d::slice_rows(x, r, r + 1), y[r], layer_index, layers);
    const auto adv = layer_norms(params, objective.head, d::slice_rows(x_adv, r, r + 1), y[r], layer_index, layers);
    for (std::size_t k = 0; k < layers; ++k) {
      if (clean[k] > 0.0) {
        sum[k] += adv[k] / clean[k];
        ++rep.blocks[k].probes;
      }
    }
  }
  for (std::size_t k = 0; k < layers; ++k) {
    if (rep.blocks[k].probes > 0) rep.blocks[k].ratio = sum[k] / static_cast<double>(rep.blocks[k].probes);
  }
  return rep;
}

std::string grad_ratio_csv(const GradRatioReport& report) {
  std::ostringstream os;
  os << "block,ratio,probes\n";
  for (const auto& b : report.blocks) {
    os << b.block << ',' << (b.ratio ? format_double(*b.ratio) : "") << ',' << b.probes << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

double log_log_slope(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ContractViolation("log_log_slope needs two or more points");
  double mx = 0.0, my = 0.0;
  const auto n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] > 0.0) || !(b[i] > 0.0)) throw ContractViolation("log_log_slope needs positive values");
    mx += std::log(a[i]);
    my += std::log(b[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dx = std::log(a[i]) - mx;
    sxy += dx * (std::log(b[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace {

void check_grid(const std::vector<double>& eps) {
  if (eps.size() < 2) throw ContractViolation("lemma1_scaling_check: need at least two eps values");
  double lo = eps.front(), hi = eps.front();
  for (double e : eps) {
    if (!(e > 0.0)) throw ContractViolation("lemma1_scaling_check: eps values must be > 0");
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  if (hi / lo < 999.0) throw ContractViolation("lemma1_scaling_check: eps grid must span at least 3 decades");
}

void finish(Lemma1Result& r) {
  r.max_remainder = 0.0;
  bool positive = true;
  for (double v : r.remainder) {
    r.max_remainder = std::max(r.max_remainder, v);
    positive = positive && v > 0.0;
  }
  // A remainder that vanishes somewhere has no finite log-log fit.
  r.slope = positive ? log_log_slope(r.eps, r.remainder) : std::numeric_limits<double>::infinity();
}

}  // namespace

Lemma1Result lemma1_scaling_check(const std::function<double(const std::vector<double>&)>& value,
                                  const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                                  const std::vector<double>& x, const std::vector<double>& eps_grid, NormKind p) {
  check_grid(eps_grid);
  const double L0 = value(x);
  const auto g = grad(x);
  if (g.size() != x.size()) throw ContractViolation("lemma1_scaling_check: gradient length mismatch");
  auto u = g;
  steepest_direction_inplace(u, p);
  const double q = dual_norm(g, p);
  Lemma1Result r;
  r.eps = eps_grid;
  for (double e : eps_grid) {
    auto xe = x;
    for (std::size_t i = 0; i < x.size(); ++i) xe[i] += e * u[i];
    r.remainder.push_back(std::abs(value(xe) - L0 - e * q));
  }
  finish(r);
  return r;
}

Lemma1Result lemma1_scaling_check(const ModelParams& params, const ObjectiveSpec& objective, const Tensor& x,
                                  const Labels& y, const std::vector<double>& eps_grid, NormKind p) {
  check_grid(eps_grid);
  const auto n = x.dim(0);
  check_labels(y, n, params.num_classes());
  const Tensor target = objective.kind == ObjectiveKind::ce_vs_prediction ? clean_target(objective, params, x) : Tensor();
  const Tensor* tp = target.empty() ? nullptr : &target;

  auto per_example = [&](const Tensor& xin, Tensor* grad) {
    d::Tape tape;
    auto model = bind(tape, params, false);
    Var xv = tape.leaf(xin);
    Var per = adversarial_loss_per_example(objective, model, xv, y, tp);
    if (grad) *grad = tape.backward(d::sum(per))[xv];
    return std::vector<double>(per.value().data().begin(), per.value().data().end());
  };

  Tensor g;
  const auto L0 = per_example(x, &g);
  Tensor u = g;
  std::vector<double> q(n);
  for (std::size_t r = 0; r < n; ++r) {
    q[r] = dual_norm(g.row(r), p);
    steepest_direction_inplace(u.row(r), p);
  }
  Lemma1Result res;
  res.eps = eps_grid;
  for (double e : eps_grid) {
    Tensor xe = x;
    for (std::size_t i = 0; i < xe.size(); ++i) xe[i] += e * u[i];
    const auto Le = per_example(xe, nullptr);
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += std::abs(Le[r] - L0[r] - e * q[r]);
    res.remainder.push_back(s / static_cast<double>(n));
  }
  finish(res);
  return res;
}

}  // namespace sphereat
