#include <algorithm>
#include <cmath>

#include "sphereat/analysis/analysis.hpp"
#include "sphereat/diffcore/finite_diff.hpp"

namespace sphereat {

namespace d = diff;
using diff::Tensor;

namespace {

void require_standard(const ModelParams& params, const Tensor& x, std::string_view what) {
  params.validate();
  if (x.rank() < 2 || x.row_size() != params.arch.input_size()) {
    throw ContractViolation(std::string(what) + ": input rows do not match the architecture");
  }
}

HeadConfig head_of(HeadMode mode) {
  HeadConfig h;
  h.mode = mode;
  return h;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = d::l2_norm(a), nb = d::l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(d::dot(a, b) / (na * nb), -1.0, 1.0);
}

/// W_i - W_j (columns of W) as an (fd, 1) tensor.
Tensor column_difference(const Tensor& W, std::size_t i, std::size_t j) {
  Tensor out(d::Shape{W.dim(0), 1});
  for (std::size_t r = 0; r < W.dim(0); ++r) out[r] = W.at(r, i) - W.at(r, j);
  return out;
}

/// Concatenated gradients of the extractor blocks.
std::vector<double> omega_gradient(const d::Gradients& g, const BoundModel& m, double sign = 1.0) {
  std::vector<double> out;
  for (std::size_t k = 0; k < m.source->omega_count(); ++k) {
    for (double v : g[m.params[k]].data()) out.push_back(sign * v);
  }
  return out;
}

}  // namespace

double verify_ce_gradient_decomposition(const ModelParams& params, const Tensor& x_adv, const Tensor& target) {
  require_standard(params, x_adv, "verify_ce_gradient_decomposition");
  const auto n = x_adv.dim(0);
  const auto L = params.num_classes();
  if (target.rank() != 2 || target.dim(0) != n || target.dim(1) != L) {
    throw ContractViolation("verify_ce_gradient_decomposition: target must be (N, L) probabilities");
  }
  const HeadConfig head = head_of(HeadMode::standard);
  d::Tape tape;
  auto model = bind(tape, params, false);
  Var xv = tape.leaf(x_adv);
  Var z = extract_features(model, xv);
  Var Z = head_logits(model, head, z);
  const Tensor q = softmax_rows(Z.value());
  const Tensor lhs = tape.backward(d::sum(ce_between_per_example(Z, tape.constant(target))))[xv];

  Tensor rhs(x_adv.shape());
  const auto per = x_adv.row_size();
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      if (i == j) continue;
      Var residual = d::sum(d::matmul(z, tape.constant(column_difference(params.W(), i, j))));
      const Tensor g = tape.backward(residual)[xv];
      for (std::size_t r = 0; r < n; ++r) {
        const double w = target.at(r, i) * q.at(r, j);
        for (std::size_t k = 0; k < per; ++k) rhs[r * per + k] -= w * g[r * per + k];
      }
    }
  }
  return d::max_abs_diff(lhs, rhs);
}

DecompositionReport dominant_term_report(const ModelParams& params, const Tensor& x, const Tensor& x_adv,
                                         const Labels& y, const Labels& y_star, bool hard_target) {
  require_standard(params, x_adv, "dominant_term_report");
  const auto n = x_adv.dim(0);
  const auto L = params.num_classes();
  check_labels(y, n, L);
  check_labels(y_star, n, L);
  for (std::size_t r = 0; r < n; ++r) {
    if (y[r] == y_star[r]) throw ContractViolation("dominant_term_report: y* must differ from y");
  }
  const HeadConfig head = head_of(HeadMode::standard);
  const Tensor p = hard_target ? one_hot(y, L) : softmax_rows(model_scores(params, head, x));

  d::Tape tape;
  auto model = bind(tape, params, false);
  Var xv = tape.leaf(x_adv);
  Var Z = model_scores(model, head, xv);
  const Tensor q = softmax_rows(Z.value());
  const Tensor full = tape.backward(d::sum(ce_between_per_example(Z, tape.constant(p))))[xv];

  Tensor pair = one_hot(y, L);
  for (std::size_t r = 0; r < n; ++r) pair.at(r, static_cast<std::size_t>(y_star[r])) = -1.0;
  const Tensor g = tape.backward(d::sum(Z * tape.constant(pair)))[xv];

  DecompositionReport rep;
  rep.min_cosine = 1.0;
  const auto per = x_adv.row_size();
  for (std::size_t r = 0; r < n; ++r) {
    const double w = p.at(r, static_cast<std::size_t>(y[r])) * q.at(r, static_cast<std::size_t>(y_star[r]));
    std::vector<double> dom(per), res(per);
    for (std::size_t k = 0; k < per; ++k) {
      dom[k] = -w * g[r * per + k];
      res[k] = full[r * per + k] - dom[k];
    }
    DecompositionRow row;
    auto fr = full.row(r);
    row.full_norm = d::l2_norm(fr);
    row.dominant_norm = d::l2_norm(dom);
    row.cosine = cosine(fr, dom);
    row.residual_norm = d::l2_norm(res);
    rep.mean_cosine += row.cosine;
    rep.min_cosine = std::min(rep.min_cosine, row.cosine);
    rep.mean_residual_ratio += row.full_norm > 0.0 ? row.residual_norm / row.full_norm : 0.0;
    rep.rows.push_back(row);
  }
  rep.mean_cosine /= static_cast<double>(n);
  rep.mean_residual_ratio /= static_cast<double>(n);
  return rep;
}

DirectionReport verify_direction_factorization(const ModelParams& params, const HeadConfig& head, const Tensor& x_adv,
                                               const Labels& y, const Labels& y_star, NormKind p) {
  require_standard(params, x_adv, "verify_direction_factorization");
  const auto n = x_adv.dim(0);
  const auto L = params.num_classes();
  check_labels(y, n, L);
  check_labels(y_star, n, L);

  d::Tape tape;
  auto model = bind(tape, params, false);
  Var xv = tape.leaf(x_adv);
  Var z = extract_features(model, xv);
  const Tensor u = tape.backward(ce_loss(head_logits(model, head, z), y))[xv];

  DirectionReport rep;
  for (double c : {1e-3, 0.37, 5.0, 1e3}) {
    for (std::size_t r = 0; r < n; ++r) {
      Tensor ua = d::slice_rows(u, r, r + 1), ub = ua;
      for (auto& v : ua.storage()) v *= c;
      steepest_direction_inplace(ua.data(), p);
      steepest_direction_inplace(ub.data(), p);
      rep.scale_deviation = std::max(rep.scale_deviation, d::max_abs_diff(ua, ub));
    }
  }

  if (head.mode != HeadMode::fn_only) return rep;
  for (std::size_t r = 0; r < n; ++r) {
    if (y[r] == y_star[r]) throw ContractViolation("verify_direction_factorization: y* must differ from y");
  }
  Var zn = fn_normalize(z);
  Var S = d::matmul(zn, model.W());
  Tensor pair(d::Shape{n, L});
  for (std::size_t r = 0; r < n; ++r) {
    const auto a = static_cast<std::size_t>(y[r]), b = static_cast<std::size_t>(y_star[r]);
    double s = 0.0;
    for (std::size_t k = 0; k < params.W().dim(0); ++k) {
      const double w = params.W().at(k, a) - params.W().at(k, b);
      s += w * w;
    }
    const double inv = 1.0 / std::sqrt(s);
    pair.at(r, a) = inv;
    pair.at(r, b) = -inv;
  }
  // sum_r cos(theta_{y y*}) for row r; rows do not interact.
  const Tensor gc = tape.backward(d::sum(S * tape.constant(pair)))[xv];
  rep.fn_min_cosine = 1.0;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> step(u.row(r).begin(), u.row(r).end());
    std::vector<double> target(gc.row(r).begin(), gc.row(r).end());
    steepest_direction_inplace(step, p);
    steepest_direction_inplace(target, p);
    for (double& v : target) v = -v;
    // A row with every unit inactive has no input gradient; both steps are then zero.
    const bool both_zero = d::l2_norm(step) == 0.0 && d::l2_norm(target) == 0.0;
    const double c = both_zero ? 1.0 : cosine(step, target);
    rep.fn_cosines.push_back(c);
    rep.fn_mean_cosine += c;
    rep.fn_min_cosine = std::min(rep.fn_min_cosine, c);
  }
  rep.fn_mean_cosine /= static_cast<double>(n);
  return rep;
}

// ---------------------------------------------------------------------------

namespace {

struct PairTerms {
  Tensor f;    // softmax probabilities (N, L)
  Tensor nW;   // |W_y - W_l| per row, 1 where l == y
  Tensor mask; // 1 where l != y
};

PairTerms pair_terms(const Tensor& W, const Tensor& logits, const Labels& y) {
  const auto n = logits.dim(0), L = logits.dim(1);
  PairTerms t{softmax_rows(logits), Tensor(d::Shape{n, L}, 1.0), Tensor(d::Shape{n, L}, 1.0)};
  for (std::size_t r = 0; r < n; ++r) {
    const auto yr = static_cast<std::size_t>(y[r]);
    for (std::size_t l = 0; l < L; ++l) {
      if (l == yr) {
        t.mask.at(r, l) = 0.0;
        continue;
      }
      double s = 0.0;
      for (std::size_t k = 0; k < W.dim(0); ++k) {
        const double w = W.at(k, yr) - W.at(k, l);
        s += w * w;
      }
      t.nW.at(r, l) = std::sqrt(s);
    }
  }
  return t;
}

/// cos(theta_{y l}) per (row, l) for features `feat`, W held constant.
Var pair_cosines(d::Tape& tape, Var feat, const Tensor& W, const Labels& y, const PairTerms& t, Var norm) {
  Var Zw = d::matmul(feat, tape.constant(W));
  Var Zy = d::sum_axis(Zw * tape.constant(one_hot(y, W.dim(1))), 1);
  Var R = -(Zw - Zy);
  return R / (tape.constant(t.nW) * norm);
}

}  // namespace

ParameterFormReport verify_parameter_gradient_forms(const ModelParams& params, const Tensor& x, const Labels& y) {
  require_standard(params, x, "verify_parameter_gradient_forms");
  const auto n = x.dim(0);
  const auto L = params.num_classes();
  check_labels(y, n, L);
  const Tensor& W = params.W();
  ParameterFormReport rep;

  {  // standard head
    d::Tape tape;
    auto model = bind(tape, params, true);
    Var z = extract_features(model, tape.constant(x));
    Var Z = head_logits(model, head_of(HeadMode::standard), z);
    const auto lhs = omega_gradient(tape.backward(d::sum(ce_per_example(Z, y))), model, -1.0);

    const PairTerms t = pair_terms(W, Z.value(), y);
    Var nz = d::l2norm_axis(z, 1);
    Var cos = pair_cosines(tape, z, W, y, t, nz);
    Tensor alpha(d::Shape{n, 1}), beta(d::Shape{n, L});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t l = 0; l < L; ++l) {
        const double c = t.f.at(r, l) * t.nW.at(r, l) * t.mask.at(r, l);
        alpha[r] += c * cos.value().at(r, l);
        beta.at(r, l) = c * nz.value()[r];
      }
    }
    const auto g_norm = omega_gradient(tape.backward(d::sum(nz * tape.constant(alpha))), model);
    const auto g_cos = omega_gradient(tape.backward(d::sum(cos * tape.constant(beta))), model);
    std::vector<double> rhs(lhs.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = g_norm[i] + g_cos[i];
    rep.eq14_deviation = d::relative_error(Tensor(d::Shape{lhs.size()}, lhs), Tensor(d::Shape{rhs.size()}, rhs));
  }

  {  // fn-only head
    d::Tape tape;
    auto model = bind(tape, params, true);
    Var z = extract_features(model, tape.constant(x));
    Var zn = fn_normalize(z);
    Var Z = head_logits(model, head_of(HeadMode::fn_only), z);
    const auto lhs = omega_gradient(tape.backward(d::sum(ce_per_example(Z, y))), model, -1.0);

    const PairTerms t = pair_terms(W, Z.value(), y);
    Var nzn = d::l2norm_axis(zn, 1);
    Var cos = pair_cosines(tape, zn, W, y, t, nzn);
    Tensor alpha(d::Shape{n, 1}), beta(d::Shape{n, L});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t l = 0; l < L; ++l) {
        const double c = t.f.at(r, l) * t.nW.at(r, l) * t.mask.at(r, l);
        alpha[r] += c * cos.value().at(r, l);
        beta.at(r, l) = c;
      }
    }
    const auto g_norm = omega_gradient(tape.backward(d::sum(nzn * tape.constant(alpha))), model);
    const auto g_cos = omega_gradient(tape.backward(d::sum(cos * tape.constant(beta))), model);
    for (double v : g_norm) rep.eq15_norm_term = std::max(rep.eq15_norm_term, std::abs(v));
    rep.eq15_deviation = d::relative_error(Tensor(d::Shape{lhs.size()}, lhs), Tensor(d::Shape{g_cos.size()}, g_cos));
  }
  return rep;
}

double verify_softmax_weight_gradient(const ModelParams& params, const Tensor& x, const Labels& y) {
  require_standard(params, x, "verify_softmax_weight_gradient");
  const auto n = x.dim(0);
  const auto L = params.num_classes();
  check_labels(y, n, L);
  d::Tape tape;
  auto model = bind(tape, params, true);
  Var z = extract_features(model, tape.constant(x));
  Var Z = head_logits(model, head_of(HeadMode::standard), z);
  const Tensor gW = tape.backward(d::sum(ce_per_example(Z, y)))[model.W()];

  const Tensor F = softmax_rows(Z.value());
  const Tensor& zv = z.value();
  const auto fd = zv.dim(1);
  double dev = 0.0;
  for (std::size_t k = 0; k < fd; ++k) {
    for (std::size_t l = 0; l < L; ++l) {
      // -grad_{W_l} = sum_{x in D_l} z - sum_{x in D} f(x)_l z
      double rhs = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        if (static_cast<std::size_t>(y[r]) == l) rhs += zv.at(r, k);
      }
      for (std::size_t r = 0; r < n; ++r) rhs -= F.at(r, l) * zv.at(r, k);
      dev = std::max(dev, std::abs(gW.at(k, l) + rhs));
    }
  }
  return dev;
}

}  // namespace sphereat
