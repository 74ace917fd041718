#include "sphereat/diffcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace sphereat::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Tape& tape_of(Var a) {
  if (!a.tape) throw ContractViolation("operation on unbound Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw ContractViolation("operands live on different tapes");
  return tape_of(a);
}

void require_finite(OpKind kind, const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op_name(kind)) + ": non-finite " + what);
  }
}

Var emit(Tape& tape, OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
  require_finite(kind, value, "output");
  return tape.record(kind, std::move(inputs), std::move(value), std::move(fn));
}

enum class Bcast { same, scalar, row, col };

struct BcastPlan {
  Bcast mode;
  std::size_t cols;
  std::size_t b_index(std::size_t i) const {
    switch (mode) {
      case Bcast::same: return i;
      case Bcast::scalar: return 0;
      case Bcast::row: return i % cols;
      case Bcast::col: return i / cols;
    }
    return i;
  }
};

BcastPlan plan_broadcast(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return {Bcast::same, 0};
  if (b.size() == 1) return {Bcast::scalar, 0};
  if (a.rank() == 2) {
    const auto r = a.dim(0), c = a.dim(1);
    if ((b.rank() == 2 && b.dim(0) == 1 && b.dim(1) == c) || (b.rank() == 1 && b.dim(0) == c)) {
      return {Bcast::row, c};
    }
    if (b.rank() == 2 && b.dim(0) == r && b.dim(1) == 1) return {Bcast::col, c};
  }
  throw ContractViolation(std::string(op_name(kind)) + ": cannot combine shapes " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()));
}

template <typename Fwd, typename Bwd>
Var binary(OpKind kind, Var a, Var b, Fwd fwd, Bwd bwd) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_finite(kind, av, "input");
  require_finite(kind, bv, "input");
  const auto plan = plan_broadcast(kind, av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[plan.b_index(i)]);
  const auto ia = a.id, ib = b.id;
  return emit(tape, kind, {ia, ib}, std::move(out),
              [ia, ib, plan, bwd](const Tape& t, std::span<const double> g, GradSink& sink) {
                const Tensor& x = t.value(ia);
                const Tensor& y = t.value(ib);
                auto ga = sink(ia);
                auto gb = sink(ib);
                for (std::size_t i = 0; i < g.size(); ++i) {
                  const auto j = plan.b_index(i);
                  double da = 0.0, db = 0.0;
                  bwd(x[i], y[j], g[i], da, db);
                  if (!ga.empty()) ga[i] += da;
                  if (!gb.empty()) gb[j] += db;
                }
              });
}

template <typename Fwd, typename Deriv>
Var unary(OpKind kind, Var a, Fwd fwd, Deriv deriv) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_finite(kind, av, "input");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const auto ia = a.id;
  return emit(tape, kind, {ia}, std::move(out), [ia, deriv](const Tape& t, std::span<const double> g, GradSink& sink) {
    const Tensor& x = t.value(ia);
    auto ga = sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i]);
  });
}

/// (outer, n, inner) view of a rank-1/2 tensor for an axis reduction.
struct AxisView {
  std::size_t outer, n, inner;
  Shape out_shape;
};

AxisView axis_view(OpKind kind, const Tensor& a, std::size_t axis) {
  if (a.rank() == 1) {
    if (axis != 0) throw ContractViolation(std::string(op_name(kind)) + ": axis out of range for rank-1 input");
    return {1, a.dim(0), 1, Shape{1}};
  }
  if (a.rank() == 2 && axis < 2) {
    const auto r = a.dim(0), c = a.dim(1);
    if (axis == 1) return {r, c, 1, Shape{r, 1}};
    return {1, r, c, Shape{1, c}};
  }
  throw ContractViolation(std::string(op_name(kind)) + ": expects rank 1 or 2 with axis < rank, got " +
                          shape_str(a.shape()));
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      OpKind::add, a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Var sub(Var a, Var b) {
  return binary(
      OpKind::sub, a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Var mul(Var a, Var b) {
  return binary(
      OpKind::mul, a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Var divide(Var a, Var b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw NumericError("divide: division by zero");
  }
  return binary(
      OpKind::divide, a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_finite(OpKind::matmul, av, "input");
  require_finite(OpKind::matmul, bv, "input");
  if (av.rank() != 2 || (bv.rank() != 1 && bv.rank() != 2) || av.dim(1) != bv.dim(0)) {
    throw ContractViolation("matmul: shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()) +
                            " do not conform");
  }
  const auto m = av.dim(0), k = av.dim(1);
  const auto n = bv.rank() == 2 ? bv.dim(1) : std::size_t{1};
  Tensor out(bv.rank() == 2 ? Shape{m, n} : Shape{m});
  {
    CMapMat A(av.storage().data(), m, k);
    CMapMat B(bv.storage().data(), k, n);
    MapMat C(out.storage().data(), m, n);
    C.noalias() = A * B;
  }
  const auto ia = a.id, ib = b.id;
  return emit(tape, OpKind::matmul, {ia, ib}, std::move(out),
              [ia, ib, m, k, n](const Tape& t, std::span<const double> g, GradSink& sink) {
                CMapMat G(g.data(), m, n);
                auto ga = sink(ia);
                auto gb = sink(ib);
                if (!ga.empty()) {
                  CMapMat B(t.value(ib).storage().data(), k, n);
                  MapMat GA(ga.data(), m, k);
                  GA.noalias() += G * B.transpose();
                }
                if (!gb.empty()) {
                  CMapMat A(t.value(ia).storage().data(), m, k);
                  MapMat GB(gb.data(), k, n);
                  GB.noalias() += A.transpose() * G;
                }
              });
}

Var relu(Var a) {
  // d relu / dx at exactly 0 is taken as 0.
  return unary(
      OpKind::relu, a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var negate(Var a) {
  return unary(
      OpKind::negate, a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Var scale(Var a, double c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  return unary(
      OpKind::scale, a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input");
  }
  return unary(
      OpKind::log, a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary(
      OpKind::exp, a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var arccos(Var a) {
  static constexpr double lo = -1.0 + kArccosClamp;
  static constexpr double hi = 1.0 - kArccosClamp;
  return unary(
      OpKind::arccos, a, [](double x) { return std::acos(std::clamp(x, lo, hi)); },
      [](double x) {
        const double c = std::clamp(x, lo, hi);
        return -1.0 / std::sqrt(1.0 - c * c);
      });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_finite(OpKind::sum, av, "input");
  double s = 0.0;
  for (double v : av.data()) s += v;
  const auto ia = a.id;
  return emit(tape, OpKind::sum, {ia}, Tensor::scalar(s), [ia](const Tape&, std::span<const double> g, GradSink& sink) {
    for (auto& v : sink(ia)) v += g[0];
  });
}

Var mean(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_finite(OpKind::mean, av, "input");
  double s = 0.0;
  for (double v : av.data()) s += v;
  const double n = static_cast<double>(av.size());
  const auto ia = a.id;
  return emit(tape, OpKind::mean, {ia}, Tensor::scalar(s / n),
              [ia, n](const Tape&, std::span<const double> g, GradSink& sink) {
                for (auto& v : sink(ia)) v += g[0] / n;
              });
}

Var sum_axis(Var a, std::size_t axis) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_finite(OpKind::sum_axis, av, "input");
  const auto v = axis_view(OpKind::sum_axis, av, axis);
  Tensor out(v.out_shape);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t j = 0; j < v.n; ++j)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += av[(o * v.n + j) * v.inner + i];
  const auto ia = a.id;
  return emit(tape, OpKind::sum_axis, {ia}, std::move(out), [ia, v](const Tape&, std::span<const double> g, GradSink& sink) {
    auto ga = sink(ia);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t j = 0; j < v.n; ++j)
        for (std::size_t i = 0; i < v.inner; ++i) ga[(o * v.n + j) * v.inner + i] += g[o * v.inner + i];
  });
}

Var l2norm_axis(Var a, std::size_t axis) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_finite(OpKind::l2norm_axis, av, "input");
  const auto v = axis_view(OpKind::l2norm_axis, av, axis);
  Tensor out(v.out_shape);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t j = 0; j < v.n; ++j)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const double x = av[(o * v.n + j) * v.inner + i];
        out[o * v.inner + i] += x * x;
      }
  for (auto& x : out.storage()) x = std::sqrt(x);
  const auto ia = a.id;
  const auto id_out = tape.size();
  return emit(tape, OpKind::l2norm_axis, {ia}, std::move(out),
              [ia, id_out, v](const Tape& t, std::span<const double> g, GradSink& sink) {
                const Tensor& x = t.value(ia);
                const Tensor& nrm = t.value(id_out);
                auto ga = sink(ia);
                for (std::size_t o = 0; o < v.outer; ++o)
                  for (std::size_t j = 0; j < v.n; ++j)
                    for (std::size_t i = 0; i < v.inner; ++i) {
                      const double nv = nrm[o * v.inner + i];
                      if (nv == 0.0) continue;
                      const auto k = (o * v.n + j) * v.inner + i;
                      ga[k] += g[o * v.inner + i] * x[k] / nv;
                    }
              });
}

Var max_axis(Var a, std::size_t axis) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_finite(OpKind::max_axis, av, "input");
  const auto v = axis_view(OpKind::max_axis, av, axis);
  Tensor out(v.out_shape);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t best = o * v.n * v.inner + i;
      for (std::size_t j = 1; j < v.n; ++j) {
        const auto k = (o * v.n + j) * v.inner + i;
        if (av[k] > av[best]) best = k;
      }
      out[o * v.inner + i] = av[best];
      arg[o * v.inner + i] = best;
    }
  const auto ia = a.id;
  return emit(tape, OpKind::max_axis, {ia}, std::move(out),
              [ia, arg = std::move(arg)](const Tape&, std::span<const double> g, GradSink& sink) {
                auto ga = sink(ia);
                for (std::size_t i = 0; i < arg.size(); ++i) ga[arg[i]] += g[i];
              });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractViolation("concat: no inputs");
  Tape& tape = tape_of(parts[0]);
  const auto rank = parts[0].value().rank();
  if (rank != 1 && rank != 2) throw ContractViolation("concat: expects rank 1 or 2");
  if (axis >= rank) throw ContractViolation("concat: axis out of range");
  std::vector<std::size_t> ids;
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    tape_of(parts[0], p);
    const Tensor& pv = p.value();
    require_finite(OpKind::concat, pv, "input");
    if (pv.rank() != rank) throw ContractViolation("concat: rank mismatch");
    if (rank == 2 && pv.dim(1 - axis) != parts[0].value().dim(1 - axis)) {
      throw ContractViolation("concat: shapes " + shape_str(pv.shape()) + " and " +
                              shape_str(parts[0].value().shape()) + " disagree off-axis");
    }
    ids.push_back(p.id);
    extents.push_back(pv.dim(axis));
    total += pv.dim(axis);
  }
  // Rows of the (outer, extent*inner) view are concatenated per outer index.
  const std::size_t outer = (rank == 2 && axis == 1) ? parts[0].value().dim(0) : 1;
  const std::size_t inner = (rank == 2 && axis == 0) ? parts[0].value().dim(1) : 1;
  Shape shape = parts[0].value().shape();
  shape[axis] = total;
  Tensor out(shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets.push_back(offset);
    const Tensor& pv = parts[p].value();
    const auto w = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.storage().begin() + o * w, w, out.storage().begin() + o * total * inner + offset * inner);
    offset += extents[p];
  }
  return emit(tape, OpKind::concat, ids, std::move(out),
              [ids, extents, offsets, outer, inner, total](const Tape&, std::span<const double> g, GradSink& sink) {
                for (std::size_t p = 0; p < ids.size(); ++p) {
                  auto gp = sink(ids[p]);
                  if (gp.empty()) continue;
                  const auto w = extents[p] * inner;
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < w; ++i) gp[o * w + i] += g[o * total * inner + offsets[p] * inner + i];
                }
              });
}

Tensor stable_log_softmax(const Tensor& logits) {
  if (logits.empty() || (logits.rank() != 1 && logits.rank() != 2)) {
    throw ContractViolation("log_softmax: expects a non-empty vector or batch of vectors");
  }
  const auto rows = logits.rank() == 2 ? logits.dim(0) : std::size_t{1};
  const auto cols = logits.size() / rows;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.storage().data() + r * cols;
    double* y = out.storage().data() + r * cols;
    const std::size_t top = static_cast<std::size_t>(std::max_element(x, x + cols) - x);
    const double mx = x[top];
    // exp(0) of the max term is kept out of the sum so log1p sees the small tail
    double rest = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (c != top) rest += std::exp(x[c] - mx);
    const double tail = std::log1p(rest);
    for (std::size_t c = 0; c < cols; ++c) y[c] = (x[c] - mx) - tail;
  }
  return out;
}

Var log_softmax(Var logits) {
  Tape& tape = tape_of(logits);
  const Tensor& lv = logits.value();
  require_finite(OpKind::log_softmax, lv, "input");
  Tensor out = stable_log_softmax(lv);
  const auto rows = lv.rank() == 2 ? lv.dim(0) : std::size_t{1};
  const auto cols = lv.size() / rows;
  const auto ia = logits.id;
  const auto id_out = tape.size();
  return emit(tape, OpKind::log_softmax, {ia}, std::move(out),
              [ia, id_out, rows, cols](const Tape& t, std::span<const double> g, GradSink& sink) {
                const Tensor& y = t.value(id_out);
                auto ga = sink(ia);
                for (std::size_t r = 0; r < rows; ++r) {
                  double gs = 0.0;
                  for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                  for (std::size_t c = 0; c < cols; ++c) {
                    const auto k = r * cols + c;
                    ga[k] += g[k] - std::exp(y[k]) * gs;
                  }
                }
              });
}

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ia = a.id;
  return emit(tape, OpKind::reshape, {ia}, std::move(out), [ia](const Tape&, std::span<const double> g, GradSink& sink) {
    auto ga = sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

}  // namespace sphereat::diff
