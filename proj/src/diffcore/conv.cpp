#include <Eigen/Core>
#include <memory>

#include "sphereat/diffcore/ops.hpp"

namespace sphereat::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
  std::size_t n, c, h, w, o, k, oh, ow;
  std::size_t patch() const { return c * k * k; }
  std::size_t pixels() const { return oh * ow; }
};

// cols is (C*k*k, N*OH*OW), row-major.
void im2col(const ConvGeom& g, const double* x, double* cols) {
  const auto np = g.n * g.pixels();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* dst = cols + ((c * g.k + ki) * g.k + kj) * np;
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* src = x + (n * g.c + c) * g.h * g.w;
          for (std::size_t i = 0; i < g.oh; ++i) {
            const double* s = src + (i + ki) * g.w + kj;
            double* d = dst + n * g.pixels() + i * g.ow;
            for (std::size_t j = 0; j < g.ow; ++j) d[j] = s[j];
          }
        }
      }
}

void col2im_add(const ConvGeom& g, const double* cols, double* dx) {
  const auto np = g.n * g.pixels();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* src = cols + ((c * g.k + ki) * g.k + kj) * np;
        for (std::size_t n = 0; n < g.n; ++n) {
          double* dst = dx + (n * g.c + c) * g.h * g.w;
          for (std::size_t i = 0; i < g.oh; ++i) {
            double* d = dst + (i + ki) * g.w + kj;
            const double* s = src + n * g.pixels() + i * g.ow;
            for (std::size_t j = 0; j < g.ow; ++j) d[j] += s[j];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var w, Var b) {
  if (x.tape != w.tape || x.tape != b.tape || !x.tape) throw ContractViolation("conv2d: operands on different tapes");
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3) ||
      wv.dim(2) > xv.dim(2) || wv.dim(3) > xv.dim(3) || bv.size() != wv.dim(0)) {
    throw ContractViolation("conv2d: incompatible shapes x" + shape_str(xv.shape()) + " w" + shape_str(wv.shape()) +
                            " b" + shape_str(bv.shape()));
  }
  for (const Tensor* t : {&xv, &wv, &bv}) {
    if (!t->all_finite()) throw NumericError("conv2d: non-finite input");
  }
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), 0, 0};
  g.oh = g.h - g.k + 1;
  g.ow = g.w - g.k + 1;
  const auto np = g.n * g.pixels();

  auto cols = std::make_shared<std::vector<double>>(g.patch() * np);
  im2col(g, xv.storage().data(), cols->data());

  RowMat out_t(g.o, np);
  out_t.noalias() = CMapMat(wv.storage().data(), g.o, g.patch()) * CMapMat(cols->data(), g.patch(), np);

  Tensor out(Shape{g.n, g.o, g.oh, g.ow});
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.o; ++o) {
      double* d = out.storage().data() + (n * g.o + o) * g.pixels();
      const double* s = out_t.data() + o * np + n * g.pixels();
      for (std::size_t p = 0; p < g.pixels(); ++p) d[p] = s[p] + bv[o];
    }
  if (!out.all_finite()) throw NumericError("conv2d: non-finite output");

  const auto ix = x.id, iw = w.id, ib = b.id;
  return tape.record(OpKind::conv2d, {ix, iw, ib}, std::move(out),
                     [ix, iw, ib, g, cols](const Tape& t, std::span<const double> grad, GradSink& sink) {
                       const auto np = g.n * g.pixels();
                       RowMat G(g.o, np);
                       for (std::size_t n = 0; n < g.n; ++n)
                         for (std::size_t o = 0; o < g.o; ++o) {
                           const double* s = grad.data() + (n * g.o + o) * g.pixels();
                           double* d = G.data() + o * np + n * g.pixels();
                           for (std::size_t p = 0; p < g.pixels(); ++p) d[p] = s[p];
                         }
                       if (auto gw = sink(iw); !gw.empty()) {
                         MapMat(gw.data(), g.o, g.patch()).noalias() +=
                             G * CMapMat(cols->data(), g.patch(), np).transpose();
                       }
                       if (auto gb = sink(ib); !gb.empty()) {
                         for (std::size_t o = 0; o < g.o; ++o) gb[o] += G.row(o).sum();
                       }
                       if (auto gx = sink(ix); !gx.empty()) {
                         RowMat dcols(g.patch(), np);
                         dcols.noalias() = CMapMat(t.value(iw).storage().data(), g.o, g.patch()).transpose() * G;
                         col2im_add(g, dcols.data(), gx.data());
                       }
                     });
}

Var maxpool2d(Var x, std::size_t k) {
  if (!x.tape) throw ContractViolation("maxpool2d: unbound Var");
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || k == 0 || xv.dim(2) < k || xv.dim(3) < k) {
    throw ContractViolation("maxpool2d: expects (N,C,H,W) with H,W >= window, got " + shape_str(xv.shape()));
  }
  if (!xv.all_finite()) throw NumericError("maxpool2d: non-finite input");
  const auto n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const auto oh = h / k, ow = w / k;
  Tensor out(Shape{n, c, oh, ow});
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t q = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j, ++q) {
        std::size_t best = base + (i * k) * w + j * k;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const auto idx = base + (i * k + a) * w + (j * k + b);
            if (xv[idx] > xv[best]) best = idx;
          }
        out[q] = xv[best];
        (*arg)[q] = best;
      }
  }
  const auto ix = x.id;
  return tape.record(OpKind::maxpool2d, {ix}, std::move(out),
                     [ix, arg](const Tape&, std::span<const double> g, GradSink& sink) {
                       auto gx = sink(ix);
                       for (std::size_t i = 0; i < arg->size(); ++i) gx[(*arg)[i]] += g[i];
                     });
}

}  // namespace sphereat::diff
