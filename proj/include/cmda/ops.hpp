#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "cmda/errors.hpp"
#include "cmda/graph.hpp"

// Differentiable primitives over Graph vars, written as free functions so
// model code composes them like expressions. Rank-3 shapes are batches of
// matrices; normalizations and reductions act on the last axis unless noted.

namespace cmda {

namespace detail {

template <typename S>
Graph<S>& same_graph(Var<S> a, Var<S> b) {
  if (a.g != b.g) throw std::invalid_argument("vars belong to different graphs");
  return *a.g;
}

template <typename S>
Var<S> make_op(Graph<S>& g, Tensor<S> value, bool requires_grad,
               typename Graph<S>::BackFn back, bool allow_nonfinite = false) {
#ifndef NDEBUG
  if (!allow_nonfinite && !value.all_finite())
    throw NumericError("non-finite values produced by a forward op");
#else
  (void)allow_nonfinite;
#endif
  return {&g, g.add_node(std::move(value), requires_grad,
                         requires_grad ? std::move(back) : nullptr)};
}

}  // namespace detail

// ---- matrix multiply ------------------------------------------------------

// (m,k)x(k,n), (B,m,k)x(B,k,n), or (B,m,k)x(k,n). The mixed-rank case folds
// the batch into rows so Eigen sees one large product.
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Graph<S>& g = detail::same_graph(a, b);
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  const Index ra = av.rank(), rb = bv.rank();
  const bool rq = g.requires_grad(a.id) || g.requires_grad(b.id);
  const int ai = a.id, bi = b.id;

  if ((ra == 2 || ra == 3) && rb == 2) {
    const Index k = av.last_dim();
    if (k != bv.dim(0))
      throw std::invalid_argument("matmul: inner dims " + shape_str(av.shape()) +
                                  " x " + shape_str(bv.shape()));
    Shape os = av.shape();
    os.back() = bv.dim(1);
    Tensor<S> out(os);
    out.mat2d().noalias() = av.mat2d() * bv.mat2d();
    return detail::make_op(g, std::move(out), rq, [ai, bi](Graph<S>& gr, int self) {
      const Tensor<S>& go = gr.grad(self);
      const Tensor<S>& A = gr.value(ai);
      const Tensor<S>& B = gr.value(bi);
      if (gr.requires_grad(ai))
        gr.grad_buffer(ai).mat2d().noalias() += go.mat2d() * B.mat2d().transpose();
      if (gr.requires_grad(bi))
        gr.grad_buffer(bi).mat2d().noalias() += A.mat2d().transpose() * go.mat2d();
    });
  }
  if (ra == 3 && rb == 3) {
    if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
      throw std::invalid_argument("matmul: shapes " + shape_str(av.shape()) +
                                  " x " + shape_str(bv.shape()));
    Tensor<S> out({av.dim(0), av.dim(1), bv.dim(2)});
    for (Index i = 0; i < av.dim(0); ++i)
      out.slice(i).noalias() = av.slice(i) * bv.slice(i);
    return detail::make_op(g, std::move(out), rq, [ai, bi](Graph<S>& gr, int self) {
      const Tensor<S>& go = gr.grad(self);
      const Tensor<S>& A = gr.value(ai);
      const Tensor<S>& B = gr.value(bi);
      for (Index i = 0; i < A.dim(0); ++i) {
        if (gr.requires_grad(ai))
          gr.grad_buffer(ai).slice(i).noalias() += go.slice(i) * B.slice(i).transpose();
        if (gr.requires_grad(bi))
          gr.grad_buffer(bi).slice(i).noalias() += A.slice(i).transpose() * go.slice(i);
      }
    });
  }
  throw std::invalid_argument("matmul: unsupported ranks " + shape_str(av.shape()) +
                              " x " + shape_str(bv.shape()));
}

// Swap the last two axes.
template <typename S>
Var<S> transpose2(Var<S> a) {
  Graph<S>& g = *a.g;
  const Tensor<S>& av = a.value();
  if (av.rank() < 2) throw std::invalid_argument("transpose2: rank < 2");
  const int ai = a.id;
  if (av.rank() == 2) {
    Tensor<S> out({av.dim(1), av.dim(0)});
    out.mat2d().noalias() = av.mat2d().transpose();
    return detail::make_op(g, std::move(out), g.requires_grad(ai),
                           [ai](Graph<S>& gr, int self) {
                             gr.grad_buffer(ai).mat2d().noalias() +=
                                 gr.grad(self).mat2d().transpose();
                           });
  }
  if (av.rank() == 3) {
    Tensor<S> out({av.dim(0), av.dim(2), av.dim(1)});
    for (Index i = 0; i < av.dim(0); ++i)
      out.slice(i).noalias() = av.slice(i).transpose();
    return detail::make_op(g, std::move(out), g.requires_grad(ai),
                           [ai](Graph<S>& gr, int self) {
                             const Tensor<S>& go = gr.grad(self);
                             Tensor<S>& da = gr.grad_buffer(ai);
                             for (Index i = 0; i < da.dim(0); ++i)
                               da.slice(i).noalias() += go.slice(i).transpose();
                           });
  }
  throw std::invalid_argument("transpose2: rank > 3");
}

namespace detail {
template <typename S>
bool is_suffix_shape(const Tensor<S>& big, const Tensor<S>& small) {
  if (small.rank() > big.rank()) return false;
  Index off = big.rank() - small.rank();
  for (Index i = 0; i < small.rank(); ++i)
    if (big.dim(off + i) != small.dim(i)) return false;
  return true;
}
}  // namespace detail

// Elementwise add; also broadcasts b over a when b's shape is a suffix of
// a's (bias vectors, positional tables).
template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) {
  Graph<S>& g = detail::same_graph(a, b);
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  const int ai = a.id, bi = b.id;
  const bool rq = g.requires_grad(ai) || g.requires_grad(bi);
  if (av.same_shape(bv)) {
    Tensor<S> out(av.shape());
    out.arr() = av.arr() + bv.arr();
    return detail::make_op(g, std::move(out), rq, [ai, bi](Graph<S>& gr, int self) {
      const Tensor<S>& go = gr.grad(self);
      if (gr.requires_grad(ai)) gr.grad_buffer(ai).arr() += go.arr();
      if (gr.requires_grad(bi)) gr.grad_buffer(bi).arr() += go.arr();
    });
  }
  if (detail::is_suffix_shape(av, bv) && bv.numel() > 0) {
    const Index bn = bv.numel();
    const Index rep = av.numel() / bn;
    Tensor<S> out(av.shape());
    out.mat(rep, bn) = av.mat(rep, bn).rowwise() + bv.vec().transpose();
    return detail::make_op(g, std::move(out), rq,
                           [ai, bi, rep, bn](Graph<S>& gr, int self) {
                             const Tensor<S>& go = gr.grad(self);
                             if (gr.requires_grad(ai))
                               gr.grad_buffer(ai).arr() += go.arr();
                             if (gr.requires_grad(bi))
                               gr.grad_buffer(bi).vec() +=
                                   go.mat(rep, bn).colwise().sum().transpose();
                           });
  }
  throw std::invalid_argument("add: incompatible shapes " + shape_str(av.shape()) +
                              " + " + shape_str(bv.shape()));
}

// Elementwise product, same shapes.
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) {
  Graph<S>& g = detail::same_graph(a, b);
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (!av.same_shape(bv))
    throw std::invalid_argument("mul: shape mismatch " + shape_str(av.shape()) +
                                " * " + shape_str(bv.shape()));
  const int ai = a.id, bi = b.id;
  const bool rq = g.requires_grad(ai) || g.requires_grad(bi);
  Tensor<S> out(av.shape());
  out.arr() = av.arr() * bv.arr();
  return detail::make_op(g, std::move(out), rq, [ai, bi](Graph<S>& gr, int self) {
    const Tensor<S>& go = gr.grad(self);
    if (gr.requires_grad(ai))
      gr.grad_buffer(ai).arr() += go.arr() * gr.value(bi).arr();
    if (gr.requires_grad(bi))
      gr.grad_buffer(bi).arr() += go.arr() * gr.value(ai).arr();
  });
}

template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) {
  Graph<S>& g = detail::same_graph(a, b);
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (!av.same_shape(bv))
    throw std::invalid_argument("sub: shape mismatch");
  const int ai = a.id, bi = b.id;
  const bool rq = g.requires_grad(ai) || g.requires_grad(bi);
  Tensor<S> out(av.shape());
  out.arr() = av.arr() - bv.arr();
  return detail::make_op(g, std::move(out), rq, [ai, bi](Graph<S>& gr, int self) {
    const Tensor<S>& go = gr.grad(self);
    if (gr.requires_grad(ai)) gr.grad_buffer(ai).arr() += go.arr();
    if (gr.requires_grad(bi)) gr.grad_buffer(bi).arr() -= go.arr();
  });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Graph<S>& g = *a.g;
  const int ai = a.id;
  Tensor<S> out(a.value().shape());
  out.arr() = a.value().arr() * c;
  return detail::make_op(g, std::move(out), g.requires_grad(ai),
                         [ai, c](Graph<S>& gr, int self) {
                           gr.grad_buffer(ai).arr() += gr.grad(self).arr() * c;
                         });
}

// Additive mask: out = x + m with m a constant whose dims are each equal to
// x's or 1 (rank <= 3). Entries of -inf implement masked fill before softmax;
// this is the one op allowed to emit non-finite values.
template <typename S>
Var<S> add_mask(Var<S> x, const Tensor<S>& m) {
  Graph<S>& g = *x.g;
  const Tensor<S>& xv = x.value();
  if (m.rank() != xv.rank() || xv.rank() > 3)
    throw std::invalid_argument("add_mask: rank mismatch");
  for (Index i = 0; i < m.rank(); ++i)
    if (m.dim(i) != xv.dim(i) && m.dim(i) != 1)
      throw std::invalid_argument("add_mask: dim " + std::to_string(i) +
                                  " not broadcastable");
  Tensor<S> out(xv.shape());
  const Index d0 = xv.rank() > 0 ? xv.dim(0) : 1;
  const Index d1 = xv.rank() > 1 ? xv.dim(1) : 1;
  const Index d2 = xv.rank() > 2 ? xv.dim(2) : 1;
  const Index m0 = m.rank() > 0 ? m.dim(0) : 1;
  const Index m1 = m.rank() > 1 ? m.dim(1) : 1;
  const Index m2 = m.rank() > 2 ? m.dim(2) : 1;
  for (Index i = 0; i < d0; ++i)
    for (Index j = 0; j < d1; ++j)
      for (Index k = 0; k < d2; ++k) {
        Index xo = (i * d1 + j) * d2 + k;
        Index mo = ((m0 == 1 ? 0 : i) * m1 + (m1 == 1 ? 0 : j)) * m2 +
                   (m2 == 1 ? 0 : k);
        out[xo] = xv[xo] + m[mo];
      }
  const int xi = x.id;
  return detail::make_op(
      g, std::move(out), g.requires_grad(xi),
      [xi](Graph<S>& gr, int self) {
        gr.grad_buffer(xi).arr() += gr.grad(self).arr();
      },
      /*allow_nonfinite=*/true);
}

template <typename S>
Var<S> relu(Var<S> x) {
  Graph<S>& g = *x.g;
  const int xi = x.id;
  Tensor<S> out(x.value().shape());
  out.arr() = x.value().arr().max(S(0));
  return detail::make_op(g, std::move(out), g.requires_grad(xi),
                         [xi](Graph<S>& gr, int self) {
                           const Tensor<S>& go = gr.grad(self);
                           const Tensor<S>& xv = gr.value(xi);
                           Tensor<S>& dx = gr.grad_buffer(xi);
                           for (Index i = 0; i < xv.numel(); ++i)
                             if (xv[i] > S(0)) dx[i] += go[i];
                         });
}

// Numerically stabilized softmax along `axis` (negative counts from the
// back). Rows that contain -inf entries get exactly zero there.
template <typename S>
Var<S> softmax(Var<S> x, Index axis = -1) {
  Graph<S>& g = *x.g;
  const Tensor<S>& xv = x.value();
  if (axis < 0) axis += xv.rank();
  if (axis < 0 || axis >= xv.rank())
    throw std::invalid_argument("softmax: bad axis");
  const Index n = xv.dim(axis);
  if (n == 0) throw std::invalid_argument("softmax: empty axis");
  Index inner = 1, outer = 1;
  for (Index i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  for (Index i = 0; i < axis; ++i) outer *= xv.dim(i);

  Tensor<S> out(xv.shape());
  for (Index o = 0; o < outer; ++o)
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * n * inner + in;
      S mx = -std::numeric_limits<S>::infinity();
      for (Index r = 0; r < n; ++r) mx = std::max(mx, xv[base + r * inner]);
      S sum = S(0);
      for (Index r = 0; r < n; ++r) {
        S e = std::exp(xv[base + r * inner] - mx);
        out[base + r * inner] = e;
        sum += e;
      }
      for (Index r = 0; r < n; ++r) out[base + r * inner] /= sum;
    }
  const int xi = x.id;
  return detail::make_op(
      g, std::move(out), g.requires_grad(xi),
      [xi, n, inner, outer](Graph<S>& gr, int self) {
        const Tensor<S>& go = gr.grad(self);
        const Tensor<S>& y = gr.value(self);
        Tensor<S>& dx = gr.grad_buffer(xi);
        for (Index o = 0; o < outer; ++o)
          for (Index in = 0; in < inner; ++in) {
            const Index base = o * n * inner + in;
            S dot = S(0);
            for (Index r = 0; r < n; ++r)
              dot += go[base + r * inner] * y[base + r * inner];
            for (Index r = 0; r < n; ++r)
              dx[base + r * inner] +=
                  (go[base + r * inner] - dot) * y[base + r * inner];
          }
      });
}

// log softmax over the last axis.
template <typename S>
Var<S> log_softmax(Var<S> x) {
  Graph<S>& g = *x.g;
  const Tensor<S>& xv = x.value();
  const Index n = xv.last_dim();
  if (n == 0) throw std::invalid_argument("log_softmax: empty axis");
  const Index rows = xv.lead_rows();
  Tensor<S> out(xv.shape());
  for (Index r = 0; r < rows; ++r) {
    const Index base = r * n;
    S mx = xv[base];
    for (Index j = 1; j < n; ++j) mx = std::max(mx, xv[base + j]);
    S sum = S(0);
    for (Index j = 0; j < n; ++j) sum += std::exp(xv[base + j] - mx);
    const S lse = mx + std::log(sum);
    for (Index j = 0; j < n; ++j) out[base + j] = xv[base + j] - lse;
  }
  const int xi = x.id;
  return detail::make_op(g, std::move(out), g.requires_grad(xi),
                         [xi, n, rows](Graph<S>& gr, int self) {
                           const Tensor<S>& go = gr.grad(self);
                           const Tensor<S>& y = gr.value(self);
                           Tensor<S>& dx = gr.grad_buffer(xi);
                           for (Index r = 0; r < rows; ++r) {
                             const Index base = r * n;
                             S gsum = S(0);
                             for (Index j = 0; j < n; ++j) gsum += go[base + j];
                             for (Index j = 0; j < n; ++j)
                               dx[base + j] += go[base + j] -
                                               std::exp(y[base + j]) * gsum;
                           }
                         });
}

// Layer normalization over the last axis with learned gain and bias (rank 1).
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  Graph<S>& g = detail::same_graph(x, gain);
  detail::same_graph(gain, bias);
  const Tensor<S>& xv = x.value();
  const Index c = xv.last_dim();
  if (gain.value().numel() != c || bias.value().numel() != c)
    throw std::invalid_argument("layer_norm: gain/bias size mismatch");
  const Index rows = xv.lead_rows();

  Tensor<S> out(xv.shape());
  // xhat and inv_std are needed by backward; keep copies in the closure.
  auto xhat = std::make_shared<Tensor<S>>(xv.shape());
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
  const Tensor<S>& gv = gain.value();
  const Tensor<S>& bv = bias.value();
  for (Index r = 0; r < rows; ++r) {
    const Index base = r * c;
    S mean = S(0);
    for (Index j = 0; j < c; ++j) mean += xv[base + j];
    mean /= S(c);
    S var = S(0);
    for (Index j = 0; j < c; ++j) {
      S d = xv[base + j] - mean;
      var += d * d;
    }
    var /= S(c);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (Index j = 0; j < c; ++j) {
      S h = (xv[base + j] - mean) * is;
      (*xhat)[base + j] = h;
      out[base + j] = h * gv[j] + bv[j];
    }
  }
  const int xi = x.id, gi = gain.id, bi = bias.id;
  const bool rq = g.requires_grad(xi) || g.requires_grad(gi) || g.requires_grad(bi);
  return detail::make_op(
      g, std::move(out), rq,
      [xi, gi, bi, c, rows, xhat, inv_std](Graph<S>& gr, int self) {
        const Tensor<S>& go = gr.grad(self);
        const Tensor<S>& gv = gr.value(gi);
        for (Index r = 0; r < rows; ++r) {
          const Index base = r * c;
          if (gr.requires_grad(gi)) {
            Tensor<S>& dg = gr.grad_buffer(gi);
            for (Index j = 0; j < c; ++j)
              dg[j] += go[base + j] * (*xhat)[base + j];
          }
          if (gr.requires_grad(bi)) {
            Tensor<S>& db = gr.grad_buffer(bi);
            for (Index j = 0; j < c; ++j) db[j] += go[base + j];
          }
          if (gr.requires_grad(xi)) {
            Tensor<S>& dx = gr.grad_buffer(xi);
            S sum_dh = S(0), sum_dh_h = S(0);
            for (Index j = 0; j < c; ++j) {
              S dh = go[base + j] * gv[j];
              sum_dh += dh;
              sum_dh_h += dh * (*xhat)[base + j];
            }
            const S is = (*inv_std)[static_cast<std::size_t>(r)];
            for (Index j = 0; j < c; ++j) {
              S dh = go[base + j] * gv[j];
              dx[base + j] += is * (dh - sum_dh / S(c) -
                                    (*xhat)[base + j] * sum_dh_h / S(c));
            }
          }
        }
      });
}

// Inverted dropout driven by the counter RNG, keyed on (seed, step, tag,
// element). Identity outside training so eval paths are bit-stable.
template <typename S>
Var<S> dropout(Var<S> x, S p, std::uint64_t tag) {
  Graph<S>& g = *x.g;
  if (!g.training() || p == S(0)) return x;
  if (!(p >= S(0) && p < S(1)))
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  const Tensor<S>& xv = x.value();
  Tensor<S> out(xv.shape());
  const S inv_keep = S(1) / (S(1) - p);
  const std::uint64_t seed = g.seed(), step = g.step();
  for (Index i = 0; i < xv.numel(); ++i) {
    double u = uniform01(seed, Stream::Dropout, step, tag,
                         static_cast<std::uint64_t>(i));
    out[i] = u >= static_cast<double>(p) ? xv[i] * inv_keep : S(0);
  }
  const int xi = x.id;
  return detail::make_op(
      g, std::move(out), g.requires_grad(xi),
      [xi, p, inv_keep, seed, step, tag](Graph<S>& gr, int self) {
        const Tensor<S>& go = gr.grad(self);
        Tensor<S>& dx = gr.grad_buffer(xi);
        for (Index i = 0; i < go.numel(); ++i) {
          double u = uniform01(seed, Stream::Dropout, step, tag,
                               static_cast<std::uint64_t>(i));
          if (u >= static_cast<double>(p)) dx[i] += go[i] * inv_keep;
        }
      });
}

// Embedding lookup: table is (V, d), ids index rows, result is (n, d).
// Repeated ids accumulate gradient into the same row.
template <typename S>
Var<S> gather_rows(Var<S> table, std::vector<int> ids) {
  Graph<S>& g = *table.g;
  const Tensor<S>& tv = table.value();
  if (tv.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank 2");
  const Index v = tv.dim(0), d = tv.dim(1);
  const Index n = static_cast<Index>(ids.size());
  Tensor<S> out({n, d});
  for (Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= v)
      throw std::invalid_argument("gather_rows: id " + std::to_string(id) +
                                  " out of range [0," + std::to_string(v) + ")");
    out.mat2d().row(i) = tv.mat2d().row(id);
  }
  const int ti = table.id;
  return detail::make_op(g, std::move(out), g.requires_grad(ti),
                         [ti, ids = std::move(ids)](Graph<S>& gr, int self) {
                           const Tensor<S>& go = gr.grad(self);
                           Tensor<S>& dt = gr.grad_buffer(ti);
                           for (Index i = 0; i < go.dim(0); ++i)
                             dt.mat2d().row(ids[static_cast<std::size_t>(i)]) +=
                                 go.mat2d().row(i);
                         });
}

// Select rows of the 2D view: result is (k, last_dim).
template <typename S>
Var<S> select_rows(Var<S> x, std::vector<Index> rows) {
  Graph<S>& g = *x.g;
  const Tensor<S>& xv = x.value();
  const Index r = xv.lead_rows(), c = xv.last_dim();
  Tensor<S> out({static_cast<Index>(rows.size()), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= r)
      throw std::invalid_argument("select_rows: row out of range");
    out.mat2d().row(static_cast<Index>(i)) = xv.mat2d().row(rows[i]);
  }
  const int xi = x.id;
  return detail::make_op(g, std::move(out), g.requires_grad(xi),
                         [xi, rows = std::move(rows)](Graph<S>& gr, int self) {
                           const Tensor<S>& go = gr.grad(self);
                           auto dx = gr.grad_buffer(xi).mat2d();
                           for (std::size_t i = 0; i < rows.size(); ++i)
                             dx.row(rows[i]) += go.mat2d().row(static_cast<Index>(i));
                         });
}

// Replace rows of the 2D view of x with rows of repl; row indices must be
// unique. Gradient splits between the untouched base and the replacements.
template <typename S>
Var<S> scatter_rows(Var<S> x, std::vector<Index> rows, Var<S> repl) {
  Graph<S>& g = detail::same_graph(x, repl);
  const Tensor<S>& xv = x.value();
  const Tensor<S>& rv = repl.value();
  const Index r = xv.lead_rows(), c = xv.last_dim();
  if (rv.rank() != 2 || rv.dim(0) != static_cast<Index>(rows.size()) || rv.dim(1) != c)
    throw std::invalid_argument("scatter_rows: replacement shape mismatch");
  {
    std::vector<Index> sorted = rows;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("scatter_rows: duplicate row index");
    if (!sorted.empty() && (sorted.front() < 0 || sorted.back() >= r))
      throw std::invalid_argument("scatter_rows: row out of range");
  }
  Tensor<S> out = xv;
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.mat2d().row(rows[i]) = rv.mat2d().row(static_cast<Index>(i));
  const int xi = x.id, ri = repl.id;
  const bool rq = g.requires_grad(xi) || g.requires_grad(ri);
  return detail::make_op(g, std::move(out), rq,
                         [xi, ri, rows = std::move(rows)](Graph<S>& gr, int self) {
                           const Tensor<S>& go = gr.grad(self);
                           if (gr.requires_grad(ri)) {
                             auto dr = gr.grad_buffer(ri).mat2d();
                             for (std::size_t i = 0; i < rows.size(); ++i)
                               dr.row(static_cast<Index>(i)) += go.mat2d().row(rows[i]);
                           }
                           if (gr.requires_grad(xi)) {
                             Tensor<S> masked = go;
                             for (Index row : rows) masked.mat2d().row(row).setZero();
                             gr.grad_buffer(xi).arr() += masked.arr();
                           }
                         });
}

// Slice of the last axis: columns [start, start+len).
template <typename S>
Var<S> slice_last(Var<S> x, Index start, Index len) {
  Graph<S>& g = *x.g;
  const Tensor<S>& xv = x.value();
  const Index c = xv.last_dim();
  if (start < 0 || len < 0 || start + len > c)
    throw std::invalid_argument("slice_last: range out of bounds");
  Shape os = xv.shape();
  os.back() = len;
  Tensor<S> out(os);
  out.mat2d() = xv.mat2d().middleCols(start, len);
  const int xi = x.id;
  return detail::make_op(g, std::move(out), g.requires_grad(xi),
                         [xi, start, len](Graph<S>& gr, int self) {
                           gr.grad_buffer(xi).mat2d().middleCols(start, len) +=
                               gr.grad(self).mat2d();
                         });
}

// Concatenate along the last axis; all parts share leading dims.
template <typename S>
Var<S> concat_last(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no parts");
  Graph<S>& g = *parts[0].g;
  Index total = 0;
  const Index rows = parts[0].value().lead_rows();
  bool rq = false;
  for (const Var<S>& p : parts) {
    if (p.g != &g) throw std::invalid_argument("concat_last: mixed graphs");
    if (p.value().lead_rows() != rows)
      throw std::invalid_argument("concat_last: leading dims differ");
    total += p.value().last_dim();
    rq = rq || g.requires_grad(p.id);
  }
  Shape os = parts[0].value().shape();
  os.back() = total;
  Tensor<S> out(os);
  std::vector<int> pids;
  std::vector<Index> widths;
  Index col = 0;
  for (const Var<S>& p : parts) {
    const Index w = p.value().last_dim();
    out.mat2d().middleCols(col, w) = p.value().mat2d();
    pids.push_back(p.id);
    widths.push_back(w);
    col += w;
  }
  return detail::make_op(g, std::move(out), rq,
                         [pids, widths](Graph<S>& gr, int self) {
                           const Tensor<S>& go = gr.grad(self);
                           Index col = 0;
                           for (std::size_t i = 0; i < pids.size(); ++i) {
                             if (gr.requires_grad(pids[i]))
                               gr.grad_buffer(pids[i]).mat2d() +=
                                   go.mat2d().middleCols(col, widths[i]);
                             col += widths[i];
                           }
                         });
}

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
  Graph<S>& g = *x.g;
  Tensor<S> out = x.value().reshaped(shape);
  const int xi = x.id;
  return detail::make_op(g, std::move(out), g.requires_grad(xi),
                         [xi](Graph<S>& gr, int self) {
                           gr.grad_buffer(xi).arr() += gr.grad(self).arr();
                         });
}

template <typename S>
Var<S> sum_all(Var<S> x) {
  Graph<S>& g = *x.g;
  Tensor<S> out = Tensor<S>::scalar(x.value().arr().sum());
  const int xi = x.id;
  return detail::make_op(g, std::move(out), g.requires_grad(xi),
                         [xi](Graph<S>& gr, int self) {
                           gr.grad_buffer(xi).arr() += gr.grad(self)[0];
                         });
}

template <typename S>
Var<S> mean_all(Var<S> x) {
  Graph<S>& g = *x.g;
  const Index n = x.value().numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  Tensor<S> out = Tensor<S>::scalar(x.value().arr().sum() / S(n));
  const int xi = x.id;
  return detail::make_op(g, std::move(out), g.requires_grad(xi),
                         [xi, n](Graph<S>& gr, int self) {
                           gr.grad_buffer(xi).arr() += gr.grad(self)[0] / S(n);
                         });
}

// Smoothed cross entropy, mean over rows whose label is not ignore_id. The
// smoothed target puts 1-eps on the gold label plus eps spread uniformly over
// the whole vocabulary, so per row:
//   loss = lse(z) - (1-eps) * z[gold] - (eps/V) * sum_j z[j]
template <typename S>
Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels, S smoothing,
                     int ignore_id) {
  Graph<S>& g = *logits.g;
  const Tensor<S>& zv = logits.value();
  const Index v = zv.last_dim();
  const Index n = zv.lead_rows();
  if (static_cast<Index>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  if (!(smoothing >= S(0) && smoothing < S(1)))
    throw std::invalid_argument("cross_entropy: smoothing must be in [0,1)");

  Index kept = 0;
  S total = S(0);
  for (Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y == ignore_id) continue;
    if (y < 0 || y >= v)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " out of range");
    ++kept;
    const Index base = r * v;
    S mx = zv[base];
    for (Index j = 1; j < v; ++j) mx = std::max(mx, zv[base + j]);
    S sum = S(0), zsum = S(0);
    for (Index j = 0; j < v; ++j) {
      sum += std::exp(zv[base + j] - mx);
      zsum += zv[base + j];
    }
    const S lse = mx + std::log(sum);
    total += lse - (S(1) - smoothing) * zv[base + y] - smoothing / S(v) * zsum;
  }
  if (kept == 0) throw DataError("no target positions");
  Tensor<S> out = Tensor<S>::scalar(total / S(kept));
  const int zi = logits.id;
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return detail::make_op(
      g, std::move(out), g.requires_grad(zi),
      [zi, labels_copy, smoothing, ignore_id, v, n, kept](Graph<S>& gr, int self) {
        const S gscale = gr.grad(self)[0] / S(kept);
        const Tensor<S>& zv = gr.value(zi);
        Tensor<S>& dz = gr.grad_buffer(zi);
        for (Index r = 0; r < n; ++r) {
          const int y = (*labels_copy)[static_cast<std::size_t>(r)];
          if (y == ignore_id) continue;
          const Index base = r * v;
          S mx = zv[base];
          for (Index j = 1; j < v; ++j) mx = std::max(mx, zv[base + j]);
          S sum = S(0);
          for (Index j = 0; j < v; ++j) sum += std::exp(zv[base + j] - mx);
          for (Index j = 0; j < v; ++j) {
            const S p = std::exp(zv[base + j] - mx) / sum;
            S q = smoothing / S(v) + (j == y ? S(1) - smoothing : S(0));
            dz[base + j] += gscale * (p - q);
          }
        }
      });
}

}  // namespace cmda
