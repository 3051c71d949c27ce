#include "wacnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace wacnn {

namespace {

// C (m x n) += A (m x k) * B^T where B is (n x k).
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double* arow = a + i * k;
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      c[i * n + j] += acc;
    }
}

// C (m x n) = A^T * B where A is (k x m), B is (k x n).
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * m;
    const double* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void im2col(const double* xs, std::size_t ci, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t pad, std::size_t ho,
            std::size_t wo, double* col) {
  const std::size_t cols = ho * wo;
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col + ((c * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix >= 0 && ix < static_cast<std::ptrdiff_t>(w);
            dst[oy * wo + ox] =
                inside ? xs[(c * h + static_cast<std::size_t>(iy)) * w +
                            static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
}

Shape reduced_shape(const Shape& in, const std::vector<std::size_t>& axes,
                    bool keepdims) {
  std::vector<bool> drop(in.size(), false);
  for (std::size_t a : axes) {
    if (a >= in.size())
      throw ShapeError("reduce: axis " + std::to_string(a) +
                       " out of range for shape " + shape_str(in));
    drop[a] = true;
  }
  Shape out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (drop[i]) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[i]);
    }
  }
  return out;
}

}  // namespace

Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  // Left-pad target to g's rank with 1s; extent-1 axes fold by summation.
  const std::size_t r = g.rank();
  const std::size_t off = r - target.size();
  std::vector<std::size_t> text(r, 1);
  for (std::size_t i = 0; i < target.size(); ++i) text[off + i] = target[i];
  std::vector<std::size_t> tstride(r, 0);
  std::size_t acc = 1;
  for (std::size_t i = r; i-- > 0;) {
    tstride[i] = (text[i] == 1) ? 0 : acc;
    acc *= text[i];
  }
  std::vector<std::size_t> idx(r, 0);
  const Shape& gs = g.shape();
  for (std::size_t flat = 0; flat < g.numel(); ++flat) {
    std::size_t toff = 0;
    for (std::size_t i = 0; i < r; ++i) toff += idx[i] * tstride[i];
    out[toff] += g[flat];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < gs[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

Var Graph::push(Tensor value, bool needs_grad,
                std::function<void(Graph&, const Tensor&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = needs_grad ? std::move(backprop) : nullptr;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    for (std::size_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
  }
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.has_grad)
    throw ConfigError("no gradient recorded for node " + std::to_string(v.id));
  return n.grad;
}

void Graph::backward(Var loss) {
  if (nodes_[loss.id].value.numel() != 1) {
    throw ConfigError("backward: loss must be scalar, got shape " +
                      shape_str(nodes_[loss.id].value.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Node& ln = nodes_[loss.id];
  ln.grad = Tensor(ln.value.shape());
  ln.grad[0] = 1.0;
  ln.has_grad = true;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backprop) n.backprop(*this, n.grad);
  }
}

Var Graph::leaf(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

Var Graph::add(Var a, Var b) {
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Tensor v = ::wacnn::add(value(a), value(b));
  return push(std::move(v), ng, [a, b](Graph& g, const Tensor& gout) {
    if (g.nodes_[a.id].needs_grad)
      g.accumulate(a.id, reduce_to_shape(gout, g.value(a).shape()));
    if (g.nodes_[b.id].needs_grad)
      g.accumulate(b.id, reduce_to_shape(gout, g.value(b).shape()));
  });
}

Var Graph::sub(Var a, Var b) {
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Tensor v = ::wacnn::sub(value(a), value(b));
  return push(std::move(v), ng, [a, b](Graph& g, const Tensor& gout) {
    if (g.nodes_[a.id].needs_grad)
      g.accumulate(a.id, reduce_to_shape(gout, g.value(a).shape()));
    if (g.nodes_[b.id].needs_grad)
      g.accumulate(b.id, reduce_to_shape(::wacnn::scale(gout, -1.0),
                                         g.value(b).shape()));
  });
}

Var Graph::mul(Var a, Var b) {
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Tensor v = ::wacnn::mul(value(a), value(b));
  return push(std::move(v), ng, [a, b](Graph& g, const Tensor& gout) {
    if (g.nodes_[a.id].needs_grad)
      g.accumulate(a.id, reduce_to_shape(::wacnn::mul(gout, g.value(b)),
                                         g.value(a).shape()));
    if (g.nodes_[b.id].needs_grad)
      g.accumulate(b.id, reduce_to_shape(::wacnn::mul(gout, g.value(a)),
                                         g.value(b).shape()));
  });
}

Var Graph::scale(Var a, double c) {
  const bool ng = nodes_[a.id].needs_grad;
  return push(::wacnn::scale(value(a), c), ng,
              [a, c](Graph& g, const Tensor& gout) {
                g.accumulate(a.id, ::wacnn::scale(gout, c));
              });
}

Var Graph::relu(Var a) {
  const bool ng = nodes_[a.id].needs_grad;
  return push(::wacnn::relu(value(a)), ng, [a](Graph& g, const Tensor& gout) {
    const Tensor& x = g.value(a);
    Tensor gx(x.shape());
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < x.numel(); ++i)
      gx[i] = x[i] > 0.0 ? gout[i] : 0.0;
    g.accumulate(a.id, gx);
  });
}

Var Graph::matmul(Var a, Var b) {
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Tensor v = ::wacnn::matmul(value(a), value(b));
  return push(std::move(v), ng, [a, b](Graph& g, const Tensor& gout) {
    if (g.nodes_[a.id].needs_grad)
      g.accumulate(a.id, ::wacnn::matmul(gout, transpose(g.value(b))));
    if (g.nodes_[b.id].needs_grad)
      g.accumulate(b.id, ::wacnn::matmul(transpose(g.value(a)), gout));
  });
}

Var Graph::bmm(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 3 || bv.rank() != 3 || av.extent(0) != bv.extent(0) ||
      av.extent(2) != bv.extent(1)) {
    throw ShapeError("bmm: shape mismatch: " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  const std::size_t bs = av.extent(0), m = av.extent(1), k = av.extent(2),
                    n = bv.extent(2);
  Tensor v({bs, m, n});
  for (std::size_t s = 0; s < bs; ++s)
    gemm(av.data() + s * m * k, bv.data() + s * k * n, v.data() + s * m * n, m,
         k, n);
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return push(std::move(v), ng, [a, b, bs, m, k, n](Graph& g, const Tensor& gout) {
    const Tensor& av2 = g.value(a);
    const Tensor& bv2 = g.value(b);
    if (g.nodes_[a.id].needs_grad) {
      Tensor ga({bs, m, k});
      for (std::size_t s = 0; s < bs; ++s)
        gemm_nt_acc(gout.data() + s * m * n, bv2.data() + s * k * n,
                    ga.data() + s * m * k, m, n, k);
      g.accumulate(a.id, ga);
    }
    if (g.nodes_[b.id].needs_grad) {
      Tensor gb({bs, k, n});
      for (std::size_t s = 0; s < bs; ++s)
        gemm_tn(av2.data() + s * m * k, gout.data() + s * m * n,
                gb.data() + s * k * n, k, m, n);
      g.accumulate(b.id, gb);
    }
  });
}

namespace {
Tensor swap_last2(const Tensor& x) {
  if (x.rank() == 2) return transpose(x);
  if (x.rank() != 3)
    throw ShapeError("transpose_last2 expects rank 2 or 3, got " +
                     shape_str(x.shape()));
  const std::size_t b = x.extent(0), m = x.extent(1), n = x.extent(2);
  Tensor t({b, n, m});
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        t[s * m * n + j * m + i] = x[s * m * n + i * n + j];
  return t;
}
}  // namespace

Var Graph::transpose_last2(Var a) {
  const bool ng = nodes_[a.id].needs_grad;
  return push(swap_last2(value(a)), ng, [a](Graph& g, const Tensor& gout) {
    g.accumulate(a.id, swap_last2(gout));
  });
}

Var Graph::reshape(Var a, Shape shape) {
  const Tensor& av = value(a);
  Tensor v(shape, std::vector<double>(av.data(), av.data() + av.numel()));
  const bool ng = nodes_[a.id].needs_grad;
  const Shape orig = av.shape();
  return push(std::move(v), ng, [a, orig](Graph& g, const Tensor& gout) {
    Tensor gx(orig,
              std::vector<double>(gout.data(), gout.data() + gout.numel()));
    g.accumulate(a.id, gx);
  });
}

Var Graph::slice0(Var a, std::size_t start, std::size_t len) {
  const Tensor& av = value(a);
  if (av.rank() < 1 || start + len > av.extent(0)) {
    throw ShapeError("slice0: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range for " +
                     shape_str(av.shape()));
  }
  const std::size_t row = av.numel() / av.extent(0);
  Shape out_shape = av.shape();
  out_shape[0] = len;
  Tensor v(out_shape, std::vector<double>(av.data() + start * row,
                                          av.data() + (start + len) * row));
  const bool ng = nodes_[a.id].needs_grad;
  return push(std::move(v), ng, [a, start, row](Graph& g, const Tensor& gout) {
    Tensor gx = Tensor::zeros(g.value(a).shape());
    for (std::size_t i = 0; i < gout.numel(); ++i)
      gx[start * row + i] = gout[i];
    g.accumulate(a.id, gx);
  });
}

Var Graph::softmax(Var a, std::vector<std::size_t> axes) {
  Tensor v = ::wacnn::softmax(value(a), axes);
  const bool ng = nodes_[a.id].needs_grad;
  Var out{nodes_.size()};  // the node push() is about to create
  return push(std::move(v), ng, [a, out, axes](Graph& g, const Tensor& gout) {
    const Tensor& y = g.value(out);
    std::vector<std::size_t> group, keep;
    detail::axis_offsets(y.shape(), axes, group, keep);
    Tensor gx(y.shape());
    for (std::size_t base : keep) {
      double dot = 0.0;
      for (std::size_t off : group) dot += gout[base + off] * y[base + off];
      for (std::size_t off : group)
        gx[base + off] = y[base + off] * (gout[base + off] - dot);
    }
    g.accumulate(a.id, gx);
  });
}

namespace {
Tensor reduce_impl(const Tensor& x, const std::vector<std::size_t>& axes,
                   bool mean, Shape out_shape) {
  std::vector<std::size_t> group, keep;
  detail::axis_offsets(x.shape(), axes, group, keep);
  Tensor out(std::move(out_shape));
  const double inv = mean ? 1.0 / static_cast<double>(group.size()) : 1.0;
  for (std::size_t ki = 0; ki < keep.size(); ++ki) {
    double s = 0.0;
    for (std::size_t off : group) s += x[keep[ki] + off];
    out[ki] = s * inv;
  }
  return out;
}
}  // namespace

Var Graph::reduce_sum(Var a, std::vector<std::size_t> axes, bool keepdims) {
  const Tensor& av = value(a);
  Tensor v = reduce_impl(av, axes, false,
                         reduced_shape(av.shape(), axes, keepdims));
  const bool ng = nodes_[a.id].needs_grad;
  return push(std::move(v), ng, [a, axes](Graph& g, const Tensor& gout) {
    const Tensor& x = g.value(a);
    std::vector<std::size_t> group, keep;
    detail::axis_offsets(x.shape(), axes, group, keep);
    Tensor gx(x.shape());
    for (std::size_t ki = 0; ki < keep.size(); ++ki)
      for (std::size_t off : group) gx[keep[ki] + off] = gout[ki];
    g.accumulate(a.id, gx);
  });
}

Var Graph::reduce_mean(Var a, std::vector<std::size_t> axes, bool keepdims) {
  const Tensor& av = value(a);
  Tensor v = reduce_impl(av, axes, true,
                         reduced_shape(av.shape(), axes, keepdims));
  const bool ng = nodes_[a.id].needs_grad;
  return push(std::move(v), ng, [a, axes](Graph& g, const Tensor& gout) {
    const Tensor& x = g.value(a);
    std::vector<std::size_t> group, keep;
    detail::axis_offsets(x.shape(), axes, group, keep);
    const double inv = 1.0 / static_cast<double>(group.size());
    Tensor gx(x.shape());
    for (std::size_t ki = 0; ki < keep.size(); ++ki)
      for (std::size_t off : group) gx[keep[ki] + off] = gout[ki] * inv;
    g.accumulate(a.id, gx);
  });
}

Var Graph::sum_all(Var a) {
  std::vector<std::size_t> axes(value(a).rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  if (axes.empty()) return a;  // already scalar
  return reduce_sum(a, axes, false);
}

Var Graph::conv2d(Var x, Var w, std::optional<Var> bias, std::size_t stride,
                  std::size_t pad) {
  const Tensor* bt = bias ? &value(*bias) : nullptr;
  Tensor v = ::wacnn::conv2d(value(x), value(w), bt, stride, pad);
  bool ng = nodes_[x.id].needs_grad || nodes_[w.id].needs_grad;
  if (bias) ng = ng || nodes_[bias->id].needs_grad;
  return push(std::move(v), ng, [x, w, bias, stride, pad](Graph& g,
                                                          const Tensor& gout) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const std::size_t n = xv.extent(0), ci = xv.extent(1), h = xv.extent(2),
                      wd = xv.extent(3);
    const std::size_t co = wv.extent(0), k = wv.extent(2);
    const std::size_t ho = gout.extent(2), wo = gout.extent(3);
    const std::size_t cols = ho * wo, rows = ci * k * k;
    const bool need_x = g.nodes_[x.id].needs_grad;
    const bool need_w = g.nodes_[w.id].needs_grad;

    std::vector<double> col(rows * cols);
    Tensor gw = Tensor::zeros(wv.shape());
    Tensor gx = need_x ? Tensor::zeros(xv.shape()) : Tensor();
    std::vector<double> gcol(need_x ? rows * cols : 0);
    for (std::size_t s = 0; s < n; ++s) {
      const double* gs = gout.data() + s * co * cols;
      if (need_w) {
        im2col(xv.data() + s * ci * h * wd, ci, h, wd, k, stride, pad, ho, wo,
               col.data());
        gemm_nt_acc(gs, col.data(), gw.data(), co, cols, rows);
      }
      if (need_x) {
        gemm_tn(wv.data(), gs, gcol.data(), rows, co, cols);
        double* gxs = gx.data() + s * ci * h * wd;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const double* src = gcol.data() + ((c * k + ky) * k + kx) * cols;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) -
                    static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * stride + kx) -
                      static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                  gxs[(c * h + static_cast<std::size_t>(iy)) * wd +
                      static_cast<std::size_t>(ix)] += src[oy * wo + ox];
                }
              }
            }
      }
    }
    if (need_w) g.accumulate(w.id, gw);
    if (need_x) g.accumulate(x.id, gx);
    if (bias && g.nodes_[bias->id].needs_grad) {
      Tensor gb({co});
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < co; ++o) {
          const double* gs = gout.data() + (s * co + o) * cols;
          for (std::size_t p = 0; p < cols; ++p) gb[o] += gs[p];
        }
      g.accumulate(bias->id, gb);
    }
  });
}

Graph::Subbands Graph::dwt2(Var x, const FilterBank& fb) {
  const Tensor& xv = value(x);
  SubbandSet s = ::wacnn::dwt2(xv, fb);
  const bool rank4 = xv.rank() == 4;
  const std::size_t h = rank4 ? xv.extent(2) : xv.extent(0);
  const std::size_t w = rank4 ? xv.extent(3) : xv.extent(1);
  const auto [lh_m, hh_m] = build_analysis_matrices(fb, h);
  const auto [lw_m, hw_m] = build_analysis_matrices(fb, w);
  const bool ng = nodes_[x.id].needs_grad;

  // Band = A X B^T per slice, so the adjoint is dX += A^T dS B.
  const auto band_node = [&](Tensor value, const Tensor& a, const Tensor& b) {
    const Tensor at = transpose(a);
    return push(std::move(value), ng, [x, at, b](Graph& g, const Tensor& gout) {
      const Tensor& xval = g.value(x);
      const bool r4 = xval.rank() == 4;
      const std::size_t slices = r4 ? xval.extent(0) * xval.extent(1) : 1;
      const std::size_t hh = r4 ? xval.extent(2) : xval.extent(0);
      const std::size_t ww = r4 ? xval.extent(3) : xval.extent(1);
      const std::size_t h2 = hh / 2, w2 = ww / 2;
      Tensor gx = Tensor::zeros(xval.shape());
      std::vector<double> t1(hh * w2), t2(hh * ww);
      for (std::size_t i = 0; i < slices; ++i) {
        gemm(at.data(), gout.data() + i * h2 * w2, t1.data(), hh, h2, w2);
        gemm(t1.data(), b.data(), t2.data(), hh, w2, ww);
        double* dst = gx.data() + i * hh * ww;
        for (std::size_t j = 0; j < hh * ww; ++j) dst[j] += t2[j];
      }
      g.accumulate(x.id, gx);
    });
  };
  Subbands out;
  out.ll = band_node(std::move(s.ll), lh_m, lw_m);
  out.lh = band_node(std::move(s.lh), hh_m, lw_m);
  out.hl = band_node(std::move(s.hl), lh_m, hw_m);
  out.hh = band_node(std::move(s.hh), hh_m, hw_m);
  return out;
}

Var Graph::batchnorm(Var x, Var gamma, Var beta, BnStats& stats, BnMode mode,
                     double eps, double momentum) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4)
    throw ShapeError("batchnorm expects N x C x H x W, got " +
                     shape_str(xv.shape()));
  const std::size_t n = xv.extent(0), c = xv.extent(1), h = xv.extent(2),
                    w = xv.extent(3);
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  if (gv.numel() != c || bv.numel() != c)
    throw ShapeError("batchnorm: gamma/beta must have one entry per channel");
  if (stats.running_mean.numel() != c || stats.running_var.numel() != c)
    throw ShapeError("batchnorm: running stats must have one entry per channel");
  const std::size_t m = n * h * w;
  const std::size_t hw = h * w;

  std::vector<double> mean(c, 0.0), var(c, 0.0), invstd(c, 0.0);
  if (mode == BnMode::kEval) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      var[ch] = stats.running_var[ch];
      invstd[ch] = 1.0 / std::sqrt(var[ch] + eps);
    }
  } else {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = xv.data() + (s * c + ch) * hw;
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += src[i];
        mean[ch] += acc;
      }
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(m);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = xv.data() + (s * c + ch) * hw;
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = src[i] - mean[ch];
          acc += d * d;
        }
        var[ch] += acc;
      }
    for (std::size_t ch = 0; ch < c; ++ch) {
      var[ch] /= static_cast<double>(m);
      invstd[ch] = 1.0 / std::sqrt(var[ch] + eps);
    }
    if (mode == BnMode::kTrain) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        stats.running_mean[ch] =
            (1.0 - momentum) * stats.running_mean[ch] + momentum * mean[ch];
        stats.running_var[ch] =
            (1.0 - momentum) * stats.running_var[ch] + momentum * var[ch];
      }
    }
  }

  Tensor out(xv.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = xv.data() + (s * c + ch) * hw;
      double* dst = out.data() + (s * c + ch) * hw;
      const double mu = mean[ch], is = invstd[ch], ga = gv[ch], be = bv[ch];
      for (std::size_t i = 0; i < hw; ++i) dst[i] = ga * (src[i] - mu) * is + be;
    }

  const bool batch_stats = mode != BnMode::kEval;
  const bool ng = nodes_[x.id].needs_grad || nodes_[gamma.id].needs_grad ||
                  nodes_[beta.id].needs_grad;
  return push(
      std::move(out), ng,
      [x, gamma, beta, mean, invstd, batch_stats, n, c, hw,
       m](Graph& g, const Tensor& gout) {
        const Tensor& xval = g.value(x);
        const Tensor& gval = g.value(gamma);
        Tensor dgamma({c}), dbeta({c});
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double* go = gout.data() + (s * c + ch) * hw;
            const double* xs = xval.data() + (s * c + ch) * hw;
            const double mu = mean[ch], is = invstd[ch];
            double a0 = 0.0, a1 = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
              a0 += go[i];
              a1 += go[i] * (xs[i] - mu) * is;
            }
            sum_g[ch] += a0;
            sum_gx[ch] += a1;
          }
        for (std::size_t ch = 0; ch < c; ++ch) {
          dbeta[ch] = sum_g[ch];
          dgamma[ch] = sum_gx[ch];
        }
        if (g.nodes_[x.id].needs_grad) {
          Tensor gx(xval.shape());
          const double invm = 1.0 / static_cast<double>(m);
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double* go = gout.data() + (s * c + ch) * hw;
              const double* xs = xval.data() + (s * c + ch) * hw;
              double* dst = gx.data() + (s * c + ch) * hw;
              const double mu = mean[ch], is = invstd[ch], ga = gval[ch];
              if (batch_stats) {
                for (std::size_t i = 0; i < hw; ++i) {
                  const double xhat = (xs[i] - mu) * is;
                  dst[i] = ga * is *
                           (go[i] - invm * sum_g[ch] - invm * xhat * sum_gx[ch]);
                }
              } else {
                for (std::size_t i = 0; i < hw; ++i) dst[i] = ga * is * go[i];
              }
            }
          g.accumulate(x.id, gx);
        }
        if (g.nodes_[gamma.id].needs_grad) g.accumulate(gamma.id, dgamma);
        if (g.nodes_[beta.id].needs_grad) g.accumulate(beta.id, dbeta);
      });
}

Var Graph::cross_entropy(Var logits, const std::vector<int>& labels) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 2)
    throw ShapeError("cross_entropy expects N x K logits, got " +
                     shape_str(lv.shape()));
  const std::size_t n = lv.extent(0), k = lv.extent(1);
  if (labels.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw DataError("cross_entropy: label " + std::to_string(l) +
                      " outside [0, " + std::to_string(k) + ")");
  }
  double loss = 0.0;
  Tensor probs({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[i * k + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= sum;
    loss += std::log(sum) + mx - row[static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<double>(n);
  const bool ng = nodes_[logits.id].needs_grad;
  return push(Tensor::scalar(loss), ng,
              [logits, labels, probs, n, k](Graph& g, const Tensor& gout) {
                const double s = gout[0] / static_cast<double>(n);
                Tensor gl({n, k});
                for (std::size_t i = 0; i < n; ++i)
                  for (std::size_t j = 0; j < k; ++j) {
                    const double onehot =
                        (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                    gl[i * k + j] = s * (probs[i * k + j] - onehot);
                  }
                g.accumulate(logits.id, gl);
              });
}

double gradcheck(const std::function<Var(Graph&, Var)>& build, const Tensor& x,
                 double h) {
  if (h <= 0.0) throw ConfigError("gradcheck: step must be positive");
  Tensor analytic;
  {
    Graph g;
    Var vx = g.leaf(x, true);
    Var loss = build(g, vx);
    if (g.value(loss).numel() != 1)
      throw ConfigError("gradcheck: builder must return a scalar");
    g.backward(loss);
    analytic = g.has_grad(vx) ? g.grad(vx) : Tensor::zeros(x.shape());
  }
  const auto eval = [&](const Tensor& point) {
    Graph g;
    Var vx = g.leaf(point, false);
    return g.value(build(g, vx)).item();
  };
  double max_rel = 0.0;
  Tensor xp = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = eval(xp);
    xp[i] = orig - h;
    const double fm = eval(xp);
    xp[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic[i];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - an) / denom);
  }
  return max_rel;
}

}  // namespace wacnn
