#include "wacnn/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace wacnn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ' ';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t checked_numel(const Shape& shape) {
  if (shape.size() > 4) {
    throw ShapeError("tensor rank " + std::to_string(shape.size()) +
                     " exceeds the supported maximum of 4");
  }
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

// Shape padded on the left with 1s to rank 4, plus row-major strides.
struct Padded4 {
  std::array<std::size_t, 4> ext{1, 1, 1, 1};
  std::array<std::size_t, 4> stride{0, 0, 0, 0};
};

Padded4 pad4(const Shape& s) {
  Padded4 p;
  const std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) p.ext[off + i] = s[i];
  std::size_t acc = 1;
  for (std::size_t i = 4; i-- > 0;) {
    p.stride[i] = (p.ext[i] == 1) ? 0 : acc;  // stride 0 broadcasts
    acc *= p.ext[i];
  }
  return p;
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& f) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape);
  const Padded4 pa = pad4(a.shape()), pb = pad4(b.shape()), po = pad4(out_shape);
  const double* da = a.data();
  const double* db = b.data();
  double* dst = out.data();
  std::size_t w = 0;
  for (std::size_t i0 = 0; i0 < po.ext[0]; ++i0)
    for (std::size_t i1 = 0; i1 < po.ext[1]; ++i1)
      for (std::size_t i2 = 0; i2 < po.ext[2]; ++i2)
        for (std::size_t i3 = 0; i3 < po.ext[3]; ++i3)
          dst[w++] = f(da[i0 * pa.stride[0] + i1 * pa.stride[1] +
                          i2 * pa.stride[2] + i3 * pa.stride[3]],
                       db[i0 * pb.stride[0] + i1 * pb.stride[1] +
                          i2 * pb.stride[2] + i3 * pb.stride[3]]);
  return out;
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(checked_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != checked_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_[0] = v;
  return t;
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  if (idx.size() != rank()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " does not match tensor shape " + shape_str(shape_));
  }
  std::size_t flat = 0, axis = 0;
  for (std::size_t i : idx) {
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return data_[flat];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcastable");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 tensors, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  if (a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: shape mismatch: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  Tensor c({a.extent(0), b.extent(1)});
  gemm(a.data(), b.data(), c.data(), a.extent(0), a.extent(1), b.extent(1));
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose expects a rank-2 tensor, got " +
                     shape_str(a.shape()));
  }
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias,
              std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d expects rank-4 input and weight, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (w.extent(2) != w.extent(3)) {
    throw ShapeError("conv2d expects square kernels, got " +
                     shape_str(w.shape()));
  }
  if (x.extent(1) != w.extent(1)) {
    throw ShapeError("conv2d: channel mismatch: input " + shape_str(x.shape()) +
                     " vs weight " + shape_str(w.shape()));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t n = x.extent(0), ci = x.extent(1), h = x.extent(2),
                    wd = x.extent(3);
  const std::size_t co = w.extent(0), k = w.extent(2);
  // Floor division, the usual convolution arithmetic: a 3x3 stride-2 pad-1
  // conv maps 32 -> 16. Errors only when no window fits at all.
  const auto out_extent = [&](std::size_t e, const char* axis) {
    const std::size_t padded = e + 2 * pad;
    if (padded < k) {
      throw ShapeError(std::string("conv2d: no valid output extent along ") +
                       axis + ": (" + std::to_string(e) + " + 2*" +
                       std::to_string(pad) + " - " + std::to_string(k) + ") / " +
                       std::to_string(stride) + " + 1 is not positive");
    }
    return (padded - k) / stride + 1;
  };
  const std::size_t ho = out_extent(h, "H"), wo = out_extent(wd, "W");
  if (bias != nullptr && (bias->rank() != 1 || bias->extent(0) != co)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) +
                     " does not match " + std::to_string(co) + " outputs");
  }

  // im2col + GEMM, one sample at a time. Column r = (c*k + ky)*k + kx, so the
  // GEMM accumulates taps in (c, ky, kx) order, matching a naive loop.
  const std::size_t cols = ho * wo, rows = ci * k * k;
  std::vector<double> col(rows * cols);
  Tensor out({n, co, ho, wo});
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = x.data() + s * ci * h * wd;
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* dst = col.data() + ((c * k + ky) * k + kx) * cols;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * stride + ky) -
                static_cast<std::ptrdiff_t>(pad);
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) -
                  static_cast<std::ptrdiff_t>(pad);
              const bool inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                  ix >= 0 && ix < static_cast<std::ptrdiff_t>(wd);
              dst[oy * wo + ox] =
                  inside ? xs[(c * h + static_cast<std::size_t>(iy)) * wd +
                              static_cast<std::size_t>(ix)]
                         : 0.0;
            }
          }
        }
    double* os = out.data() + s * co * cols;
    gemm(w.data(), col.data(), os, co, rows, cols);
    if (bias != nullptr) {
      for (std::size_t o = 0; o < co; ++o) {
        const double bv = (*bias)[o];
        for (std::size_t p = 0; p < cols; ++p) os[o * cols + p] += bv;
      }
    }
  }
  return out;
}

namespace detail {

// Flat offsets of every index combination over the chosen axes (row-major
// enumeration), for the complementary axes the offsets over the rest.
void axis_offsets(const Shape& shape, std::span<const std::size_t> axes,
                  std::vector<std::size_t>& group,
                  std::vector<std::size_t>& keep) {
  const std::size_t r = shape.size();
  std::vector<std::size_t> strides(r, 1);
  for (std::size_t i = r; i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  std::vector<bool> in_group(r, false);
  for (std::size_t a : axes) in_group[a] = true;

  const auto expand = [&](bool grp, std::vector<std::size_t>& out) {
    out.assign(1, 0);
    for (std::size_t ax = 0; ax < r; ++ax) {
      if (in_group[ax] != grp) continue;
      std::vector<std::size_t> next;
      next.reserve(out.size() * shape[ax]);
      for (std::size_t base : out)
        for (std::size_t i = 0; i < shape[ax]; ++i)
          next.push_back(base + i * strides[ax]);
      out = std::move(next);
    }
  };
  expand(true, group);
  expand(false, keep);
}

}  // namespace detail

Tensor softmax(const Tensor& x, std::span<const std::size_t> axes) {
  if (axes.empty()) throw ShapeError("softmax: empty axis group");
  std::vector<bool> seen(x.rank(), false);
  for (std::size_t a : axes) {
    if (a >= x.rank())
      throw ShapeError("softmax: axis " + std::to_string(a) +
                       " out of range for shape " + shape_str(x.shape()));
    if (seen[a]) throw ShapeError("softmax: duplicate axis");
    seen[a] = true;
  }
  std::vector<std::size_t> group, keep;
  detail::axis_offsets(x.shape(), axes, group, keep);

  Tensor out(x.shape());
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t base : keep) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t off : group) {
      const double v = src[base + off];
      if (std::isnan(v)) throw NumericError("softmax: NaN input");
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (std::size_t off : group) {
      const double e = std::exp(src[base + off] - mx);
      dst[base + off] = e;
      sum += e;
    }
    for (std::size_t off : group) dst[base + off] /= sum;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, [](double x, double y) { return x * y; });
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * c;
  return out;
}

}  // namespace wacnn
