#include "wacnn/wavelet.hpp"

#include <cmath>
#include <cstdlib>
#include <utility>

namespace wacnn {

namespace {

constexpr double kSumTol = 1e-10;
constexpr double kQmfTol = 1e-12;

std::vector<double> qmf_highpass(const std::vector<double>& lo) {
  const std::size_t m = lo.size();
  std::vector<double> hi(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    hi[k] = sign * lo[m - 1 - k];
  }
  return hi;
}

FilterBank orthogonal_bank(std::string name, std::vector<double> lo) {
  FilterBank fb;
  fb.name = std::move(name);
  fb.analysis_lo = std::move(lo);
  fb.analysis_hi = qmf_highpass(fb.analysis_lo);
  fb.synthesis_lo = fb.analysis_lo;
  fb.synthesis_hi = fb.analysis_hi;
  fb.orthogonal = true;
  return fb;
}

// Daubechies taps in scaling-coefficient order, from the closed forms.
FilterBank make_haar() {
  const double r = 1.0 / std::sqrt(2.0);
  return orthogonal_bank("haar", {r, r});
}

FilterBank make_db2() {
  const double s2 = std::sqrt(2.0), s3 = std::sqrt(3.0);
  return orthogonal_bank("db2", {(1 + s3) / (4 * s2), (3 + s3) / (4 * s2),
                                 (3 - s3) / (4 * s2), (1 - s3) / (4 * s2)});
}

FilterBank make_db3() {
  const double s2 = std::sqrt(2.0), s10 = std::sqrt(10.0);
  const double t = std::sqrt(5.0 + 2.0 * s10);
  const double d = 16.0 * s2;
  return orthogonal_bank(
      "db3", {(1 + s10 + t) / d, (5 + s10 + 3 * t) / d, (10 - 2 * s10 + 2 * t) / d,
              (10 - 2 * s10 - 2 * t) / d, (5 + s10 - 3 * t) / d, (1 + s10 - t) / d});
}

std::vector<double> scaled(std::initializer_list<double> v, double s) {
  std::vector<double> out;
  out.reserve(v.size());
  for (double x : v) out.push_back(x * s);
  return out;
}

// CDF banks. The leading/trailing zero taps align the analysis and synthesis
// phases so that "row i starts at column 2i" reconstructs exactly.
FilterBank make_bior22() {
  const double s2 = std::sqrt(2.0);
  FilterBank fb;
  fb.name = "bior2.2";
  fb.analysis_lo = scaled({-1, 2, 6, 2, -1, 0}, s2 / 8);
  fb.analysis_hi = scaled({0, 0, 1, -2, 1, 0}, s2 / 4);
  fb.synthesis_lo = scaled({0, 1, 2, 1, 0, 0}, s2 / 4);
  fb.synthesis_hi = scaled({0, 1, 2, -6, 2, 1}, s2 / 8);
  fb.orthogonal = false;
  return fb;
}

FilterBank make_bior33() {
  const double s2 = std::sqrt(2.0);
  FilterBank fb;
  fb.name = "bior3.3";
  fb.analysis_lo = scaled({3, -9, -7, 45, 45, -7, -9, 3}, s2 / 64);
  fb.analysis_hi = scaled({0, 0, 1, -3, 3, -1, 0, 0}, s2 / 8);
  fb.synthesis_lo = scaled({0, 0, 1, 3, 3, 1, 0, 0}, s2 / 8);
  fb.synthesis_hi = scaled({3, 9, -7, -45, 45, 7, -9, -3}, s2 / 64);
  fb.orthogonal = false;
  return fb;
}

void validate(const FilterBank& fb) {
  double lo_sum = 0.0, hi_sum = 0.0;
  for (double v : fb.analysis_lo) lo_sum += v;
  for (double v : fb.analysis_hi) hi_sum += v;
  if (std::abs(lo_sum - std::sqrt(2.0)) > kSumTol) {
    throw ConfigError("filter bank '" + fb.name +
                      "': analysis low-pass taps do not sum to sqrt(2)");
  }
  if (std::abs(hi_sum) > kSumTol) {
    throw ConfigError("filter bank '" + fb.name +
                      "': analysis high-pass taps do not sum to 0");
  }
  if (fb.orthogonal) {
    const std::size_t m = fb.analysis_lo.size();
    for (std::size_t k = 0; k < m; ++k) {
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      if (std::abs(fb.analysis_hi[k] - sign * fb.analysis_lo[m - 1 - k]) >
          kQmfTol) {
        throw ConfigError("filter bank '" + fb.name +
                          "': quadrature-mirror relation violated");
      }
    }
    if (fb.synthesis_lo != fb.analysis_lo ||
        fb.synthesis_hi != fb.analysis_hi) {
      throw ConfigError("filter bank '" + fb.name +
                        "': orthogonal synthesis must alias analysis");
    }
  }
}

}  // namespace

const std::vector<std::string>& filter_bank_names() {
  static const std::vector<std::string> names = {"haar", "db2", "db3",
                                                 "bior2.2", "bior3.3"};
  return names;
}

FilterBank filter_bank(const std::string& name) {
  FilterBank fb;
  if (name == "haar") {
    fb = make_haar();
  } else if (name == "db2") {
    fb = make_db2();
  } else if (name == "db3") {
    fb = make_db3();
  } else if (name == "bior2.2") {
    fb = make_bior22();
  } else if (name == "bior3.3") {
    fb = make_bior33();
  } else {
    std::string valid;
    for (const auto& n : filter_bank_names()) {
      if (!valid.empty()) valid += ", ";
      valid += n;
    }
    throw ConfigError("unknown wavelet '" + name + "'; valid names: " + valid);
  }
  validate(fb);
  return fb;
}

namespace {

Tensor circulant(const std::vector<double>& taps, std::size_t n,
                 const std::string& name) {
  if (n < 2 || n % 2 != 0) {
    throw ShapeError("analysis matrices need an even extent, got " +
                     std::to_string(n) + " (" + name + ")");
  }
  Tensor m({n / 2, n});
  for (std::size_t i = 0; i < n / 2; ++i)
    for (std::size_t k = 0; k < taps.size(); ++k)
      m[i * n + (2 * i + k) % n] += taps[k];
  return m;
}

struct SlicePlan {
  std::size_t slices = 1;  // N*C
  std::size_t h = 0, w = 0;
  bool rank4 = false;
};

SlicePlan plan_slices(const Tensor& x, const char* op) {
  SlicePlan p;
  if (x.rank() == 2) {
    p.h = x.extent(0);
    p.w = x.extent(1);
  } else if (x.rank() == 4) {
    p.slices = x.extent(0) * x.extent(1);
    p.h = x.extent(2);
    p.w = x.extent(3);
    p.rank4 = true;
  } else {
    throw ShapeError(std::string(op) + " expects a rank-2 or rank-4 tensor, got " +
                     shape_str(x.shape()));
  }
  if (p.h % 2 != 0 || p.w % 2 != 0) {
    throw ShapeError(std::string(op) + ": spatial extents must be even, got " +
                     std::to_string(p.h) + "x" + std::to_string(p.w) +
                     "; pad the input to even extents first");
  }
  return p;
}

Shape half_shape(const Tensor& x, const SlicePlan& p) {
  if (p.rank4) return {x.extent(0), x.extent(1), p.h / 2, p.w / 2};
  return {p.h / 2, p.w / 2};
}

}  // namespace

std::pair<Tensor, Tensor> build_analysis_matrices(const FilterBank& fb,
                                                  std::size_t n) {
  return {circulant(fb.analysis_lo, n, fb.name),
          circulant(fb.analysis_hi, n, fb.name)};
}

std::pair<Tensor, Tensor> build_synthesis_matrices(const FilterBank& fb,
                                                   std::size_t n) {
  return {circulant(fb.synthesis_lo, n, fb.name),
          circulant(fb.synthesis_hi, n, fb.name)};
}

SubbandSet dwt2(const Tensor& x, const FilterBank& fb) {
  const SlicePlan p = plan_slices(x, "dwt2");
  const auto [lh_mat, hh_mat] = build_analysis_matrices(fb, p.h);
  const auto [lw_mat, hw_mat] = build_analysis_matrices(fb, p.w);
  const Tensor lw_t = transpose(lw_mat), hw_t = transpose(hw_mat);

  const Shape out_shape = half_shape(x, p);
  SubbandSet s{Tensor(out_shape), Tensor(out_shape), Tensor(out_shape),
               Tensor(out_shape)};
  const std::size_t h2 = p.h / 2, w2 = p.w / 2;
  std::vector<double> row_lo(h2 * p.w), row_hi(h2 * p.w);
  for (std::size_t i = 0; i < p.slices; ++i) {
    const double* xs = x.data() + i * p.h * p.w;
    gemm(lh_mat.data(), xs, row_lo.data(), h2, p.h, p.w);  // L X
    gemm(hh_mat.data(), xs, row_hi.data(), h2, p.h, p.w);  // H X
    const std::size_t off = i * h2 * w2;
    gemm(row_lo.data(), lw_t.data(), s.ll.data() + off, h2, p.w, w2);
    gemm(row_hi.data(), lw_t.data(), s.lh.data() + off, h2, p.w, w2);
    gemm(row_lo.data(), hw_t.data(), s.hl.data() + off, h2, p.w, w2);
    gemm(row_hi.data(), hw_t.data(), s.hh.data() + off, h2, p.w, w2);
  }
  return s;
}

Tensor idwt2(const SubbandSet& s, const FilterBank& fb) {
  if (!s.ll.same_shape(s.lh) || !s.ll.same_shape(s.hl) ||
      !s.ll.same_shape(s.hh)) {
    throw ShapeError("idwt2: subband shapes differ: ll " +
                     shape_str(s.ll.shape()) + ", lh " + shape_str(s.lh.shape()) +
                     ", hl " + shape_str(s.hl.shape()) + ", hh " +
                     shape_str(s.hh.shape()));
  }
  const Tensor& ll = s.ll;
  std::size_t slices = 1, h2, w2;
  Shape out_shape;
  if (ll.rank() == 2) {
    h2 = ll.extent(0);
    w2 = ll.extent(1);
    out_shape = {2 * h2, 2 * w2};
  } else if (ll.rank() == 4) {
    slices = ll.extent(0) * ll.extent(1);
    h2 = ll.extent(2);
    w2 = ll.extent(3);
    out_shape = {ll.extent(0), ll.extent(1), 2 * h2, 2 * w2};
  } else {
    throw ShapeError("idwt2 expects rank-2 or rank-4 subbands, got " +
                     shape_str(ll.shape()));
  }
  const std::size_t h = 2 * h2, w = 2 * w2;
  const auto [lh_mat, hh_mat] = build_synthesis_matrices(fb, h);
  const auto [lw_mat, hw_mat] = build_synthesis_matrices(fb, w);
  const Tensor lh_t = transpose(lh_mat), hh_t = transpose(hh_mat);

  Tensor out(out_shape);
  std::vector<double> tmp(h * w2), term(h * w);
  const Tensor* bands[4] = {&s.ll, &s.lh, &s.hl, &s.hh};
  const Tensor* row_mats[4] = {&lh_t, &hh_t, &lh_t, &hh_t};   // Lt^T or Ht^T
  const Tensor* col_mats[4] = {&lw_mat, &lw_mat, &hw_mat, &hw_mat};
  for (std::size_t i = 0; i < slices; ++i) {
    double* os = out.data() + i * h * w;
    for (int b = 0; b < 4; ++b) {
      const double* sb = bands[b]->data() + i * h2 * w2;
      gemm(row_mats[b]->data(), sb, tmp.data(), h, h2, w2);
      gemm(tmp.data(), col_mats[b]->data(), term.data(), h, w2, w);
      if (b == 0) {
        for (std::size_t j = 0; j < h * w; ++j) os[j] = term[j];
      } else {
        for (std::size_t j = 0; j < h * w; ++j) os[j] += term[j];
      }
    }
  }
  return out;
}

SubbandSet dwt2_direct(const Tensor& x, const FilterBank& fb) {
  const SlicePlan p = plan_slices(x, "dwt2_direct");
  const std::size_t h2 = p.h / 2, w2 = p.w / 2;
  const std::vector<double>& lo = fb.analysis_lo;
  const std::vector<double>& hi = fb.analysis_hi;

  const Shape out_shape = half_shape(x, p);
  SubbandSet s{Tensor(out_shape), Tensor(out_shape), Tensor(out_shape),
               Tensor(out_shape)};
  std::vector<double> row_lo(p.h * w2), row_hi(p.h * w2);
  for (std::size_t i = 0; i < p.slices; ++i) {
    const double* xs = x.data() + i * p.h * p.w;
    // Row pass: stride-2 circular cross-correlation along W.
    for (std::size_t r = 0; r < p.h; ++r) {
      for (std::size_t c = 0; c < w2; ++c) {
        double alo = 0.0, ahi = 0.0;
        for (std::size_t k = 0; k < lo.size(); ++k) {
          const double v = xs[r * p.w + (2 * c + k) % p.w];
          alo += lo[k] * v;
          ahi += hi[k] * v;
        }
        row_lo[r * w2 + c] = alo;
        row_hi[r * w2 + c] = ahi;
      }
    }
    // Column pass along H.
    const std::size_t off = i * h2 * w2;
    for (std::size_t r = 0; r < h2; ++r) {
      for (std::size_t c = 0; c < w2; ++c) {
        double ll = 0.0, lh = 0.0, hl = 0.0, hh = 0.0;
        for (std::size_t k = 0; k < lo.size(); ++k) {
          const std::size_t src = ((2 * r + k) % p.h) * w2 + c;
          ll += lo[k] * row_lo[src];
          lh += hi[k] * row_lo[src];
          hl += lo[k] * row_hi[src];
          hh += hi[k] * row_hi[src];
        }
        s.ll[off + r * w2 + c] = ll;
        s.lh[off + r * w2 + c] = lh;
        s.hl[off + r * w2 + c] = hl;
        s.hh[off + r * w2 + c] = hh;
      }
    }
  }
  return s;
}

}  // namespace wacnn
