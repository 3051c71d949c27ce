#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "wacnn/wavelet.hpp"

using namespace wacnn;
using testutil::SplitMix;
using testutil::random_tensor;

namespace {
const double kInvSqrt2 = 1.0 / std::sqrt(2.0);

double frob2(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
  return s;
}
}  // namespace

TEST_CASE("haar taps match the closed form") {
  FilterBank fb = filter_bank("haar");
  REQUIRE(fb.analysis_lo.size() == 2);
  CHECK(fb.analysis_lo[0] == doctest::Approx(kInvSqrt2).epsilon(1e-15));
  CHECK(fb.analysis_lo[1] == doctest::Approx(kInvSqrt2).epsilon(1e-15));
  CHECK(fb.analysis_hi[0] == doctest::Approx(kInvSqrt2).epsilon(1e-15));
  CHECK(fb.analysis_hi[1] == doctest::Approx(-kInvSqrt2).epsilon(1e-15));
  CHECK(fb.orthogonal);
}

TEST_CASE("db2 is a 4-tap QMF bank") {
  FilterBank fb = filter_bank("db2");
  REQUIRE(fb.analysis_lo.size() == 4);
  double lo_sum = 0.0;
  for (double v : fb.analysis_lo) lo_sum += v;
  CHECK(lo_sum == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  for (std::size_t k = 0; k < 4; ++k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    CHECK(fb.analysis_hi[k] ==
          doctest::Approx(sign * fb.analysis_lo[3 - k]).epsilon(1e-15));
  }
}

TEST_CASE("all registered banks satisfy the tap-sum invariants") {
  for (const auto& name : filter_bank_names()) {
    FilterBank fb = filter_bank(name);
    double lo_sum = 0.0, hi_sum = 0.0;
    for (double v : fb.analysis_lo) lo_sum += v;
    for (double v : fb.analysis_hi) hi_sum += v;
    CHECK(std::abs(lo_sum - std::sqrt(2.0)) < 1e-10);
    CHECK(std::abs(hi_sum) < 1e-10);
  }
}

TEST_CASE("unknown wavelet names the valid registry") {
  try {
    filter_bank("nosuch");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("nosuch") != std::string::npos);
    CHECK(msg.find("haar") != std::string::npos);
    CHECK(msg.find("bior3.3") != std::string::npos);
  }
}

TEST_CASE("haar analysis matrix for n=4") {
  FilterBank fb = filter_bank("haar");
  auto [l, h] = build_analysis_matrices(fb, 4);
  REQUIRE(l.shape() == Shape{2, 4});
  const double expect[2][4] = {{kInvSqrt2, kInvSqrt2, 0, 0},
                               {0, 0, kInvSqrt2, kInvSqrt2}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(l.at({i, j}) == doctest::Approx(expect[i][j]).epsilon(1e-15));
  CHECK(h.at({0, 0}) == doctest::Approx(kInvSqrt2));
  CHECK(h.at({0, 1}) == doctest::Approx(-kInvSqrt2));
}

TEST_CASE("haar rows are orthonormal for any even n") {
  FilterBank fb = filter_bank("haar");
  for (std::size_t n : {4u, 6u, 10u, 16u}) {
    auto [l, h] = build_analysis_matrices(fb, n);
    Tensor llt = matmul(l, transpose(l));
    Tensor hht = matmul(h, transpose(h));
    Tensor lht = matmul(l, transpose(h));
    for (std::size_t i = 0; i < n / 2; ++i)
      for (std::size_t j = 0; j < n / 2; ++j) {
        const double id = i == j ? 1.0 : 0.0;
        CHECK(std::abs(llt.at({i, j}) - id) < 1e-12);
        CHECK(std::abs(hht.at({i, j}) - id) < 1e-12);
        CHECK(std::abs(lht.at({i, j})) < 1e-12);
      }
  }
}

TEST_CASE("db2 rows have 4 nonzeros shifted by 2 with wraparound") {
  FilterBank fb = filter_bank("db2");
  auto [l, h] = build_analysis_matrices(fb, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t nonzeros = 0;
    for (std::size_t j = 0; j < 8; ++j)
      if (l.at({i, j}) != 0.0) ++nonzeros;
    CHECK(nonzeros == 4);
    for (std::size_t k = 0; k < 4; ++k)
      CHECK(l.at({i, (2 * i + k) % 8}) ==
            doctest::Approx(fb.analysis_lo[k]).epsilon(1e-15));
  }
  CHECK(h.at({3, (6 + 3) % 8}) == doctest::Approx(fb.analysis_hi[3]));
}

TEST_CASE("odd extents are rejected") {
  FilterBank fb = filter_bank("haar");
  CHECK_THROWS_AS(build_analysis_matrices(fb, 5), ShapeError);
  Tensor odd({1, 1, 6, 7});
  try {
    dwt2(odd, fb);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("pad") != std::string::npos);
  }
}

TEST_CASE("dwt2 of a constant image under haar") {
  Tensor x = Tensor::full({1, 2, 8, 8}, 3.25);
  SubbandSet s = dwt2(x, filter_bank("haar"));
  CHECK(s.ll.shape() == Shape{1, 2, 4, 4});
  for (std::size_t i = 0; i < s.ll.numel(); ++i) {
    CHECK(std::abs(s.ll[i] - 6.5) < 1e-12);
    CHECK(std::abs(s.lh[i]) < 1e-12);
    CHECK(std::abs(s.hl[i]) < 1e-12);
    CHECK(std::abs(s.hh[i]) < 1e-12);
  }
}

TEST_CASE("dwt2 of [[1,2],[3,4]] under haar") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  SubbandSet s = dwt2(x, filter_bank("haar"));
  CHECK(s.ll.item() == doctest::Approx(5.0).epsilon(1e-13));
  CHECK(s.lh.item() == doctest::Approx(-2.0).epsilon(1e-13));
  CHECK(s.hl.item() == doctest::Approx(-1.0).epsilon(1e-13));
  CHECK(std::abs(s.hh.item()) < 1e-13);
}

TEST_CASE("dwt2 shape contract for every bank") {
  SplitMix rng(21);
  Tensor x = random_tensor({1, 3, 8, 8}, rng);
  for (const auto& name : filter_bank_names()) {
    SubbandSet s = dwt2(x, filter_bank(name));
    CHECK(s.ll.shape() == Shape{1, 3, 4, 4});
    CHECK(s.hh.shape() == Shape{1, 3, 4, 4});
  }
}

TEST_CASE("matrix form matches the direct separable form") {
  SplitMix rng(33);
  for (const auto& name : filter_bank_names()) {
    FilterBank fb = filter_bank(name);
    Tensor a = random_tensor({1, 1, 8, 8}, rng);
    Tensor b = random_tensor({1, 2, 12, 12}, rng);
    for (const Tensor* x : {&a, &b}) {
      SubbandSet m = dwt2(*x, fb);
      SubbandSet d = dwt2_direct(*x, fb);
      CHECK(testutil::max_abs_diff(m.ll, d.ll) < 1e-12);
      CHECK(testutil::max_abs_diff(m.lh, d.lh) < 1e-12);
      CHECK(testutil::max_abs_diff(m.hl, d.hl) < 1e-12);
      CHECK(testutil::max_abs_diff(m.hh, d.hh) < 1e-12);
    }
  }
}

TEST_CASE("perfect reconstruction for all five banks") {
  SplitMix rng(55);
  for (const auto& name : filter_bank_names()) {
    FilterBank fb = filter_bank(name);
    Tensor x = random_tensor({16, 16}, rng);
    Tensor xhat = idwt2(dwt2(x, fb), fb);
    CHECK(testutil::max_abs_diff(x, xhat) < 1e-8);
  }
}

TEST_CASE("idwt2 handles constants, zeros, and mismatched subbands") {
  FilterBank fb = filter_bank("haar");
  Tensor c = Tensor::full({1, 1, 6, 6}, 2.5);
  Tensor back = idwt2(dwt2(c, fb), fb);
  CHECK(testutil::max_abs_diff(c, back) < 1e-12);

  SubbandSet zero{Tensor({2, 2}), Tensor({2, 2}), Tensor({2, 2}),
                  Tensor({2, 2})};
  Tensor z = idwt2(zero, fb);
  CHECK(frob2(z) == 0.0);

  SubbandSet bad{Tensor({2, 2}), Tensor({2, 2}), Tensor({2, 2}),
                 Tensor({4, 4})};
  CHECK_THROWS_AS(idwt2(bad, fb), ShapeError);
}

TEST_CASE("dwt2 is linear") {
  SplitMix rng(77);
  FilterBank fb = filter_bank("db3");
  Tensor x = random_tensor({1, 1, 8, 8}, rng);
  Tensor y = random_tensor({1, 1, 8, 8}, rng);
  const double a = 1.7, b = -0.4;
  Tensor combo(x.shape());
  for (std::size_t i = 0; i < combo.numel(); ++i) combo[i] = a * x[i] + b * y[i];
  SubbandSet sc = dwt2(combo, fb);
  SubbandSet sx = dwt2(x, fb);
  SubbandSet sy = dwt2(y, fb);
  for (std::size_t i = 0; i < sc.ll.numel(); ++i) {
    CHECK(std::abs(sc.ll[i] - (a * sx.ll[i] + b * sy.ll[i])) < 1e-10);
    CHECK(std::abs(sc.hh[i] - (a * sx.hh[i] + b * sy.hh[i])) < 1e-10);
  }
}

TEST_CASE("Parseval holds for orthogonal banks") {
  SplitMix rng(99);
  for (const auto& name : {"haar", "db2", "db3"}) {
    FilterBank fb = filter_bank(name);
    Tensor x = random_tensor({1, 2, 16, 16}, rng);
    SubbandSet s = dwt2(x, fb);
    const double ex = frob2(x);
    const double es = frob2(s.ll) + frob2(s.lh) + frob2(s.hl) + frob2(s.hh);
    CHECK(std::abs(ex - es) / ex < 1e-8);
  }
}

TEST_CASE("horizontally striped image: lh carries all detail under haar") {
  const double a = 0.9, b = -0.3;
  Tensor x({8, 8});
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) x.at({r, c}) = (r % 2 == 0) ? a : b;
  SubbandSet s = dwt2(x, filter_bank("haar"));
  for (std::size_t i = 0; i < s.lh.numel(); ++i) {
    CHECK(s.lh[i] == doctest::Approx(a - b).epsilon(1e-12));
    CHECK(s.hl[i] == 0.0);
    CHECK(s.hh[i] == 0.0);
  }
}
