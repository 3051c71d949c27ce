#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "wacnn/tensor.hpp"

using namespace wacnn;
using testutil::SplitMix;
using testutil::random_tensor;

TEST_CASE("matmul identity and zero") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor z({2, 1}, {0, 0});
  CHECK(testutil::max_abs_diff(matmul(eye, a), a) == 0.0);
  Tensor az = matmul(a, z);
  CHECK(az[0] == 0.0);
  CHECK(az[1] == 0.0);
}

TEST_CASE("matmul hand-expanded 2x2 by 2x1") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 17.0);
  CHECK(c[1] == 39.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}), b({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2 3]") != std::string::npos);
    CHECK(msg.find("mismatch") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random 4x4") {
  SplitMix rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor a = random_tensor({4, 4}, rng);
    Tensor b = random_tensor({4, 4}, rng);
    Tensor c = random_tensor({4, 4}, rng);
    Tensor lhs = matmul(matmul(a, b), c);
    Tensor rhs = matmul(a, matmul(b, c));
    CHECK(testutil::max_abs_diff(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("conv2d 1x1 identity kernel is the identity map") {
  SplitMix rng(11);
  Tensor x = random_tensor({2, 3, 5, 5}, rng);
  Tensor w({3, 3, 1, 1});
  for (std::size_t o = 0; o < 3; ++o) w.at({o, o, 0, 0}) = 1.0;
  Tensor y = conv2d(x, w, nullptr, 1, 0);
  CHECK(testutil::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 on constant input") {
  Tensor x = Tensor::full({1, 1, 4, 4}, 5.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(x, w, nullptr, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(45.0));
}

TEST_CASE("conv2d stride-2 output extents") {
  Tensor x({1, 1, 32, 32});
  Tensor w({4, 1, 3, 3});
  Tensor y = conv2d(x, w, nullptr, 2, 1);
  CHECK(y.shape() == Shape{1, 4, 16, 16});
}

TEST_CASE("conv2d rejects kernels that do not fit") {
  Tensor x({1, 1, 3, 3});
  Tensor w({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, 0), ShapeError);
  // Floor semantics drop the dangling column: 5 -> 2 with K=2, stride 2.
  Tensor x2({1, 1, 5, 5});
  Tensor w2({1, 1, 2, 2});
  CHECK(conv2d(x2, w2, nullptr, 2, 0).shape() == Shape{1, 1, 2, 2});
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor x({1, 2, 4, 4});
  Tensor w({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, 1), ShapeError);
}

TEST_CASE("conv2d bias broadcast") {
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  Tensor w = Tensor::zeros({2, 1, 1, 1});
  Tensor b({2}, {1.5, -2.5});
  Tensor y = conv2d(x, w, &b, 1, 0);
  CHECK(y.at({0, 0, 0, 0}) == 1.5);
  CHECK(y.at({0, 1, 1, 1}) == -2.5);
}

TEST_CASE("softmax of a constant slice is uniform") {
  Tensor x = Tensor::full({3, 4}, 2.7);
  const std::size_t axes[] = {1};
  Tensor y = softmax(x, axes);
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y[i] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("softmax closed form for [0, ln 2]") {
  Tensor x({2}, {0.0, std::log(2.0)});
  const std::size_t axes[] = {0};
  Tensor y = softmax(x, axes);
  CHECK(y[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax shift invariance") {
  SplitMix rng(3);
  Tensor x = random_tensor({2, 6}, rng, -4, 4);
  Tensor xc = x;
  for (std::size_t i = 0; i < xc.numel(); ++i) xc[i] += 123.75;
  const std::size_t axes[] = {1};
  CHECK(testutil::max_abs_diff(softmax(x, axes), softmax(xc, axes)) < 1e-12);
}

TEST_CASE("softmax slices sum to one over spatial axes") {
  SplitMix rng(5);
  Tensor x = random_tensor({2, 3, 4, 4}, rng, -6, 6);
  const std::size_t axes[] = {2, 3};
  Tensor y = softmax(x, axes);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0.0;
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w) s += y.at({n, c, h, w});
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax rejects NaN input") {
  Tensor x({2}, {0.0, std::nan("")});
  const std::size_t axes[] = {0};
  CHECK_THROWS_AS(softmax(x, axes), NumericError);
}

TEST_CASE("elementwise add identity and relu definition") {
  Tensor x({3}, {-1, 0, 2});
  Tensor z = Tensor::zeros({3});
  CHECK(testutil::max_abs_diff(add(x, z), x) == 0.0);
  Tensor r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);
}

TEST_CASE("elementwise mul pointwise") {
  Tensor a({3}, {1, 2, 3});
  Tensor b({3}, {2, 2, 2});
  Tensor c = mul(a, b);
  CHECK(c[0] == 2.0);
  CHECK(c[1] == 4.0);
  CHECK(c[2] == 6.0);
}

TEST_CASE("broadcasting expands extent-1 axes only") {
  SplitMix rng(9);
  Tensor x = random_tensor({2, 3, 2, 2}, rng);
  Tensor bias = random_tensor({1, 3, 1, 1}, rng);
  Tensor y = add(x, bias);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t w = 0; w < 2; ++w)
          CHECK(y.at({n, c, h, w}) ==
                x.at({n, c, h, w}) + bias.at({0, c, 0, 0}));

  // Lower rank promotes by prepending 1-extents.
  Tensor row = random_tensor({2}, rng);
  Tensor m = random_tensor({3, 2}, rng);
  Tensor s = add(m, row);
  CHECK(s.at({2, 1}) == m.at({2, 1}) + row[1]);

  CHECK_THROWS_AS(add(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
}

TEST_CASE("add and mul commute with transposition") {
  SplitMix rng(13);
  for (int rep = 0; rep < 4; ++rep) {
    Tensor a = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({3, 5}, rng);
    CHECK(testutil::max_abs_diff(transpose(add(a, b)),
                                 add(transpose(a), transpose(b))) == 0.0);
    CHECK(testutil::max_abs_diff(transpose(mul(a, b)),
                                 mul(transpose(a), transpose(b))) == 0.0);
  }
}

TEST_CASE("tensor invariants: data length, finiteness, scalar item") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2, 2, 2, 2}), ShapeError);
  Tensor s = Tensor::scalar(4.25);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 4.25);
  CHECK(s.all_finite());
  Tensor bad({1}, {std::nan("")});
  CHECK(!bad.all_finite());
}
