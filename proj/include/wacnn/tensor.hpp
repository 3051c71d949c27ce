#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "wacnn/error.hpp"

namespace wacnn {

/// Extents, outermost first. Rank-4 tensors are interpreted as N x C x H x W.
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

/// Dense row-major tensor of 64-bit floats, rank 0..4. A rank-0 tensor is a
/// scalar (one element). Tensors are plain values: copyable, movable, and
/// never shared, so all kernels below are pure and thread-safe.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}  // rank-0 scalar zero
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Indexed access; index count must equal rank.
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  /// Value of a one-element tensor.
  double item() const;

  bool all_finite() const;

 private:
  Shape shape_;                // empty for scalars
  std::vector<double> data_;  // product of extents elements
};

// ---------------------------------------------------------------------------
// Deterministic kernels. Summations always run row-major, left to right, so
// repeated runs produce bit-identical results.
// ---------------------------------------------------------------------------

/// C = A * B for rank-2 tensors. Throws ShapeError naming both shapes when
/// the inner extents disagree.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Rank-2 transpose.
Tensor transpose(const Tensor& a);

/// 2-D cross-correlation. x: N x C x H x W, w: O x I x K x K, bias: length-O
/// rank-1 tensor or nullptr. Output extents (H + 2*pad - K)/stride + 1 must
/// be positive integers.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias,
              std::size_t stride, std::size_t pad);

/// Softmax over the given axis group, max-subtracted for stability. Every
/// slice across the group sums to 1. NaN input raises NumericError.
Tensor softmax(const Tensor& x, std::span<const std::size_t> axes);

// Elementwise operations with broadcasting: extent-1 axes expand, lower rank
// is promoted by prepending 1-extents, nothing else.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, double c);

/// Broadcast result shape of two operand shapes; ShapeError if incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

/// C (m x n) = A (m x k) * B (k x n), row-major raw buffers. Accumulates
/// over k in ascending order for every output element.
void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n);

namespace detail {
// Flat offsets of every index combination over `axes` (row-major order) and,
// in `keep`, over the complementary axes. Shared by softmax and reductions.
void axis_offsets(const Shape& shape, std::span<const std::size_t> axes,
                  std::vector<std::size_t>& group,
                  std::vector<std::size_t>& keep);
}  // namespace detail

}  // namespace wacnn
