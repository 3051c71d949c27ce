#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "wacnn/tensor.hpp"
#include "wacnn/wavelet.hpp"

namespace wacnn {

/// Handle to a node on a Graph's tape.
struct Var {
  std::size_t id = 0;
};

enum class BnMode {
  kTrain,    // batch statistics, running buffers updated
  kMeasure,  // batch statistics, buffers untouched (metrics passes)
  kEval,     // running buffers
};

/// Per-layer batchnorm buffers, owned by the caller across passes.
struct BnStats {
  Tensor running_mean;  // rank-1, one per channel
  Tensor running_var;
};

/// Define-by-run reverse-mode tape. Values are computed eagerly as nodes are
/// appended, so node inputs always precede their consumers; backward() makes
/// one reverse sweep touching each node at most once.
///
/// A Graph is confined to one thread for its lifetime. It is rebuilt for
/// every forward pass; parameters live outside and are bound as leaves.
class Graph {
 public:
  Var leaf(Tensor value, bool needs_grad = false);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var relu(Var a);
  Var matmul(Var a, Var b);
  /// Batched matmul over rank-3 tensors: (B,m,k) x (B,k,n) -> (B,m,n).
  Var bmm(Var a, Var b);
  /// Swap the last two axes of a rank-2 or rank-3 tensor.
  Var transpose_last2(Var a);
  Var reshape(Var a, Shape shape);
  /// Contiguous slice along axis 0: rows [start, start+len).
  Var slice0(Var a, std::size_t start, std::size_t len);
  Var softmax(Var a, std::vector<std::size_t> axes);
  Var reduce_sum(Var a, std::vector<std::size_t> axes, bool keepdims);
  Var reduce_mean(Var a, std::vector<std::size_t> axes, bool keepdims);
  /// Sum of every element, as a rank-0 scalar.
  Var sum_all(Var a);
  Var conv2d(Var x, Var w, std::optional<Var> bias, std::size_t stride,
             std::size_t pad);

  struct Subbands {
    Var ll, lh, hl, hh;
  };
  /// Channel-wise DWT; one node per subband. The transform is linear, so
  /// each backward is the adjoint (transposed-matrix) application.
  Subbands dwt2(Var x, const FilterBank& fb);

  Var batchnorm(Var x, Var gamma, Var beta, BnStats& stats, BnMode mode,
                double eps = 1e-5, double momentum = 0.1);

  /// Mean over the batch of -log softmax(logits)[label].
  Var cross_entropy(Var logits, const std::vector<int>& labels);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradients of a scalar loss with respect to every needs_grad node.
  /// Non-scalar losses raise ConfigError.
  void backward(Var loss);
  bool has_grad(Var v) const { return nodes_[v.id].has_grad; }
  const Tensor& grad(Var v) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
    std::function<void(Graph&, const Tensor&)> backprop;  // grad-out -> inputs
  };

  Var push(Tensor value, bool needs_grad,
           std::function<void(Graph&, const Tensor&)> backprop);
  void accumulate(std::size_t id, const Tensor& g);

  std::vector<Node> nodes_;
  friend class GradAccess;
};

/// Sum `g` down to `target` shape, reversing broadcast expansion.
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

/// Central-difference gradient check of a scalar-valued builder against the
/// tape's backward pass. Returns the max relative error over coordinates,
/// with denominator max(|analytic|, |numeric|, 1e-8).
double gradcheck(const std::function<Var(Graph&, Var)>& build, const Tensor& x,
                 double h = 1e-5);

}  // namespace wacnn
