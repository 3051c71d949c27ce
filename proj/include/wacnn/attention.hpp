#pragma once

#include <optional>
#include <string>

#include "wacnn/autodiff.hpp"
#include "wacnn/tensor.hpp"
#include "wacnn/wavelet.hpp"

namespace wacnn {

// ---------------------------------------------------------------------------
// Wavelet-attention block. Decomposes the input with a channel-wise DWT,
// discards hh, normalises lh + hl with a spatial softmax per (sample,
// channel), multiplies the attention map into ll and adds ll back on top.
// Output spatial extents are half the input's.
// ---------------------------------------------------------------------------

enum class WaVariant {
  kPlain,     // no trainable parameters; replaces a pooling layer
  kStride,    // plus a 3x3 stride-1 conv; replaces a stride-2 conv
  kOneByOne,  // plus a 1x1 conv for channel adjustment
};

WaVariant parse_wa_variant(const std::string& s);

struct WaConfig {
  std::string wavelet = "haar";
  WaVariant variant = WaVariant::kPlain;
  std::size_t out_channels = 0;  // used by stride / one_by_one only
};

/// Weights owned by the stride / one_by_one heads; empty for plain.
struct WaParams {
  Tensor head_weight;  // out x in x K x K
  Tensor head_bias;    // out
};

/// Trainable parameter count for the given variant.
std::size_t wa_parameter_count(const WaConfig& cfg, std::size_t in_channels);

/// Tape-building forward; head vars must be bound for non-plain variants.
Var wa_forward(Graph& g, Var x, const WaConfig& cfg,
               std::optional<Var> head_weight = std::nullopt,
               std::optional<Var> head_bias = std::nullopt);

/// Value-level forward. params may be nullptr for the plain variant.
Tensor wa_forward(const Tensor& x, const WaConfig& cfg,
                  const WaParams* params = nullptr);

// ---------------------------------------------------------------------------
// Simplified global-context block: one query-independent attention map over
// all positions, shared by every query.
//   z_i = x_i + wv * sum_j softmax_j(wk x)_j * x_j
// ---------------------------------------------------------------------------

/// wk: 1 x C x 1 x 1 (projects channels to a position logit),
/// wv: C x C x 1 x 1. No biases; wv = 0 makes this the identity map.
Var gc_forward(Graph& g, Var x, Var wk, Var wv);
Tensor gc_forward(const Tensor& x, const Tensor& wk, const Tensor& wv);

// ---------------------------------------------------------------------------
// Non-local block with selectable pairwise forms.
//   z_i = x_i + W_z sum_j [f(x_i, x_j) / C(x)] (W_v x_j)
// Gaussian and embedded-Gaussian normalise by softmax over j; dot-product
// and concat divide by the position count.
// ---------------------------------------------------------------------------

enum class NlPairwise { kGaussian, kEmbeddedGaussian, kDotProduct, kConcat };

NlPairwise parse_nl_pairwise(const std::string& s);

struct NlConfig {
  NlPairwise pairwise_form = NlPairwise::kEmbeddedGaussian;
  std::size_t bottleneck_channels = 0;  // must be <= input channels
};

struct NlVars {
  Var wq, wk, wv, wz;
  std::optional<Var> wf;  // length 2*bottleneck, concat form only
};

struct NlTensors {
  Tensor wq;  // Cb x C x 1 x 1
  Tensor wk;  // Cb x C x 1 x 1
  Tensor wv;  // Cb x C x 1 x 1
  Tensor wz;  // C x Cb x 1 x 1
  std::optional<Tensor> wf;
};

Var nl_forward(Graph& g, Var x, const NlConfig& cfg, const NlVars& params);
Tensor nl_forward(const Tensor& x, const NlConfig& cfg,
                  const NlTensors& params);

}  // namespace wacnn
