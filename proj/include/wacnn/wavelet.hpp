#pragma once

#include <string>
#include <vector>

#include "wacnn/tensor.hpp"

namespace wacnn {

/// One named wavelet: analysis and synthesis low/high-pass taps.
///
/// Taps are stored so that the circulant rule "row i starts at column 2i"
/// (build_analysis_matrices) yields perfect reconstruction directly; the
/// biorthogonal banks carry explicit zero taps for phase alignment.
struct FilterBank {
  std::string name;
  std::vector<double> analysis_lo;
  std::vector<double> analysis_hi;
  std::vector<double> synthesis_lo;
  std::vector<double> synthesis_hi;
  bool orthogonal = false;
};

/// Names accepted by filter_bank(), in registry order.
const std::vector<std::string>& filter_bank_names();

/// Look up a filter bank. Unknown names raise ConfigError listing the
/// registered ones. Every bank is validated at construction: low-pass taps
/// sum to sqrt(2), high-pass taps sum to 0, and orthogonal banks satisfy
/// h_k = (-1)^k l_{m-1-k} with synthesis aliased to analysis.
FilterBank filter_bank(const std::string& name);

/// The four stride-2 subbands of a 2-D DWT, each N x C x H/2 x W/2.
/// lh is the row-filtered (horizontal detail) band H*X*L^T, hl is L*X*H^T.
struct SubbandSet {
  Tensor ll, lh, hl, hh;
};

/// Stride-2 circulant analysis pair for even extent n: L and H are both
/// (n/2) x n with L[i, (2i+k) mod n] += lo[k]. Odd n raises ShapeError.
std::pair<Tensor, Tensor> build_analysis_matrices(const FilterBank& fb,
                                                  std::size_t n);

/// Synthesis counterparts built from the synthesis taps by the same rule.
std::pair<Tensor, Tensor> build_synthesis_matrices(const FilterBank& fb,
                                                   std::size_t n);

/// Channel-wise 2-D DWT in matrix form: per (sample, channel) slice X,
/// ll = L X L^T, lh = H X L^T, hl = L X H^T, hh = H X H^T. Spatial extents
/// must be even; both are halved.
SubbandSet dwt2(const Tensor& x, const FilterBank& fb);

/// Inverse transform: Lt^T ll Lt + Ht^T lh Lt + Lt^T hl Ht + Ht^T hh Ht
/// per slice, with Lt/Ht the synthesis matrices. idwt2(dwt2(X)) == X within
/// 1e-8 for every registered bank.
Tensor idwt2(const SubbandSet& s, const FilterBank& fb);

/// Same decomposition computed by separable stride-2 circular
/// cross-correlation, rows then columns. Oracle for dwt2; the two paths
/// agree within 1e-12.
SubbandSet dwt2_direct(const Tensor& x, const FilterBank& fb);

}  // namespace wacnn
