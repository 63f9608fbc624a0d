#pragma once

#include <vector>

#include "ktraj/common.hpp"

namespace ktraj {

/// Orthonormal Daubechies-4 (4-tap) 2D wavelet transform with periodic
/// boundaries. Images whose sides are not divisible by 2^levels are
/// symmetric-padded up to the next multiple; analyze/synthesize fold the
/// padding in and out. The transform on the padded grid is exactly
/// orthonormal, so soft-thresholding in this basis is non-expansive.
class Wavelet2D {
 public:
  Wavelet2D(GridShape image_grid, int levels);

  /// coefficients = W * pad(img); length padded_grid().nvox()
  CVec analyze(const CVec& img) const;
  /// img = crop(W' * coef)
  CVec synthesize(const CVec& coef) const;

  /// Adjoints of the maps above (for hand-written reverse mode).
  CVec analyze_adjoint(const CVec& coef) const;      // pad' * W'
  CVec synthesize_adjoint(const CVec& img) const;    // W * crop'

  int levels() const { return levels_; }
  int nsubbands() const { return 3 * levels_ + 1; }
  const GridShape& image_grid() const { return grid_; }
  const GridShape& padded_grid() const { return padded_; }
  /// Subband index of each coefficient: 0 = coarsest approximation, then
  /// 3 per level ordered coarse to fine.
  const std::vector<int>& subband_ids() const { return band_; }

 private:
  CVec pad(const CVec& img) const;
  CVec pad_adjoint(const CVec& big) const;
  void dwt_inplace(CVec& buf) const;
  void idwt_inplace(CVec& buf) const;

  GridShape grid_;
  GridShape padded_;
  int levels_;
  std::vector<int> band_;
};

/// Complex soft-threshold w -> w * max(1 - t/|w|, 0).
inline Cplx soft_threshold(Cplx w, double t) {
  const double mag = std::abs(w);
  if (mag <= t) return {0.0, 0.0};
  return w * (1.0 - t / mag);
}

}  // namespace ktraj
