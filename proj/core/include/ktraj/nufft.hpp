#pragma once

#include <memory>
#include <vector>

#include "ktraj/common.hpp"
#include "ktraj/fft.hpp"

namespace ktraj {

struct NufftOptions {
  double oversample = 2.0;   // grid oversampling factor, >= 1
  int kernel_width = 6;      // interpolation taps per dim
  double kernel_shape = 0;   // Kaiser-Bessel beta; 0 selects the standard
                             // optimal value for (kernel_width, oversample)
};

/// Kaiser-Bessel shape parameter minimizing worst-case aliasing for a given
/// width / oversampling (Beatty et al.).
double kb_optimal_shape(int kernel_width, double oversample);

/// The interpolation kernel itself and its continuous Fourier transform
/// (frequency in cycles per grid sample). Exposed for oracle-style checks.
double kb_kernel(double u, int width, double beta);
double kb_fourier(double f, int width, double beta);

/// Gridding plan for a fixed set of non-uniform frequencies on a fixed grid.
///
/// Evaluates y[j] ~= sum_k x[k] exp(-i w_j . r_k) with r_k centered pixel
/// offsets (DC at idx floor(N/2)). Immutable after construction; forward /
/// adjoint are pure and may run concurrently on a shared plan.
class NufftPlan {
 public:
  NufftPlan(const RMat& coords, GridShape grid, NufftOptions opts = {});

  int nsamples() const { return static_cast<int>(coords_.rows()); }
  int ndim() const { return grid_.nd; }
  const GridShape& grid() const { return grid_; }
  const GridShape& oversampled_grid() const { return os_grid_; }
  const RMat& coords() const { return coords_; }  // wrapped into [-pi, pi)
  const NufftOptions& options() const { return opts_; }

  /// Per-sample interpolation weights for dim d, kernel_width per row.
  const RMat& weights(int d) const { return weights_[d]; }
  /// First grid tap (may be negative; wrap modulo oversampled grid).
  const Eigen::MatrixXi& first_tap() const { return first_tap_; }
  /// Separable image-domain scaling (deapodization) per dim.
  const RVec& apodization(int d) const { return apod_[d]; }

  friend CVec nufft_forward(const NufftPlan&, const CVec&);
  friend CVec nufft_adjoint(const NufftPlan&, const CVec&);

 private:
  RMat coords_;
  GridShape grid_;
  GridShape os_grid_;
  NufftOptions opts_;
  std::array<RMat, 2> weights_;   // Ns x kernel_width, per dim
  Eigen::MatrixXi first_tap_;     // Ns x nd
  std::array<RVec, 2> apod_;      // length n[d]
  FftPlan fwd_fft_;
  FftPlan bwd_fft_;
};

/// y = A(w) x. Image length must equal grid.nvox().
CVec nufft_forward(const NufftPlan& plan, const CVec& image);

/// x = A'(w) y. Exact matrix adjoint of nufft_forward for the same plan.
CVec nufft_adjoint(const NufftPlan& plan, const CVec& data);

/// Precomputed spectrum of the A'A convolution kernel on the doubled image
/// grid. apply() evaluates A'A x with two FFTs instead of forward+adjoint.
class ToeplitzKernel {
 public:
  explicit ToeplitzKernel(const NufftPlan& plan);

  CVec apply(const CVec& image) const;
  const CVec& kernel_fft() const { return kernel_fft_; }
  const GridShape& image_grid() const { return grid_; }
  const GridShape& doubled_grid() const { return big_; }

 private:
  GridShape grid_;
  GridShape big_;
  CVec kernel_fft_;
  FftPlan fwd_fft_;
  FftPlan bwd_fft_;
};

/// Exact O(Ns * Nv) reference transform, y[j] = sum_k x[k] exp(-i w_j . r_k).
/// Guarded to grids <= 64x64 unless allow_large is set.
CVec dft_oracle(const RMat& coords, GridShape grid, const CVec& image, bool allow_large = false);

/// Adjoint counterpart of dft_oracle (same guard).
CVec dft_oracle_adjoint(const RMat& coords, GridShape grid, const CVec& data,
                        bool allow_large = false);

}  // namespace ktraj
