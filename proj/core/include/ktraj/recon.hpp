#pragma once

#include <functional>
#include <vector>

#include "ktraj/mrisys.hpp"
#include "ktraj/wavelet.hpp"

namespace ktraj {

using LinOp = std::function<CVec(const CVec&)>;

struct CgResult {
  CVec x;
  std::vector<double> residuals;  // relative residual after each iteration
};

/// Conjugate gradients from x = 0 for Hermitian positive-definite H.
/// Stops at `iters` or relative residual < tol. Throws NumericalError if the
/// first curvature <p, Hp> has a relatively large imaginary part.
CgResult cg_solve(const LinOp& H, const CVec& b, int iters, double tol);

/// R'R x for the per-dim first-difference roughness operator.
CVec roughness_normal(const CVec& x, GridShape grid);

/// Quadratic-roughness initialization x0 = (A'A + lambda R'R)^{-1} A'y,
/// solved with CG (Toeplitz normal operator inside).
CVec init_recon(const SenseModel& m, const CVec& y, double lambda, int cg_iters,
                double cg_tol = 1e-6);

/// Data-consistency update x = (A'A + mu I)^{-1} (A'y + mu z).
CVec dc_update(const SenseModel& m, const CVec& y, const CVec& z, double mu, int cg_iters,
               double cg_tol = 1e-6);

/// Per-subband complex soft-threshold in the orthonormal wavelet basis.
/// theta must have wavelet.nsubbands() nonnegative entries.
CVec denoise(const Wavelet2D& wavelet, const CVec& z, const RVec& theta);

struct UnrolledConfig {
  int n_blocks = 6;
  double mu = 2.0;
  int cg_iters = 6;
  double cg_tol = 1e-6;
  double init_lambda = 1e-3;  // roughness weight relative to normal_op_scale
  /// Resolved absolute roughness weight. > 0: used as-is (training pins it so
  /// the operator's w-dependence stays purely inside the transform);
  /// otherwise init_lambda * normal_op_scale(model) at call time.
  double init_lambda_abs = 0.0;
  int wavelet_levels = 3;
  RVec denoiser_theta;  // sized 3*wavelet_levels + 1; empty = zeros (identity)

  enum class InitMode { kQuadRoughness, kAdjoint };
  InitMode init_mode = InitMode::kQuadRoughness;

  RVec theta_or_zero() const {
    if (denoiser_theta.size() > 0) return denoiser_theta;
    return RVec::Zero(3 * wavelet_levels + 1);
  }
};

/// Intermediates of one unrolled reconstruction, recorded for reverse mode.
struct ReconTape {
  CVec y;                    // measured data
  CVec x0_raw;               // initialization before median scaling
  double scale = 1.0;        // median magnitude of x0_raw on support
  int pivot = -1;            // index realizing the median
  CVec y_scaled;             // y / scale
  std::vector<CVec> x_blocks;  // post-DC images, n_blocks entries
  std::vector<CVec> z_blocks;  // post-denoiser images, n_blocks entries
};

struct ReconResult {
  CVec image;                             // final estimate, de-normalized
  std::vector<double> per_block_residuals;  // ||A x_i - y~|| / ||y~|| per block
  std::vector<double> cg_residuals;         // concatenated CG histories
  double median_scale = 1.0;
  CVec x0;  // de-normalized initialization
};

/// Alternating data-consistency / denoiser reconstruction, warm-initialized
/// with the quadratic-roughness solve and median-normalized (the scale is
/// re-applied to the output).
ReconResult unrolled_recon(const SenseModel& m, const CVec& y, const UnrolledConfig& cfg,
                           ReconTape* tape = nullptr);

/// Median index helper (pivot of the order statistic), restricted to mask.
int median_pivot(const CVec& img, const std::vector<std::uint8_t>& mask);

struct CsResult {
  CVec image;
  std::vector<double> objective;  // ||Ax-y||^2 + lambda ||Wx||_1 per iteration
  double lambda = 0.0;
};

/// Compressed-sensing baseline: primal-dual hybrid gradient on
/// min_x ||Ax - y||^2 + lambda ||W x||_1 with lambda = ratio * ||A'y||_inf
/// and step sizes from a power-method estimate of the operator norm.
CsResult cs_recon(const SenseModel& m, const CVec& y, double lambda_ratio, int iters,
                  int wavelet_levels = 3);

}  // namespace ktraj
