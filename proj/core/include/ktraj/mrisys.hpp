#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "ktraj/common.hpp"
#include "ktraj/nufft.hpp"

namespace ktraj {

/// Multi-coil SENSE forward model A(w): pointwise coil-map multiplication
/// followed by the NUFFT. Immutable; shareable across threads.
struct SenseModel {
  CMat smaps;  // Nc x Nv
  std::shared_ptr<const NufftPlan> plan;
  std::shared_ptr<const ToeplitzKernel> toeplitz;
  std::vector<std::uint8_t> support;  // Nv, RSS > 0.05 * max rule
  double noise_std = 0.0;
  /// Scale applied to the raw NUFFT so the normal operator has unit spectral
  /// peak; keeps mu/lambda weights and CG behavior grid-independent.
  double op_scale = 1.0;

  int ncoils() const { return static_cast<int>(smaps.rows()); }
  int nvox() const { return static_cast<int>(smaps.cols()); }
  int nsamples() const { return plan->nsamples(); }
  const GridShape& grid() const { return plan->grid(); }
};

/// fixed_op_scale > 0 pins the operator normalization (training freezes it at
/// the initial trajectory so A's dependence on w stays purely through the
/// transform); <= 0 derives it from this trajectory's Toeplitz spectrum.
SenseModel make_sense_model(CMat smaps, const RMat& coords, GridShape grid,
                            NufftOptions opts = {}, double noise_std = 0.0,
                            double fixed_op_scale = 0.0);

/// y = A x, coil-major blocks of Ns samples.
CVec sense_forward(const SenseModel& m, const CVec& x);

/// x = A' y.
CVec sense_adjoint(const SenseModel& m, const CVec& y);

/// A'A x through the Toeplitz embedding (two big FFTs per coil).
CVec sense_normal(const SenseModel& m, const CVec& x);

/// Spectral scale of A'A (peak of the Toeplitz kernel spectrum); used to set
/// relative regularization weights.
double normal_op_scale(const SenseModel& m);

/// y = A x + eps with eps ~ CN(0, noise_std^2) i.i.d. (E|eps|^2 = noise_std^2),
/// bit-reproducible for a given seed.
CVec simulate_acquisition(const SenseModel& m, const CVec& x, std::uint64_t seed);

/// Smooth complex Gaussian coil sensitivities centered on a ring around the
/// FOV, normalized to root-sum-of-squares 1. ncoils == 1 gives a constant map.
CMat synth_coil_maps(int grid_n, int ncoils);

struct Dataset {
  std::vector<CVec> images;  // ground-truth complex images, grid_n x grid_n
  std::vector<int> train, val, test;
  int grid_n = 0;
};

/// Randomized ellipse phantoms with smooth random phase, magnitudes
/// normalized to median 1 on support. Deterministic under seed.
Dataset gen_phantoms(int n, int grid_n, std::uint64_t seed);

/// Ingests a directory of .f32 raw images (JSON sidecars for shape; see
/// io.hpp). Center-crops or zero-pads to grid_n and normalizes each image's
/// magnitude to median 1 on support. Files are taken in sorted name order.
Dataset load_images(const std::filesystem::path& dir, int grid_n);

/// Center-crop / zero-pad to a target square grid.
CVec crop_or_pad(const CVec& img, GridShape from, int target_n);

/// Scales so that median |img| over {|img| > 0.05 max} equals 1.
CVec normalize_median(const CVec& img);

/// Median of |img| over the given mask (all pixels if mask empty).
double median_magnitude(const CVec& img, const std::vector<std::uint8_t>& mask = {});

/// Train/val/test split by fractions (deterministic shuffle under seed).
void split_dataset(Dataset& ds, double train_frac, double val_frac, std::uint64_t seed);

}  // namespace ktraj
