#pragma once

#include "ktraj/nufft.hpp"
#include "ktraj/trajectory.hpp"

namespace ktraj {

struct PsfReport {
  CVec psf;             // grid_n^2 complex, normalized to unit peak magnitude
  double fwhm_pixels;   // from the angle-averaged radial profile
  double sidelobe_energy_ratio;  // energy outside 3*FWHM radius / total
  RMat profiles;        // nangles x nradii magnitude samples
  RVec radii;           // sample radii in pixels
};

/// Point spread function of a trajectory: adjoint transform of all-ones data
/// (optionally density-compensated), peak-normalized. FWHM by linear
/// interpolation of the angle-averaged profile at half maximum.
PsfReport psf(const Trajectory& traj, int grid_n, const RVec* dcf = nullptr, int nangles = 360);

/// SSIM on magnitude images: 7x7 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range = max |ref|, mean over the valid (un-padded)
/// window positions.
double ssim(const CVec& x, const CVec& ref, GridShape grid);

/// PSNR in dB on magnitudes with range max |ref|; identical images report
/// the 99 dB cap.
double psnr(const CVec& x, const CVec& ref, GridShape grid);

/// Fraction of samples whose point reflection through DC lies within
/// radius_eps of any sample.
double hermitian_overlap(const Trajectory& traj, double radius_eps);

}  // namespace ktraj
