#pragma once

#include <filesystem>
#include <optional>

#include "ktraj/common.hpp"

namespace ktraj {

/// Scanner hardware limits. gamma is the gyromagnetic ratio over 2*pi
/// (Hz/T, 42.576e6 for 1H); dt is the gradient raster time in seconds.
struct HardwareLimits {
  double gmax = 0.05;     // T/m
  double smax = 149.0;    // T/m/s
  double gamma = 42.576e6;
  double dt = 4e-6;
};

/// Multi-shot k-space sampling pattern. coords are in radians/pixel in
/// [-pi, pi); row j = shot (j / samples_per_shot), sample (j % samples_per_shot).
struct Trajectory {
  RMat coords;  // Ns x Nd
  int nshots = 1;
  int samples_per_shot = 0;
  double dt = 4e-6;   // seconds per sample
  double fov = 0.22;  // meters
  int grid_n = 320;

  int nsamples() const { return static_cast<int>(coords.rows()); }
  int ndim() const { return static_cast<int>(coords.cols()); }
  void validate() const;
};

/// Quadratic B-spline reparameterization w_d = B c_d. The basis is block
/// diagonal over shots; every row sums to 1 and has at most 3 nonzeros.
struct SplineParam {
  RMat coeffs;  // L x Nd
  SpMat basis;  // Ns x L
  int decim = 1;
  int nshots = 1;
  int samples_per_shot = 0;

  int ncoeffs() const { return static_cast<int>(coeffs.rows()); }
};

/// B-spline evaluation matrix for one multi-shot layout. Knot spacing is
/// `decim` samples; each shot gets samples_per_shot/decim + 2 coefficients
/// (rounded up, with the last knot interval shortened when decim does not
/// divide samples_per_shot).
SpMat build_basis(int nshots, int samples_per_shot, int decim);

/// w = B c, per dimension.
RMat materialize(const SplineParam& p);

struct RefitResult {
  SplineParam param;
  double max_residual;  // max |B c - w| over samples and dims, rad/pixel
};

/// Least-squares fit of spline coefficients to existing coordinates
/// (normal-equations solve per shot and dimension).
RefitResult refit(const RMat& coords, int nshots, int samples_per_shot, int decim);

/// Degenerate parameterization with B = I (every sample its own parameter).
SplineParam identity_param(const RMat& coords, int nshots, int samples_per_shot);

/// Per-shot forward differences; no rows couple samples of different shots.
RMat diff1(const RMat& coords, int nshots);
RMat diff2(const RMat& coords, int nshots);

/// Constraint thresholds in radians/pixel: lambda_g = 2pi gamma dt gmax fov / N
/// (and dt^2, smax for slew). Uses the trajectory's dt/fov/grid_n.
struct PenaltyThresholds {
  double lambda_g;
  double lambda_s;
};
PenaltyThresholds constraint_thresholds(const Trajectory& traj, const HardwareLimits& limits);

struct PenaltyResult {
  double value = 0;        // mu1 * g_term + mu2 * s_term
  double g_term = 0;       // sum max(|D1 w| - lambda_g, 0)
  double s_term = 0;       // sum max(|D2 w| - lambda_s, 0)
  RMat grad;               // subgradient w.r.t. coords, Ns x Nd
};

/// Hinge penalty of Eq-style box constraints on per-shot first and second
/// differences. Zero (with zero subgradient) strictly inside the limits.
PenaltyResult penalty(const Trajectory& traj, const HardwareLimits& limits, double mu1,
                      double mu2);

struct TrajGeometry {
  double dt = 4e-6;
  double fov = 0.22;
  int grid_n = 320;
};

/// Straight spokes through DC with equidistant angles in [-pi/2, pi/2).
/// inout spokes span radius [-pi, pi); center-out spokes span [0, pi).
Trajectory gen_radial(int nspokes, int nread, bool inout, TrajGeometry geo = {});

/// Center-out interleaved spiral, slew- and gradient-feasible by construction
/// for the given limits. density = 1 is Archimedean; larger values sample the
/// center more densely. Throws InfeasibleError if the readout is too short to
/// reach the k-space edge under the limits.
Trajectory gen_spiral(int nshots, int nread, double density, TrajGeometry geo = {},
                      HardwareLimits limits = {});

struct Waveforms {
  RMat grad;  // (Ns - nshots) x Nd, T/m, shot-major
  RMat slew;  // (Ns - 2*nshots) x Nd, T/m/s
};

/// Gradient/slew waveforms realizing the trajectory:
/// g_d[n] = (w_d[n] - w_d[n-1]) * grid_n / (2 pi gamma dt fov).
Waveforms export_waveform(const Trajectory& traj, const HardwareLimits& limits);

/// CSV with columns shot,n,g_x,g_y,s_x,s_y (slew blank-padded with 0 on the
/// last gradient sample of each shot).
void write_waveform_csv(const std::filesystem::path& path, const Trajectory& traj,
                        const HardwareLimits& limits);

/// Binary trajectory file, little-endian:
/// magic "KTRJ1", u32 {nd, nshots, samples_per_shot}, f64 {dt, fov, grid_n},
/// then f64 coords row-major. Writes are atomic (temp file + rename).
void save_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path);

}  // namespace ktraj
