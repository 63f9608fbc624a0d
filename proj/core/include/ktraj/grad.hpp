#pragma once

#include <vector>

#include "ktraj/recon.hpp"
#include "ktraj/trajectory.hpp"

namespace ktraj {

/// Gradient bundle for one mini-batch of the joint training loss.
struct TapeGradient {
  RMat d_coeffs;  // L x Nd, gradient w.r.t. spline coefficients
  RVec d_theta;   // gradient w.r.t. denoiser thresholds
  double loss_value = 0;    // recon_loss + penalty_value
  double recon_loss = 0;    // batch mean of l1 + l2^2 per-pixel loss
  double penalty_value = 0; // mu1 * g_penalty + mu2 * s_penalty
  double g_penalty = 0;     // raw gradient-limit hinge sum
  double s_penalty = 0;     // raw slew-limit hinge sum
};

/// Directional derivative of y(w) = A(w) x along a trajectory perturbation
/// v (Ns x Nd): (Jv)_j = -i sum_d v_{j,d} [A(w)(r_d . x)]_j where r_d is the
/// centered pixel-coordinate map. Costs Nd extra NUFFTs.
CVec jac_forward_omega(const NufftPlan& plan, const CVec& x, const RMat& v);

/// Vector-Jacobian product: out(j, d) = d Re<u, A(w) x> / d w_{j,d}.
RMat jac_adjoint_omega(const NufftPlan& plan, const CVec& x, const CVec& u);

/// Multi-coil version of jac_adjoint_omega for the SENSE operator
/// (u stacked coil-major, the model's normalization included).
RMat sense_jac_adjoint(const SenseModel& m, const CVec& z, const CVec& u);

/// b-cotangent of x* = H^{-1} b under the implicit-function rule: one more
/// CG solve with the same Hermitian operator. Contributions through a
/// parameter-dependent H are the caller's -<w, dH x*> outer terms.
CVec cg_implicit_vjp(const LinOp& H, const CVec& cotangent, int cg_iters, double tol);

/// VJP of the shrinkage denoiser. Returns the input cotangent; accumulates
/// the threshold gradient into dtheta when non-null.
CVec denoise_vjp(const Wavelet2D& wavelet, const CVec& x, const RVec& theta, const CVec& u_out,
                 RVec* dtheta);

/// Everything that stays fixed while optimizing (c, theta) on one dataset.
struct Problem {
  CMat smaps;
  GridShape grid;
  NufftOptions nufft_opts;
  Trajectory traj_meta;  // shot layout + dt/fov/grid_n; coords ignored
  HardwareLimits limits;
  UnrolledConfig recon;  // denoiser_theta holds the current theta
  double noise_std_rel = 1e-3;  // noise std = rel * mean |A x| per item
  double mu1 = 0.0;
  double mu2 = 0.0;
  int backward_cg_iters = 0;  // 0: reuse recon.cg_iters for the VJP solves
  /// Frozen operator normalization (see make_sense_model). Must be set, e.g.
  /// via op_scale_for, so that A(w) is differentiable purely through w.
  double fixed_op_scale = 0.0;
};

struct GradFlags {
  bool omega = true;
  bool theta = true;
};

/// Loss and reverse-mode gradients for one mini-batch: c -> w = Bc ->
/// y = A(w)x + eps -> unrolled reconstruction -> combined l1/l2 loss,
/// plus the hardware hinge penalties. The penalty enters once per batch;
/// the reconstruction loss is averaged over items.
TapeGradient loss_and_grad(const Problem& prob, const SplineParam& spline,
                           const std::vector<const CVec*>& batch,
                           const std::vector<std::uint64_t>& noise_seeds, GradFlags flags = {});

/// Worker-thread count for per-item gradient evaluation (KTRAJ_THREADS env,
/// default 1). Reduction order is independent of the thread count.
int gradient_thread_count();

/// Normalization constant for A at a reference trajectory (typically the
/// initialization); freeze it into Problem::fixed_op_scale.
double op_scale_for(const CMat& smaps, const RMat& coords, GridShape grid,
                    NufftOptions opts = {});

}  // namespace ktraj
