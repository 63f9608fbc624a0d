#include "ktraj/grad.hpp"

#include <atomic>
#include <cstdlib>
#include <random>
#include <thread>

namespace ktraj {

namespace {

/// r_d . x for the centered pixel-coordinate map of dim d.
CVec coordinate_weighted(const CVec& x, const GridShape& grid, int d) {
  CVec out(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    out[k] = x[k] * static_cast<double>(centered_offset(grid, static_cast<int>(k), d));
  }
  return out;
}

}  // namespace

CVec jac_forward_omega(const NufftPlan& plan, const CVec& x, const RMat& v) {
  if (v.rows() != plan.nsamples() || v.cols() != plan.ndim()) {
    throw std::invalid_argument("jac_forward_omega: perturbation shape mismatch");
  }
  CVec out = CVec::Zero(plan.nsamples());
  for (int d = 0; d < plan.ndim(); ++d) {
    CVec t = nufft_forward(plan, coordinate_weighted(x, plan.grid(), d));
    for (int j = 0; j < plan.nsamples(); ++j) {
      out[j] += Cplx(0, -1) * v(j, d) * t[j];
    }
  }
  return out;
}

RMat jac_adjoint_omega(const NufftPlan& plan, const CVec& x, const CVec& u) {
  if (u.size() != plan.nsamples()) {
    throw std::invalid_argument("jac_adjoint_omega: cotangent size mismatch");
  }
  RMat out(plan.nsamples(), plan.ndim());
  for (int d = 0; d < plan.ndim(); ++d) {
    CVec t = nufft_forward(plan, coordinate_weighted(x, plan.grid(), d));
    for (int j = 0; j < plan.nsamples(); ++j) {
      // Re(conj(u) * (-i) * t) = Im(conj(u) * t)
      out(j, d) = std::imag(std::conj(u[j]) * t[j]);
    }
  }
  return out;
}

RMat sense_jac_adjoint(const SenseModel& m, const CVec& z, const CVec& u) {
  const int ns = m.nsamples();
  if (u.size() != static_cast<Eigen::Index>(ns) * m.ncoils()) {
    throw std::invalid_argument("sense_jac_adjoint: cotangent size mismatch");
  }
  RMat out = RMat::Zero(ns, m.plan->ndim());
  for (int c = 0; c < m.ncoils(); ++c) {
    CVec zc = m.smaps.row(c).transpose().cwiseProduct(z);
    out += jac_adjoint_omega(*m.plan, zc, u.segment(static_cast<Eigen::Index>(c) * ns, ns));
  }
  return m.op_scale * out;
}

CVec cg_implicit_vjp(const LinOp& H, const CVec& cotangent, int cg_iters, double tol) {
  return cg_solve(H, cotangent, cg_iters, tol).x;
}

CVec denoise_vjp(const Wavelet2D& wavelet, const CVec& x, const RVec& theta, const CVec& u_out,
                 RVec* dtheta) {
  CVec coef = wavelet.analyze(x);
  CVec v = wavelet.synthesize_adjoint(u_out);
  const auto& band = wavelet.subband_ids();
  for (Eigen::Index i = 0; i < coef.size(); ++i) {
    const double t = theta[band[i]];
    const double mag = std::abs(coef[i]);
    if (mag <= t) {
      v[i] = 0;
      continue;
    }
    const Cplx chat = coef[i] / mag;
    const Cplx vi = v[i];
    if (dtheta) (*dtheta)[band[i]] -= std::real(std::conj(vi) * chat);
    v[i] = (1.0 - t / mag) * vi + (t / mag) * chat * std::real(std::conj(chat) * vi);
  }
  return wavelet.analyze_adjoint(v);
}

double op_scale_for(const CMat& smaps, const RMat& coords, GridShape grid, NufftOptions opts) {
  return make_sense_model(smaps, coords, grid, opts).op_scale;
}

int gradient_thread_count() {
  const char* env = std::getenv("KTRAJ_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return std::clamp(n, 1, 64);
}

namespace {

struct ItemResult {
  RMat d_omega;
  RVec d_theta;
  double loss = 0;
};

/// Forward + reverse pass for one batch item. All inputs immutable.
ItemResult item_loss_and_grad(const Problem& prob, const SenseModel& m, const CVec& x,
                              std::uint64_t noise_seed, const GradFlags& flags) {
  const UnrolledConfig& cfg = prob.recon;
  const RVec theta = cfg.theta_or_zero();
  const int nv = m.nvox();
  const int backward_iters = prob.backward_cg_iters > 0 ? prob.backward_cg_iters : cfg.cg_iters;

  // ---- forward ----
  CVec y_clean = sense_forward(m, x);
  check_finite(y_clean, "sense_forward");
  CVec y = y_clean;
  if (prob.noise_std_rel > 0) {
    const double sigma = prob.noise_std_rel * y_clean.cwiseAbs().mean();
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> g(0.0, sigma / std::sqrt(2.0));
    for (Eigen::Index j = 0; j < y.size(); ++j) y[j] += Cplx(g(rng), g(rng));
  }

  ReconTape tape;
  ReconResult rr = unrolled_recon(m, y, cfg, &tape);
  check_finite(rr.image, "unrolled_recon");

  CVec e = rr.image - x;
  double l1 = 0;
  for (Eigen::Index k = 0; k < e.size(); ++k) l1 += std::abs(e[k]);
  const double loss = l1 / nv + e.squaredNorm() / nv;

  // ---- reverse ----
  ItemResult res;
  res.loss = loss;
  res.d_omega = RMat::Zero(m.nsamples(), m.plan->ndim());
  res.d_theta = RVec::Zero(theta.size());

  // dl/dout with dL = Re<u, d out>: l2 gives 2e/nv, l1 gives sign(e)/nv
  CVec u_out(e.size());
  for (Eigen::Index k = 0; k < e.size(); ++k) {
    const double mag = std::abs(e[k]);
    const Cplx sgn = mag > 0 ? e[k] / mag : Cplx(0, 0);
    u_out[k] = (sgn + 2.0 * e[k]) / static_cast<double>(nv);
  }

  const int nblocks = cfg.n_blocks;
  const double scale = tape.scale;
  Wavelet2D wavelet(m.grid(), cfg.wavelet_levels);

  // out = scale * z_n (z_0 = x0/scale when nblocks == 0)
  CVec u_z = scale * u_out;
  double g_scale =
      std::real(u_out.dot(nblocks > 0 ? tape.z_blocks.back() : CVec(tape.x0_raw / scale)));

  CVec u_y_scaled = CVec::Zero(y.size());
  CVec u_y = CVec::Zero(y.size());

  const GridShape grid = m.grid();
  const double lambda_abs =
      cfg.init_lambda_abs > 0 ? cfg.init_lambda_abs : cfg.init_lambda * normal_op_scale(m);
  LinOp h_dc = [&](const CVec& v) -> CVec { return sense_normal(m, v) + cfg.mu * v; };
  LinOp h_init = [&](const CVec& v) -> CVec {
    return sense_normal(m, v) + lambda_abs * roughness_normal(v, grid);
  };

  for (int i = nblocks - 1; i >= 0; --i) {
    // z_i = denoise(x_i)
    CVec u_x = denoise_vjp(wavelet, tape.x_blocks[i], theta,
                           u_z, flags.theta ? &res.d_theta : nullptr);
    // x_i = (A'A + mu I)^{-1} (A' y~ + mu z_{i-1})
    CVec w = cg_implicit_vjp(h_dc, u_x, backward_iters, cfg.cg_tol);
    if (flags.omega) {
      CVec ax = sense_forward(m, tape.x_blocks[i]);
      CVec aw = sense_forward(m, w);
      res.d_omega -= sense_jac_adjoint(m, w, ax) + sense_jac_adjoint(m, tape.x_blocks[i], aw);
      res.d_omega += sense_jac_adjoint(m, w, tape.y_scaled);
      u_y_scaled += aw;
    }
    u_z = cfg.mu * w;
  }
  if (!flags.omega) return res;  // theta chain is complete; the rest feeds d_omega only

  // z_0 = x0_raw / scale, y~ = y / scale
  CVec u_x0 = u_z / scale;
  g_scale -= std::real(u_z.dot(tape.x0_raw)) / (scale * scale);
  u_y += u_y_scaled / scale;
  g_scale -= std::real(u_y_scaled.dot(tape.y)) / (scale * scale);

  // scale = |x0_raw[pivot]| (guarded to 1 when degenerate; then no gradient)
  if (tape.pivot >= 0 && std::abs(tape.x0_raw[tape.pivot]) > 0) {
    const Cplx sgn = tape.x0_raw[tape.pivot] / std::abs(tape.x0_raw[tape.pivot]);
    u_x0[tape.pivot] += g_scale * sgn;
  }

  if (cfg.init_mode == UnrolledConfig::InitMode::kAdjoint) {
    // x0_raw = A' y
    u_y += sense_forward(m, u_x0);
    if (flags.omega) res.d_omega += sense_jac_adjoint(m, u_x0, tape.y);
  } else {
    // x0_raw = (A'A + lambda R'R)^{-1} A' y
    CVec w0 = cg_implicit_vjp(h_init, u_x0, backward_iters, cfg.cg_tol);
    if (flags.omega) {
      CVec ax0 = sense_forward(m, tape.x0_raw);
      CVec aw0 = sense_forward(m, w0);
      res.d_omega -= sense_jac_adjoint(m, w0, ax0) + sense_jac_adjoint(m, tape.x0_raw, aw0);
      res.d_omega += sense_jac_adjoint(m, w0, tape.y);
      u_y += aw0;
    } else {
      u_y += sense_forward(m, w0);
    }
  }

  // y = A x + eps (eps is a fixed realization; its scale is held constant)
  if (flags.omega) res.d_omega += sense_jac_adjoint(m, x, u_y);

  check_finite(res.d_omega, "d_omega");
  return res;
}

}  // namespace

TapeGradient loss_and_grad(const Problem& prob, const SplineParam& spline,
                           const std::vector<const CVec*>& batch,
                           const std::vector<std::uint64_t>& noise_seeds, GradFlags flags) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  if (batch.size() != noise_seeds.size()) {
    throw std::invalid_argument("loss_and_grad: one noise seed per item required");
  }

  RMat omega = materialize(spline);
  check_finite(omega, "materialize");
  Trajectory traj = prob.traj_meta;
  traj.coords = omega;
  traj.nshots = spline.nshots;
  traj.samples_per_shot = spline.samples_per_shot;
  traj.validate();

  if (prob.fixed_op_scale <= 0) {
    throw std::invalid_argument(
        "loss_and_grad: fixed_op_scale must be set (see op_scale_for); a trajectory-dependent "
        "normalization would make the operator scale silently non-differentiable");
  }
  SenseModel model =
      make_sense_model(prob.smaps, omega, prob.grid, prob.nufft_opts, 0.0, prob.fixed_op_scale);

  // Pin the init regularization weight: the frozen normalization puts the
  // reference trajectory's normal operator at unit scale, so the relative
  // weight is already absolute. A per-call normal_op_scale would leak an
  // un-differentiated w-dependence into the objective.
  Problem prob_pinned = prob;
  if (prob_pinned.recon.init_lambda_abs <= 0) {
    prob_pinned.recon.init_lambda_abs = prob_pinned.recon.init_lambda;
  }

  const int nitems = static_cast<int>(batch.size());
  std::vector<ItemResult> items(nitems);
  const int nthreads = std::min(gradient_thread_count(), nitems);
  if (nthreads <= 1) {
    for (int k = 0; k < nitems; ++k) {
      items[k] = item_loss_and_grad(prob_pinned, model, *batch[k], noise_seeds[k], flags);
    }
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(nthreads);
    for (int t = 0; t < nthreads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (int k = next.fetch_add(1); k < nitems; k = next.fetch_add(1)) {
            items[k] = item_loss_and_grad(prob_pinned, model, *batch[k], noise_seeds[k], flags);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  // ordered deterministic reduction
  TapeGradient tg;
  RMat d_omega = RMat::Zero(omega.rows(), omega.cols());
  tg.d_theta = RVec::Zero(prob.recon.theta_or_zero().size());
  for (int k = 0; k < nitems; ++k) {
    tg.recon_loss += items[k].loss / nitems;
    d_omega += items[k].d_omega / nitems;
    tg.d_theta += items[k].d_theta / nitems;
  }

  PenaltyResult pen = penalty(traj, prob.limits, prob.mu1, prob.mu2);
  tg.g_penalty = pen.g_term;
  tg.s_penalty = pen.s_term;
  tg.penalty_value = pen.value;
  tg.loss_value = tg.recon_loss + pen.value;
  if (flags.omega) {
    d_omega += pen.grad;
  } else {
    d_omega.setZero();
  }

  tg.d_coeffs = spline.basis.transpose() * d_omega;
  check_finite(tg.d_coeffs, "d_coeffs");
  if (!tg.d_theta.allFinite()) throw NumericalError("non-finite value at node 'd_theta'");
  return tg;
}

}  // namespace ktraj
