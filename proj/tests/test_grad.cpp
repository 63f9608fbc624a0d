#include <doctest.h>

#include <random>

#include "ktraj/grad.hpp"

using namespace ktraj;

namespace {

RMat random_coords(int ns, int nd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-M_PI * 0.9, M_PI * 0.9);
  RMat c(ns, nd);
  for (int j = 0; j < ns; ++j)
    for (int d = 0; d < nd; ++d) c(j, d) = u(rng);
  return c;
}

CVec random_image(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  CVec x(n);
  for (int k = 0; k < n; ++k) x[k] = Cplx(g(rng), g(rng));
  return x;
}

RMat random_direction(int ns, int nd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  RMat v(ns, nd);
  for (int j = 0; j < ns; ++j)
    for (int d = 0; d < nd; ++d) v(j, d) = g(rng);
  return v;
}

}  // namespace

TEST_CASE("jac_forward: centered delta image has zero derivative") {
  GridShape g(12, 12);
  RMat c = random_coords(30, 2, 1);
  CVec x = CVec::Zero(g.nvox());
  x[(12 / 2) * 12 + 12 / 2] = 1.0;
  NufftPlan plan(c, g);
  RMat v = random_direction(30, 2, 2);
  CHECK(jac_forward_omega(plan, x, v).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("jac_forward matches central finite differences of the DFT oracle") {
  const GridShape g(12, 12);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    RMat c = random_coords(40, 2, 100 + trial);
    CVec x = random_image(g.nvox(), 200 + trial);
    RMat v = random_direction(40, 2, 300 + trial);
    NufftPlan plan(c, g);
    CVec jv = jac_forward_omega(plan, x, v);
    CVec fd = (dft_oracle(c + h * v, g, x) - dft_oracle(c - h * v, g, x)) / (2 * h);
    CHECK((jv - fd).norm() / fd.norm() < 1e-4);
  }
}

TEST_CASE("jac_forward is linear in the perturbation") {
  GridShape g(10, 10);
  RMat c = random_coords(25, 2, 3);
  CVec x = random_image(g.nvox(), 4);
  NufftPlan plan(c, g);
  RMat v1 = random_direction(25, 2, 5), v2 = random_direction(25, 2, 6);
  CVec lhs = jac_forward_omega(plan, x, 2.0 * v1 - 0.5 * v2);
  CVec rhs = 2.0 * jac_forward_omega(plan, x, v1) - 0.5 * jac_forward_omega(plan, x, v2);
  CHECK((lhs - rhs).norm() < 1e-12 * rhs.norm());
}

TEST_CASE("jac_adjoint: zero cotangent gives zero; pairing with jac_forward") {
  GridShape g(12, 12);
  RMat c = random_coords(30, 2, 7);
  CVec x = random_image(g.nvox(), 8);
  NufftPlan plan(c, g);
  CHECK(jac_adjoint_omega(plan, x, CVec::Zero(30)).cwiseAbs().maxCoeff() == 0.0);

  for (int trial = 0; trial < 5; ++trial) {
    CVec u = random_image(30, 400 + trial);
    RMat v = random_direction(30, 2, 500 + trial);
    const double lhs = std::real(u.dot(jac_forward_omega(plan, x, v)));  // Re<u, Jv>
    const double rhs = (jac_adjoint_omega(plan, x, u).array() * v.array()).sum();
    CHECK(std::abs(lhs - rhs) / std::abs(rhs) < 1e-6);
  }
}

TEST_CASE("jac_adjoint: gradient of 0.5||A x||^2 matches finite differences") {
  const GridShape g(12, 12);
  const double h = 1e-6;
  const int ns = 35;
  for (int trial = 0; trial < 20; ++trial) {
    RMat c = random_coords(ns, 2, 600 + trial);
    CVec x = random_image(g.nvox(), 700 + trial);
    NufftPlan plan(c, g);
    CVec u = nufft_forward(plan, x);  // = A(w) x
    RMat grad = jac_adjoint_omega(plan, x, u);

    // entry-wise central differences of the exact-DFT objective
    RMat fd(ns, 2);
    for (int j = 0; j < ns; ++j) {
      for (int d = 0; d < 2; ++d) {
        RMat cp = c, cm = c;
        cp(j, d) += h;
        cm(j, d) -= h;
        fd(j, d) = (0.5 * dft_oracle(cp, g, x).squaredNorm() -
                    0.5 * dft_oracle(cm, g, x).squaredNorm()) /
                   (2 * h);
      }
    }
    CHECK((grad - fd).norm() / fd.norm() < 1e-4);
  }
}

TEST_CASE("cg_implicit_vjp: identity operator returns the cotangent") {
  CVec u = random_image(40, 9);
  CVec w = cg_implicit_vjp([](const CVec& v) -> CVec { return v; }, u, 10, 1e-14);
  CHECK((w - u).norm() < 1e-12 * u.norm());
}

TEST_CASE("cg_implicit_vjp matches finite differences of ||x*(b)||^2 on a diagonal system") {
  const int n = 64;  // 8x8
  RVec d(n);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (int i = 0; i < n; ++i) d[i] = u(rng);
  LinOp H = [&](const CVec& v) -> CVec { return d.asDiagonal() * v; };

  CVec b = random_image(n, 11);
  // loss(b) = ||H^{-1} b||^2; dloss/db = 2 H^{-1} (H^{-1} b) = cg_implicit_vjp(H, 2 x*)
  CVec xstar = cg_solve(H, b, 200, 1e-14).x;
  CVec grad = cg_implicit_vjp(H, CVec(2.0 * xstar), 200, 1e-14);

  const double h = 1e-6;
  std::mt19937_64 rng2(12);
  std::normal_distribution<double> g;
  CVec dir(n);
  for (int i = 0; i < n; ++i) dir[i] = Cplx(g(rng2), g(rng2));
  auto loss = [&](const CVec& bb) { return cg_solve(H, bb, 200, 1e-14).x.squaredNorm(); };
  const double fd = (loss(b + h * dir) - loss(b - h * dir)) / (2 * h);
  const double an = std::real(grad.dot(dir));  // Re<grad, dir>
  CHECK(std::abs(an - fd) / std::abs(fd) < 1e-6);
}

TEST_CASE("denoise_vjp matches finite differences away from kinks") {
  const GridShape g(16, 16);
  Wavelet2D w(g, 3);
  RVec theta = RVec::Constant(w.nsubbands(), 0.3);
  CVec x = random_image(g.nvox(), 13);

  // keep a margin from the |coef| = theta kinks
  CVec coef = w.analyze(x);
  const auto& band = w.subband_ids();
  for (Eigen::Index i = 0; i < coef.size(); ++i) {
    const double t = theta[band[i]];
    if (std::abs(std::abs(coef[i]) - t) < 1e-3) coef[i] *= 1.02;
  }
  x = w.synthesize(coef);

  CVec u = random_image(g.nvox(), 14);
  RVec dtheta = RVec::Zero(theta.size());
  CVec u_in = denoise_vjp(w, x, theta, u, &dtheta);

  const double h = 1e-7;
  CVec dir = random_image(g.nvox(), 15);
  auto val = [&](const CVec& xx) { return std::real(u.dot(denoise(w, xx, theta))); };
  const double fd = (val(x + h * dir) - val(x - h * dir)) / (2 * h);
  const double an = std::real(u_in.dot(dir));
  CHECK(std::abs(an - fd) / std::abs(fd) < 1e-5);

  // threshold gradient, one subband at a time
  for (int s : {0, 3, 7}) {
    RVec tp = theta, tm = theta;
    tp[s] += h;
    tm[s] -= h;
    const double fdt =
        (std::real(u.dot(denoise(w, x, tp))) - std::real(u.dot(denoise(w, x, tm)))) / (2 * h);
    CHECK(std::abs(dtheta[s] - fdt) < 1e-5 * std::max(1.0, std::abs(fdt)));
  }
}

namespace {

/// Tiny joint problem: 1 shot, spline with 3 coefficients per dim.
struct Toy {
  Problem prob;
  SplineParam spline;
  Dataset ds;

  explicit Toy(int grid_n = 12, int nblocks = 1) {
    const int m = 16;
    ds = gen_phantoms(2, grid_n, 21);
    // a generic rotated spoke (no sample on the interpolation-tap lattice,
    // where the gridded transform has its measure-zero derivative kinks)
    Trajectory init = gen_radial(1, m, true, {4e-6, 0.22, grid_n});
    const double a = -M_PI / 2 + 0.37;
    for (int i = 0; i < m; ++i) {
      const double rho = 0.93 * (-M_PI + 2 * M_PI * i / m) + 0.011;
      init.coords(i, 0) = rho * std::cos(a);
      init.coords(i, 1) = rho * std::sin(a);
    }
    spline = refit(init.coords, 1, m, 16).param;  // 3 coefficients per dim

    prob.smaps = synth_coil_maps(grid_n, 1);
    prob.grid = GridShape(grid_n, grid_n);
    // high-accuracy transform so the check isolates the differentiation
    // itself rather than interpolation error
    prob.nufft_opts.oversample = 3.0;
    prob.nufft_opts.kernel_width = 10;
    prob.traj_meta = init;
    prob.recon.n_blocks = nblocks;
    prob.recon.mu = 2.0;
    prob.recon.cg_iters = 200;
    prob.recon.cg_tol = 1e-14;
    // strong roughness weight keeps the init solve well-conditioned, so the
    // forward CG actually converges and implicit differentiation is exact
    prob.recon.init_lambda = 0.3;
    prob.recon.denoiser_theta = RVec::Constant(10, 0.02);
    prob.backward_cg_iters = 300;
    prob.fixed_op_scale = op_scale_for(prob.smaps, init.coords, prob.grid, prob.nufft_opts);
    prob.noise_std_rel = 0.0;
    prob.mu1 = 0.0;
    prob.mu2 = 0.0;
  }

  double loss_at(const SplineParam& sp, const RVec* theta_override = nullptr) const {
    Problem p = prob;
    if (theta_override) p.recon.denoiser_theta = *theta_override;
    std::vector<const CVec*> batch{&ds.images[0]};
    TapeGradient tg = loss_and_grad(p, sp, batch, {7}, {false, false});
    return tg.loss_value;
  }
};

}  // namespace

TEST_CASE("loss_and_grad: theta gradient vanishes when the denoiser is unused") {
  Toy toy(12, 0);  // zero blocks: theta never touches the output
  std::vector<const CVec*> batch{&toy.ds.images[0]};
  TapeGradient tg = loss_and_grad(toy.prob, toy.spline, batch, {7});
  CHECK(tg.d_theta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(tg.penalty_value == 0.0);
}

TEST_CASE("loss_and_grad: penalty-only gradient equals B' times the penalty subgradient") {
  Toy toy;
  Problem p = toy.prob;
  p.mu1 = 1.7;
  p.mu2 = 0.9;
  // scale the trajectory up so hinges activate
  SplineParam sp = toy.spline;
  sp.coeffs *= 40.0;

  std::vector<const CVec*> batch{&toy.ds.images[0]};
  TapeGradient with_pen = loss_and_grad(p, sp, batch, {7});
  Problem p0 = p;
  p0.mu1 = p0.mu2 = 0.0;
  TapeGradient without_pen = loss_and_grad(p0, sp, batch, {7});

  Trajectory traj = p.traj_meta;
  traj.coords = materialize(sp);
  PenaltyResult pen = penalty(traj, p.limits, p.mu1, p.mu2);
  RMat expected = sp.basis.transpose() * pen.grad;
  RMat got = with_pen.d_coeffs - without_pen.d_coeffs;
  CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-9 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("loss_and_grad: end-to-end coefficient gradient matches finite differences") {
  Toy toy(12, 1);
  std::vector<const CVec*> batch{&toy.ds.images[0]};
  TapeGradient tg = loss_and_grad(toy.prob, toy.spline, batch, {7});

  const double h = 1e-5;
  RMat fd(tg.d_coeffs.rows(), tg.d_coeffs.cols());
  for (int i = 0; i < tg.d_coeffs.rows(); ++i) {
    for (int d = 0; d < tg.d_coeffs.cols(); ++d) {
      SplineParam sp = toy.spline, sm = toy.spline;
      sp.coeffs(i, d) += h;
      sm.coeffs(i, d) -= h;
      fd(i, d) = (toy.loss_at(sp) - toy.loss_at(sm)) / (2 * h);
    }
  }
  CHECK((tg.d_coeffs - fd).norm() / fd.norm() < 1e-3);
}

TEST_CASE("loss_and_grad: theta gradient matches finite differences end-to-end") {
  Toy toy(12, 2);
  std::vector<const CVec*> batch{&toy.ds.images[0]};
  TapeGradient tg = loss_and_grad(toy.prob, toy.spline, batch, {7});

  const double h = 1e-6;
  for (int s : {0, 2, 5, 9}) {
    RVec tp = toy.prob.recon.denoiser_theta, tm = tp;
    tp[s] += h;
    tm[s] -= h;
    const double fd = (toy.loss_at(toy.spline, &tp) - toy.loss_at(toy.spline, &tm)) / (2 * h);
    CHECK(std::abs(tg.d_theta[s] - fd) < 2e-3 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("loss_and_grad is deterministic given the same seeds") {
  Toy toy(12, 1);
  std::vector<const CVec*> batch{&toy.ds.images[0], &toy.ds.images[1]};
  Problem p = toy.prob;
  p.noise_std_rel = 1e-3;
  TapeGradient a = loss_and_grad(p, toy.spline, batch, {3, 4});
  TapeGradient b = loss_and_grad(p, toy.spline, batch, {3, 4});
  CHECK((a.d_coeffs - b.d_coeffs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.d_theta - b.d_theta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.loss_value == b.loss_value);
}
