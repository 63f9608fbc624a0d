#include <doctest.h>

#include <random>

#include "ktraj/recon.hpp"
#include "ktraj/trajectory.hpp"

using namespace ktraj;

namespace {

CVec random_image(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  CVec x(n);
  for (int k = 0; k < n; ++k) x[k] = Cplx(g(rng), g(rng));
  return x;
}

/// Fully-sampled Cartesian-equivalent coords: every integer grid frequency.
RMat cartesian_coords(int n) {
  RMat c(n * n, 2);
  for (int ix = 0; ix < n; ++ix) {
    for (int iy = 0; iy < n; ++iy) {
      c(ix * n + iy, 0) = 2 * M_PI * (ix - n / 2) / n;
      c(ix * n + iy, 1) = 2 * M_PI * (iy - n / 2) / n;
    }
  }
  return c;
}

SenseModel radial_model(int grid_n, int ncoils, int nspokes = 8) {
  Trajectory traj = gen_radial(nspokes, 2 * grid_n, true, {4e-6, 0.22, grid_n});
  return make_sense_model(synth_coil_maps(grid_n, ncoils), traj.coords,
                          GridShape(grid_n, grid_n));
}

}  // namespace

TEST_CASE("cg: identity converges in one iteration") {
  CVec b = random_image(32, 1);
  auto res = cg_solve([](const CVec& v) -> CVec { return v; }, b, 10, 1e-12);
  CHECK((res.x - b).norm() < 1e-12 * b.norm());
  CHECK(res.residuals.size() <= 2);
}

TEST_CASE("cg: diagonal system solved to machine precision") {
  const int n = 20;
  RVec d(n);
  for (int i = 0; i < n; ++i) d[i] = 1.0 + i * 0.37;
  CVec b = random_image(n, 2);
  auto res = cg_solve([&](const CVec& v) -> CVec { return d.asDiagonal() * v; }, b, n, 0.0);
  CVec exact = b.array() / d.array().cast<Cplx>();
  CHECK((res.x - exact).norm() / exact.norm() < 1e-10);
}

TEST_CASE("cg: residuals are non-increasing") {
  SenseModel m = radial_model(16, 3);
  CVec b = sense_adjoint(m, random_image(m.nsamples() * 3, 3));
  auto res = cg_solve([&](const CVec& v) -> CVec { return sense_normal(m, v) + 2.0 * v; }, b, 30,
                      1e-14);
  for (size_t i = 1; i < res.residuals.size(); ++i) {
    CHECK(res.residuals[i] <= res.residuals[i - 1] * (1 + 1e-12));
  }
}

TEST_CASE("cg: A'A + mu I system reaches 1e-6 within 30 iterations") {
  SenseModel m = radial_model(16, 4);
  CVec x_true = random_image(m.nvox(), 4);
  CVec b = sense_normal(m, x_true) + 2.0 * x_true;
  auto res = cg_solve([&](const CVec& v) -> CVec { return sense_normal(m, v) + 2.0 * v; }, b, 30,
                      1e-7);
  CHECK(res.residuals.back() < 1e-6);
}

TEST_CASE("cg: non-Hermitian operator detected") {
  CVec b = random_image(8, 5);
  auto skew = [](const CVec& v) -> CVec {
    CVec out = v;
    out[0] += Cplx(0, 1) * v[1] * 5.0;  // not Hermitian
    return out;
  };
  CHECK_THROWS_AS(cg_solve(skew, b, 5, 1e-10), NumericalError);
}

TEST_CASE("init_recon: huge lambda flattens the image") {
  SenseModel m = radial_model(16, 2);
  CVec x = random_image(m.nvox(), 6);
  CVec y = sense_forward(m, x);
  const double scale = normal_op_scale(m);
  CVec x0 = init_recon(m, y, 1e6 * scale, 60, 1e-12);
  // roughness dominates: nearly constant output
  const Cplx mean = x0.mean();
  CHECK((x0.array() - mean).abs().maxCoeff() < 1e-3 * std::abs(mean));
}

TEST_CASE("init_recon: fully sampled Cartesian coords, lambda=0 recovers x") {
  const int n = 16;
  SenseModel m = make_sense_model(synth_coil_maps(n, 3), cartesian_coords(n), GridShape(n, n));
  CVec x = random_image(m.nvox(), 7);
  CVec y = sense_forward(m, x);
  CVec x0 = init_recon(m, y, 0.0, 50, 1e-12);
  CHECK((x0 - x).norm() / x.norm() < 1e-4);
}

TEST_CASE("dc_update: mu -> inf returns z; consistent data is a fixed point") {
  SenseModel m = radial_model(12, 2);
  CVec x = random_image(m.nvox(), 8);
  CVec z = random_image(m.nvox(), 9);
  CVec y = sense_forward(m, x);

  CVec out = dc_update(m, y, z, 1e8 * normal_op_scale(m), 40, 1e-13);
  CHECK((out - z).norm() / z.norm() < 1e-4);

  CVec fixed = dc_update(m, y, x, 2.0, 40, 1e-13);
  CHECK((fixed - x).norm() / x.norm() < 1e-5);
}

TEST_CASE("dc_update: decreases data residual vs its z input") {
  SenseModel m = radial_model(16, 3);
  CVec x = random_image(m.nvox(), 10);
  CVec y = sense_forward(m, x);
  CVec z = random_image(m.nvox(), 11);
  CVec out = dc_update(m, y, z, 2.0, 30, 1e-10);
  CHECK((sense_forward(m, out) - y).norm() < (sense_forward(m, z) - y).norm());
}

TEST_CASE("dc_update optimality: gradient norm small at the output") {
  SenseModel m = radial_model(12, 2);
  CVec x = random_image(m.nvox(), 12);
  CVec y = sense_forward(m, x);
  CVec z = random_image(m.nvox(), 13);
  const double mu = 2.0;
  CVec out = dc_update(m, y, z, mu, 60, 1e-12);
  // gradient of ||Ax-y||^2 + mu||x-z||^2 at out
  CVec grad = sense_normal(m, out) - sense_adjoint(m, y) + mu * (out - z);
  CHECK(grad.norm() < 1e-5 * sense_adjoint(m, y).norm());
}

TEST_CASE("denoise: theta = 0 is the identity") {
  Wavelet2D w(GridShape(16, 16), 3);
  CVec z = random_image(256, 14);
  CHECK((denoise(w, z, RVec::Zero(w.nsubbands())) - z).norm() < 1e-12 * z.norm());
}

TEST_CASE("denoise: non-expansive over random pairs") {
  Wavelet2D w(GridShape(16, 16), 3);
  RVec theta = RVec::Constant(w.nsubbands(), 0.4);
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    CVec a = random_image(256, 1000 + trial);
    CVec b = random_image(256, 2000 + trial);
    CHECK((denoise(w, a, theta) - denoise(w, b, theta)).norm() <= (a - b).norm() * (1 + 1e-12));
  }
}

TEST_CASE("denoise: large thresholds kill pure noise") {
  Wavelet2D w(GridShape(32, 32), 3);
  CVec noise = random_image(1024, 16);
  RVec theta = RVec::Constant(w.nsubbands(), 50.0);
  theta[0] = 50.0;  // also squash the approximation band
  CVec out = denoise(w, noise, theta);
  CHECK(out.squaredNorm() < 0.01 * noise.squaredNorm());
}

TEST_CASE("wavelet: orthonormal round trip and Parseval") {
  Wavelet2D w(GridShape(24, 24), 3);  // 24 not divisible by 8 -> pad path
  CVec img = random_image(576, 17);
  CVec coef = w.analyze(img);
  CVec back = w.synthesize(coef);
  CHECK((back - img).norm() < 1e-12 * img.norm());

  Wavelet2D w2(GridShape(16, 16), 2);
  CVec img2 = random_image(256, 18);
  CHECK(std::abs(w2.analyze(img2).norm() - img2.norm()) < 1e-12 * img2.norm());
}

TEST_CASE("wavelet: adjoint pairs") {
  Wavelet2D w(GridShape(12, 12), 3);
  CVec img = random_image(144, 19);
  CVec coef = random_image(w.padded_grid().nvox(), 20);
  const Cplx lhs = w.analyze(img).dot(coef);
  const Cplx rhs = img.dot(w.analyze_adjoint(coef));
  CHECK(std::abs(lhs - rhs) < 1e-12 * img.norm() * coef.norm());

  CVec img2 = random_image(144, 21);
  const Cplx lhs2 = w.synthesize(coef).dot(img2);
  const Cplx rhs2 = coef.dot(w.synthesize_adjoint(img2));
  CHECK(std::abs(lhs2 - rhs2) < 1e-12 * img2.norm() * coef.norm());
}

TEST_CASE("unrolled_recon: n_blocks = 0 returns the initialization") {
  SenseModel m = radial_model(16, 2);
  CVec x = random_image(m.nvox(), 22);
  CVec y = sense_forward(m, x);
  UnrolledConfig cfg;
  cfg.n_blocks = 0;
  ReconResult res = unrolled_recon(m, y, cfg);
  CVec x0 = init_recon(m, y, cfg.init_lambda * normal_op_scale(m), cfg.cg_iters, cfg.cg_tol);
  CHECK((res.image - x0).norm() < 1e-12 * x0.norm());
}

TEST_CASE("unrolled_recon: deterministic and improves on x0 in a clean case") {
  const int n = 24;
  Trajectory traj = gen_radial(12, 2 * n, true, {4e-6, 0.22, n});
  SenseModel m = make_sense_model(synth_coil_maps(n, 4), traj.coords, GridShape(n, n));
  Dataset ds = gen_phantoms(1, n, 23);
  const CVec& x = ds.images[0];
  CVec y = sense_forward(m, x);

  UnrolledConfig cfg;
  cfg.n_blocks = 6;
  cfg.mu = 2.0;
  cfg.cg_iters = 6;
  cfg.denoiser_theta = RVec::Constant(10, 1e-3);
  cfg.denoiser_theta[0] = 0.0;

  ReconResult a = unrolled_recon(m, y, cfg);
  ReconResult b = unrolled_recon(m, y, cfg);
  CHECK((a.image - b.image).norm() == 0.0);
  CHECK(a.per_block_residuals.size() == 6);

  const double err0 = (a.x0 - x).norm();
  const double err = (a.image - x).norm();
  CHECK(err <= err0);
}

TEST_CASE("cs_recon: ratio 0 matches CG least squares") {
  const int n = 16;
  SenseModel m = make_sense_model(synth_coil_maps(n, 2), cartesian_coords(n), GridShape(n, n));
  CVec x = random_image(m.nvox(), 24);
  CVec y = sense_forward(m, x);
  CsResult cs = cs_recon(m, y, 0.0, 300);
  CVec ls = cg_solve([&](const CVec& v) -> CVec { return sense_normal(m, v); }, sense_adjoint(m, y), 50,
                     1e-13)
                .x;
  CHECK((cs.image - ls).norm() / ls.norm() < 1e-3);
}

TEST_CASE("cs_recon: objective decreases from iterate 5 to 50") {
  SenseModel m = radial_model(16, 3);
  Dataset ds = gen_phantoms(1, 16, 25);
  CVec y = sense_forward(m, ds.images[0]);
  CsResult cs = cs_recon(m, y, 1e-7, 50);
  REQUIRE(cs.objective.size() == 50);
  CHECK(cs.objective[49] < cs.objective[4]);
}
