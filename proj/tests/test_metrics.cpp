#include <doctest.h>

#include <random>

#include "ktraj/metrics.hpp"
#include "ktraj/mrisys.hpp"

using namespace ktraj;

namespace {

RMat cartesian_full(int n) {
  RMat c(n * n, 2);
  for (int ix = 0; ix < n; ++ix) {
    for (int iy = 0; iy < n; ++iy) {
      c(ix * n + iy, 0) = 2 * M_PI * (ix - n / 2) / n;
      c(ix * n + iy, 1) = 2 * M_PI * (iy - n / 2) / n;
    }
  }
  return c;
}

}  // namespace

TEST_CASE("psf: fully sampled Cartesian grid has ~1 pixel FWHM and a centered peak") {
  const int n = 32;
  Trajectory traj;
  traj.coords = cartesian_full(n);
  traj.nshots = 1;
  traj.samples_per_shot = n * n;
  PsfReport rep = psf(traj, n);
  CHECK(rep.fwhm_pixels == doctest::Approx(1.0).epsilon(0.2));
  // peak at the DC pixel
  int peak_idx = 0;
  rep.psf.cwiseAbs().maxCoeff(&peak_idx);
  CHECK(peak_idx == (n / 2) * n + n / 2);
  CHECK(rep.sidelobe_energy_ratio < 0.05);
}

TEST_CASE("psf: rotating the trajectory by 90 degrees leaves FWHM unchanged") {
  Trajectory traj = gen_radial(13, 96, true, {4e-6, 0.22, 48});
  PsfReport a = psf(traj, 48);
  Trajectory rot = traj;
  rot.coords.col(0) = -traj.coords.col(1);
  rot.coords.col(1) = traj.coords.col(0);
  PsfReport b = psf(rot, 48);
  CHECK(std::abs(a.fwhm_pixels - b.fwhm_pixels) < 1e-6);
}

TEST_CASE("psf: a DC-containing trajectory has nonzero peak; dcf mode runs") {
  Trajectory traj = gen_radial(8, 64, true, {4e-6, 0.22, 32});
  PsfReport plain = psf(traj, 32);
  CHECK(plain.psf.cwiseAbs().maxCoeff() == doctest::Approx(1.0));

  RVec dcf(traj.nsamples());
  for (int j = 0; j < traj.nsamples(); ++j) dcf[j] = traj.coords.row(j).norm() + 1e-3;
  PsfReport ramp = psf(traj, 32, &dcf);
  CHECK(ramp.fwhm_pixels > 0);
  CHECK(ramp.fwhm_pixels <= plain.fwhm_pixels + 1e-9);  // ramp sharpens the main lobe
}

TEST_CASE("ssim: identity gives 1, psnr caps at 99 dB") {
  Dataset ds = gen_phantoms(1, 24, 3);
  const CVec& x = ds.images[0];
  CHECK(ssim(x, x, GridShape(24, 24)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(psnr(x, x, GridShape(24, 24)) == 99.0);
}

TEST_CASE("ssim/psnr: frozen golden values from an independent reference") {
  // Pair: phantom magnitude (seed 5) + uniform noise at 10% of range
  // (mt19937_64 seed 99). Golden numbers computed once with an independent
  // numpy implementation of the same windowed-statistics algorithm.
  Dataset ds = gen_phantoms(1, 32, 5);
  RVec refm(1024);
  double range = 0;
  for (int k = 0; k < 1024; ++k) {
    refm[k] = std::abs(ds.images[0][k]);
    range = std::max(range, refm[k]);
  }
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 0.1 * range);
  CVec ref(1024), x(1024);
  for (int k = 0; k < 1024; ++k) {
    ref[k] = refm[k];
    x[k] = refm[k] + u(rng);
  }
  CHECK(ssim(x, ref, GridShape(32, 32)) ==
        doctest::Approx(0.321839961140279).epsilon(1e-10));
  CHECK(psnr(x, ref, GridShape(32, 32)) ==
        doctest::Approx(24.614353152578424).epsilon(1e-10));
}

TEST_CASE("ssim bounded in [0,1] on magnitudes; psnr decreases with noise") {
  Dataset ds = gen_phantoms(1, 32, 7);
  const CVec& ref = ds.images[0];
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  CVec small = ref, big = ref;
  for (int k = 0; k < ref.size(); ++k) {
    const double n = g(rng);
    small[k] += 0.01 * n;
    big[k] += 0.2 * n;
  }
  const double s_small = ssim(small, ref, GridShape(32, 32));
  const double s_big = ssim(big, ref, GridShape(32, 32));
  CHECK(s_small > 0.0);
  CHECK(s_small <= 1.0);
  CHECK(s_big < s_small);
  CHECK(psnr(big, ref, GridShape(32, 32)) < psnr(small, ref, GridShape(32, 32)));
}

TEST_CASE("hermitian overlap: in-out radial ~1, half-line ~0, rotation invariant") {
  Trajectory radial = gen_radial(8, 64, true, {4e-6, 0.22, 32});
  const double eps = 1e-6;
  CHECK(hermitian_overlap(radial, eps) > 0.95);

  // center-out single half line: only DC is self-symmetric
  Trajectory half = gen_radial(1, 64, false, {4e-6, 0.22, 32});
  CHECK(hermitian_overlap(half, 1e-9) < 0.05);

  Trajectory rot = radial;
  rot.coords.col(0) = -radial.coords.col(1);
  rot.coords.col(1) = radial.coords.col(0);
  CHECK(hermitian_overlap(rot, eps) == hermitian_overlap(radial, eps));
}

TEST_CASE("hermitian overlap stays within [0, 1]") {
  Trajectory spiral = gen_spiral(3, 1200, 1.0, {4e-6, 0.22, 48});
  const double v = hermitian_overlap(spiral, 0.01);
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);
}
