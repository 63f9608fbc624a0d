#include <doctest.h>

#include <filesystem>
#include <random>

#include "ktraj/io.hpp"
#include "ktraj/mrisys.hpp"
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

SenseModel small_model(int grid_n, int ncoils, double noise_std = 0.0) {
  Trajectory traj = gen_radial(6, 2 * grid_n, true, {4e-6, 0.22, grid_n});
  return make_sense_model(synth_coil_maps(grid_n, ncoils), traj.coords,
                          GridShape(grid_n, grid_n), {}, noise_std);
}

}  // namespace

TEST_CASE("single constant coil reduces to plain NUFFT (up to the unit-spectrum scale)") {
  SenseModel m = small_model(16, 1);
  CVec x = random_image(m.nvox(), 1);
  CVec y = sense_forward(m, x);
  CHECK((y - m.op_scale * nufft_forward(*m.plan, x)).norm() == 0.0);
  // the normalization puts the normal-operator spectral peak at 1
  CHECK(normal_op_scale(m) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sense adjoint dot-product test, 4 coils") {
  SenseModel m = small_model(16, 4);
  CVec x = random_image(m.nvox(), 2);
  CVec y = random_image(m.nsamples() * m.ncoils(), 3);
  const Cplx lhs = sense_forward(m, x).dot(y);
  const Cplx rhs = x.dot(sense_adjoint(m, y));
  CHECK(std::abs(lhs - rhs) / (sense_forward(m, x).norm() * y.norm()) < 1e-5);
}

TEST_CASE("zero image gives zero data; forward is linear") {
  SenseModel m = small_model(12, 3);
  CHECK(sense_forward(m, CVec::Zero(m.nvox())).norm() == 0.0);
  CVec a = random_image(m.nvox(), 4), b = random_image(m.nvox(), 5);
  CVec lhs = sense_forward(m, 2.0 * a + Cplx(0, 3) * b);
  CVec rhs = 2.0 * sense_forward(m, a) + Cplx(0, 3) * sense_forward(m, b);
  CHECK((lhs - rhs).norm() / rhs.norm() < 1e-13);
}

TEST_CASE("sense_normal matches adjoint-of-forward") {
  SenseModel m = small_model(16, 4);
  CVec x = random_image(m.nvox(), 6);
  CVec direct = sense_adjoint(m, sense_forward(m, x));
  CVec fast = sense_normal(m, x);
  CHECK((fast - direct).norm() / direct.norm() < 1e-4);
}

TEST_CASE("simulate_acquisition: exact without noise, reproducible with") {
  SenseModel m = small_model(12, 2, 0.0);
  CVec x = random_image(m.nvox(), 7);
  CHECK((simulate_acquisition(m, x, 99) - sense_forward(m, x)).norm() == 0.0);

  m.noise_std = 0.05;
  CVec y1 = simulate_acquisition(m, x, 42);
  CVec y2 = simulate_acquisition(m, x, 42);
  CVec y3 = simulate_acquisition(m, x, 43);
  CHECK((y1 - y2).norm() == 0.0);
  CHECK((y1 - y3).norm() > 0.0);
}

TEST_CASE("noise variance matches noise_std^2 within 5%") {
  // x = 0 so y is pure noise; >= 1e5 complex samples via repeated seeds
  SenseModel m = small_model(16, 4, 0.3);
  CVec x = CVec::Zero(m.nvox());
  double sum2 = 0;
  long count = 0;
  for (int rep = 0; rep < 140; ++rep) {
    CVec y = simulate_acquisition(m, x, 1000 + rep);
    sum2 += y.squaredNorm();
    count += y.size();
  }
  REQUIRE(count >= 100000);
  const double var = sum2 / count;
  CHECK(var == doctest::Approx(0.3 * 0.3).epsilon(0.05));
}

TEST_CASE("coil maps: RSS = 1, single coil constant, band-limited spectrum") {
  CMat maps = synth_coil_maps(32, 6);
  for (int k = 0; k < maps.cols(); ++k) {
    CHECK(std::abs(std::sqrt(maps.col(k).cwiseAbs2().sum()) - 1.0) < 1e-9);
  }
  CMat one = synth_coil_maps(32, 1);
  CHECK((one.array() - Cplx(1, 0)).abs().maxCoeff() == 0.0);

  // spectrum beyond 10% of Nyquist below 1e-3 of peak (DFT via oracle adjoint)
  const GridShape g(32, 32);
  for (int c = 0; c < 6; ++c) {
    CVec img = maps.row(c).transpose();
    // on-grid spectrum: exact DFT at integer frequencies
    RMat freqs(g.nvox(), 2);
    for (int k = 0; k < g.nvox(); ++k) {
      freqs(k, 0) = 2 * M_PI * centered_offset(g, k, 0) / 32.0;
      freqs(k, 1) = 2 * M_PI * centered_offset(g, k, 1) / 32.0;
    }
    CVec spec = dft_oracle(freqs, g, img);
    const double peak = spec.cwiseAbs().maxCoeff();
    double out_of_band = 0;
    for (int k = 0; k < g.nvox(); ++k) {
      const double fx = centered_offset(g, k, 0) / 32.0;
      const double fy = centered_offset(g, k, 1) / 32.0;
      if (std::sqrt(fx * fx + fy * fy) > 0.05) {  // 10% of Nyquist (0.5)
        out_of_band = std::max(out_of_band, std::abs(spec[k]));
      }
    }
    CHECK(out_of_band < 1e-3 * peak);
  }
}

TEST_CASE("phantoms: deterministic under seed, median-1 normalization") {
  Dataset a = gen_phantoms(4, 32, 7);
  Dataset b = gen_phantoms(4, 32, 7);
  Dataset c = gen_phantoms(4, 32, 8);
  for (int i = 0; i < 4; ++i) CHECK((a.images[i] - b.images[i]).norm() == 0.0);
  CHECK((a.images[0] - c.images[0]).norm() > 0.0);

  for (const auto& img : a.images) {
    const double maxmag = img.cwiseAbs().maxCoeff();
    std::vector<std::uint8_t> mask(img.size());
    for (Eigen::Index k = 0; k < img.size(); ++k) mask[k] = std::abs(img[k]) > 0.05 * maxmag;
    CHECK(std::abs(median_magnitude(img, mask) - 1.0) < 1e-6);
  }
}

TEST_CASE("crop_or_pad keeps the central region / zero-pads borders") {
  const GridShape g(8, 8);
  CVec img(64);
  for (int k = 0; k < 64; ++k) img[k] = Cplx(k, 0);
  CVec cropped = crop_or_pad(img, g, 4);
  // center of 8x8 (offsets -2..1 around index 4) -> rows 2..5, cols 2..5
  CHECK(cropped[0] == img[2 * 8 + 2]);
  CHECK(cropped[15] == img[5 * 8 + 5]);

  CVec padded = crop_or_pad(img, g, 12);
  CHECK(padded[0 * 12 + 0] == Cplx(0, 0));
  CHECK(padded[(2 + 0) * 12 + 2] == img[0]);  // original corner lands at (2,2)
  CHECK(padded.sum() == img.sum());
}

TEST_CASE("image directory ingestion round-trips through crop and normalize") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ktraj_imgdir_test";
  fs::create_directories(dir);
  Dataset src = gen_phantoms(3, 24, 11);
  for (int i = 0; i < 3; ++i) {
    save_image_f32(dir / ("img" + std::to_string(i) + ".f32"), src.images[i], GridShape(24, 24));
  }
  Dataset loaded = load_images(dir, 20);
  CHECK(loaded.images.size() == 3);
  for (const auto& img : loaded.images) {
    CHECK(img.size() == 400);
    CHECK(img.allFinite());
  }
  // cropping is exact on the overlapping region (up to f32 quantization and renormalization)
  CVec direct = normalize_median(crop_or_pad(src.images[0], GridShape(24, 24), 20));
  CHECK((loaded.images[0] - direct).norm() / direct.norm() < 1e-6);
  fs::remove_all(dir);
}
