#include <benchmark/benchmark.h>

#include <random>

#include "ktraj/grad.hpp"
#include "ktraj/recon.hpp"

using namespace ktraj;

namespace {

CVec random_image(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  CVec x(n);
  for (int k = 0; k < n; ++k) x[k] = Cplx(g(rng), g(rng));
  return x;
}

struct Fixture {
  Trajectory traj = gen_radial(8, 128, true, {4e-6, 0.22, 64});
  SenseModel model =
      make_sense_model(synth_coil_maps(64, 4), traj.coords, GridShape(64, 64));
  CVec x = random_image(64 * 64, 1);
  CVec y = sense_forward(model, x);
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

static void BM_NufftForward(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(nufft_forward(*f.model.plan, f.x));
}
BENCHMARK(BM_NufftForward);

static void BM_NufftAdjoint(benchmark::State& state) {
  auto& f = fixture();
  CVec d = random_image(f.model.nsamples(), 2);
  for (auto _ : state) benchmark::DoNotOptimize(nufft_adjoint(*f.model.plan, d));
}
BENCHMARK(BM_NufftAdjoint);

static void BM_NormalViaToeplitz(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(sense_normal(f.model, f.x));
}
BENCHMARK(BM_NormalViaToeplitz);

static void BM_NormalViaAdjointForward(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(sense_adjoint(f.model, sense_forward(f.model, f.x)));
  }
}
BENCHMARK(BM_NormalViaAdjointForward);

static void BM_UnrolledRecon(benchmark::State& state) {
  auto& f = fixture();
  UnrolledConfig cfg;
  cfg.n_blocks = 6;
  cfg.cg_iters = 6;
  cfg.denoiser_theta = RVec::Constant(10, 1e-3);
  for (auto _ : state) benchmark::DoNotOptimize(unrolled_recon(f.model, f.y, cfg));
}
BENCHMARK(BM_UnrolledRecon);

static void BM_TrajectoryJacobianVjp(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(sense_jac_adjoint(f.model, f.x, f.y));
}
BENCHMARK(BM_TrajectoryJacobianVjp);

static void BM_SplineRefit(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(refit(f.traj.coords, 8, 128, 8));
}
BENCHMARK(BM_SplineRefit);

static void BM_Wavelet3Level(benchmark::State& state) {
  Wavelet2D w(GridShape(64, 64), 3);
  CVec img = random_image(64 * 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(w.synthesize(w.analyze(img)));
}
BENCHMARK(BM_Wavelet3Level);

BENCHMARK_MAIN();
