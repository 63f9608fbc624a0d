#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ktraj/train.hpp"

using namespace ktraj;

namespace {

struct Desk {
  Problem prob;
  Dataset ds;
  Trajectory init;
  TrainConfig cfg;

  explicit Desk(int grid_n = 24, int nimages = 10) {
    ds = gen_phantoms(nimages, grid_n, 31);
    init = gen_radial(4, 2 * grid_n, true, {4e-6, 0.22, grid_n});
    prob.smaps = synth_coil_maps(grid_n, 2);
    prob.grid = GridShape(grid_n, grid_n);
    prob.traj_meta = init;
    prob.recon.n_blocks = 2;
    prob.recon.mu = 2.0;
    prob.recon.cg_iters = 4;
    prob.recon.denoiser_theta = RVec::Constant(10, 1e-3);
    prob.noise_std_rel = 1e-3;

    cfg.n_levels = 2;
    cfg.epochs_per_level = 1;
    cfg.pretrain_epochs = 1;
    cfg.batch_size = 4;
    cfg.lr_omega = 1e-3;
    cfg.lr_theta = 1e-4;
    cfg.decim_schedule = {8, 4};
    cfg.seed = 77;
  }
};

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  RVec p = RVec::LinSpaced(5, 1.0, 5.0);
  RVec p0 = p;
  AdamState st;
  adam_step(p, RVec::Zero(5), st, 0.1, {0.5, 0.999});
  CHECK((p - p0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam: first step is -lr * g / (|g| + eps)") {
  RVec p = RVec::Zero(3);
  RVec g(3);
  g << 0.3, -2.0, 1e-9;
  AdamState st;
  adam_step(p, g, st, 0.01, {0.5, 0.999});
  for (int i = 0; i < 3; ++i) {
    const double expected = -0.01 * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(p[i] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("trainer: pretraining does not increase validation loss") {
  Desk desk;
  Trainer t(desk.prob, &desk.ds, desk.init, desk.cfg);
  const double before = t.validation_loss();
  t.pretrain();
  CHECK(t.validation_loss() <= before + 1e-12);
}

TEST_CASE("trainer: zero pretrain epochs leaves theta unchanged") {
  Desk desk;
  desk.cfg.pretrain_epochs = 0;
  Trainer t(desk.prob, &desk.ds, desk.init, desk.cfg);
  RVec theta0 = t.theta();
  t.pretrain();
  CHECK((t.theta() - theta0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit: zero total epochs returns the initialization unchanged") {
  Desk desk;
  desk.cfg.pretrain_epochs = 0;
  desk.cfg.epochs_per_level = 0;
  FitResult res = fit(desk.prob, desk.ds, desk.init, desk.cfg);
  CHECK((res.trajectory.coords - desk.init.coords).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trainer: level start refits within tolerance and resets c-moments") {
  Desk desk;
  Trainer t(desk.prob, &desk.ds, desk.init, desk.cfg);
  t.pretrain();
  t.step();  // triggers begin_level(0)
  CHECK(t.level() == 0);
  CHECK(t.spline().decim == 8);
  RMat back = materialize(t.spline());
  // refit happened before the first Adam update moved anything far
  CHECK((back - desk.init.coords).cwiseAbs().maxCoeff() < 2e-2);
}

TEST_CASE("trainer: deterministic across two identical runs") {
  Desk desk;
  Trainer a(desk.prob, &desk.ds, desk.init, desk.cfg);
  a.pretrain();
  a.run();
  Trainer b(desk.prob, &desk.ds, desk.init, desk.cfg);
  b.pretrain();
  b.run();
  CHECK((a.spline().coeffs - b.spline().coeffs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.theta() - b.theta()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.report().history.size() == b.report().history.size());
  for (size_t i = 0; i < a.report().history.size(); ++i) {
    CHECK(a.report().history[i].recon_loss == b.report().history[i].recon_loss);
  }
}

TEST_CASE("trainer: checkpoint round-trip resumes bit-exactly") {
  namespace fs = std::filesystem;
  Desk desk;
  Trainer a(desk.prob, &desk.ds, desk.init, desk.cfg);
  a.pretrain();
  for (int i = 0; i < 2; ++i) a.step();

  const fs::path ck = fs::temp_directory_path() / "ktraj_ckpt_test.bin";
  a.save_checkpoint(ck);
  Trainer b = Trainer::load_checkpoint(ck, desk.prob, &desk.ds);

  a.step();
  b.step();
  CHECK((a.spline().coeffs - b.spline().coeffs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.theta() - b.theta()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.global_step() == b.global_step());
  fs::remove(ck);
}

TEST_CASE("trainer: auto-calibrated penalty weights are positive and frozen") {
  Desk desk;
  desk.cfg.mu1 = -1;
  desk.cfg.mu2 = -1;
  Trainer t(desk.prob, &desk.ds, desk.init, desk.cfg);
  t.pretrain();
  t.step();
  const double mu1 = t.report().mu1;
  const double mu2 = t.report().mu2;
  CHECK(mu1 > 0);
  CHECK(mu2 > 0);
  for (int i = 0; i < 3; ++i) t.step();
  CHECK(t.report().mu1 == mu1);
  CHECK(t.report().mu2 == mu2);
}

TEST_CASE("fit: desk-scale run keeps the trajectory feasible and logs every step") {
  Desk desk;
  FitResult res = fit(desk.prob, desk.ds, desk.init, desk.cfg);
  CHECK(res.report.feasible);
  CHECK(res.report.final_penalty == 0.0);
  // pretrain 1 epoch (2 steps at batch 4 over 8 train) + 2 levels x 1 epoch
  const long spe = (8 + 3) / 4;
  CHECK(res.report.history.size() == static_cast<size_t>(3 * spe));
  for (const auto& r : res.report.history) {
    CHECK(std::isfinite(r.recon_loss));
  }
}

TEST_CASE("report: jsonl schema has one line per step with the expected keys") {
  namespace fs = std::filesystem;
  Desk desk;
  FitResult res = fit(desk.prob, desk.ds, desk.init, desk.cfg);
  const fs::path rp = fs::temp_directory_path() / "ktraj_report_test.jsonl";
  write_report_jsonl(rp, res.report);
  std::ifstream in(rp);
  std::string line;
  size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    for (const char* key : {"\"step\"", "\"level\"", "\"epoch\"", "\"recon_loss\"",
                            "\"g_penalty\"", "\"s_penalty\"", "\"lr_omega\"", "\"lr_theta\""}) {
      CHECK(line.find(key) != std::string::npos);
    }
  }
  CHECK(lines == res.report.history.size());
  fs::remove(rp);
}
