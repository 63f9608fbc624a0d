#include <doctest.h>

#include "ktraj/config.hpp"

using namespace ktraj;

TEST_CASE("config: defaults mirror the acquisition protocol") {
  ExperimentConfig c;
  CHECK(c.geometry.dt == 4e-6);
  CHECK(c.geometry.grid_n == 320);
  CHECK(c.limits.gmax == 0.05);
  CHECK(c.limits.smax == 149.0);
  CHECK(c.recon.mu == 2.0);
  CHECK(c.recon.n_blocks == 6);
  CHECK(c.train.adam_betas[0] == 0.5);
  CHECK(c.train.adam_betas[1] == 0.999);
}

TEST_CASE("config: round-trips through JSON") {
  ExperimentConfig c;
  c.seed = 42;
  c.geometry.grid_n = 64;
  c.coils = 4;
  c.train.decim_schedule = {16, 8, 4};
  c.train.n_levels = 3;
  ExperimentConfig back = ExperimentConfig::from_json_text(c.to_json_text());
  CHECK(back.seed == 42);
  CHECK(back.geometry.grid_n == 64);
  CHECK(back.coils == 4);
  CHECK(back.train.decim_schedule == std::vector<int>{16, 8, 4});
}

TEST_CASE("config: unknown keys are rejected, nested included") {
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"geometry": {"grid": 64}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"train": {"lr": 0.1}})"), ConfigError);
}

TEST_CASE("config: invalid values fail validation before compute") {
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"geometry": {"grid_n": 4}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"init_traj": {"kind": "zigzag"}})"),
                  ConfigError);
  CHECK_THROWS_AS(
      ExperimentConfig::from_json_text(R"({"train": {"decim_schedule": [8, 16]}})"),
      ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"recon": {"init_mode": "warm"}})"),
                  ConfigError);
}

TEST_CASE("config: builds a consistent desk-scale experiment") {
  ExperimentConfig c;
  c.seed = 9;
  c.geometry.grid_n = 24;
  c.coils = 2;
  c.dataset.count = 6;
  c.init_traj.nshots = 4;
  c.init_traj.samples_per_shot = 48;
  Experiment ex = build_experiment(c);
  CHECK(ex.dataset.images.size() == 6);
  CHECK(ex.init_traj.nsamples() == 4 * 48);
  CHECK(ex.problem.smaps.rows() == 2);
  CHECK(ex.problem.grid.nvox() == 24 * 24);
  CHECK(ex.init_traj.grid_n == 24);
}

TEST_CASE("theta json round-trip") {
  namespace fs = std::filesystem;
  RVec theta = RVec::LinSpaced(10, 0.0, 0.9);
  const fs::path p = fs::temp_directory_path() / "ktraj_theta_test.json";
  save_theta_json(p, theta);
  RVec back = load_theta_json(p);
  CHECK((back - theta).cwiseAbs().maxCoeff() == 0.0);
  fs::remove(p);
}
