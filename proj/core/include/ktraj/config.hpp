#pragma once

#include <filesystem>
#include <string>

#include "ktraj/train.hpp"

namespace ktraj {

/// One config file drives a full experiment; CLI flags override fields.
/// Parsing is strict: unknown keys anywhere are rejected.
struct ExperimentConfig {
  int schema_version = 1;
  std::uint64_t seed = 0;

  TrajGeometry geometry;          // dt, fov, grid_n
  HardwareLimits limits;
  int coils = 8;
  double noise_std_rel = 1e-3;

  struct InitTraj {
    std::string kind = "radial";  // radial | spiral | file
    int nshots = 16;
    int samples_per_shot = 1280;
    bool inout = true;
    double density = 1.0;
    std::string file;  // for kind == "file"
  } init_traj;

  struct DatasetSpec {
    std::string source = "phantoms";  // phantoms | dir
    int count = 64;
    std::string dir;
  } dataset;

  UnrolledConfig recon;
  TrainConfig train;
  std::string output_dir = "out";

  static ExperimentConfig from_json_file(const std::filesystem::path& path);
  static ExperimentConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
  void validate() const;
};

/// Assembled experiment pieces built from one config.
struct Experiment {
  ExperimentConfig config;
  Dataset dataset;
  Trajectory init_traj;
  Problem problem;
};

Experiment build_experiment(const ExperimentConfig& cfg);

/// Builds just the initial trajectory named by the config.
Trajectory build_init_trajectory(const ExperimentConfig& cfg);

/// theta vector file: {"theta": [..]}.
void save_theta_json(const std::filesystem::path& path, const RVec& theta);
RVec load_theta_json(const std::filesystem::path& path);

}  // namespace ktraj
