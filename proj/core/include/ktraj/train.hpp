#pragma once

#include <filesystem>
#include <optional>

#include "ktraj/grad.hpp"

namespace ktraj {

struct TrainConfig {
  int n_levels = 3;
  int epochs_per_level = 2;
  int pretrain_epochs = 2;
  int batch_size = 4;
  double lr_omega = 1e-3;
  double lr_theta = 1e-5;
  std::array<double, 2> adam_betas{0.5, 0.999};
  double mu1 = -1;  // < 0: auto-calibrated at step 0 (see Trainer)
  double mu2 = -1;
  std::vector<int> decim_schedule{16, 8, 4};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Standard Adam with bias correction; eps 1e-8. State is per parameter
/// group; lr varies per step (linear decay handled by the caller).
struct AdamState {
  RVec m;
  RVec v;
  long t = 0;
};
void adam_step(RVec& params, const RVec& grad, AdamState& state, double lr,
               std::array<double, 2> betas, double eps = 1e-8);

struct StepRecord {
  long step = 0;
  int level = -1;  // -1 during pretraining
  int epoch = 0;
  double recon_loss = 0;
  double g_penalty = 0;
  double s_penalty = 0;
  double lr_omega = 0;
  double lr_theta = 0;
};

struct FitReport {
  std::vector<StepRecord> history;
  double val_metric_initial = 0;  // validation loss of the initial state
  double val_metric_final = 0;
  double final_penalty = 0;
  bool feasible = false;  // final trajectory passes the hard penalty == 0 check
  double mu1 = 0, mu2 = 0;  // resolved (possibly auto-calibrated) weights
};

/// Multi-level joint optimization of spline coefficients and denoiser
/// thresholds (Adam, per-level linearly decaying step sizes). Deterministic
/// given (config, dataset, problem); checkpoints resume bit-exactly.
class Trainer {
 public:
  Trainer(Problem prob, const Dataset* dataset, Trajectory init_traj, TrainConfig cfg);

  /// Theta-only warm-up on the fixed initial trajectory; keeps the
  /// best-validation theta.
  void pretrain();

  /// One mini-batch Adam update. Returns false when all levels are done.
  bool step();

  /// pretrain + all levels.
  void run();

  Trajectory trajectory() const;           // materialized current trajectory
  const SplineParam& spline() const { return spline_; }
  const RVec& theta() const { return theta_; }
  const FitReport& report() const { return report_; }
  int level() const { return level_; }
  long global_step() const { return global_step_; }

  /// Validation loss (recon term only) of (current spline, current theta).
  double validation_loss();

  /// Theta-only training on an arbitrary fixed trajectory (used for
  /// baseline comparisons); returns the best-validation theta.
  static RVec train_theta_only(const Problem& prob, const Dataset& dataset,
                               const Trajectory& traj, const TrainConfig& cfg, int epochs);

  void save_checkpoint(const std::filesystem::path& path) const;
  static Trainer load_checkpoint(const std::filesystem::path& path, Problem prob,
                                 const Dataset* dataset);

 private:
  void begin_level(int level);
  std::vector<int> epoch_order(int level, int epoch) const;
  long steps_per_epoch() const;
  long level_total_steps() const;
  Problem problem_with_current_theta() const;
  TapeGradient batch_gradient(const std::vector<int>& ids, long step_index, GradFlags flags);
  void calibrate_penalty_weights();

  Problem prob_;
  const Dataset* dataset_;
  Trajectory init_traj_;
  TrainConfig cfg_;

  SplineParam spline_;
  RVec theta_;
  AdamState adam_c_;
  AdamState adam_theta_;
  int level_ = -1;          // -1: before/in pretraining
  int epoch_in_level_ = 0;
  long step_in_level_ = 0;
  long global_step_ = 0;
  bool mu_calibrated_ = false;
  FitReport report_;
};

struct FitResult {
  Trajectory trajectory;
  RVec theta;
  FitReport report;
};

/// Algorithm pipeline in one call: pretrain, multi-level optimization,
/// final feasibility check.
FitResult fit(const Problem& prob, const Dataset& dataset, const Trajectory& init_traj,
              const TrainConfig& cfg);

/// JSON-lines metric report (one object per step).
void write_report_jsonl(const std::filesystem::path& path, const FitReport& report);

}  // namespace ktraj
