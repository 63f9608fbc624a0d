#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>

#include "ktraj/config.hpp"
#include "ktraj/io.hpp"
#include "ktraj/metrics.hpp"
#include "ktraj/recon.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ktraj;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitNumerical = 4;

struct GenTrajArgs {
  std::string kind = "radial";
  int shots = 16;
  int samples = 1280;
  bool inout = true;
  double density = 1.0;
  double dt = 4e-6, fov = 0.22;
  int grid_n = 320;
  double gmax = 0.05, smax = 149.0, gamma = 42.576e6;
  std::string out = "traj.ktrj";
};

int cmd_gen_traj(const GenTrajArgs& a) {
  TrajGeometry geo{a.dt, a.fov, a.grid_n};
  HardwareLimits limits{a.gmax, a.smax, a.gamma, a.dt};
  Trajectory traj;
  if (a.kind == "radial") {
    traj = gen_radial(a.shots, a.samples, a.inout, geo);
  } else if (a.kind == "spiral") {
    traj = gen_spiral(a.shots, a.samples, a.density, geo, limits);
  } else {
    throw ConfigError("gen-traj: kind must be radial or spiral");
  }
  PenaltyResult pen = penalty(traj, limits, 1.0, 1.0);
  if (pen.value > 0) {
    std::cerr << "generated trajectory violates limits: gradient excess " << pen.g_term
              << " rad/px, slew excess " << pen.s_term << " rad/px\n";
    return kExitInfeasible;
  }
  save_trajectory(a.out, traj);
  std::cout << "wrote " << a.out << ": " << traj.nshots << " shots x " << traj.samples_per_shot
            << " samples, grid " << traj.grid_n << ", dt " << traj.dt << " s, penalty 0\n";
  return kExitOk;
}

int cmd_optimize(const std::string& config_path, const std::string& resume,
                 std::string out_dir_override, std::uint64_t seed_override, bool has_seed) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
  if (has_seed) {
    cfg.seed = seed_override;
    cfg.train.seed = seed_override;
  }
  if (!out_dir_override.empty()) cfg.output_dir = out_dir_override;
  Experiment ex = build_experiment(cfg);
  fs::create_directories(cfg.output_dir);

  FitResult res;
  if (!resume.empty()) {
    Trainer t = Trainer::load_checkpoint(resume, ex.problem, &ex.dataset);
    t.run();
    res.trajectory = t.trajectory();
    res.theta = t.theta();
    res.report = t.report();
    res.report.val_metric_final = t.validation_loss();
    PenaltyResult pen = penalty(res.trajectory, ex.problem.limits, 1.0, 1.0);
    res.report.final_penalty = pen.value;
    res.report.feasible = pen.value == 0.0;
  } else {
    Trainer t(ex.problem, &ex.dataset, ex.init_traj, cfg.train);
    t.pretrain();
    // keep a checkpoint at every level boundary, final one at the end
    while (t.step()) {
    }
    t.save_checkpoint(fs::path(cfg.output_dir) / "checkpoint.bin");
    res.trajectory = t.trajectory();
    res.theta = t.theta();
    res.report = t.report();
    res.report.val_metric_final = t.validation_loss();
    PenaltyResult pen = penalty(res.trajectory, ex.problem.limits, 1.0, 1.0);
    res.report.final_penalty = pen.value;
    res.report.feasible = pen.value == 0.0;
  }

  save_trajectory(fs::path(cfg.output_dir) / "trajectory.ktrj", res.trajectory);
  save_theta_json(fs::path(cfg.output_dir) / "theta.json", res.theta);
  write_report_jsonl(fs::path(cfg.output_dir) / "report.jsonl", res.report);

  json summary;
  summary["feasible"] = res.report.feasible;
  summary["final_penalty"] = res.report.final_penalty;
  summary["val_metric_initial"] = res.report.val_metric_initial;
  summary["val_metric_final"] = res.report.val_metric_final;
  summary["mu1"] = res.report.mu1;
  summary["mu2"] = res.report.mu2;
  summary["steps"] = res.report.history.size();
  atomic_write_file(fs::path(cfg.output_dir) / "summary.json", summary.dump(2) + "\n");

  std::cout << "optimize done: " << res.report.history.size() << " steps, final penalty "
            << res.report.final_penalty << (res.report.feasible ? " (feasible)" : " (INFEASIBLE)")
            << ", outputs in " << cfg.output_dir << "\n";
  return res.report.feasible ? kExitOk : kExitInfeasible;
}

struct ReconArgs {
  std::string method = "unn";
  std::string traj_path;
  std::string config_path;
  std::string theta_path;
  int index = 0;
  std::string split = "test";
  std::string out_prefix = "recon";
};

int cmd_reconstruct(const ReconArgs& a) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(a.config_path);
  Experiment ex = build_experiment(cfg);
  Trajectory traj = a.traj_path.empty() ? ex.init_traj : load_trajectory(a.traj_path);

  const std::vector<int>& split = a.split == "train"  ? ex.dataset.train
                                  : a.split == "val" ? ex.dataset.val
                                                     : ex.dataset.test;
  if (split.empty()) throw ConfigError("reconstruct: requested split is empty");
  if (a.index < 0 || a.index >= static_cast<int>(split.size())) {
    throw ConfigError("reconstruct: image index out of range");
  }
  const CVec& x = ex.dataset.images[split[a.index]];

  SenseModel model = make_sense_model(ex.problem.smaps, traj.coords, ex.problem.grid,
                                      ex.problem.nufft_opts);
  CVec y_clean = sense_forward(model, x);
  SenseModel noisy = model;
  noisy.noise_std = cfg.noise_std_rel * y_clean.cwiseAbs().mean();
  CVec y = simulate_acquisition(noisy, x, mix_seed(cfg.seed, 0xc1f0, split[a.index]));

  UnrolledConfig rcfg = cfg.recon;
  if (!a.theta_path.empty()) rcfg.denoiser_theta = load_theta_json(a.theta_path);

  CVec image;
  json metrics;
  if (a.method == "unn") {
    ReconResult rr = unrolled_recon(model, y, rcfg);
    image = rr.image;
    metrics["per_block_residuals"] = rr.per_block_residuals;
  } else if (a.method == "init") {
    image = init_recon(model, y, rcfg.init_lambda * normal_op_scale(model), rcfg.cg_iters,
                       rcfg.cg_tol);
  } else if (a.method == "cs") {
    CsResult cs = cs_recon(model, y, 1e-7, 50, rcfg.wavelet_levels);
    image = cs.image;
    metrics["objective_final"] = cs.objective.back();
  } else {
    throw ConfigError("reconstruct: method must be unn, cs, or init");
  }

  const GridShape grid = ex.problem.grid;
  save_image_f32(a.out_prefix + ".f32", image, grid);
  metrics["method"] = a.method;
  metrics["ssim"] = ssim(image, x, grid);
  metrics["psnr"] = psnr(image, x, grid);
  atomic_write_file(a.out_prefix + "_metrics.json", metrics.dump(2) + "\n");
  std::cout << a.method << " reconstruction: ssim " << metrics["ssim"] << ", psnr "
            << metrics["psnr"] << " dB -> " << a.out_prefix << ".f32\n";
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& traj_path,
             const std::string& theta_path, const std::string& method,
             const std::string& out_path) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
  Experiment ex = build_experiment(cfg);
  Trajectory traj = traj_path.empty() ? ex.init_traj : load_trajectory(traj_path);
  SenseModel model = make_sense_model(ex.problem.smaps, traj.coords, ex.problem.grid,
                                      ex.problem.nufft_opts);
  UnrolledConfig rcfg = cfg.recon;
  if (!theta_path.empty()) rcfg.denoiser_theta = load_theta_json(theta_path);

  std::vector<double> ssims, psnrs;
  for (int idx : ex.dataset.test) {
    const CVec& x = ex.dataset.images[idx];
    CVec y_clean = sense_forward(model, x);
    SenseModel noisy = model;
    noisy.noise_std = cfg.noise_std_rel * y_clean.cwiseAbs().mean();
    CVec y = simulate_acquisition(noisy, x, mix_seed(cfg.seed, 0xc1f0, idx));
    CVec image;
    if (method == "unn") {
      image = unrolled_recon(model, y, rcfg).image;
    } else if (method == "init") {
      image = init_recon(model, y, rcfg.init_lambda * normal_op_scale(model), rcfg.cg_iters,
                         rcfg.cg_tol);
    } else if (method == "cs") {
      image = cs_recon(model, y, 1e-7, 50, rcfg.wavelet_levels).image;
    } else {
      throw ConfigError("eval: method must be unn, cs, or init");
    }
    ssims.push_back(ssim(image, x, ex.problem.grid));
    psnrs.push_back(psnr(image, x, ex.problem.grid));
  }
  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= v.size();
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    return std::pair<double, double>(mean, std::sqrt(var / v.size()));
  };
  auto [sm, ss] = mean_std(ssims);
  auto [pm, ps] = mean_std(psnrs);
  std::cout << "method  SSIM (mean+/-std)    PSNR dB (mean+/-std)   n=" << ssims.size() << "\n";
  std::cout << method << "  " << sm << " +/- " << ss << "   " << pm << " +/- " << ps << "\n";

  if (!out_path.empty()) {
    json j;
    j["method"] = method;
    j["n"] = ssims.size();
    j["ssim_mean"] = sm;
    j["ssim_std"] = ss;
    j["psnr_mean"] = pm;
    j["psnr_std"] = ps;
    j["ssim"] = ssims;
    j["psnr"] = psnrs;
    atomic_write_file(out_path, j.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_psf(const std::string& traj_path, int grid_n, const std::string& out_prefix,
            const std::string& dcf_mode, int angles) {
  Trajectory traj = load_trajectory(traj_path);
  if (grid_n == 0) grid_n = traj.grid_n;
  std::optional<RVec> dcf;
  if (dcf_mode == "ramp") {
    RVec w(traj.nsamples());
    for (int j = 0; j < traj.nsamples(); ++j) w[j] = traj.coords.row(j).norm();
    dcf = w;
  } else if (dcf_mode != "none") {
    throw ConfigError("psf: --dcf must be none or ramp");
  }
  PsfReport rep = psf(traj, grid_n, dcf ? &*dcf : nullptr, angles);

  json j;
  j["fwhm_pixels"] = rep.fwhm_pixels;
  j["sidelobe_energy_ratio"] = rep.sidelobe_energy_ratio;
  j["grid_n"] = grid_n;
  j["nangles"] = angles;
  j["dcf"] = dcf_mode;
  atomic_write_file(out_prefix + ".json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv.precision(10);
  csv << "angle_deg";
  for (int r = 0; r < rep.radii.size(); ++r) csv << ",r" << rep.radii[r];
  csv << "\n";
  for (int a = 0; a < rep.profiles.rows(); ++a) {
    csv << 360.0 * a / rep.profiles.rows();
    for (int r = 0; r < rep.profiles.cols(); ++r) csv << ',' << rep.profiles(a, r);
    csv << "\n";
  }
  atomic_write_file(out_prefix + "_profiles.csv", csv.str());
  std::cout << "psf: fwhm " << rep.fwhm_pixels << " px, sidelobe energy ratio "
            << rep.sidelobe_energy_ratio << " -> " << out_prefix << ".json\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"k-space trajectory optimization and unrolled reconstruction toolkit"};
  app.require_subcommand(1);

  GenTrajArgs gt;
  auto* gen = app.add_subcommand("gen-traj", "generate a radial or spiral trajectory file");
  gen->add_option("--kind", gt.kind, "radial|spiral")->check(CLI::IsMember({"radial", "spiral"}));
  gen->add_option("--shots", gt.shots, "number of shots/spokes");
  gen->add_option("--samples", gt.samples, "samples per shot");
  gen->add_flag("--inout,!--no-inout", gt.inout, "in-out spokes (radial)");
  gen->add_option("--density", gt.density, "spiral density exponent");
  gen->add_option("--dt", gt.dt, "sample/raster time in s");
  gen->add_option("--fov", gt.fov, "field of view in m");
  gen->add_option("--grid-n", gt.grid_n, "target matrix size");
  gen->add_option("--gmax", gt.gmax, "max gradient in T/m");
  gen->add_option("--smax", gt.smax, "max slew in T/m/s");
  gen->add_option("--gamma", gt.gamma, "gyromagnetic ratio / 2pi in Hz/T");
  gen->add_option("--out", gt.out, "output .ktrj path")->required();

  std::string opt_config, opt_resume, opt_outdir;
  std::uint64_t opt_seed = 0;
  auto* opt = app.add_subcommand("optimize", "joint trajectory + denoiser optimization");
  opt->add_option("--config", opt_config, "experiment config JSON")->required();
  opt->add_option("--resume", opt_resume, "checkpoint to resume from");
  opt->add_option("--out-dir", opt_outdir, "override config output_dir");
  auto* seed_opt = opt->add_option("--seed", opt_seed, "override config seed");

  ReconArgs ra;
  auto* rec = app.add_subcommand("reconstruct", "reconstruct one simulated acquisition");
  rec->add_option("--method", ra.method, "unn|cs|init")
      ->check(CLI::IsMember({"unn", "cs", "init"}));
  rec->add_option("--traj", ra.traj_path, "trajectory file (default: config init)");
  rec->add_option("--config", ra.config_path, "experiment config JSON")->required();
  rec->add_option("--theta", ra.theta_path, "denoiser thresholds JSON");
  rec->add_option("--index", ra.index, "image index within the split");
  rec->add_option("--split", ra.split, "train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  rec->add_option("--out", ra.out_prefix, "output prefix");

  std::string ev_config, ev_traj, ev_theta, ev_method = "unn", ev_out;
  auto* ev = app.add_subcommand("eval", "mean/std SSIM and PSNR over the test split");
  ev->add_option("--config", ev_config, "experiment config JSON")->required();
  ev->add_option("--traj", ev_traj, "trajectory file (default: config init)");
  ev->add_option("--theta", ev_theta, "denoiser thresholds JSON");
  ev->add_option("--method", ev_method, "unn|cs|init")
      ->check(CLI::IsMember({"unn", "cs", "init"}));
  ev->add_option("--out", ev_out, "metrics JSON output path");

  std::string psf_traj, psf_out = "psf", psf_dcf = "none";
  int psf_grid = 0, psf_angles = 360;
  auto* ps = app.add_subcommand("psf", "point spread function report");
  ps->add_option("--traj", psf_traj, "trajectory file")->required();
  ps->add_option("--grid-n", psf_grid, "PSF grid (default: trajectory grid)");
  ps->add_option("--out", psf_out, "output prefix");
  ps->add_option("--dcf", psf_dcf, "none|ramp density compensation");
  ps->add_option("--angles", psf_angles, "number of profile angles");

  std::string wf_traj, wf_out = "waveform.csv";
  double wf_gmax = 0.05, wf_smax = 149.0, wf_gamma = 42.576e6;
  auto* wf = app.add_subcommand("export-waveform", "gradient/slew CSV for a trajectory");
  wf->add_option("--traj", wf_traj, "trajectory file")->required();
  wf->add_option("--out", wf_out, "output CSV path");
  wf->add_option("--gmax", wf_gmax, "max gradient in T/m");
  wf->add_option("--smax", wf_smax, "max slew in T/m/s");
  wf->add_option("--gamma", wf_gamma, "gyromagnetic ratio / 2pi in Hz/T");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_traj(gt);
    if (opt->parsed()) {
      return cmd_optimize(opt_config, opt_resume, opt_outdir, opt_seed, seed_opt->count() > 0);
    }
    if (rec->parsed()) return cmd_reconstruct(ra);
    if (ev->parsed()) return cmd_eval(ev_config, ev_traj, ev_theta, ev_method, ev_out);
    if (ps->parsed()) return cmd_psf(psf_traj, psf_grid, psf_out, psf_dcf, psf_angles);
    if (wf->parsed()) {
      Trajectory traj = load_trajectory(wf_traj);
      HardwareLimits limits{wf_gmax, wf_smax, wf_gamma, traj.dt};
      write_waveform_csv(wf_out, traj, limits);
      std::cout << "wrote " << wf_out << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
