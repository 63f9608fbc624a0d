#include "ktraj/config.hpp"

#include <json.hpp>

#include "ktraj/io.hpp"

namespace ktraj {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) {
    try {
      out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_file(const std::filesystem::path& path) {
  return from_json_text(read_file_bytes(path));
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: root must be an object");
  reject_unknown(j,
                 {"schema_version", "seed", "geometry", "limits", "coils", "noise_std_rel",
                  "init_traj", "dataset", "recon", "train", "output_dir"},
                 "root");

  ExperimentConfig c;
  get_if(j, "schema_version", c.schema_version);
  if (c.schema_version != 1) throw ConfigError("config: unsupported schema_version");
  get_if(j, "seed", c.seed);
  get_if(j, "coils", c.coils);
  get_if(j, "noise_std_rel", c.noise_std_rel);
  get_if(j, "output_dir", c.output_dir);

  if (j.contains("geometry")) {
    const json& g = j["geometry"];
    reject_unknown(g, {"grid_n", "fov", "dt"}, "geometry");
    get_if(g, "grid_n", c.geometry.grid_n);
    get_if(g, "fov", c.geometry.fov);
    get_if(g, "dt", c.geometry.dt);
  }
  if (j.contains("limits")) {
    const json& g = j["limits"];
    reject_unknown(g, {"gmax", "smax", "gamma"}, "limits");
    get_if(g, "gmax", c.limits.gmax);
    get_if(g, "smax", c.limits.smax);
    get_if(g, "gamma", c.limits.gamma);
  }
  if (j.contains("init_traj")) {
    const json& g = j["init_traj"];
    reject_unknown(g, {"kind", "nshots", "samples_per_shot", "inout", "density", "file"},
                   "init_traj");
    get_if(g, "kind", c.init_traj.kind);
    get_if(g, "nshots", c.init_traj.nshots);
    get_if(g, "samples_per_shot", c.init_traj.samples_per_shot);
    get_if(g, "inout", c.init_traj.inout);
    get_if(g, "density", c.init_traj.density);
    get_if(g, "file", c.init_traj.file);
  }
  if (j.contains("dataset")) {
    const json& g = j["dataset"];
    reject_unknown(g, {"source", "count", "dir"}, "dataset");
    get_if(g, "source", c.dataset.source);
    get_if(g, "count", c.dataset.count);
    get_if(g, "dir", c.dataset.dir);
  }
  if (j.contains("recon")) {
    const json& g = j["recon"];
    reject_unknown(g,
                   {"n_blocks", "mu", "cg_iters", "cg_tol", "init_lambda", "wavelet_levels",
                    "init_mode", "denoiser_theta"},
                   "recon");
    get_if(g, "n_blocks", c.recon.n_blocks);
    get_if(g, "mu", c.recon.mu);
    get_if(g, "cg_iters", c.recon.cg_iters);
    get_if(g, "cg_tol", c.recon.cg_tol);
    get_if(g, "init_lambda", c.recon.init_lambda);
    get_if(g, "wavelet_levels", c.recon.wavelet_levels);
    if (g.contains("init_mode")) {
      const std::string mode = g["init_mode"].get<std::string>();
      if (mode == "quad") {
        c.recon.init_mode = UnrolledConfig::InitMode::kQuadRoughness;
      } else if (mode == "adjoint") {
        c.recon.init_mode = UnrolledConfig::InitMode::kAdjoint;
      } else {
        throw ConfigError("config: init_mode must be 'quad' or 'adjoint'");
      }
    }
    if (g.contains("denoiser_theta")) {
      const auto vec = g["denoiser_theta"].get<std::vector<double>>();
      c.recon.denoiser_theta = Eigen::Map<const RVec>(vec.data(), vec.size());
    }
  }
  if (j.contains("train")) {
    const json& g = j["train"];
    reject_unknown(g,
                   {"n_levels", "epochs_per_level", "pretrain_epochs", "batch_size", "lr_omega",
                    "lr_theta", "adam_betas", "mu1", "mu2", "decim_schedule"},
                   "train");
    get_if(g, "n_levels", c.train.n_levels);
    get_if(g, "epochs_per_level", c.train.epochs_per_level);
    get_if(g, "pretrain_epochs", c.train.pretrain_epochs);
    get_if(g, "batch_size", c.train.batch_size);
    get_if(g, "lr_omega", c.train.lr_omega);
    get_if(g, "lr_theta", c.train.lr_theta);
    get_if(g, "mu1", c.train.mu1);
    get_if(g, "mu2", c.train.mu2);
    if (g.contains("adam_betas")) {
      const auto b = g["adam_betas"].get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("config: adam_betas needs two entries");
      c.train.adam_betas = {b[0], b[1]};
    }
    if (g.contains("decim_schedule")) {
      c.train.decim_schedule = g["decim_schedule"].get<std::vector<int>>();
      c.train.n_levels = static_cast<int>(c.train.decim_schedule.size());
    }
  }
  c.train.seed = c.seed;
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (geometry.grid_n < 8) throw ConfigError("config: grid_n must be >= 8");
  if (geometry.fov <= 0 || geometry.dt <= 0) throw ConfigError("config: fov/dt must be positive");
  if (limits.gmax <= 0 || limits.smax <= 0 || limits.gamma <= 0) {
    throw ConfigError("config: hardware limits must be positive");
  }
  if (coils < 1) throw ConfigError("config: coils must be >= 1");
  if (noise_std_rel < 0) throw ConfigError("config: noise_std_rel must be >= 0");
  if (init_traj.kind != "radial" && init_traj.kind != "spiral" && init_traj.kind != "file") {
    throw ConfigError("config: init_traj.kind must be radial, spiral, or file");
  }
  if (init_traj.kind == "file" && init_traj.file.empty()) {
    throw ConfigError("config: init_traj.file required for kind 'file'");
  }
  if (dataset.source != "phantoms" && dataset.source != "dir") {
    throw ConfigError("config: dataset.source must be phantoms or dir");
  }
  if (dataset.source == "phantoms" && dataset.count < 3) {
    throw ConfigError("config: dataset.count must be >= 3");
  }
  if (dataset.source == "dir" && dataset.dir.empty()) {
    throw ConfigError("config: dataset.dir required for source 'dir'");
  }
  if (recon.n_blocks < 0 || recon.mu <= 0 || recon.cg_iters < 1) {
    throw ConfigError("config: bad recon settings");
  }
  train.validate();
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["schema_version"] = schema_version;
  j["seed"] = seed;
  j["geometry"] = {{"grid_n", geometry.grid_n}, {"fov", geometry.fov}, {"dt", geometry.dt}};
  j["limits"] = {{"gmax", limits.gmax}, {"smax", limits.smax}, {"gamma", limits.gamma}};
  j["coils"] = coils;
  j["noise_std_rel"] = noise_std_rel;
  j["init_traj"] = {{"kind", init_traj.kind},
                    {"nshots", init_traj.nshots},
                    {"samples_per_shot", init_traj.samples_per_shot},
                    {"inout", init_traj.inout},
                    {"density", init_traj.density},
                    {"file", init_traj.file}};
  j["dataset"] = {{"source", dataset.source}, {"count", dataset.count}, {"dir", dataset.dir}};
  json recon_j = {{"n_blocks", recon.n_blocks},
                  {"mu", recon.mu},
                  {"cg_iters", recon.cg_iters},
                  {"cg_tol", recon.cg_tol},
                  {"init_lambda", recon.init_lambda},
                  {"wavelet_levels", recon.wavelet_levels},
                  {"init_mode", recon.init_mode == UnrolledConfig::InitMode::kQuadRoughness
                                    ? "quad"
                                    : "adjoint"}};
  if (recon.denoiser_theta.size() > 0) {
    recon_j["denoiser_theta"] =
        std::vector<double>(recon.denoiser_theta.data(),
                            recon.denoiser_theta.data() + recon.denoiser_theta.size());
  }
  j["recon"] = recon_j;
  j["train"] = {{"n_levels", train.n_levels},
                {"epochs_per_level", train.epochs_per_level},
                {"pretrain_epochs", train.pretrain_epochs},
                {"batch_size", train.batch_size},
                {"lr_omega", train.lr_omega},
                {"lr_theta", train.lr_theta},
                {"adam_betas", {train.adam_betas[0], train.adam_betas[1]}},
                {"mu1", train.mu1},
                {"mu2", train.mu2},
                {"decim_schedule", train.decim_schedule}};
  j["output_dir"] = output_dir;
  return j.dump(2) + "\n";
}

Trajectory build_init_trajectory(const ExperimentConfig& cfg) {
  if (cfg.init_traj.kind == "file") {
    return load_trajectory(cfg.init_traj.file);
  }
  if (cfg.init_traj.kind == "radial") {
    return gen_radial(cfg.init_traj.nshots, cfg.init_traj.samples_per_shot, cfg.init_traj.inout,
                      cfg.geometry);
  }
  return gen_spiral(cfg.init_traj.nshots, cfg.init_traj.samples_per_shot, cfg.init_traj.density,
                    cfg.geometry, cfg.limits);
}

Experiment build_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  Experiment ex;
  ex.config = cfg;
  if (cfg.dataset.source == "phantoms") {
    ex.dataset = gen_phantoms(cfg.dataset.count, cfg.geometry.grid_n, cfg.seed);
  } else {
    ex.dataset = load_images(cfg.dataset.dir, cfg.geometry.grid_n);
  }
  ex.init_traj = build_init_trajectory(cfg);
  ex.init_traj.dt = cfg.geometry.dt;
  ex.init_traj.fov = cfg.geometry.fov;
  ex.init_traj.grid_n = cfg.geometry.grid_n;

  ex.problem.smaps = synth_coil_maps(cfg.geometry.grid_n, cfg.coils);
  ex.problem.grid = GridShape(cfg.geometry.grid_n, cfg.geometry.grid_n);
  ex.problem.traj_meta = ex.init_traj;
  ex.problem.limits = cfg.limits;
  ex.problem.limits.dt = cfg.geometry.dt;
  ex.problem.recon = cfg.recon;
  ex.problem.noise_std_rel = cfg.noise_std_rel;
  ex.problem.mu1 = cfg.train.mu1;
  ex.problem.mu2 = cfg.train.mu2;
  return ex;
}

void save_theta_json(const std::filesystem::path& path, const RVec& theta) {
  json j;
  j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  atomic_write_file(path, j.dump(2) + "\n");
}

RVec load_theta_json(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file_bytes(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("theta file: ") + e.what());
  }
  if (!j.contains("theta")) throw ConfigError("theta file missing 'theta' key");
  const auto vec = j["theta"].get<std::vector<double>>();
  return Eigen::Map<const RVec>(vec.data(), vec.size());
}

}  // namespace ktraj
