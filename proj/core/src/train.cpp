#include "ktraj/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "ktraj/io.hpp"

namespace ktraj {

void TrainConfig::validate() const {
  if (n_levels < 1) throw ConfigError("train: n_levels must be >= 1");
  if (static_cast<int>(decim_schedule.size()) != n_levels) {
    throw ConfigError("train: decim_schedule length must equal n_levels");
  }
  for (size_t i = 1; i < decim_schedule.size(); ++i) {
    if (decim_schedule[i] >= decim_schedule[i - 1]) {
      throw ConfigError("train: decim_schedule must be strictly decreasing");
    }
  }
  if (decim_schedule.back() < 1) throw ConfigError("train: decim must be >= 1");
  if (lr_omega <= 0 || lr_theta <= 0) throw ConfigError("train: learning rates must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs_per_level < 0 || pretrain_epochs < 0) throw ConfigError("train: negative epochs");
}

void adam_step(RVec& params, const RVec& grad, AdamState& state, double lr,
               std::array<double, 2> betas, double eps) {
  if (state.m.size() != params.size()) {
    state.m = RVec::Zero(params.size());
    state.v = RVec::Zero(params.size());
    state.t = 0;
  }
  state.t += 1;
  const double b1 = betas[0], b2 = betas[1];
  state.m = b1 * state.m + (1 - b1) * grad;
  state.v = b2 * state.v + (1 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1 - std::pow(b2, static_cast<double>(state.t));
  RVec denom = (state.v / c2).cwiseSqrt();
  denom.array() += eps;
  params -= lr * (state.m / c1).cwiseQuotient(denom);
}

Trainer::Trainer(Problem prob, const Dataset* dataset, Trajectory init_traj, TrainConfig cfg)
    : prob_(std::move(prob)), dataset_(dataset), init_traj_(std::move(init_traj)), cfg_(cfg) {
  cfg_.validate();
  init_traj_.validate();
  if (!dataset_ || dataset_->train.empty()) throw ConfigError("train: empty training split");
  if (prob_.fixed_op_scale <= 0) {
    prob_.fixed_op_scale =
        op_scale_for(prob_.smaps, init_traj_.coords, prob_.grid, prob_.nufft_opts);
  }
  prob_.traj_meta = init_traj_;
  theta_ = prob_.recon.theta_or_zero();
  // start from the raw initialization; levels re-parameterize it
  spline_ = identity_param(init_traj_.coords, init_traj_.nshots, init_traj_.samples_per_shot);
  prob_.mu1 = cfg_.mu1;  // negative values request auto-calibration
  prob_.mu2 = cfg_.mu2;
  mu_calibrated_ = cfg_.mu1 >= 0 && cfg_.mu2 >= 0;
}

long Trainer::steps_per_epoch() const {
  const long n = static_cast<long>(dataset_->train.size());
  return (n + cfg_.batch_size - 1) / cfg_.batch_size;
}

long Trainer::level_total_steps() const { return steps_per_epoch() * cfg_.epochs_per_level; }

std::vector<int> Trainer::epoch_order(int level, int epoch) const {
  std::vector<int> order = dataset_->train;
  std::mt19937_64 rng(mix_seed(cfg_.seed, 0xe90cULL + static_cast<std::uint64_t>(level + 1),
                               static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Problem Trainer::problem_with_current_theta() const {
  Problem p = prob_;
  p.recon.denoiser_theta = theta_;
  return p;
}

TapeGradient Trainer::batch_gradient(const std::vector<int>& ids, long step_index,
                                     GradFlags flags) {
  std::vector<const CVec*> batch;
  std::vector<std::uint64_t> seeds;
  batch.reserve(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    batch.push_back(&dataset_->images[ids[i]]);
    seeds.push_back(mix_seed(cfg_.seed, 0xab5e * (step_index + 1), i));
  }
  Problem p = problem_with_current_theta();
  return loss_and_grad(p, spline_, batch, seeds, flags);
}

void Trainer::calibrate_penalty_weights() {
  if (mu_calibrated_) return;
  // Match the penalty subgradient scale (as if every hinge were active) to
  // the reconstruction gradient scale at the starting point, so neither term
  // dwarfs the other once constraints first activate.
  std::vector<int> ids(dataset_->train.begin(),
                       dataset_->train.begin() +
                           std::min<size_t>(cfg_.batch_size, dataset_->train.size()));
  Problem p = problem_with_current_theta();
  p.mu1 = p.mu2 = 0;
  std::vector<const CVec*> batch;
  std::vector<std::uint64_t> seeds;
  for (size_t i = 0; i < ids.size(); ++i) {
    batch.push_back(&dataset_->images[ids[i]]);
    seeds.push_back(mix_seed(cfg_.seed, 0xca11, i));
  }
  TapeGradient tg = loss_and_grad(p, spline_, batch, seeds, {true, false});
  const double recon_rms = std::sqrt(tg.d_coeffs.squaredNorm() / tg.d_coeffs.size());

  RMat omega = materialize(spline_);
  const int m = spline_.samples_per_shot;
  auto probe_rms = [&](int order) {
    RMat d = order == 1 ? diff1(omega, spline_.nshots) : diff2(omega, spline_.nshots);
    RMat sg = RMat::Zero(omega.rows(), omega.cols());
    for (int shot = 0; shot < spline_.nshots; ++shot) {
      const int rows = m - order;
      for (int r = 0; r < rows; ++r) {
        for (int dd = 0; dd < omega.cols(); ++dd) {
          const double s = d(shot * rows + r, dd) >= 0 ? 1.0 : -1.0;
          const int base = shot * m + r;
          if (order == 1) {
            sg(base + 1, dd) += s;
            sg(base, dd) -= s;
          } else {
            sg(base + 2, dd) += s;
            sg(base + 1, dd) -= 2 * s;
            sg(base, dd) += s;
          }
        }
      }
    }
    RMat mapped = spline_.basis.transpose() * sg;
    return std::sqrt(mapped.squaredNorm() / mapped.size());
  };
  const double rms1 = probe_rms(1);
  const double rms2 = probe_rms(2);
  if (prob_.mu1 < 0) prob_.mu1 = rms1 > 0 ? recon_rms / rms1 : 1.0;
  if (prob_.mu2 < 0) prob_.mu2 = rms2 > 0 ? recon_rms / rms2 : 1.0;
  mu_calibrated_ = true;
}

void Trainer::pretrain() {
  report_.mu1 = prob_.mu1;
  report_.mu2 = prob_.mu2;
  if (cfg_.pretrain_epochs == 0) return;
  double best_val = validation_loss();
  RVec best_theta = theta_;
  const long total = steps_per_epoch() * cfg_.pretrain_epochs;
  long step_index = 0;
  for (int epoch = 0; epoch < cfg_.pretrain_epochs; ++epoch) {
    std::vector<int> order = epoch_order(-1, epoch);
    for (size_t ofs = 0; ofs < order.size(); ofs += cfg_.batch_size, ++step_index) {
      std::vector<int> ids(order.begin() + ofs,
                           order.begin() + std::min(ofs + cfg_.batch_size, order.size()));
      TapeGradient tg = batch_gradient(ids, -1000 - step_index, {false, true});
      const double lr = cfg_.lr_theta * (1.0 - static_cast<double>(step_index) / total);
      adam_step(theta_, tg.d_theta, adam_theta_, lr, cfg_.adam_betas);
      theta_ = theta_.cwiseMax(0.0);  // thresholds stay nonnegative
      StepRecord rec;
      rec.step = global_step_++;
      rec.level = -1;
      rec.epoch = epoch;
      rec.recon_loss = tg.recon_loss;
      rec.g_penalty = tg.g_penalty;
      rec.s_penalty = tg.s_penalty;
      rec.lr_omega = 0;
      rec.lr_theta = lr;
      report_.history.push_back(rec);
    }
    const double val = validation_loss();
    if (val < best_val) {
      best_val = val;
      best_theta = theta_;
    }
  }
  theta_ = best_theta;
  report_.val_metric_initial = best_val;
}

void Trainer::begin_level(int level) {
  level_ = level;
  epoch_in_level_ = 0;
  step_in_level_ = 0;
  RMat omega = materialize(spline_);
  RefitResult rf = refit(omega, init_traj_.nshots, init_traj_.samples_per_shot,
                         cfg_.decim_schedule[level]);
  spline_ = std::move(rf.param);
  adam_c_ = AdamState{};  // fresh trajectory moments per level; theta's persist
  calibrate_penalty_weights();
  report_.mu1 = prob_.mu1;
  report_.mu2 = prob_.mu2;
}

bool Trainer::step() {
  if (level_ < 0) begin_level(0);
  while (step_in_level_ >= level_total_steps()) {
    if (level_ + 1 >= cfg_.n_levels) return false;
    begin_level(level_ + 1);
  }

  const long spe = steps_per_epoch();
  epoch_in_level_ = static_cast<int>(step_in_level_ / spe);
  const long step_in_epoch = step_in_level_ % spe;
  std::vector<int> order = epoch_order(level_, epoch_in_level_);
  const size_t ofs = static_cast<size_t>(step_in_epoch) * cfg_.batch_size;
  std::vector<int> ids(order.begin() + ofs,
                       order.begin() + std::min(ofs + cfg_.batch_size, order.size()));

  TapeGradient tg = batch_gradient(ids, global_step_, {true, true});

  const double frac = static_cast<double>(step_in_level_) / level_total_steps();
  const double lr_c = cfg_.lr_omega * (1.0 - frac);
  const double lr_t = cfg_.lr_theta * (1.0 - frac);

  RVec c_flat = Eigen::Map<const RVec>(spline_.coeffs.data(), spline_.coeffs.size());
  RVec g_flat = Eigen::Map<const RVec>(tg.d_coeffs.data(), tg.d_coeffs.size());
  adam_step(c_flat, g_flat, adam_c_, lr_c, cfg_.adam_betas);
  spline_.coeffs = Eigen::Map<const RMat>(c_flat.data(), spline_.coeffs.rows(),
                                          spline_.coeffs.cols());
  adam_step(theta_, tg.d_theta, adam_theta_, lr_t, cfg_.adam_betas);
  theta_ = theta_.cwiseMax(0.0);

  StepRecord rec;
  rec.step = global_step_++;
  rec.level = level_;
  rec.epoch = epoch_in_level_;
  rec.recon_loss = tg.recon_loss;
  rec.g_penalty = tg.g_penalty;
  rec.s_penalty = tg.s_penalty;
  rec.lr_omega = lr_c;
  rec.lr_theta = lr_t;
  report_.history.push_back(rec);

  ++step_in_level_;
  if (step_in_level_ >= level_total_steps() && level_ + 1 >= cfg_.n_levels) return false;
  return true;
}

void Trainer::run() {
  if (level_ < 0) begin_level(0);
  while (step()) {
  }
}

Trajectory Trainer::trajectory() const {
  Trajectory traj = init_traj_;
  traj.coords = materialize(spline_);
  return traj;
}

double Trainer::validation_loss() {
  const std::vector<int>& val = dataset_->val.empty() ? dataset_->train : dataset_->val;
  Problem p = problem_with_current_theta();
  p.mu1 = p.mu2 = 0;
  double total = 0;
  long count = 0;
  for (size_t ofs = 0; ofs < val.size(); ofs += cfg_.batch_size) {
    std::vector<const CVec*> batch;
    std::vector<std::uint64_t> seeds;
    for (size_t i = ofs; i < std::min(ofs + cfg_.batch_size, val.size()); ++i) {
      batch.push_back(&dataset_->images[val[i]]);
      seeds.push_back(mix_seed(cfg_.seed, 0x7a11, val[i]));
    }
    TapeGradient tg = loss_and_grad(p, spline_, batch, seeds, {false, false});
    total += tg.recon_loss * batch.size();
    count += batch.size();
  }
  return total / count;
}

RVec Trainer::train_theta_only(const Problem& prob, const Dataset& dataset,
                               const Trajectory& traj, const TrainConfig& cfg, int epochs) {
  TrainConfig c = cfg;
  c.pretrain_epochs = epochs;
  Trainer t(prob, &dataset, traj, c);
  t.pretrain();
  return t.theta();
}

FitResult fit(const Problem& prob, const Dataset& dataset, const Trajectory& init_traj,
              const TrainConfig& cfg) {
  Trainer trainer(prob, &dataset, init_traj, cfg);
  if (cfg.pretrain_epochs == 0 && cfg.epochs_per_level == 0) {
    // nothing to optimize: hand back the initialization untouched
    FitResult res;
    res.trajectory = init_traj;
    res.theta = trainer.theta();
    res.report = trainer.report();
    return res;
  }
  trainer.pretrain();
  trainer.run();

  FitResult res;
  res.trajectory = trainer.trajectory();
  res.theta = trainer.theta();
  res.report = trainer.report();
  res.report.val_metric_final = trainer.validation_loss();

  Trajectory final_traj = res.trajectory;
  PenaltyResult pen = penalty(final_traj, prob.limits, 1.0, 1.0);
  res.report.final_penalty = pen.value;
  res.report.feasible = pen.value == 0.0;
  return res;
}

namespace {

constexpr char kCkptMagic[5] = {'K', 'C', 'K', 'P', '1'};

template <typename T>
void put(std::string& buf, const T& v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) throw ConfigError("checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

void put_vec(std::string& buf, const RVec& v) {
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(buf, v[i]);
}

RVec take_vec(const std::string& buf, size_t& off) {
  const auto n = take<std::uint64_t>(buf, off);
  RVec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = take<double>(buf, off);
  return v;
}

void put_mat(std::string& buf, const RMat& m) {
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(buf, m(i, j));
}

RMat take_mat(const std::string& buf, size_t& off) {
  const auto r = take<std::uint64_t>(buf, off);
  const auto c = take<std::uint64_t>(buf, off);
  RMat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = take<double>(buf, off);
  return m;
}

std::string config_blob(const TrainConfig& c) {
  std::string b;
  put<std::int32_t>(b, c.n_levels);
  put<std::int32_t>(b, c.epochs_per_level);
  put<std::int32_t>(b, c.pretrain_epochs);
  put<std::int32_t>(b, c.batch_size);
  put<double>(b, c.lr_omega);
  put<double>(b, c.lr_theta);
  put<double>(b, c.adam_betas[0]);
  put<double>(b, c.adam_betas[1]);
  put<double>(b, c.mu1);
  put<double>(b, c.mu2);
  put<std::uint64_t>(b, c.decim_schedule.size());
  for (int d : c.decim_schedule) put<std::int32_t>(b, d);
  put<std::uint64_t>(b, c.seed);
  return b;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::string buf;
  buf.append(kCkptMagic, sizeof(kCkptMagic));
  put<std::uint32_t>(buf, 1);  // version
  const std::string cb = config_blob(cfg_);
  put<std::uint64_t>(buf, fnv1a(cb));
  put<std::uint64_t>(buf, cb.size());
  buf += cb;

  put<std::int32_t>(buf, level_);
  put<std::int32_t>(buf, epoch_in_level_);
  put<std::int64_t>(buf, step_in_level_);
  put<std::int64_t>(buf, global_step_);
  put<std::uint8_t>(buf, mu_calibrated_ ? 1 : 0);
  put<double>(buf, prob_.mu1);
  put<double>(buf, prob_.mu2);
  put<double>(buf, prob_.fixed_op_scale);

  put<std::int32_t>(buf, spline_.decim);
  put<std::int32_t>(buf, spline_.nshots);
  put<std::int32_t>(buf, spline_.samples_per_shot);
  put<std::uint8_t>(buf, spline_.basis.rows() == spline_.basis.cols() ? 1 : 0);  // identity basis
  put_mat(buf, spline_.coeffs);
  put_vec(buf, theta_);

  put_vec(buf, adam_c_.m);
  put_vec(buf, adam_c_.v);
  put<std::int64_t>(buf, adam_c_.t);
  put_vec(buf, adam_theta_.m);
  put_vec(buf, adam_theta_.v);
  put<std::int64_t>(buf, adam_theta_.t);

  put<std::int32_t>(buf, init_traj_.nshots);
  put<std::int32_t>(buf, init_traj_.samples_per_shot);
  put<double>(buf, init_traj_.dt);
  put<double>(buf, init_traj_.fov);
  put<std::int32_t>(buf, init_traj_.grid_n);
  put_mat(buf, init_traj_.coords);

  put<std::uint64_t>(buf, report_.history.size());
  for (const auto& r : report_.history) {
    put<std::int64_t>(buf, r.step);
    put<std::int32_t>(buf, r.level);
    put<std::int32_t>(buf, r.epoch);
    put<double>(buf, r.recon_loss);
    put<double>(buf, r.g_penalty);
    put<double>(buf, r.s_penalty);
    put<double>(buf, r.lr_omega);
    put<double>(buf, r.lr_theta);
  }
  put<double>(buf, report_.val_metric_initial);
  put<double>(buf, report_.val_metric_final);

  atomic_write_file(path, buf);
}

Trainer Trainer::load_checkpoint(const std::filesystem::path& path, Problem prob,
                                 const Dataset* dataset) {
  const std::string buf = read_file_bytes(path);
  if (buf.size() < sizeof(kCkptMagic) || std::memcmp(buf.data(), kCkptMagic, sizeof(kCkptMagic))) {
    throw ConfigError("not a checkpoint file: " + path.string());
  }
  size_t off = sizeof(kCkptMagic);
  const auto version = take<std::uint32_t>(buf, off);
  if (version != 1) throw ConfigError("unsupported checkpoint version");
  const auto stored_hash = take<std::uint64_t>(buf, off);
  const auto cb_size = take<std::uint64_t>(buf, off);
  std::string cb = buf.substr(off, cb_size);
  off += cb_size;
  if (fnv1a(cb) != stored_hash) throw ConfigError("checkpoint config hash mismatch");

  TrainConfig cfg;
  {
    size_t co = 0;
    cfg.n_levels = take<std::int32_t>(cb, co);
    cfg.epochs_per_level = take<std::int32_t>(cb, co);
    cfg.pretrain_epochs = take<std::int32_t>(cb, co);
    cfg.batch_size = take<std::int32_t>(cb, co);
    cfg.lr_omega = take<double>(cb, co);
    cfg.lr_theta = take<double>(cb, co);
    cfg.adam_betas[0] = take<double>(cb, co);
    cfg.adam_betas[1] = take<double>(cb, co);
    cfg.mu1 = take<double>(cb, co);
    cfg.mu2 = take<double>(cb, co);
    const auto ns = take<std::uint64_t>(cb, co);
    cfg.decim_schedule.resize(ns);
    for (auto& d : cfg.decim_schedule) d = take<std::int32_t>(cb, co);
    cfg.seed = take<std::uint64_t>(cb, co);
  }

  const auto level = take<std::int32_t>(buf, off);
  const auto epoch_in_level = take<std::int32_t>(buf, off);
  const auto step_in_level = take<std::int64_t>(buf, off);
  const auto global_step = take<std::int64_t>(buf, off);
  const bool mu_calibrated = take<std::uint8_t>(buf, off) != 0;
  const double mu1 = take<double>(buf, off);
  const double mu2 = take<double>(buf, off);
  const double op_scale = take<double>(buf, off);

  const auto decim = take<std::int32_t>(buf, off);
  const auto nshots = take<std::int32_t>(buf, off);
  const auto spsh = take<std::int32_t>(buf, off);
  const bool identity_basis = take<std::uint8_t>(buf, off) != 0;
  RMat coeffs = take_mat(buf, off);
  RVec theta = take_vec(buf, off);

  AdamState ac, at;
  ac.m = take_vec(buf, off);
  ac.v = take_vec(buf, off);
  ac.t = take<std::int64_t>(buf, off);
  at.m = take_vec(buf, off);
  at.v = take_vec(buf, off);
  at.t = take<std::int64_t>(buf, off);

  Trajectory init;
  init.nshots = take<std::int32_t>(buf, off);
  init.samples_per_shot = take<std::int32_t>(buf, off);
  init.dt = take<double>(buf, off);
  init.fov = take<double>(buf, off);
  init.grid_n = take<std::int32_t>(buf, off);
  init.coords = take_mat(buf, off);

  prob.fixed_op_scale = op_scale;
  prob.mu1 = mu1;
  prob.mu2 = mu2;
  Trainer t(std::move(prob), dataset, std::move(init), cfg);
  t.prob_.mu1 = mu1;
  t.prob_.mu2 = mu2;
  t.mu_calibrated_ = mu_calibrated;
  t.level_ = level;
  t.epoch_in_level_ = epoch_in_level;
  t.step_in_level_ = step_in_level;
  t.global_step_ = global_step;
  t.theta_ = std::move(theta);
  t.adam_c_ = std::move(ac);
  t.adam_theta_ = std::move(at);
  if (identity_basis) {
    t.spline_ = identity_param(coeffs, nshots, spsh);
  } else {
    t.spline_.basis = build_basis(nshots, spsh, decim);
    t.spline_.decim = decim;
    t.spline_.nshots = nshots;
    t.spline_.samples_per_shot = spsh;
    t.spline_.coeffs = std::move(coeffs);
  }

  const auto nrec = take<std::uint64_t>(buf, off);
  t.report_.history.resize(nrec);
  for (auto& r : t.report_.history) {
    r.step = take<std::int64_t>(buf, off);
    r.level = take<std::int32_t>(buf, off);
    r.epoch = take<std::int32_t>(buf, off);
    r.recon_loss = take<double>(buf, off);
    r.g_penalty = take<double>(buf, off);
    r.s_penalty = take<double>(buf, off);
    r.lr_omega = take<double>(buf, off);
    r.lr_theta = take<double>(buf, off);
  }
  t.report_.val_metric_initial = take<double>(buf, off);
  t.report_.val_metric_final = take<double>(buf, off);
  t.report_.mu1 = mu1;
  t.report_.mu2 = mu2;
  return t;
}

void write_report_jsonl(const std::filesystem::path& path, const FitReport& report) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& r : report.history) {
    out << "{\"step\":" << r.step << ",\"level\":" << r.level << ",\"epoch\":" << r.epoch
        << ",\"recon_loss\":" << r.recon_loss << ",\"g_penalty\":" << r.g_penalty
        << ",\"s_penalty\":" << r.s_penalty << ",\"lr_omega\":" << r.lr_omega
        << ",\"lr_theta\":" << r.lr_theta << "}\n";
  }
  atomic_write_file(path, out.str());
}

}  // namespace ktraj
