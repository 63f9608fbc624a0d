#include "ktraj/trajectory.hpp"

#include <Eigen/SparseQR>

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <vector>

#include "ktraj/io.hpp"

namespace ktraj {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Quadratic B-spline bump on support (0, 3).
double bspline2(double v) {
  if (v <= 0 || v >= 3) return 0.0;
  if (v < 1) return 0.5 * v * v;
  if (v < 2) return 0.5 * (-2 * v * v + 6 * v - 3);
  const double w = 3 - v;
  return 0.5 * w * w;
}

/// Knot-space coordinate of sample s for knot spacing `decim`; the final
/// knot interval is shortened when decim does not divide samples_per_shot.
double knot_coord(int s, int samples_per_shot, int decim, int nintervals) {
  const int last_knot = (nintervals - 1) * decim;
  if (s < last_knot) return static_cast<double>(s) / decim;
  const double tail = samples_per_shot - last_knot;
  return (nintervals - 1) + (s - last_knot) / tail;
}

}  // namespace

void Trajectory::validate() const {
  if (nsamples() != nshots * samples_per_shot) {
    throw std::invalid_argument("trajectory: Ns != nshots * samples_per_shot");
  }
  if (dt <= 0) throw std::invalid_argument("trajectory: dt must be positive");
  if (fov <= 0 || grid_n < 4) throw std::invalid_argument("trajectory: bad fov/grid_n");
  if (!coords.allFinite()) throw std::invalid_argument("trajectory: non-finite coords");
}

SpMat build_basis(int nshots, int samples_per_shot, int decim) {
  if (decim < 1) throw std::invalid_argument("build_basis: decim must be >= 1");
  if (decim > samples_per_shot) {
    throw std::invalid_argument("build_basis: decim exceeds samples_per_shot");
  }
  const int m = samples_per_shot;
  const int nintervals = (m + decim - 1) / decim;
  const int lshot = nintervals + 2;
  const int ns = nshots * m;
  const int l = nshots * lshot;

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(ns) * 3);
  for (int shot = 0; shot < nshots; ++shot) {
    for (int s = 0; s < m; ++s) {
      const double u = knot_coord(s, m, decim, nintervals);
      const int i0 = static_cast<int>(std::floor(u));
      for (int t = 0; t < 3; ++t) {
        const int i = i0 + t;
        if (i < 0 || i >= lshot) continue;
        const double w = bspline2(u - i + 2);
        if (w != 0.0) trip.emplace_back(shot * m + s, shot * lshot + i, w);
      }
    }
  }
  SpMat basis(ns, l);
  basis.setFromTriplets(trip.begin(), trip.end());
  basis.makeCompressed();
  return basis;
}

RMat materialize(const SplineParam& p) {
  if (p.basis.cols() != p.coeffs.rows()) throw std::invalid_argument("materialize: shape mismatch");
  return p.basis * p.coeffs;
}

RefitResult refit(const RMat& coords, int nshots, int samples_per_shot, int decim) {
  if (coords.rows() != static_cast<Eigen::Index>(nshots) * samples_per_shot) {
    throw std::invalid_argument("refit: coords rows != nshots * samples_per_shot");
  }
  SplineParam p;
  p.basis = build_basis(nshots, samples_per_shot, decim);
  p.decim = decim;
  p.nshots = nshots;
  p.samples_per_shot = samples_per_shot;

  Eigen::SparseQR<SpMat, Eigen::COLAMDOrdering<int>> qr(p.basis);
  if (qr.info() != Eigen::Success) throw NumericalError("refit: sparse QR factorization failed");
  p.coeffs.resize(p.basis.cols(), coords.cols());
  for (Eigen::Index d = 0; d < coords.cols(); ++d) {
    p.coeffs.col(d) = qr.solve(coords.col(d));
  }
  const double max_res = (p.basis * p.coeffs - coords).cwiseAbs().maxCoeff();
  return {std::move(p), max_res};
}

SplineParam identity_param(const RMat& coords, int nshots, int samples_per_shot) {
  SplineParam p;
  p.coeffs = coords;
  SpMat eye(coords.rows(), coords.rows());
  eye.setIdentity();
  p.basis = std::move(eye);
  p.decim = 1;
  p.nshots = nshots;
  p.samples_per_shot = samples_per_shot;
  return p;
}

RMat diff1(const RMat& coords, int nshots) {
  const int m = static_cast<int>(coords.rows()) / nshots;
  RMat out(coords.rows() - nshots, coords.cols());
  int row = 0;
  for (int shot = 0; shot < nshots; ++shot) {
    for (int s = 1; s < m; ++s, ++row) {
      out.row(row) = coords.row(shot * m + s) - coords.row(shot * m + s - 1);
    }
  }
  return out;
}

RMat diff2(const RMat& coords, int nshots) {
  const int m = static_cast<int>(coords.rows()) / nshots;
  RMat out(coords.rows() - 2 * static_cast<Eigen::Index>(nshots), coords.cols());
  int row = 0;
  for (int shot = 0; shot < nshots; ++shot) {
    for (int s = 2; s < m; ++s, ++row) {
      out.row(row) = coords.row(shot * m + s) - 2.0 * coords.row(shot * m + s - 1) +
                     coords.row(shot * m + s - 2);
    }
  }
  return out;
}

PenaltyThresholds constraint_thresholds(const Trajectory& traj, const HardwareLimits& limits) {
  const double conv = kTwoPi * limits.gamma * traj.dt * traj.fov / traj.grid_n;
  return {conv * limits.gmax, conv * traj.dt * limits.smax};
}

PenaltyResult penalty(const Trajectory& traj, const HardwareLimits& limits, double mu1,
                      double mu2) {
  const auto [lambda_g, lambda_s] = constraint_thresholds(traj, limits);
  const int m = traj.samples_per_shot;
  const int nd = traj.ndim();

  PenaltyResult res;
  res.grad = RMat::Zero(traj.nsamples(), nd);
  for (int shot = 0; shot < traj.nshots; ++shot) {
    const int base = shot * m;
    for (int d = 0; d < nd; ++d) {
      for (int s = 1; s < m; ++s) {
        const double v = traj.coords(base + s, d) - traj.coords(base + s - 1, d);
        const double excess = std::abs(v) - lambda_g;
        if (excess > 0) {
          res.g_term += excess;
          const double sg = mu1 * (v > 0 ? 1.0 : -1.0);
          res.grad(base + s, d) += sg;
          res.grad(base + s - 1, d) -= sg;
        }
      }
      for (int s = 2; s < m; ++s) {
        const double v = traj.coords(base + s, d) - 2.0 * traj.coords(base + s - 1, d) +
                         traj.coords(base + s - 2, d);
        const double excess = std::abs(v) - lambda_s;
        if (excess > 0) {
          res.s_term += excess;
          const double sg = mu2 * (v > 0 ? 1.0 : -1.0);
          res.grad(base + s, d) += sg;
          res.grad(base + s - 1, d) -= 2.0 * sg;
          res.grad(base + s - 2, d) += sg;
        }
      }
    }
  }
  res.value = mu1 * res.g_term + mu2 * res.s_term;
  return res;
}

Trajectory gen_radial(int nspokes, int nread, bool inout, TrajGeometry geo) {
  if (nspokes < 1 || nread < 2) throw std::invalid_argument("gen_radial: bad shape");
  Trajectory traj;
  traj.nshots = nspokes;
  traj.samples_per_shot = nread;
  traj.dt = geo.dt;
  traj.fov = geo.fov;
  traj.grid_n = geo.grid_n;
  traj.coords.resize(static_cast<Eigen::Index>(nspokes) * nread, 2);
  for (int s = 0; s < nspokes; ++s) {
    const double angle = -std::numbers::pi / 2 + std::numbers::pi * s / nspokes;
    const double cx = std::cos(angle), cy = std::sin(angle);
    for (int i = 0; i < nread; ++i) {
      const double radius = inout ? -std::numbers::pi + kTwoPi * i / nread
                                  : std::numbers::pi * i / nread;
      traj.coords(static_cast<Eigen::Index>(s) * nread + i, 0) = radius * cx;
      traj.coords(static_cast<Eigen::Index>(s) * nread + i, 1) = radius * cy;
    }
  }
  return traj;
}

namespace {

struct SpiralShape {
  double theta_max;
  double density;
  double kmax;

  // Position on the template leaf at knot angle theta.
  Eigen::Vector2d pos(double theta) const {
    const double r = kmax * std::pow(theta / theta_max, density);
    return {r * std::cos(theta), r * std::sin(theta)};
  }
};

/// Time-optimal-style parameterization of the leaf: a curvature-derived speed
/// limit, forward/backward acceleration sweeps for slew feasibility, then an
/// arclength integration. Returns the knot-angle profile, one entry per
/// sample, ending at theta_max; empty on failure.
std::vector<double> march_spiral(const SpiralShape& shape, double g_cap, double s_cap,
                                 int max_samples) {
  const int fine = 200000;
  std::vector<double> theta(fine), arclen(fine), kappa(fine);
  for (int i = 0; i < fine; ++i) theta[i] = shape.theta_max * i / (fine - 1);

  arclen[0] = 0.0;
  Eigen::Vector2d prev = shape.pos(theta[0]);
  for (int i = 1; i < fine; ++i) {
    const Eigen::Vector2d p = shape.pos(theta[i]);
    arclen[i] = arclen[i - 1] + (p - prev).norm();
    prev = p;
  }
  const double dth = theta[1] - theta[0];
  for (int i = 0; i < fine; ++i) {
    const int j = std::clamp(i, 1, fine - 2);
    const Eigen::Vector2d pm = shape.pos(theta[j - 1]);
    const Eigen::Vector2d p0 = shape.pos(theta[j]);
    const Eigen::Vector2d pp = shape.pos(theta[j + 1]);
    const Eigen::Vector2d d1 = (pp - pm) / (2 * dth);
    const Eigen::Vector2d d2 = (pp - 2 * p0 + pm) / (dth * dth);
    const double speed = d1.norm();
    kappa[i] = speed > 0 ? std::abs(d1.x() * d2.y() - d1.y() * d2.x()) / (speed * speed * speed)
                         : 1e12;
  }

  // Speed limit per sample step: gradient cap, and cornering such that the
  // turning part of the second difference stays below ~0.85 of the slew cap.
  const double accel = 0.40 * s_cap;  // tangential second-difference budget
  std::vector<double> v(fine);
  for (int i = 0; i < fine; ++i) {
    const double corner = 0.92 * std::sqrt(s_cap / std::max(kappa[i], 1e-12));
    v[i] = std::clamp(corner, 0.5 * s_cap, g_cap);
  }
  // forward (ramp from rest) and backward (deceleration feasibility) sweeps
  v[0] = std::min(v[0], s_cap);
  for (int i = 1; i < fine; ++i) {
    const double ds = arclen[i] - arclen[i - 1];
    v[i] = std::min(v[i], std::sqrt(v[i - 1] * v[i - 1] + 2 * accel * ds));
  }
  for (int i = fine - 2; i >= 0; --i) {
    const double ds = arclen[i + 1] - arclen[i];
    v[i] = std::min(v[i], std::sqrt(v[i + 1] * v[i + 1] + 2 * accel * ds));
  }

  // Integrate: advance one speed unit of arclength per sample.
  std::vector<double> profile{0.0};
  double s = 0.0;
  int idx = 0;
  const double total = arclen.back();
  while (s < total && static_cast<int>(profile.size()) < max_samples) {
    while (idx + 1 < fine && arclen[idx + 1] < s) ++idx;
    const double f = (arclen[idx + 1] > arclen[idx])
                         ? (s - arclen[idx]) / (arclen[idx + 1] - arclen[idx])
                         : 0.0;
    const double vs = (1 - f) * v[idx] + f * v[std::min(idx + 1, fine - 1)];
    s += std::max(vs, 1e-6 * g_cap);
    const double sc = std::min(s, total);
    // invert arclength -> theta
    while (idx + 1 < fine && arclen[idx + 1] < sc) ++idx;
    const double g = (arclen[idx + 1] > arclen[idx])
                         ? (sc - arclen[idx]) / (arclen[idx + 1] - arclen[idx])
                         : 0.0;
    profile.push_back((1 - g) * theta[idx] + g * theta[idx + 1]);
  }
  if (s < total) return {};
  profile.back() = shape.theta_max;
  return profile;
}

}  // namespace

Trajectory gen_spiral(int nshots, int nread, double density, TrajGeometry geo,
                      HardwareLimits limits) {
  if (nshots < 1 || nread < 8) throw std::invalid_argument("gen_spiral: bad shape");
  if (density < 0.25 || density > 8) throw std::invalid_argument("gen_spiral: density out of range");

  Trajectory traj;
  traj.nshots = nshots;
  traj.samples_per_shot = nread;
  traj.dt = geo.dt;
  traj.fov = geo.fov;
  traj.grid_n = geo.grid_n;
  limits.dt = geo.dt;

  const auto [lambda_g, lambda_s] = constraint_thresholds(traj, limits);
  const double nyquist_turns = std::max(1.0, geo.grid_n / (2.0 * nshots));

  // Margins below the box limits; the Euclidean caps already imply the
  // per-component constraints. Retry tighter if resampling eats the margin.
  RMat leaf;
  double margin = 0.98;
  for (int attempt = 0; attempt < 3 && leaf.size() == 0; ++attempt, margin *= 0.9) {
    const double g_cap = margin * lambda_g;
    const double s_cap = margin * lambda_s;
    auto try_turns = [&](double turns) {
      SpiralShape shape{kTwoPi * turns, density, std::numbers::pi};
      return march_spiral(shape, g_cap, s_cap, nread);
    };

    // Largest turn count whose feasible traversal fits in nread samples,
    // capped at the combined-Nyquist coverage.
    double turns = nyquist_turns;
    std::vector<double> thetas = try_turns(turns);
    if (thetas.empty()) {
      double lo = 1.0, hi = nyquist_turns;
      thetas = try_turns(lo);
      if (thetas.empty()) {
        std::ostringstream oss;
        oss << "gen_spiral: readout of " << nread
            << " samples cannot reach the k-space edge under the limits";
        throw InfeasibleError(oss.str());
      }
      turns = lo;
      for (int it = 0; it < 24; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (auto p = try_turns(mid); !p.empty()) {
          lo = mid;
          turns = mid;
          thetas = std::move(p);
        } else {
          hi = mid;
        }
      }
    }

    // Stretch the feasible profile onto exactly nread samples.
    const SpiralShape shape{kTwoPi * turns, density, std::numbers::pi};
    const int msamples = static_cast<int>(thetas.size());
    std::vector<double> stretched(nread);
    for (int n = 0; n < nread; ++n) {
      const double q = static_cast<double>(n) * (msamples - 1) / (nread - 1);
      const int k = std::min(static_cast<int>(q), msamples - 2);
      const double f = q - k;
      stretched[n] = (1 - f) * thetas[k] + f * thetas[k + 1];
    }
    // Verify Euclidean difference norms on the resampled leaf; that bounds
    // the per-component constraints for every rotated interleaf.
    RMat cand(nread, 2);
    for (int n = 0; n < nread; ++n) cand.row(n) = shape.pos(stretched[n]).transpose();
    const double max_d1 = diff1(cand, 1).rowwise().norm().maxCoeff();
    const double max_d2 = diff2(cand, 1).rowwise().norm().maxCoeff();
    if (max_d1 <= lambda_g && max_d2 <= lambda_s) leaf = std::move(cand);
  }
  if (leaf.size() == 0) {
    throw InfeasibleError("gen_spiral: could not build a feasible leaf under the limits");
  }

  traj.coords.resize(static_cast<Eigen::Index>(nshots) * nread, 2);
  for (int shot = 0; shot < nshots; ++shot) {
    const double rot = kTwoPi * shot / nshots;
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (int n = 0; n < nread; ++n) {
      traj.coords(static_cast<Eigen::Index>(shot) * nread + n, 0) =
          cr * leaf(n, 0) - sr * leaf(n, 1);
      traj.coords(static_cast<Eigen::Index>(shot) * nread + n, 1) =
          sr * leaf(n, 0) + cr * leaf(n, 1);
    }
  }
  return traj;
}

Waveforms export_waveform(const Trajectory& traj, const HardwareLimits& limits) {
  traj.validate();
  const double scale = traj.grid_n / (kTwoPi * limits.gamma * traj.dt * traj.fov);
  Waveforms w;
  w.grad = diff1(traj.coords, traj.nshots) * scale;
  const int m = traj.samples_per_shot;
  const int nd = traj.ndim();
  w.slew.resize(traj.nsamples() - 2 * static_cast<Eigen::Index>(traj.nshots), nd);
  int row = 0;
  for (int shot = 0; shot < traj.nshots; ++shot) {
    const int gbase = shot * (m - 1);
    for (int s = 1; s < m - 1; ++s, ++row) {
      w.slew.row(row) = (w.grad.row(gbase + s) - w.grad.row(gbase + s - 1)) / traj.dt;
    }
  }
  return w;
}

void write_waveform_csv(const std::filesystem::path& path, const Trajectory& traj,
                        const HardwareLimits& limits) {
  const Waveforms w = export_waveform(traj, limits);
  const int m = traj.samples_per_shot;
  const int nd = traj.ndim();
  std::ostringstream out;
  out << "shot,n,g_x,g_y,s_x,s_y\n";
  out.precision(17);
  for (int shot = 0; shot < traj.nshots; ++shot) {
    for (int s = 1; s < m; ++s) {
      const int grow = shot * (m - 1) + (s - 1);
      const int srow = shot * (m - 2) + (s - 2);
      out << shot << ',' << s << ',' << w.grad(grow, 0) << ','
          << (nd == 2 ? w.grad(grow, 1) : 0.0) << ',';
      if (s >= 2) {
        out << w.slew(srow, 0) << ',' << (nd == 2 ? w.slew(srow, 1) : 0.0) << '\n';
      } else {
        out << 0.0 << ',' << 0.0 << '\n';
      }
    }
  }
  atomic_write_file(path, out.str());
}

namespace {
constexpr char kTrajMagic[5] = {'K', 'T', 'R', 'J', '1'};

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) throw ConfigError("trajectory file truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}
}  // namespace

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  traj.validate();
  std::string buf;
  buf.append(kTrajMagic, sizeof(kTrajMagic));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(traj.ndim()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(traj.nshots));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(traj.samples_per_shot));
  put<double>(buf, traj.dt);
  put<double>(buf, traj.fov);
  put<double>(buf, static_cast<double>(traj.grid_n));
  for (int j = 0; j < traj.nsamples(); ++j) {
    for (int d = 0; d < traj.ndim(); ++d) put<double>(buf, traj.coords(j, d));
  }
  atomic_write_file(path, buf);
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  const std::string buf = read_file_bytes(path);
  if (buf.size() < sizeof(kTrajMagic) || std::memcmp(buf.data(), kTrajMagic, sizeof(kTrajMagic))) {
    throw ConfigError("not a trajectory file (bad magic): " + path.string());
  }
  size_t off = sizeof(kTrajMagic);
  Trajectory traj;
  const auto nd = take<std::uint32_t>(buf, off);
  traj.nshots = static_cast<int>(take<std::uint32_t>(buf, off));
  traj.samples_per_shot = static_cast<int>(take<std::uint32_t>(buf, off));
  traj.dt = take<double>(buf, off);
  traj.fov = take<double>(buf, off);
  traj.grid_n = static_cast<int>(take<double>(buf, off));
  if (nd < 1 || nd > 2) throw ConfigError("trajectory file: bad nd");
  const Eigen::Index ns = static_cast<Eigen::Index>(traj.nshots) * traj.samples_per_shot;
  traj.coords.resize(ns, nd);
  for (Eigen::Index j = 0; j < ns; ++j) {
    for (std::uint32_t d = 0; d < nd; ++d) traj.coords(j, d) = take<double>(buf, off);
  }
  if (off != buf.size()) throw ConfigError("trajectory file has trailing bytes");
  traj.validate();
  return traj;
}

}  // namespace ktraj
