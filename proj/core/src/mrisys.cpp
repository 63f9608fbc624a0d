#include "ktraj/mrisys.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ktraj/fft.hpp"
#include "ktraj/io.hpp"

namespace ktraj {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

SenseModel make_sense_model(CMat smaps, const RMat& coords, GridShape grid, NufftOptions opts,
                            double noise_std, double fixed_op_scale) {
  if (smaps.cols() != grid.nvox()) {
    throw std::invalid_argument("make_sense_model: smaps cols != grid voxels");
  }
  SenseModel m;
  m.plan = std::make_shared<NufftPlan>(coords, grid, opts);
  m.toeplitz = std::make_shared<ToeplitzKernel>(*m.plan);
  m.noise_std = noise_std;
  if (fixed_op_scale > 0) {
    m.op_scale = fixed_op_scale;
  } else {
    const double raw_peak = m.toeplitz->kernel_fft().real().maxCoeff();
    if (raw_peak <= 0) throw NumericalError("make_sense_model: degenerate normal operator");
    m.op_scale = 1.0 / std::sqrt(raw_peak);
  }

  RVec rss = smaps.cwiseAbs2().colwise().sum().cwiseSqrt().transpose();
  const double thresh = 0.05 * rss.maxCoeff();
  m.support.resize(grid.nvox());
  for (int k = 0; k < grid.nvox(); ++k) m.support[k] = rss[k] > thresh ? 1 : 0;
  for (int k = 0; k < grid.nvox(); ++k) {
    if (m.support[k] && rss[k] <= 0) {
      throw std::invalid_argument("make_sense_model: zero sensitivity on support");
    }
  }
  m.smaps = std::move(smaps);
  return m;
}

CVec sense_forward(const SenseModel& m, const CVec& x) {
  if (x.size() != m.nvox()) throw std::invalid_argument("sense_forward: image size mismatch");
  const int ns = m.nsamples();
  CVec y(static_cast<Eigen::Index>(ns) * m.ncoils());
  for (int c = 0; c < m.ncoils(); ++c) {
    CVec xc = m.smaps.row(c).transpose().cwiseProduct(x);
    y.segment(static_cast<Eigen::Index>(c) * ns, ns) = m.op_scale * nufft_forward(*m.plan, xc);
  }
  return y;
}

CVec sense_adjoint(const SenseModel& m, const CVec& y) {
  const int ns = m.nsamples();
  if (y.size() != static_cast<Eigen::Index>(ns) * m.ncoils()) {
    throw std::invalid_argument("sense_adjoint: data size mismatch");
  }
  CVec x = CVec::Zero(m.nvox());
  for (int c = 0; c < m.ncoils(); ++c) {
    CVec xc = nufft_adjoint(*m.plan, y.segment(static_cast<Eigen::Index>(c) * ns, ns));
    x += m.smaps.row(c).transpose().conjugate().cwiseProduct(xc);
  }
  return m.op_scale * x;
}

CVec sense_normal(const SenseModel& m, const CVec& x) {
  if (x.size() != m.nvox()) throw std::invalid_argument("sense_normal: image size mismatch");
  CVec out = CVec::Zero(m.nvox());
  for (int c = 0; c < m.ncoils(); ++c) {
    CVec xc = m.smaps.row(c).transpose().cwiseProduct(x);
    out += m.smaps.row(c).transpose().conjugate().cwiseProduct(m.toeplitz->apply(xc));
  }
  return m.op_scale * m.op_scale * out;
}

double normal_op_scale(const SenseModel& m) {
  return m.op_scale * m.op_scale * m.toeplitz->kernel_fft().real().maxCoeff();
}

CVec simulate_acquisition(const SenseModel& m, const CVec& x, std::uint64_t seed) {
  CVec y = sense_forward(m, x);
  if (m.noise_std > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, m.noise_std / std::sqrt(2.0));
    for (Eigen::Index j = 0; j < y.size(); ++j) y[j] += Cplx(g(rng), g(rng));
  }
  return y;
}

CMat synth_coil_maps(int grid_n, int ncoils) {
  if (grid_n < 4 || ncoils < 1) throw std::invalid_argument("synth_coil_maps: bad arguments");
  const GridShape grid(grid_n, grid_n);
  CMat smaps(ncoils, grid.nvox());
  if (ncoils == 1) {
    smaps.setOnes();
    return smaps;
  }

  // Built directly in k-space with compact spectral support (4% of the
  // sampling rate, strictly inside 10% of Nyquist) so the maps are periodic
  // and band-limited by construction: a Gaussian spectral bump modulated to
  // a blob centered on a ring, on top of a constant per-coil phasor.
  const double sig_k = 0.010 * grid_n;
  const double cut = 0.040 * grid_n;
  const double floor_amp = 0.55;
  const double blob_amp = 0.45;
  const int cut_i = static_cast<int>(cut);
  FftPlan bwd(grid, FftPlan::kBackward);

  for (int c = 0; c < ncoils; ++c) {
    const double ang = kTwoPi * c / ncoils;
    const double px = grid_n / 2.0 + 0.35 * grid_n * std::cos(ang);
    const double py = grid_n / 2.0 + 0.35 * grid_n * std::sin(ang);
    CVec spec = CVec::Zero(grid.nvox());
    for (int fx = -cut_i; fx <= cut_i; ++fx) {
      for (int fy = -cut_i; fy <= cut_i; ++fy) {
        const double kr2 = static_cast<double>(fx) * fx + static_cast<double>(fy) * fy;
        if (kr2 > cut * cut) continue;
        const int gx = (fx % grid_n + grid_n) % grid_n;
        const int gy = (fy % grid_n + grid_n) % grid_n;
        spec[gx * grid_n + gy] = std::polar(std::exp(-kr2 / (2 * sig_k * sig_k)),
                                            -kTwoPi * (fx * px + fy * py) / grid_n);
      }
    }
    bwd.execute(spec.data());  // blob centered at (px, py), real up to rounding
    spec /= spec.cwiseAbs().maxCoeff();
    smaps.row(c) = (CVec::Constant(grid.nvox(), std::polar(floor_amp, ang)) +
                    blob_amp * spec)
                       .transpose();
  }
  // root-sum-of-squares normalization
  for (int k = 0; k < grid.nvox(); ++k) {
    const double rss = std::sqrt(smaps.col(k).cwiseAbs2().sum());
    smaps.col(k) /= rss;
  }
  return smaps;
}

double median_magnitude(const CVec& img, const std::vector<std::uint8_t>& mask) {
  std::vector<double> mags;
  mags.reserve(img.size());
  for (Eigen::Index k = 0; k < img.size(); ++k) {
    if (mask.empty() || mask[k]) mags.push_back(std::abs(img[k]));
  }
  if (mags.empty()) return 0.0;
  const size_t mid = mags.size() / 2;
  std::nth_element(mags.begin(), mags.begin() + mid, mags.end());
  return mags[mid];
}

CVec normalize_median(const CVec& img) {
  const double maxmag = img.cwiseAbs().maxCoeff();
  if (maxmag == 0) return img;
  std::vector<std::uint8_t> mask(img.size());
  for (Eigen::Index k = 0; k < img.size(); ++k) mask[k] = std::abs(img[k]) > 0.05 * maxmag;
  const double med = median_magnitude(img, mask);
  if (med <= 0) return img;
  return img / med;
}

CVec crop_or_pad(const CVec& img, GridShape from, int target_n) {
  if (img.size() != from.nvox()) throw std::invalid_argument("crop_or_pad: size mismatch");
  if (from.nd != 2) throw std::invalid_argument("crop_or_pad: 2D only");
  CVec out = CVec::Zero(static_cast<Eigen::Index>(target_n) * target_n);
  for (int ox = 0; ox < target_n; ++ox) {
    const int sx = ox - target_n / 2 + from.n[0] / 2;
    if (sx < 0 || sx >= from.n[0]) continue;
    for (int oy = 0; oy < target_n; ++oy) {
      const int sy = oy - target_n / 2 + from.n[1] / 2;
      if (sy < 0 || sy >= from.n[1]) continue;
      out[ox * target_n + oy] = img[sx * from.n[1] + sy];
    }
  }
  return out;
}

namespace {

/// One randomized ellipse, rotated, with soft (anti-aliased) edge.
struct Ellipse {
  double cx, cy, a, b, phi, value;

  double eval(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(phi), s = std::sin(phi);
    const double u = (c * dx + s * dy) / a;
    const double v = (-s * dx + c * dy) / b;
    const double r2 = u * u + v * v;
    if (r2 >= 1.0) return 0.0;
    const double edge = std::min(1.0, 12.0 * (1.0 - std::sqrt(r2)));
    return value * edge;
  }
};

}  // namespace

Dataset gen_phantoms(int n, int grid_n, std::uint64_t seed) {
  if (n < 1 || grid_n < 8) throw std::invalid_argument("gen_phantoms: bad arguments");
  Dataset ds;
  ds.grid_n = grid_n;
  ds.images.reserve(n);
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(mix_seed(seed, 0x9fab7e11, i));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss;

    std::vector<Ellipse> parts;
    // skull-like outer ring: bright shell, dimmer interior
    const double r0 = 0.40 + 0.05 * u01(rng);
    parts.push_back({0, 0, r0, r0 * (0.85 + 0.1 * u01(rng)), 0.2 * gauss(rng), 1.0});
    parts.push_back({0, 0, r0 * 0.92, r0 * 0.92 * 0.9, parts[0].phi, -0.35});
    const int extras = 3 + static_cast<int>(u01(rng) * 5);
    for (int e = 0; e < extras; ++e) {
      parts.push_back({0.5 * r0 * gauss(rng) * 0.6, 0.5 * r0 * gauss(rng) * 0.6,
                       r0 * (0.05 + 0.25 * u01(rng)), r0 * (0.05 + 0.25 * u01(rng)),
                       std::numbers::pi * u01(rng), 0.6 * gauss(rng)});
    }
    // smooth random phase: a few low-frequency sinusoids
    const double ax = 0.6 * gauss(rng), ay = 0.6 * gauss(rng), aq = 0.3 * gauss(rng);

    CVec img(static_cast<Eigen::Index>(grid_n) * grid_n);
    for (int ix = 0; ix < grid_n; ++ix) {
      const double x = (ix - grid_n / 2) / (0.5 * grid_n);
      for (int iy = 0; iy < grid_n; ++iy) {
        const double y = (iy - grid_n / 2) / (0.5 * grid_n);
        double mag = 0;
        for (const auto& p : parts) mag += p.eval(x, y);
        mag = std::max(0.0, mag);
        const double phase = ax * std::sin(std::numbers::pi * x) +
                             ay * std::sin(std::numbers::pi * y) + aq * x * y;
        img[ix * grid_n + iy] = std::polar(mag, phase);
      }
    }
    ds.images.push_back(normalize_median(img));
  }
  split_dataset(ds, 0.8, 0.1, seed);
  return ds;
}

Dataset load_images(const std::filesystem::path& dir, int grid_n) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("load_images: not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".f32" || entry.path().extension() == ".raw") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) throw ConfigError("load_images: no .f32/.raw images in " + dir.string());
  std::sort(files.begin(), files.end());

  Dataset ds;
  ds.grid_n = grid_n;
  for (const auto& f : files) {
    GridShape grid;
    CVec img = load_image_f32(f, &grid);
    ds.images.push_back(normalize_median(crop_or_pad(img, grid, grid_n)));
  }
  split_dataset(ds, 0.8, 0.1, 0x10ad);
  return ds;
}

void split_dataset(Dataset& ds, double train_frac, double val_frac, std::uint64_t seed) {
  const int n = static_cast<int>(ds.images.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0x5b117));
  std::shuffle(order.begin(), order.end(), rng);
  const int ntrain = std::max(1, static_cast<int>(std::round(train_frac * n)));
  const int nval = std::max(n > 1 ? 1 : 0, static_cast<int>(std::round(val_frac * n)));
  ds.train.assign(order.begin(), order.begin() + std::min(ntrain, n));
  ds.val.assign(order.begin() + std::min(ntrain, n),
                order.begin() + std::min(ntrain + nval, n));
  ds.test.assign(order.begin() + std::min(ntrain + nval, n), order.end());
}

}  // namespace ktraj
