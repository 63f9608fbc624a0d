#include "ktraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace ktraj {

namespace {

double bilinear_mag(const CVec& img, int n, double x, double y) {
  x = std::clamp(x, 0.0, n - 1.0);
  y = std::clamp(y, 0.0, n - 1.0);
  const int x0 = std::min(static_cast<int>(x), n - 2);
  const int y0 = std::min(static_cast<int>(y), n - 2);
  const double fx = x - x0, fy = y - y0;
  auto at = [&](int ix, int iy) { return std::abs(img[ix * n + iy]); };
  return (1 - fx) * ((1 - fy) * at(x0, y0) + fy * at(x0, y0 + 1)) +
         fx * ((1 - fy) * at(x0 + 1, y0) + fy * at(x0 + 1, y0 + 1));
}

}  // namespace

PsfReport psf(const Trajectory& traj, int grid_n, const RVec* dcf, int nangles) {
  traj.validate();
  NufftPlan plan(traj.coords, GridShape(grid_n, grid_n));
  CVec weights = CVec::Ones(traj.nsamples());
  if (dcf) {
    if (dcf->size() != traj.nsamples()) throw std::invalid_argument("psf: dcf size mismatch");
    for (int j = 0; j < traj.nsamples(); ++j) weights[j] = (*dcf)[j];
  }
  PsfReport rep;
  rep.psf = nufft_adjoint(plan, weights);
  const double peak = rep.psf.cwiseAbs().maxCoeff();
  if (peak <= 0) throw NumericalError("psf: zero point spread function");
  rep.psf /= peak;

  const double c = grid_n / 2.0;  // DC pixel index
  const double dr = 0.25;
  const int nradii = static_cast<int>((grid_n / 2 - 1) / dr) + 1;
  rep.radii = RVec::LinSpaced(nradii, 0.0, dr * (nradii - 1));
  rep.profiles.resize(nangles, nradii);
  for (int a = 0; a < nangles; ++a) {
    const double ang = 2 * M_PI * a / nangles;
    const double ca = std::cos(ang), sa = std::sin(ang);
    for (int r = 0; r < nradii; ++r) {
      rep.profiles(a, r) = bilinear_mag(rep.psf, grid_n, c + rep.radii[r] * ca,
                                        c + rep.radii[r] * sa);
    }
  }

  RVec avg = rep.profiles.colwise().mean();
  const double half = 0.5 * avg[0];
  double r_half = rep.radii[nradii - 1];
  for (int r = 0; r + 1 < nradii; ++r) {
    if (avg[r] >= half && avg[r + 1] < half) {
      const double f = (avg[r] - half) / (avg[r] - avg[r + 1]);
      r_half = rep.radii[r] + f * dr;
      break;
    }
  }
  rep.fwhm_pixels = 2.0 * r_half;

  double inside = 0, total = 0;
  for (int ix = 0; ix < grid_n; ++ix) {
    for (int iy = 0; iy < grid_n; ++iy) {
      const double rad = std::hypot(ix - c, iy - c);
      const double e = std::norm(rep.psf[ix * grid_n + iy]);
      total += e;
      if (rad <= 3.0 * rep.fwhm_pixels) inside += e;
    }
  }
  rep.sidelobe_energy_ratio = total > 0 ? (total - inside) / total : 0.0;
  return rep;
}

namespace {

/// Normalized 7x7 Gaussian window, sigma 1.5.
RMat ssim_window() {
  const int half = 3;
  RMat w(7, 7);
  for (int i = -half; i <= half; ++i) {
    for (int j = -half; j <= half; ++j) {
      w(i + half, j + half) = std::exp(-(i * i + j * j) / (2.0 * 1.5 * 1.5));
    }
  }
  return w / w.sum();
}

RMat filter_valid(const RMat& img, const RMat& w) {
  const int half = (static_cast<int>(w.rows()) - 1) / 2;
  const int outx = static_cast<int>(img.rows()) - 2 * half;
  const int outy = static_cast<int>(img.cols()) - 2 * half;
  RMat out(outx, outy);
  for (int i = 0; i < outx; ++i) {
    for (int j = 0; j < outy; ++j) {
      out(i, j) = (img.block(i, j, w.rows(), w.cols()).array() * w.array()).sum();
    }
  }
  return out;
}

RMat magnitude_image(const CVec& x, GridShape grid) {
  RMat out(grid.n[0], grid.n[1]);
  for (int i = 0; i < grid.n[0]; ++i) {
    for (int j = 0; j < grid.n[1]; ++j) out(i, j) = std::abs(x[i * grid.n[1] + j]);
  }
  return out;
}

}  // namespace

double ssim(const CVec& x, const CVec& ref, GridShape grid) {
  if (x.size() != grid.nvox() || ref.size() != grid.nvox()) {
    throw std::invalid_argument("ssim: size mismatch");
  }
  if (grid.n[0] < 7 || grid.n[1] < 7) throw std::invalid_argument("ssim: image smaller than window");
  const RMat a = magnitude_image(x, grid);
  const RMat b = magnitude_image(ref, grid);
  const double range = b.maxCoeff();
  if (range <= 0) throw std::invalid_argument("ssim: empty reference");
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);

  const RMat w = ssim_window();
  RMat ua = filter_valid(a, w);
  RMat ub = filter_valid(b, w);
  RMat uaa = filter_valid(a.cwiseProduct(a), w);
  RMat ubb = filter_valid(b.cwiseProduct(b), w);
  RMat uab = filter_valid(a.cwiseProduct(b), w);

  RMat va = uaa - ua.cwiseProduct(ua);
  RMat vb = ubb - ub.cwiseProduct(ub);
  RMat vab = uab - ua.cwiseProduct(ub);

  double total = 0;
  for (int i = 0; i < ua.rows(); ++i) {
    for (int j = 0; j < ua.cols(); ++j) {
      const double num = (2 * ua(i, j) * ub(i, j) + c1) * (2 * vab(i, j) + c2);
      const double den =
          (ua(i, j) * ua(i, j) + ub(i, j) * ub(i, j) + c1) * (va(i, j) + vb(i, j) + c2);
      total += num / den;
    }
  }
  return total / (ua.rows() * ua.cols());
}

double psnr(const CVec& x, const CVec& ref, GridShape grid) {
  if (x.size() != grid.nvox() || ref.size() != grid.nvox()) {
    throw std::invalid_argument("psnr: size mismatch");
  }
  double mse = 0;
  double range = 0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double d = std::abs(x[k]) - std::abs(ref[k]);
    mse += d * d;
    range = std::max(range, std::abs(ref[k]));
  }
  mse /= x.size();
  if (mse <= 0 || range <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(range * range / mse));
}

double hermitian_overlap(const Trajectory& traj, double radius_eps) {
  traj.validate();
  if (radius_eps <= 0) throw std::invalid_argument("hermitian_overlap: eps must be positive");
  const int ns = traj.nsamples();
  const double cell = radius_eps;
  auto key = [&](double x, double y) {
    const auto ix = static_cast<std::int64_t>(std::floor(x / cell));
    const auto iy = static_cast<std::int64_t>(std::floor(y / cell));
    return (ix << 32) ^ (iy & 0xffffffff);
  };
  std::unordered_multimap<std::int64_t, int> buckets;
  buckets.reserve(ns);
  for (int j = 0; j < ns; ++j) buckets.emplace(key(traj.coords(j, 0), traj.coords(j, 1)), j);

  int hits = 0;
  for (int j = 0; j < ns; ++j) {
    const double tx = -traj.coords(j, 0), ty = -traj.coords(j, 1);
    bool found = false;
    for (int dx = -1; dx <= 1 && !found; ++dx) {
      for (int dy = -1; dy <= 1 && !found; ++dy) {
        auto range = buckets.equal_range(key(tx + dx * cell, ty + dy * cell));
        for (auto it = range.first; it != range.second; ++it) {
          const double ex = traj.coords(it->second, 0) - tx;
          const double ey = traj.coords(it->second, 1) - ty;
          if (ex * ex + ey * ey <= radius_eps * radius_eps) {
            found = true;
            break;
          }
        }
      }
    }
    if (found) ++hits;
  }
  return static_cast<double>(hits) / ns;
}

}  // namespace ktraj
