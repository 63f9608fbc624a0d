#include "ktraj/recon.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ktraj {

CgResult cg_solve(const LinOp& H, const CVec& b, int iters, double tol) {
  CgResult res;
  res.x = CVec::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0 || iters <= 0) return res;

  CVec r = b;
  CVec p = r;
  double rs = r.squaredNorm();
  for (int it = 0; it < iters; ++it) {
    CVec hp = H(p);
    const Cplx curv = p.dot(hp);
    if (it == 0 && std::abs(curv.imag()) > 1e-6 * p.squaredNorm() &&
        std::abs(curv.imag()) > 1e-8 * std::abs(curv.real())) {
      throw NumericalError("cg_solve: operator is not Hermitian (complex curvature)");
    }
    const double denom = curv.real();
    if (denom <= 0) break;  // numerically semi-definite; keep current iterate
    const double alpha = rs / denom;
    res.x += alpha * p;
    r -= alpha * hp;
    const double rs_new = r.squaredNorm();
    res.residuals.push_back(std::sqrt(rs_new) / bnorm);
    if (res.residuals.back() < tol) break;
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  return res;
}

CVec roughness_normal(const CVec& x, GridShape grid) {
  if (x.size() != grid.nvox()) throw std::invalid_argument("roughness_normal: size mismatch");
  const int nx = grid.n[0], ny = grid.n[1];
  CVec out = CVec::Zero(x.size());
  for (int ix = 0; ix + 1 < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      const Cplx d = x[(ix + 1) * ny + iy] - x[ix * ny + iy];
      out[(ix + 1) * ny + iy] += d;
      out[ix * ny + iy] -= d;
    }
  }
  if (grid.nd == 2) {
    for (int ix = 0; ix < nx; ++ix) {
      for (int iy = 0; iy + 1 < ny; ++iy) {
        const Cplx d = x[ix * ny + iy + 1] - x[ix * ny + iy];
        out[ix * ny + iy + 1] += d;
        out[ix * ny + iy] -= d;
      }
    }
  }
  return out;
}

CVec init_recon(const SenseModel& m, const CVec& y, double lambda, int cg_iters, double cg_tol) {
  const GridShape grid = m.grid();
  CVec aty = sense_adjoint(m, y);
  LinOp H = [&](const CVec& v) -> CVec {
    return sense_normal(m, v) + lambda * roughness_normal(v, grid);
  };
  return cg_solve(H, aty, cg_iters, cg_tol).x;
}

CVec dc_update(const SenseModel& m, const CVec& y, const CVec& z, double mu, int cg_iters,
               double cg_tol) {
  CVec b = sense_adjoint(m, y) + mu * z;
  LinOp H = [&](const CVec& v) -> CVec { return sense_normal(m, v) + mu * v; };
  return cg_solve(H, b, cg_iters, cg_tol).x;
}

CVec denoise(const Wavelet2D& wavelet, const CVec& z, const RVec& theta) {
  if (theta.size() != wavelet.nsubbands()) {
    throw std::invalid_argument("denoise: theta size != number of subbands");
  }
  CVec coef = wavelet.analyze(z);
  const auto& band = wavelet.subband_ids();
  for (Eigen::Index i = 0; i < coef.size(); ++i) {
    coef[i] = soft_threshold(coef[i], theta[band[i]]);
  }
  return wavelet.synthesize(coef);
}

int median_pivot(const CVec& img, const std::vector<std::uint8_t>& mask) {
  std::vector<int> idx;
  idx.reserve(img.size());
  for (Eigen::Index k = 0; k < img.size(); ++k) {
    if (mask.empty() || mask[k]) idx.push_back(static_cast<int>(k));
  }
  if (idx.empty()) return -1;
  auto mid = idx.begin() + idx.size() / 2;
  std::nth_element(idx.begin(), mid, idx.end(),
                   [&](int a, int b) { return std::abs(img[a]) < std::abs(img[b]); });
  return *mid;
}

ReconResult unrolled_recon(const SenseModel& m, const CVec& y, const UnrolledConfig& cfg,
                           ReconTape* tape) {
  if (cfg.mu <= 0) throw std::invalid_argument("unrolled_recon: mu must be positive");
  if (cfg.n_blocks < 0) throw std::invalid_argument("unrolled_recon: negative n_blocks");
  const RVec theta = cfg.theta_or_zero();
  if ((theta.array() < 0).any()) {
    throw std::invalid_argument("unrolled_recon: negative threshold");
  }

  ReconResult res;
  CVec x0_raw;
  std::vector<double> cg_hist;
  if (cfg.init_mode == UnrolledConfig::InitMode::kAdjoint) {
    x0_raw = sense_adjoint(m, y);
  } else {
    const double lambda_abs =
        cfg.init_lambda_abs > 0 ? cfg.init_lambda_abs : cfg.init_lambda * normal_op_scale(m);
    CVec aty = sense_adjoint(m, y);
    const GridShape grid = m.grid();
    LinOp H = [&](const CVec& v) -> CVec {
      return sense_normal(m, v) + lambda_abs * roughness_normal(v, grid);
    };
    CgResult cg = cg_solve(H, aty, cfg.cg_iters, cfg.cg_tol);
    x0_raw = std::move(cg.x);
    cg_hist = std::move(cg.residuals);
  }

  const int pivot = median_pivot(x0_raw, m.support);
  double scale = pivot >= 0 ? std::abs(x0_raw[pivot]) : 0.0;
  if (scale <= 0) scale = 1.0;

  CVec y_scaled = y / scale;
  CVec z = x0_raw / scale;
  const double ynorm = y_scaled.norm();

  if (tape) {
    tape->y = y;
    tape->x0_raw = x0_raw;
    tape->scale = scale;
    tape->pivot = pivot;
    tape->y_scaled = y_scaled;
    tape->x_blocks.clear();
    tape->z_blocks.clear();
  }

  Wavelet2D wavelet(m.grid(), cfg.wavelet_levels);
  for (int i = 0; i < cfg.n_blocks; ++i) {
    CVec b = sense_adjoint(m, y_scaled) + cfg.mu * z;
    LinOp H = [&](const CVec& v) -> CVec { return sense_normal(m, v) + cfg.mu * v; };
    CgResult cg = cg_solve(H, b, cfg.cg_iters, cfg.cg_tol);
    for (double r : cg.residuals) cg_hist.push_back(r);
    res.per_block_residuals.push_back(
        ynorm > 0 ? (sense_forward(m, cg.x) - y_scaled).norm() / ynorm : 0.0);
    z = denoise(wavelet, cg.x, theta);
    if (tape) {
      tape->x_blocks.push_back(cg.x);
      tape->z_blocks.push_back(z);
    }
  }

  res.image = scale * z;
  res.x0 = x0_raw;
  res.median_scale = scale;
  res.cg_residuals = std::move(cg_hist);
  return res;
}

CsResult cs_recon(const SenseModel& m, const CVec& y, double lambda_ratio, int iters,
                  int wavelet_levels) {
  if (lambda_ratio < 0) throw std::invalid_argument("cs_recon: negative ratio");
  const GridShape grid = m.grid();
  Wavelet2D wavelet(grid, wavelet_levels);

  CVec aty = sense_adjoint(m, y);
  const double lambda = lambda_ratio * aty.cwiseAbs().maxCoeff();

  // ||K||^2 for K = [A; W pad] via power iteration on A'A + W'W.
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> g;
  CVec v(grid.nvox());
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = Cplx(g(rng), g(rng));
  v /= v.norm();
  double knorm2 = 1.0;
  for (int it = 0; it < 30; ++it) {
    CVec w = sense_normal(m, v) + wavelet.analyze_adjoint(wavelet.analyze(v));
    knorm2 = w.norm();
    if (knorm2 == 0) break;
    v = w / knorm2;
  }
  const double sigma = 0.95 / std::sqrt(std::max(knorm2, 1e-12));
  const double tau = sigma;

  CVec x = CVec::Zero(grid.nvox());
  CVec xbar = x;
  CVec z1 = CVec::Zero(y.size());
  CVec z2 = CVec::Zero(wavelet.padded_grid().nvox());

  CsResult res;
  res.lambda = lambda;
  for (int it = 0; it < iters; ++it) {
    // dual ascent; prox of (||.-y||^2)* and of the l1 conjugate (linf ball)
    z1 = (z1 + sigma * sense_forward(m, xbar) - sigma * y) / (1.0 + sigma / 2.0);
    CVec wz = z2 + sigma * wavelet.analyze(xbar);
    for (Eigen::Index k = 0; k < wz.size(); ++k) {
      const double mag = std::abs(wz[k]);
      z2[k] = mag > lambda ? wz[k] * (lambda / mag) : wz[k];
    }
    CVec x_new = x - tau * (sense_adjoint(m, z1) + wavelet.analyze_adjoint(z2));
    xbar = 2.0 * x_new - x;
    x = std::move(x_new);

    const double fidelity = (sense_forward(m, x) - y).squaredNorm();
    double l1 = 0;
    if (lambda > 0) {
      CVec wx = wavelet.analyze(x);
      l1 = wx.cwiseAbs().sum();
    }
    res.objective.push_back(fidelity + lambda * l1);
  }
  res.image = std::move(x);
  return res;
}

}  // namespace ktraj
