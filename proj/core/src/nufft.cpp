#include "ktraj/nufft.hpp"

#include <cmath>
#include <numbers>

namespace ktraj {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_to_pi(double w) {
  // into [-pi, pi)
  double u = std::fmod(w + std::numbers::pi, kTwoPi);
  if (u < 0) u += kTwoPi;
  return u - std::numbers::pi;
}

int even_ceil(double x) {
  int v = static_cast<int>(std::ceil(x));
  return (v % 2 == 0) ? v : v + 1;
}

GridShape oversampled_shape(const GridShape& g, double oversample) {
  GridShape os = g;
  for (int d = 0; d < g.nd; ++d) os.n[d] = even_ceil(oversample * g.n[d]);
  return os;
}

GridShape check_plan_inputs(const RMat& coords, GridShape grid, const NufftOptions& opts) {
  if (grid.nd < 1 || grid.nd > 2) throw std::invalid_argument("nufft: nd must be 1 or 2");
  if (coords.cols() != grid.nd) throw std::invalid_argument("nufft: coords cols != nd");
  if (coords.rows() < 1) throw std::invalid_argument("nufft: need at least one sample");
  if (opts.oversample < 1.0) throw std::invalid_argument("nufft: oversample must be >= 1");
  for (int d = 0; d < grid.nd; ++d) {
    if (grid.n[d] < 4) throw std::invalid_argument("nufft: grid size must be >= 4 per dim");
    if (opts.kernel_width > even_ceil(opts.oversample * grid.n[d])) {
      throw std::invalid_argument("nufft: kernel_width exceeds oversampled grid");
    }
  }
  for (Eigen::Index j = 0; j < coords.rows(); ++j) {
    for (int d = 0; d < grid.nd; ++d) {
      if (!std::isfinite(coords(j, d))) {
        throw std::invalid_argument("nufft: non-finite coordinate at sample " +
                                    std::to_string(j) + " dim " + std::to_string(d));
      }
    }
  }
  return grid;
}

}  // namespace

double kb_optimal_shape(int kernel_width, double oversample) {
  const double a = oversample;
  const double w = kernel_width;
  return std::numbers::pi * std::sqrt((w * w) / (a * a) * (a - 0.5) * (a - 0.5) - 0.8);
}

/// Kaiser-Bessel kernel with the edge value subtracted so it reaches zero
/// continuously at |u| = J/2 (the transform then has no jumps when a sample
/// crosses a grid line, which keeps it differentiable to working accuracy):
/// I0(beta * sqrt(1 - (2u/J)^2)) - 1 on |u| <= J/2, zero outside.
double kb_kernel(double u, int width, double beta) {
  const double t = 2.0 * u / width;
  const double arg = 1.0 - t * t;
  if (arg < 0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(arg)) - 1.0;
}

/// Continuous Fourier transform of kb_kernel at frequency f (cycles per
/// grid sample): J * [sinh(sqrt(beta^2 - (pi J f)^2)) / sqrt(...) - sinc],
/// with the analytic continuation sin(x)/x past the kernel's cutoff; the
/// sinc term accounts for the subtracted edge value.
double kb_fourier(double f, int width, double beta) {
  const double z = std::numbers::pi * width * f;
  const double g = beta * beta - z * z;
  double ratio;
  if (g > 1e-12) {
    const double s = std::sqrt(g);
    ratio = std::sinh(s) / s;
  } else if (g < -1e-12) {
    const double s = std::sqrt(-g);
    ratio = std::sin(s) / s;
  } else {
    ratio = 1.0 + g / 6.0;
  }
  const double sinc = std::abs(z) > 1e-6 ? std::sin(z) / z : 1.0 - z * z / 6.0;
  return width * (ratio - sinc);
}

NufftPlan::NufftPlan(const RMat& coords, GridShape grid, NufftOptions opts)
    : coords_(coords),
      grid_(check_plan_inputs(coords, grid, opts)),
      os_grid_(oversampled_shape(grid, opts.oversample)),
      opts_(opts),
      fwd_fft_(os_grid_, FftPlan::kForward),
      bwd_fft_(os_grid_, FftPlan::kBackward) {
  if (opts_.kernel_shape <= 0) {
    opts_.kernel_shape = kb_optimal_shape(opts_.kernel_width, opts_.oversample);
  }
  const int J = opts_.kernel_width;
  const double beta = opts_.kernel_shape;
  const int ns = nsamples();

  first_tap_.resize(ns, grid_.nd);
  for (int d = 0; d < grid_.nd; ++d) {
    weights_[d].resize(ns, J);
    const int G = os_grid_.n[d];
    for (int j = 0; j < ns; ++j) {
      const double w = wrap_to_pi(coords_(j, d));
      coords_(j, d) = w;
      const double t = w * G / kTwoPi;  // continuous grid coordinate
      const int start = static_cast<int>(std::ceil(t - J / 2.0));
      first_tap_(j, d) = start;
      for (int q = 0; q < J; ++q) {
        weights_[d](j, q) = kb_kernel(t - (start + q), J, beta);
      }
    }
  }

  for (int d = 0; d < grid_.nd; ++d) {
    const int N = grid_.n[d];
    const int G = os_grid_.n[d];
    apod_[d].resize(N);
    for (int i = 0; i < N; ++i) {
      const int r = i - N / 2;
      apod_[d][i] = 1.0 / kb_fourier(static_cast<double>(r) / G, J, beta);
    }
  }
}

CVec nufft_forward(const NufftPlan& plan, const CVec& image) {
  const GridShape& g = plan.grid_;
  const GridShape& os = plan.os_grid_;
  if (image.size() != g.nvox()) throw std::invalid_argument("nufft_forward: image size mismatch");

  // Apodize and embed at centered offsets (mod G).
  CVec grid = CVec::Zero(os.nvox());
  const int Nx = g.n[0], Ny = g.n[1];
  const int Gx = os.n[0], Gy = os.n[1];
  for (int ix = 0; ix < Nx; ++ix) {
    const int gx = ((ix - Nx / 2) % Gx + Gx) % Gx;
    for (int iy = 0; iy < Ny; ++iy) {
      const int gy = g.nd == 2 ? ((iy - Ny / 2) % Gy + Gy) % Gy : 0;
      const double s = plan.apod_[0][ix] * (g.nd == 2 ? plan.apod_[1][iy] : 1.0);
      grid[gx * Gy + gy] = image[ix * Ny + iy] * s;
    }
  }
  plan.fwd_fft_.execute(grid.data());

  const int J = plan.opts_.kernel_width;
  const int ns = plan.nsamples();
  CVec out(ns);
  if (g.nd == 1) {
    for (int j = 0; j < ns; ++j) {
      Cplx acc = 0;
      const int sx = plan.first_tap_(j, 0);
      for (int qx = 0; qx < J; ++qx) {
        const int mx = ((sx + qx) % Gx + Gx) % Gx;
        acc += plan.weights_[0](j, qx) * grid[mx];
      }
      out[j] = acc;
    }
  } else {
    for (int j = 0; j < ns; ++j) {
      Cplx acc = 0;
      const int sx = plan.first_tap_(j, 0);
      const int sy = plan.first_tap_(j, 1);
      for (int qx = 0; qx < J; ++qx) {
        const int mx = ((sx + qx) % Gx + Gx) % Gx;
        const double wx = plan.weights_[0](j, qx);
        Cplx row = 0;
        for (int qy = 0; qy < J; ++qy) {
          const int my = ((sy + qy) % Gy + Gy) % Gy;
          row += plan.weights_[1](j, qy) * grid[mx * Gy + my];
        }
        acc += wx * row;
      }
      out[j] = acc;
    }
  }
  return out;
}

CVec nufft_adjoint(const NufftPlan& plan, const CVec& data) {
  const GridShape& g = plan.grid_;
  const GridShape& os = plan.os_grid_;
  if (data.size() != plan.nsamples()) {
    throw std::invalid_argument("nufft_adjoint: data size mismatch");
  }

  const int J = plan.opts_.kernel_width;
  const int ns = plan.nsamples();
  const int Gx = os.n[0], Gy = os.n[1];
  CVec grid = CVec::Zero(os.nvox());
  if (g.nd == 1) {
    for (int j = 0; j < ns; ++j) {
      const int sx = plan.first_tap_(j, 0);
      for (int qx = 0; qx < J; ++qx) {
        const int mx = ((sx + qx) % Gx + Gx) % Gx;
        grid[mx] += plan.weights_[0](j, qx) * data[j];
      }
    }
  } else {
    for (int j = 0; j < ns; ++j) {
      const int sx = plan.first_tap_(j, 0);
      const int sy = plan.first_tap_(j, 1);
      for (int qx = 0; qx < J; ++qx) {
        const int mx = ((sx + qx) % Gx + Gx) % Gx;
        const Cplx vx = plan.weights_[0](j, qx) * data[j];
        for (int qy = 0; qy < J; ++qy) {
          const int my = ((sy + qy) % Gy + Gy) % Gy;
          grid[mx * Gy + my] += plan.weights_[1](j, qy) * vx;
        }
      }
    }
  }
  plan.bwd_fft_.execute(grid.data());

  const int Nx = g.n[0], Ny = g.n[1];
  CVec out(g.nvox());
  for (int ix = 0; ix < Nx; ++ix) {
    const int gx = ((ix - Nx / 2) % Gx + Gx) % Gx;
    for (int iy = 0; iy < Ny; ++iy) {
      const int gy = g.nd == 2 ? ((iy - Ny / 2) % Gy + Gy) % Gy : 0;
      const double s = plan.apod_[0][ix] * (g.nd == 2 ? plan.apod_[1][iy] : 1.0);
      out[ix * Ny + iy] = grid[gx * Gy + gy] * s;
    }
  }
  return out;
}

ToeplitzKernel::ToeplitzKernel(const NufftPlan& plan)
    : grid_(plan.grid()),
      big_(grid_.nd == 1 ? GridShape(2 * grid_.n[0]) : GridShape(2 * grid_.n[0], 2 * grid_.n[1])),
      fwd_fft_(big_, FftPlan::kForward),
      bwd_fft_(big_, FftPlan::kBackward) {
  // h[d] = sum_j exp(+i w_j . d) for |d| < N: the adjoint of all-ones data
  // evaluated on the doubled grid.
  NufftPlan big_plan(plan.coords(), big_, plan.options());
  CVec h = nufft_adjoint(big_plan, CVec::Ones(plan.nsamples()));

  // Rearrange so offset d sits at index (d mod 2N), then enforce the exact
  // Hermitian symmetry h[-d] = conj(h[d]) of the true kernel.
  const int Bx = big_.n[0], By = big_.n[1];
  CVec hc = CVec::Zero(big_.nvox());
  for (int ix = 0; ix < Bx; ++ix) {
    const int dx = ix - Bx / 2;
    const int px = (dx % Bx + Bx) % Bx;
    for (int iy = 0; iy < By; ++iy) {
      const int dy = big_.nd == 2 ? iy - By / 2 : 0;
      const int py = (dy % By + By) % By;
      hc[px * By + py] = h[ix * By + iy];
    }
  }
  CVec sym(big_.nvox());
  for (int px = 0; px < Bx; ++px) {
    const int rx = (Bx - px) % Bx;
    for (int py = 0; py < By; ++py) {
      const int ry = (By - py) % By;
      sym[px * By + py] =
          0.5 * (hc[px * By + py] + std::conj(hc[rx * By + ry]));
    }
  }
  kernel_fft_ = std::move(sym);
  fwd_fft_.execute(kernel_fft_.data());
}

CVec ToeplitzKernel::apply(const CVec& image) const {
  if (image.size() != grid_.nvox()) throw std::invalid_argument("toeplitz: image size mismatch");
  const int Nx = grid_.n[0], Ny = grid_.n[1];
  const int Bx = big_.n[0], By = big_.n[1];

  // Embed centered offsets at index d + N (a contiguous centered block).
  CVec buf = CVec::Zero(big_.nvox());
  for (int ix = 0; ix < Nx; ++ix) {
    const int px = ix - Nx / 2 + Bx / 2;
    for (int iy = 0; iy < Ny; ++iy) {
      const int py = grid_.nd == 2 ? iy - Ny / 2 + By / 2 : 0;
      buf[px * By + py] = image[ix * Ny + iy];
    }
  }
  fwd_fft_.execute(buf.data());
  buf.array() *= kernel_fft_.array();
  bwd_fft_.execute(buf.data());
  buf /= static_cast<double>(big_.nvox());

  CVec out(grid_.nvox());
  for (int ix = 0; ix < Nx; ++ix) {
    const int px = ix - Nx / 2 + Bx / 2;
    for (int iy = 0; iy < Ny; ++iy) {
      const int py = grid_.nd == 2 ? iy - Ny / 2 + By / 2 : 0;
      out[ix * Ny + iy] = buf[px * By + py];
    }
  }
  return out;
}

CVec dft_oracle(const RMat& coords, GridShape grid, const CVec& image, bool allow_large) {
  if (!allow_large && grid.nvox() > 64 * 64) {
    throw std::invalid_argument("dft_oracle: grid larger than 64x64 (pass allow_large to override)");
  }
  if (image.size() != grid.nvox()) throw std::invalid_argument("dft_oracle: image size mismatch");
  const int ns = static_cast<int>(coords.rows());
  const int nv = grid.nvox();
  CVec out(ns);
  for (int j = 0; j < ns; ++j) {
    Cplx acc = 0;
    for (int k = 0; k < nv; ++k) {
      double phase = coords(j, 0) * centered_offset(grid, k, 0);
      if (grid.nd == 2) phase += coords(j, 1) * centered_offset(grid, k, 1);
      acc += image[k] * std::polar(1.0, -phase);
    }
    out[j] = acc;
  }
  return out;
}

CVec dft_oracle_adjoint(const RMat& coords, GridShape grid, const CVec& data, bool allow_large) {
  if (!allow_large && grid.nvox() > 64 * 64) {
    throw std::invalid_argument("dft_oracle: grid larger than 64x64 (pass allow_large to override)");
  }
  if (data.size() != coords.rows()) throw std::invalid_argument("dft_oracle_adjoint: size mismatch");
  const int ns = static_cast<int>(coords.rows());
  const int nv = grid.nvox();
  CVec out = CVec::Zero(nv);
  for (int k = 0; k < nv; ++k) {
    const int rx = centered_offset(grid, k, 0);
    const int ry = grid.nd == 2 ? centered_offset(grid, k, 1) : 0;
    Cplx acc = 0;
    for (int j = 0; j < ns; ++j) {
      double phase = coords(j, 0) * rx;
      if (grid.nd == 2) phase += coords(j, 1) * ry;
      acc += data[j] * std::polar(1.0, phase);
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace ktraj
