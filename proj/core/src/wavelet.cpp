#include "ktraj/wavelet.hpp"

#include <cmath>

namespace ktraj {

namespace {

// Daubechies 4-tap lowpass; highpass by quadrature mirror g[k] = (-1)^k h[3-k].
const double kSqrt3 = std::sqrt(3.0);
const double kNorm = 4.0 * std::sqrt(2.0);
const double kH[4] = {(1 + kSqrt3) / kNorm, (3 + kSqrt3) / kNorm, (3 - kSqrt3) / kNorm,
                      (1 - kSqrt3) / kNorm};
const double kG[4] = {kH[3], -kH[2], kH[1], -kH[0]};

int pad_to_multiple(int n, int factor) { return ((n + factor - 1) / factor) * factor; }

/// One periodic analysis step along a length-n strided lane.
void dwt_lane(Cplx* data, int n, int stride, std::vector<Cplx>& tmp) {
  const int half = n / 2;
  for (int i = 0; i < half; ++i) {
    Cplx a = 0, d = 0;
    for (int k = 0; k < 4; ++k) {
      const Cplx v = data[((2 * i + k) % n) * stride];
      a += kH[k] * v;
      d += kG[k] * v;
    }
    tmp[i] = a;
    tmp[half + i] = d;
  }
  for (int i = 0; i < n; ++i) data[i * stride] = tmp[i];
}

void idwt_lane(Cplx* data, int n, int stride, std::vector<Cplx>& tmp) {
  const int half = n / 2;
  for (int i = 0; i < n; ++i) tmp[i] = 0;
  for (int i = 0; i < half; ++i) {
    const Cplx a = data[i * stride];
    const Cplx d = data[(half + i) * stride];
    for (int k = 0; k < 4; ++k) {
      tmp[(2 * i + k) % n] += kH[k] * a + kG[k] * d;
    }
  }
  for (int i = 0; i < n; ++i) data[i * stride] = tmp[i];
}

}  // namespace

Wavelet2D::Wavelet2D(GridShape image_grid, int levels) : grid_(image_grid), levels_(levels) {
  if (levels < 1 || levels > 8) throw std::invalid_argument("wavelet: levels out of range");
  if (grid_.nd != 2) throw std::invalid_argument("wavelet: 2D images only");
  const int factor = 1 << levels;
  padded_ = GridShape(pad_to_multiple(grid_.n[0], factor), pad_to_multiple(grid_.n[1], factor));
  for (int d = 0; d < 2; ++d) {
    if (padded_.n[d] - grid_.n[d] > grid_.n[d]) {
      throw std::invalid_argument("wavelet: image too small for symmetric padding at this depth");
    }
    if ((padded_.n[d] >> (levels - 1)) < 4) {
      throw std::invalid_argument("wavelet: too many levels for this image size");
    }
  }

  // subband ids: 0 = final LL; per level l (coarse first), bands 3l-2..3l are
  // LH, HL, HH of that level in the pyramid layout.
  band_.assign(padded_.nvox(), 0);
  const int px = padded_.n[0], py = padded_.n[1];
  for (int lvl = 1; lvl <= levels; ++lvl) {
    // lvl counts from finest (1) to coarsest (levels)
    const int nx = px >> (lvl - 1), ny = py >> (lvl - 1);
    const int hx = nx / 2, hy = ny / 2;
    const int base = 3 * (levels - lvl) + 1;  // coarser level -> smaller id
    for (int ix = 0; ix < nx; ++ix) {
      for (int iy = 0; iy < ny; ++iy) {
        if (ix < hx && iy < hy) continue;  // approx region, refined below
        int id;
        if (ix < hx) {
          id = base;  // LH: low in x, high in y
        } else if (iy < hy) {
          id = base + 1;  // HL
        } else {
          id = base + 2;  // HH
        }
        band_[ix * py + iy] = id;
      }
    }
  }
}

CVec Wavelet2D::pad(const CVec& img) const {
  const int nx = grid_.n[0], ny = grid_.n[1];
  const int px = padded_.n[0], py = padded_.n[1];
  CVec big(padded_.nvox());
  auto reflect = [](int i, int n) { return (i < n) ? i : 2 * n - 1 - i; };
  for (int ix = 0; ix < px; ++ix) {
    const int sx = reflect(ix, nx);
    for (int iy = 0; iy < py; ++iy) {
      big[ix * py + iy] = img[sx * ny + reflect(iy, ny)];
    }
  }
  return big;
}

CVec Wavelet2D::pad_adjoint(const CVec& big) const {
  const int nx = grid_.n[0], ny = grid_.n[1];
  const int px = padded_.n[0], py = padded_.n[1];
  CVec img = CVec::Zero(grid_.nvox());
  auto reflect = [](int i, int n) { return (i < n) ? i : 2 * n - 1 - i; };
  for (int ix = 0; ix < px; ++ix) {
    const int sx = reflect(ix, nx);
    for (int iy = 0; iy < py; ++iy) {
      img[sx * ny + reflect(iy, ny)] += big[ix * py + iy];
    }
  }
  return img;
}

void Wavelet2D::dwt_inplace(CVec& buf) const {
  const int px = padded_.n[0], py = padded_.n[1];
  std::vector<Cplx> tmp(std::max(px, py));
  int nx = px, ny = py;
  for (int lvl = 0; lvl < levels_; ++lvl) {
    for (int ix = 0; ix < nx; ++ix) dwt_lane(buf.data() + ix * py, ny, 1, tmp);
    for (int iy = 0; iy < ny; ++iy) dwt_lane(buf.data() + iy, nx, py, tmp);
    nx /= 2;
    ny /= 2;
  }
}

void Wavelet2D::idwt_inplace(CVec& buf) const {
  const int px = padded_.n[0], py = padded_.n[1];
  std::vector<Cplx> tmp(std::max(px, py));
  for (int lvl = levels_ - 1; lvl >= 0; --lvl) {
    const int nx = px >> lvl, ny = py >> lvl;
    for (int iy = 0; iy < ny; ++iy) idwt_lane(buf.data() + iy, nx, py, tmp);
    for (int ix = 0; ix < nx; ++ix) idwt_lane(buf.data() + ix * py, ny, 1, tmp);
  }
}

CVec Wavelet2D::analyze(const CVec& img) const {
  if (img.size() != grid_.nvox()) throw std::invalid_argument("wavelet analyze: size mismatch");
  CVec buf = pad(img);
  dwt_inplace(buf);
  return buf;
}

CVec Wavelet2D::synthesize(const CVec& coef) const {
  if (coef.size() != padded_.nvox()) {
    throw std::invalid_argument("wavelet synthesize: size mismatch");
  }
  CVec buf = coef;
  idwt_inplace(buf);
  const int ny = grid_.n[1], py = padded_.n[1];
  CVec img(grid_.nvox());
  for (int ix = 0; ix < grid_.n[0]; ++ix) {
    for (int iy = 0; iy < ny; ++iy) img[ix * ny + iy] = buf[ix * py + iy];
  }
  return img;
}

CVec Wavelet2D::analyze_adjoint(const CVec& coef) const {
  if (coef.size() != padded_.nvox()) {
    throw std::invalid_argument("wavelet analyze_adjoint: size mismatch");
  }
  CVec buf = coef;
  idwt_inplace(buf);  // W' = W^{-1} for an orthonormal transform
  return pad_adjoint(buf);
}

CVec Wavelet2D::synthesize_adjoint(const CVec& img) const {
  if (img.size() != grid_.nvox()) {
    throw std::invalid_argument("wavelet synthesize_adjoint: size mismatch");
  }
  const int ny = grid_.n[1], py = padded_.n[1];
  CVec buf = CVec::Zero(padded_.nvox());
  for (int ix = 0; ix < grid_.n[0]; ++ix) {
    for (int iy = 0; iy < ny; ++iy) buf[ix * py + iy] = img[ix * ny + iy];
  }
  dwt_inplace(buf);
  return buf;
}

}  // namespace ktraj
