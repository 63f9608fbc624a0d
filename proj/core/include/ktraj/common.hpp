#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ktraj {

using Cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;
using SpMat = Eigen::SparseMatrix<double>;

/// Invalid or unparseable configuration / inputs. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A requested trajectory or run cannot satisfy hardware limits. CLI exit code 3.
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown (non-finite values, solver failure). CLI exit code 4.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Image grid, 1D or 2D. For 1D, n[1] == 1. Flattened index = ix * n[1] + iy.
struct GridShape {
  int nd = 2;
  std::array<int, 2> n{0, 1};

  GridShape() = default;
  GridShape(int nx) : nd(1), n{nx, 1} {}
  GridShape(int nx, int ny) : nd(2), n{nx, ny} {}

  int nvox() const { return n[0] * n[1]; }
  bool operator==(const GridShape&) const = default;
};

/// Centered pixel offset of flat index k along dim d: idx_d - floor(n_d/2).
inline int centered_offset(const GridShape& g, int k, int d) {
  const int idx = (d == 0) ? k / g.n[1] : k % g.n[1];
  return idx - g.n[d] / 2;
}

/// splitmix64 mixing; used to derive independent stream seeds from
/// (seed, purpose, index) tuples so randomness is stateless and resumable.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(a) ^ b) ^ c);
}

/// Throws NumericalError naming `node` if v contains a non-finite entry.
void check_finite(const CVec& v, const char* node);
void check_finite(const RMat& v, const char* node);

inline void check_finite(const CVec& v, const std::string& node) { check_finite(v, node.c_str()); }

}  // namespace ktraj
