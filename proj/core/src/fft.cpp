#include "ktraj/fft.hpp"

#include <fftw3.h>

#include <mutex>

namespace ktraj {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

void check_finite(const CVec& v, const char* node) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i].real()) || !std::isfinite(v[i].imag())) {
      throw NumericalError(std::string("non-finite value at node '") + node + "' index " +
                           std::to_string(i));
    }
  }
}

void check_finite(const RMat& v, const char* node) {
  if (!v.allFinite()) {
    throw NumericalError(std::string("non-finite value at node '") + node + "'");
  }
}

FftPlan::FftPlan(GridShape grid, int sign) : grid_(grid) {
  std::lock_guard<std::mutex> lock(planner_mutex());
  // Planned with UNALIGNED so execute() accepts any caller buffer; ESTIMATE
  // keeps plan choice deterministic across runs.
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  auto* dummy = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * grid.nvox()));
  if (grid.nd == 1) {
    plan_ = fftw_plan_dft_1d(grid.n[0], dummy, dummy, sign, flags);
  } else {
    plan_ = fftw_plan_dft_2d(grid.n[0], grid.n[1], dummy, dummy, sign, flags);
  }
  fftw_free(dummy);
  if (!plan_) throw NumericalError("fftw plan creation failed");
}

FftPlan::~FftPlan() {
  if (plan_) {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(static_cast<fftw_plan>(plan_));
  }
}

FftPlan::FftPlan(FftPlan&& other) noexcept : grid_(other.grid_), plan_(other.plan_) {
  other.plan_ = nullptr;
}

void FftPlan::execute(Cplx* data) const {
  auto* p = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(static_cast<fftw_plan>(plan_), p, p);
}

}  // namespace ktraj
