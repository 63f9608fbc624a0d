#pragma once

#include "ktraj/common.hpp"

namespace ktraj {

/// RAII wrapper around an in-place complex FFTW plan for one grid size.
/// Planning is serialized internally (the FFTW planner is not thread-safe);
/// execute() is safe to call concurrently from multiple threads.
class FftPlan {
 public:
  static constexpr int kForward = -1;   // e^{-i...}
  static constexpr int kBackward = +1;  // e^{+i...}, unnormalized

  FftPlan(GridShape grid, int sign);
  ~FftPlan();

  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  FftPlan(FftPlan&& other) noexcept;
  FftPlan& operator=(FftPlan&&) = delete;

  /// In-place transform of grid.nvox() complex values. Unnormalized.
  void execute(Cplx* data) const;

  const GridShape& grid() const { return grid_; }

 private:
  GridShape grid_;
  void* plan_ = nullptr;  // fftw_plan
};

}  // namespace ktraj
