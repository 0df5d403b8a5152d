#pragma once
#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <tuple>

#include "qmri/image.hpp"

namespace qmri {
namespace detail {

// FFTW plan cache. Plan creation is not thread-safe and is guarded; plan
// execution via fftw_execute_dft is. Plans are created with FFTW_UNALIGNED
// so they can run on any buffer of the planned shape.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan get(int rows, int cols, int sign) {
    std::lock_guard<std::mutex> lock(mu_);
    const auto key = std::make_tuple(rows, cols, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    CImage in(rows, cols), out(rows, cols);
    // Column-major (rows x cols) memory equals row-major (cols x rows);
    // the 2D transform is axis-symmetric, so plan with swapped dims.
    fftw_plan p = fftw_plan_dft_2d(
        cols, rows, reinterpret_cast<fftw_complex*>(in.data()),
        reinterpret_cast<fftw_complex*>(out.data()), sign,
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_[key] = p;
    return p;
  }

  ~FftPlanCache() {
    for (auto& [k, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  std::mutex mu_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

}  // namespace detail

// Orthonormal 2D DFT (natural frequency ordering, no fftshift). The same
// 1/sqrt(n1 n2) factor is applied in both directions, so the inverse is the
// adjoint.
inline CImage fft2(const CImage& x, bool inverse = false) {
  const int rows = static_cast<int>(x.rows());
  const int cols = static_cast<int>(x.cols());
  CImage out(rows, cols);
  CImage in = x;  // fftw may not accept const input
  fftw_plan p = detail::FftPlanCache::instance().get(rows, cols,
                                                     inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  out *= 1.0 / std::sqrt(static_cast<double>(rows) * static_cast<double>(cols));
  return out;
}

}  // namespace qmri
