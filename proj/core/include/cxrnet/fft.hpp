#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <vector>

namespace cxr {

// One-dimensional complex DFT plan. Powers of two run an iterative radix-2
// transform; every other length goes through Bluestein's chirp-z algorithm on
// a padded radix-2 plan.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const noexcept { return n_; }

  // In-place, unnormalized. inverse() applies the conjugate kernel without
  // the 1/n factor.
  void forward(std::complex<double>* data) const;
  void inverse(std::complex<double>* data) const;

 private:
  void radix2(std::complex<double>* data, bool inverse) const;
  void bluestein(std::complex<double>* data, bool inverse) const;

  std::size_t n_;
  bool pow2_;
  std::vector<std::complex<double>> twiddles_;   // radix-2 only
  std::vector<std::size_t> bitrev_;              // radix-2 only
  std::vector<std::complex<double>> chirp_;      // Bluestein only
  std::vector<std::complex<double>> chirp_hat_;  // Bluestein only
  std::unique_ptr<FftPlan> padded_;              // Bluestein only
};

// Shared per-thread plan cache.
const FftPlan& fft_plan(std::size_t n);

// 2-D transform of a row-major H x W complex buffer, in place.
void fft2_inplace(std::complex<double>* data, std::size_t h, std::size_t w, bool inverse);

}  // namespace cxr
