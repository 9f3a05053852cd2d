#include "cxrnet/fft.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

#include "cxrnet/error.hpp"

namespace cxr {

namespace {

std::size_t next_pow2(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

}  // namespace

FftPlan::FftPlan(std::size_t n) : n_(n), pow2_(n != 0 && (n & (n - 1)) == 0) {
  if (n == 0) throw ShapeError("FftPlan: zero-length transform");
  if (pow2_) {
    twiddles_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddles_[k] = {std::cos(a), std::sin(a)};
    }
    bitrev_.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      bitrev_[i] = r;
    }
    return;
  }
  // Bluestein: chirp_k = exp(-i pi k^2 / n), k^2 reduced mod 2n to keep the
  // phase argument small.
  const std::size_t m = next_pow2(2 * n - 1);
  padded_ = std::make_unique<FftPlan>(m);
  chirp_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t k2 = (k * k) % (2 * n);
    const double a = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    chirp_[k] = {std::cos(a), std::sin(a)};
  }
  chirp_hat_.assign(m, {0.0, 0.0});
  chirp_hat_[0] = std::conj(chirp_[0]);
  for (std::size_t k = 1; k < n; ++k) {
    chirp_hat_[k] = std::conj(chirp_[k]);
    chirp_hat_[m - k] = std::conj(chirp_[k]);
  }
  padded_->forward(chirp_hat_.data());
}

void FftPlan::forward(std::complex<double>* data) const {
  if (n_ == 1) return;
  pow2_ ? radix2(data, false) : bluestein(data, false);
}

void FftPlan::inverse(std::complex<double>* data) const {
  if (n_ == 1) return;
  pow2_ ? radix2(data, true) : bluestein(data, true);
}

void FftPlan::radix2(std::complex<double>* data, bool inverse) const {
  for (std::size_t i = 0; i < n_; ++i)
    if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        std::complex<double> w = twiddles_[k * step];
        if (inverse) w = std::conj(w);
        const std::complex<double> u = data[start + k];
        const std::complex<double> v = data[start + k + half] * w;
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
}

void FftPlan::bluestein(std::complex<double>* data, bool inverse) const {
  const std::size_t m = padded_->size();
  std::vector<std::complex<double>> work(m, {0.0, 0.0});
  // The inverse kernel is the conjugate chirp; conj(x) trick keeps one plan.
  for (std::size_t k = 0; k < n_; ++k) {
    const std::complex<double> x = inverse ? std::conj(data[k]) : data[k];
    work[k] = x * chirp_[k];
  }
  padded_->forward(work.data());
  for (std::size_t k = 0; k < m; ++k) work[k] *= chirp_hat_[k];
  padded_->inverse(work.data());
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n_; ++k) {
    const std::complex<double> y = work[k] * chirp_[k] * scale;
    data[k] = inverse ? std::conj(y) : y;
  }
}

const FftPlan& fft_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<FftPlan>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, std::make_unique<FftPlan>(n)).first;
  return *it->second;
}

void fft2_inplace(std::complex<double>* data, std::size_t h, std::size_t w, bool inverse) {
  const FftPlan& row_plan = fft_plan(w);
  for (std::size_t i = 0; i < h; ++i) {
    inverse ? row_plan.inverse(data + i * w) : row_plan.forward(data + i * w);
  }
  if (h == 1) return;
  const FftPlan& col_plan = fft_plan(h);
  std::vector<std::complex<double>> column(h);
  for (std::size_t j = 0; j < w; ++j) {
    for (std::size_t i = 0; i < h; ++i) column[i] = data[i * w + j];
    inverse ? col_plan.inverse(column.data()) : col_plan.forward(column.data());
    for (std::size_t i = 0; i < h; ++i) data[i * w + j] = column[i];
  }
}

}  // namespace cxr
