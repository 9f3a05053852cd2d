#pragma once

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cxr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

// Dense row-major array of float64 scalars. Complex tensors store interleaved
// (re, im) pairs, so values().size() == 2 * numel() for them.
class Tensor {
 public:
  using complex_type = std::complex<double>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool is_complex = false);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor filled(Shape shape, double value);
  static Tensor from_complex(Shape shape, std::span<const complex_type> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return shape_numel(shape_); }
  bool is_complex() const noexcept { return complex_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<complex_type> cvalues();
  std::span<const complex_type> cvalues() const;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // Real-tensor element access, row-major.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at(std::size_t b, std::size_t i, std::size_t j, std::size_t k) {
    return data_[((b * shape_[1] + i) * shape_[2] + j) * shape_[3] + k];
  }
  double at(std::size_t b, std::size_t i, std::size_t j, std::size_t k) const {
    return data_[((b * shape_[1] + i) * shape_[2] + j) * shape_[3] + k];
  }

  Tensor reshaped(Shape shape) const;
  Tensor real_part() const;
  Tensor imag_part() const;
  Tensor as_complex() const;

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept {
    return shape_ == other.shape_ && complex_ == other.complex_;
  }

  void fill(double value) noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool complex_ = false;
};

// Elementwise arithmetic. Operands must share shape and complexity.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);
Tensor& operator+=(Tensor& a, const Tensor& b);

double sum(const Tensor& t);
double max_abs(const Tensor& t);
double l2_norm(const Tensor& t);

// Unnormalized forward DFT over the last two axes of a rank-2 tensor.
Tensor fft2(const Tensor& t);
// Inverse DFT including the 1/(H*W) factor.
Tensor ifft2(const Tensor& t);

// Circular convolution as ifft2(fft2(x) * kernel_hat). Real x with a complex
// kernel yields a complex result; a kernel with zero imaginary part stored as
// complex still yields complex.
Tensor conv2_periodic(const Tensor& x, const Tensor& kernel_hat);

Tensor modulus(const Tensor& t);

// Keeps every factor-th row and column starting at index 0. Works on rank-2
// [H,W] and rank-3 [H,W,C] tensors; extents are rounded up.
Tensor downsample2d(const Tensor& t, std::size_t factor);

bool is_power_of_two(std::size_t n) noexcept;

}  // namespace cxr
