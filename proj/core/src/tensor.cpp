#include "cxrnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cxrnet/error.hpp"
#include "cxrnet/fft.hpp"

namespace cxr {

std::size_t shape_numel(const Shape& shape) noexcept {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool is_complex)
    : shape_(std::move(shape)),
      data_(shape_numel(shape_) * (is_complex ? 2 : 1), 0.0),
      complex_(is_complex) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " +
                     shape_str(shape_));
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::from_complex(Shape shape, std::span<const complex_type> values) {
  Tensor t(std::move(shape), true);
  if (values.size() != t.numel()) throw ShapeError("Tensor::from_complex: size mismatch");
  std::copy(values.begin(), values.end(), t.cvalues().begin());
  return t;
}

std::span<Tensor::complex_type> Tensor::cvalues() {
  if (!complex_) throw ShapeError("cvalues() on a real tensor");
  return {reinterpret_cast<complex_type*>(data_.data()), data_.size() / 2};
}

std::span<const Tensor::complex_type> Tensor::cvalues() const {
  if (!complex_) throw ShapeError("cvalues() on a real tensor");
  return {reinterpret_cast<const complex_type*>(data_.data()), data_.size() / 2};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::real_part() const {
  if (!complex_) return *this;
  Tensor t(shape_);
  for (std::size_t i = 0; i < t.data_.size(); ++i) t.data_[i] = data_[2 * i];
  return t;
}

Tensor Tensor::imag_part() const {
  Tensor t(shape_);
  if (!complex_) return t;
  for (std::size_t i = 0; i < t.data_.size(); ++i) t.data_[i] = data_[2 * i + 1];
  return t;
}

Tensor Tensor::as_complex() const {
  if (complex_) return *this;
  Tensor t(shape_, true);
  for (std::size_t i = 0; i < data_.size(); ++i) t.data_[2 * i] = data_[i];
  return t;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
  return a;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return out;
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor out = a;
  if (a.is_complex()) {
    auto oc = out.cvalues();
    auto bc = b.cvalues();
    for (std::size_t i = 0; i < oc.size(); ++i) oc[i] *= bc[i];
  } else {
    auto ov = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  }
  return out;
}

Tensor operator*(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  if (t.is_complex()) {
    for (auto c : t.cvalues()) m = std::max(m, std::abs(c));
  } else {
    for (double v : t.values()) m = std::max(m, std::abs(v));
  }
  return m;
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

namespace {

Tensor transform2(const Tensor& t, bool inverse) {
  if (t.rank() != 2 || t.numel() == 0)
    throw ShapeError("fft2: expected a non-empty [H,W] tensor, got " + shape_str(t.shape()));
  Tensor out = t.as_complex();
  const std::size_t h = t.dim(0);
  const std::size_t w = t.dim(1);
  fft2_inplace(out.cvalues().data(), h, w, inverse);
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(h * w);
    for (double& v : out.values()) v *= scale;
  }
  return out;
}

}  // namespace

Tensor fft2(const Tensor& t) { return transform2(t, false); }

Tensor ifft2(const Tensor& t) { return transform2(t, true); }

Tensor conv2_periodic(const Tensor& x, const Tensor& kernel_hat) {
  if (x.shape() != kernel_hat.shape())
    throw ShapeError("conv2_periodic: input " + shape_str(x.shape()) + " vs kernel " +
                     shape_str(kernel_hat.shape()));
  Tensor xf = fft2(x);
  if (kernel_hat.is_complex()) {
    auto xc = xf.cvalues();
    auto kc = kernel_hat.cvalues();
    for (std::size_t i = 0; i < xc.size(); ++i) xc[i] *= kc[i];
    return ifft2(xf);
  }
  auto xc = xf.cvalues();
  auto kv = kernel_hat.values();
  for (std::size_t i = 0; i < xc.size(); ++i) xc[i] *= kv[i];
  Tensor out = ifft2(xf);
  return x.is_complex() ? out : out.real_part();
}

Tensor modulus(const Tensor& t) {
  if (!t.is_complex()) {
    Tensor out = t;
    for (double& v : out.values()) v = std::abs(v);
    return out;
  }
  Tensor out(t.shape());
  auto c = t.cvalues();
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = std::hypot(c[i].real(), c[i].imag());
  return out;
}

bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

Tensor downsample2d(const Tensor& t, std::size_t factor) {
  if (!is_power_of_two(factor))
    throw ParameterError("downsample2d: factor " + std::to_string(factor) +
                         " is not a power of two");
  if (t.rank() != 2 && t.rank() != 3)
    throw ShapeError("downsample2d: expected [H,W] or [H,W,C], got " + shape_str(t.shape()));
  if (t.is_complex()) throw ShapeError("downsample2d: real tensor expected");
  const std::size_t h = t.dim(0), w = t.dim(1);
  const std::size_t c = t.rank() == 3 ? t.dim(2) : 1;
  const std::size_t oh = (h + factor - 1) / factor, ow = (w + factor - 1) / factor;
  Shape shape = t.rank() == 3 ? Shape{oh, ow, c} : Shape{oh, ow};
  Tensor out(shape);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t k = 0; k < c; ++k)
        out[(i * ow + j) * c + k] = t[((i * factor) * w + j * factor) * c + k];
  return out;
}

}  // namespace cxr
