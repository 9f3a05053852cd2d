#include "cxrnet/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "cxrnet/error.hpp"

namespace cxr::img {

Tensor resize_bilinear(const Tensor& t, std::size_t height, std::size_t width) {
  if (t.rank() != 2) throw ShapeError("resize expects [H,W], got " + shape_str(t.shape()));
  const std::size_t H = t.dim(0), W = t.dim(1);
  if (H < 2 || W < 2 || height == 0 || width == 0)
    throw ShapeError("resize needs an input of at least 2x2 and a non-empty target");
  if (H == height && W == width) return t;
  Tensor out({height, width});
  const double sy = static_cast<double>(H) / static_cast<double>(height);
  const double sx = static_cast<double>(W) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const auto y0 = std::min(static_cast<std::size_t>(fy), H - 2);
    const double ay = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const auto x0 = std::min(static_cast<std::size_t>(fx), W - 2);
      const double ax = fx - static_cast<double>(x0);
      const double top = (1.0 - ax) * t.at(y0, x0) + ax * t.at(y0, x0 + 1);
      const double bot = (1.0 - ax) * t.at(y0 + 1, x0) + ax * t.at(y0 + 1, x0 + 1);
      out.at(y, x) = (1.0 - ay) * top + ay * bot;
    }
  }
  return out;
}

Tensor hist_equalize(const Tensor& t) {
  if (t.empty()) return t;
  auto bin = [](double v) {
    return static_cast<std::size_t>(std::clamp(std::floor(v * 256.0), 0.0, 255.0));
  };
  std::array<std::size_t, 256> hist{};
  for (double v : t.values()) ++hist[bin(v)];
  std::array<double, 256> cdf{};
  std::size_t acc = 0;
  const double n = static_cast<double>(t.values().size());
  for (std::size_t b = 0; b < 256; ++b) {
    acc += hist[b];
    cdf[b] = static_cast<double>(acc) / n;
  }
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.values().size(); ++i) out[i] = cdf[bin(t[i])];
  return out;
}

Standardization compute_standardization(std::span<const Tensor* const> images) {
  double sum = 0.0, count = 0.0;
  for (const Tensor* t : images)
    for (double v : t->values()) {
      sum += v;
      count += 1.0;
    }
  if (count == 0.0) throw ValidationError("standardization needs a non-empty training set");
  const double mean = sum / count;
  double ss = 0.0;
  for (const Tensor* t : images)
    for (double v : t->values()) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / count);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
    throw ValidationError("training images have zero standard deviation");
  return {mean, sd};
}

Tensor standardize(const Tensor& t, const Standardization& s) {
  if (!(s.std > 0.0)) throw ValidationError("standard deviation must be positive");
  Tensor out(t.shape());
  const double inv = 1.0 / s.std;
  for (std::size_t i = 0; i < t.values().size(); ++i) out[i] = (t[i] - s.mean) * inv;
  return out;
}

Tensor rescale_unit(const Tensor& t) {
  if (t.empty()) return t;
  const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
  const double a = *lo, b = *hi;
  if (!(b > a)) return Tensor::filled(t.shape(), 1.0);
  Tensor out(t.shape());
  const double inv = 1.0 / (b - a);
  for (std::size_t i = 0; i < t.values().size(); ++i) out[i] = (t[i] - a) * inv;
  return out;
}

}  // namespace cxr::img
