#include "cxrnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cxrnet/error.hpp"

namespace cxr::img {

namespace {

// Continuous reflection about the first and last sample centres.
double reflect_coord(double v, std::size_t n) {
  if (n <= 1) return 0.0;
  const double last = static_cast<double>(n - 1);
  const double period = 2.0 * last;
  double r = std::fmod(v, period);
  if (r < 0.0) r += period;
  if (r > last) r = period - r;
  return r;
}

void require_plane(const Tensor& t) {
  if (t.rank() != 2 && t.rank() != 3) throw ShapeError("warp expects [H,W] or [H,W,C]");
}

}  // namespace

bool AffineWarp::is_identity() const noexcept {
  return m == std::array<double, 4>{1.0, 0.0, 0.0, 1.0} && offset[0] == 0.0 && offset[1] == 0.0;
}

AffineWarp draw_warp(const AugmentConfig& cfg, std::size_t height, std::size_t width, Rng& rng) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double theta = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * deg;
  const double shear = rng.uniform(-cfg.shear_deg, cfg.shear_deg) * deg;
  const double ty = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * static_cast<double>(height);
  const double tx = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * static_cast<double>(width);
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double fy = rng.bernoulli(cfg.vflip_p) ? -1.0 : 1.0;
  const double fx = rng.bernoulli(cfg.hflip_p) ? -1.0 : 1.0;
  if (!(scale > 0.0)) throw ParameterError("augmentation scale must be positive");

  // forward map F = R * Sh * S * Flip on (y, x) offsets from the centre
  const double c = std::cos(theta), s = std::sin(theta), t = std::tan(shear);
  const std::array<double, 4> rot{c, -s, s, c};
  const std::array<double, 4> sh{1.0, 0.0, t, 1.0};
  auto mul = [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
    return std::array<double, 4>{a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
                                 a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]};
  };
  const std::array<double, 4> f =
      mul(mul(rot, sh), std::array<double, 4>{scale * fy, 0.0, 0.0, scale * fx});
  const double det = f[0] * f[3] - f[1] * f[2];
  const std::array<double, 4> inv{f[3] / det, -f[1] / det, -f[2] / det, f[0] / det};

  // source = inv * (p - centre - shift) + centre
  const double cy = 0.5 * static_cast<double>(height - 1);
  const double cx = 0.5 * static_cast<double>(width - 1);
  AffineWarp w;
  w.m = inv;
  const double py = -cy - ty, px = -cx - tx;
  w.offset = {inv[0] * py + inv[1] * px + cy, inv[2] * py + inv[3] * px + cx};
  return w;
}

Tensor warp_bilinear(const Tensor& t, const AffineWarp& w) {
  require_plane(t);
  const std::size_t H = t.dim(0), W = t.dim(1), C = t.rank() == 3 ? t.dim(2) : 1;
  Tensor out(t.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto src = w.source(static_cast<double>(y), static_cast<double>(x));
      const double sy = reflect_coord(src[0], H), sx = reflect_coord(src[1], W);
      const auto y0 = std::min(static_cast<std::size_t>(sy), H > 1 ? H - 2 : 0);
      const auto x0 = std::min(static_cast<std::size_t>(sx), W > 1 ? W - 2 : 0);
      const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const double ay = sy - static_cast<double>(y0), ax = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        auto at = [&](std::size_t i, std::size_t j) { return t[(i * W + j) * C + c]; };
        const double top = (1.0 - ax) * at(y0, x0) + ax * at(y0, x1);
        const double bot = (1.0 - ax) * at(y1, x0) + ax * at(y1, x1);
        out[(y * W + x) * C + c] = (1.0 - ay) * top + ay * bot;
      }
    }
  return out;
}

Tensor warp_nearest(const Tensor& t, const AffineWarp& w) {
  require_plane(t);
  const std::size_t H = t.dim(0), W = t.dim(1), C = t.rank() == 3 ? t.dim(2) : 1;
  Tensor out(t.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto src = w.source(static_cast<double>(y), static_cast<double>(x));
      const auto sy = static_cast<std::size_t>(std::lround(reflect_coord(src[0], H)));
      const auto sx = static_cast<std::size_t>(std::lround(reflect_coord(src[1], W)));
      for (std::size_t c = 0; c < C; ++c) out[(y * W + x) * C + c] = t[(sy * W + sx) * C + c];
    }
  return out;
}

data::Sample augment(const data::Sample& s, const AugmentConfig& cfg, Rng& rng) {
  if (s.image.rank() != 2) throw ShapeError("augment expects an [H,W] image");
  const AffineWarp w = draw_warp(cfg, s.image.dim(0), s.image.dim(1), rng);
  data::Sample out = s;
  if (w.is_identity()) return out;
  out.image = warp_bilinear(s.image, w);
  if (!s.float_mask.empty()) {
    out.float_mask = warp_bilinear(s.float_mask, w);
    for (double& v : out.float_mask.values()) v = std::clamp(v, 0.0, 1.0);
  }
  if (!s.seg_truth.empty()) out.seg_truth = warp_nearest(s.seg_truth, w);
  return out;
}

}  // namespace cxr::img
