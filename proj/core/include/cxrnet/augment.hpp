#pragma once

#include <array>
#include <cstddef>

#include "cxrnet/dataset.hpp"
#include "cxrnet/rng.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr::img {

struct AugmentConfig {
  double rotation_deg = 10.0;  // uniform in [-r, r]
  double shear_deg = 5.0;
  double shift_frac = 0.1;  // of each extent
  double scale_min = 0.9;
  double scale_max = 1.1;
  double hflip_p = 0.5;
  double vflip_p = 0.5;

  static AugmentConfig none() { return {0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0}; }
};

// Maps an output pixel (y, x) to the source coordinate it samples. Shared by
// every channel of a sample so images and masks stay aligned.
struct AffineWarp {
  std::array<double, 4> m{1.0, 0.0, 0.0, 1.0};  // row-major 2x2 acting on (y, x)
  std::array<double, 2> offset{0.0, 0.0};

  std::array<double, 2> source(double y, double x) const noexcept {
    return {m[0] * y + m[1] * x + offset[0], m[2] * y + m[3] * x + offset[1]};
  }
  bool is_identity() const noexcept;
};

// Rotation, shear, scale and mirroring about the image centre followed by a
// shift, all drawn from `rng` in a fixed order.
AffineWarp draw_warp(const AugmentConfig& cfg, std::size_t height, std::size_t width, Rng& rng);

// Source coordinates are reflected into the frame (edge sample not repeated)
// before interpolation.
Tensor warp_bilinear(const Tensor& t, const AffineWarp& w);
Tensor warp_nearest(const Tensor& t, const AffineWarp& w);

// Image and float mask bilinear; segmentation truth nearest, so it stays
// binary and complementary.
data::Sample augment(const data::Sample& s, const AugmentConfig& cfg, Rng& rng);

}  // namespace cxr::img
