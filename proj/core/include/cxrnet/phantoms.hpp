#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cxrnet/dataset.hpp"

namespace cxr::data {

struct Ellipse {
  double cy, cx;  // centre, pixels
  double ry, rx;  // semi-axes, pixels
  double angle;   // radians

  // (dy/ry)^2 + (dx/rx)^2 in the rotated frame; < 1 inside.
  double level(double y, double x) const noexcept;
};

struct PhantomInfo {
  std::array<Ellipse, 2> lungs;
  Ellipse heart;
  std::vector<std::array<double, 2>> blob_centres;  // (y, x)
};

struct PhantomConfig {
  double noise_sigma = 0.03;
  double blob_amplitude_min = 0.25;
  double blob_amplitude_max = 0.4;
  bool equalize = true;  // store histogram-equalised images
};

struct SynthResult {
  DatasetBundle bundle;
  std::vector<PhantomInfo> info;  // parallel to bundle.samples
};

// Synthetic chest phantoms: a dark field, a torso, two bright elliptical lung
// fields with rib banding and a central heart. Exactly round(n * covid_fraction)
// images are positive; each of those carries 2 to 5 peripheral Gaussian
// opacities inside the lungs. Patients own 2 or 3 images sharing one label and
// one anatomy up to small jitter. Float masks are soft-edged lung fields minus
// the heart; segmentation truth thresholds them at 0.5.
SynthResult synth_phantoms(std::size_t n, std::size_t size, double covid_fraction,
                           std::uint64_t seed, const PhantomConfig& cfg = {});

}  // namespace cxr::data
