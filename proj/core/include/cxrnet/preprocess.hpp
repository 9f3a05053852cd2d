#pragma once

#include <cstddef>
#include <span>

#include "cxrnet/tensor.hpp"

namespace cxr::img {

// Bilinear resampling of an [H,W] image with half-pixel-centre alignment and
// edge clamping. Identity when the extents already match.
Tensor resize_bilinear(const Tensor& t, std::size_t height, std::size_t width);

// Global 256-bin equalisation: a value in bin b maps to the fraction of pixels
// in bins 0..b. Values are expected in [0,1].
Tensor hist_equalize(const Tensor& t);

struct Standardization {
  double mean = 0.0;
  double std = 1.0;
};

// Pixel mean and (population) standard deviation over a set of images.
Standardization compute_standardization(std::span<const Tensor* const> images);
Tensor standardize(const Tensor& t, const Standardization& s);

// Affine map onto [0,1]; a constant image maps to all ones.
Tensor rescale_unit(const Tensor& t);

}  // namespace cxr::img
