#pragma once

#include <array>
#include <cstddef>

#include "cxrnet/classifier.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr::sal {

struct SaliencyMaps {
  Tensor positive;  // [h,w], class 1
  Tensor negative;  // [h,w], class 0
  Tensor diff;      // positive - negative
  std::array<double, 2> probs{};
};

// Grad-CAM on the masked final feature map of a member or a feature-mean
// ensemble graph. The class score is the pooled value before the softmax;
// alpha_c is the mean of d(score_c)/dA_c over positions that enter the pool.
Tensor gradcam(nn::Graph& g, const clf::MemberInputs& in, std::size_t class_index);
SaliencyMaps gradcam_pair(nn::Graph& g, const clf::MemberInputs& in);

Tensor diff_map(const Tensor& positive, const Tensor& negative);

// Bilinear, half-pixel centres.
Tensor upsample(const Tensor& map, std::size_t height, std::size_t width);

// 256-entry blue-white-red ramp indexed by v in [-1,1].
std::array<double, 3> ramp(double v);

// Blends ramp(m / max|m|) onto the grey base image with alpha 0.5 |m| / max|m|.
// Returns [H,W,3] in [0,1]. A zero map leaves the base unchanged.
Tensor overlay(const Tensor& base, const Tensor& map);

// Display scalings for 16-bit PGM output.
Tensor to_unit(const Tensor& map);         // m / max m, zero map stays zero
Tensor to_unit_signed(const Tensor& map);  // 0.5 + 0.5 m / max|m|

}  // namespace cxr::sal
