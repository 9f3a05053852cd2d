#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cxrnet/tensor.hpp"

namespace cxr {

// A scalar objective together with its gradient with respect to the
// prediction; the gradient has the prediction's shape.
struct LossResult {
  double value = 0.0;
  Tensor grad;
};

inline constexpr double kDefaultSmoothing = 1.0;

// (2 sum(yhat*y) + s) / (sum(yhat) + sum(y) + s) over all elements.
double dice_coeff(const Tensor& yhat, const Tensor& y, double s = kDefaultSmoothing);
LossResult dice_loss(const Tensor& yhat, const Tensor& y, double s = kDefaultSmoothing);

// (sum(yhat*y) + s) / (sum(yhat^2 + y^2) - sum(yhat*y) + s).
double tanimoto(const Tensor& yhat, const Tensor& y, double s = kDefaultSmoothing);
// Mean of the coefficient on (yhat, y) and on (1 - yhat, 1 - y).
double tanimoto_complement(const Tensor& yhat, const Tensor& y, double s = kDefaultSmoothing);
LossResult tanimoto_loss(const Tensor& yhat, const Tensor& y, double s = kDefaultSmoothing);

// Same with every sum weighted by w (same shape as yhat, non-negative).
double weighted_tanimoto_complement(const Tensor& yhat, const Tensor& y, const Tensor& w,
                                    double s = kDefaultSmoothing);
LossResult weighted_tanimoto_loss(const Tensor& yhat, const Tensor& y, const Tensor& w,
                                  double s = kDefaultSmoothing);

// Two-class segmentation objective on [B,H,W,2] probabilities and truth with
// per-pixel weights [B,H,W,1]: the weighted Tanimoto loss of every (sample,
// channel) slice, averaged with equal class weight. With `weight_both_channels`
// false only channel 0 (lung) is weighted and channel 1 uses unit weights.
LossResult segmentation_loss(const Tensor& probs, const Tensor& truth, const Tensor& weights,
                             double s = kDefaultSmoothing, bool weight_both_channels = true);

struct ContourWeightConfig {
  double w0 = 2.0;
  double sigma = 3.0;  // pixels
};

// w = 1 + w0 * exp(-d^2 / (2 sigma^2)) with d the Euclidean distance to the
// nearest boundary pixel (a pixel whose value differs from one of its four
// neighbours). A mask without boundary gives w = 1 everywhere.
Tensor contour_weights(const Tensor& mask, ContourWeightConfig cfg = {});

// Exact squared Euclidean distance from every pixel of an [H,W] grid to the
// nearest pixel with seed != 0; +inf everywhere when there is no seed.
Tensor squared_distance_transform(const Tensor& seeds);

// Inverse-frequency weights N / (2 n_c), mean 1 over the samples.
std::array<double, 2> class_weights(std::span<const int> labels);

inline constexpr double kProbabilityFloor = 1e-12;

// -(1/B) sum_i w[y_i] log p[i, y_i] for probs [B,2] (any shape whose last
// extent is 2 and whose leading extents multiply to B). Probabilities below
// kProbabilityFloor are clamped and counted.
LossResult weighted_cross_entropy(const Tensor& probs, std::span<const int> labels,
                                  std::array<double, 2> class_weights);
std::uint64_t probability_clamp_count() noexcept;

}  // namespace cxr
