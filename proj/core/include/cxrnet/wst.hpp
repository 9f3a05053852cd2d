#pragma once

#include <cstddef>
#include <numbers>
#include <vector>

#include "cxrnet/tensor.hpp"

namespace cxr::wst {

// Dilation-scale count J, angular-sector count L and the input extents the
// filter bank is periodized onto.
struct ScatterConfig {
  int J = 2;
  int L = 6;
  std::size_t height = 0;
  std::size_t width = 0;

  void validate() const;
  std::size_t factor() const { return std::size_t{1} << J; }
  std::size_t out_height() const { return (height + factor() - 1) / factor(); }
  std::size_t out_width() const { return (width + factor() - 1) / factor(); }
};

struct MorletParams {
  double sigma0 = 0.8;
  double xi0 = 3.0 * std::numbers::pi / 4.0;
  double slant_numerator = 4.0;  // slant = slant_numerator / L
};

// 1 + J*L + J*(J-1)*L^2/2: order-0, order-1, and order-2 paths with j2 > j1.
std::size_t channel_count(int J, int L);

struct FilterBank {
  ScatterConfig cfg;
  std::vector<Tensor> psi_hat;  // complex [H,W], indexed j * L + theta
  Tensor phi_hat;               // real [H,W], phi_hat(0) == 1
  double lp_max = 0.0;          // max over the grid of the Littlewood-Paley sum
  double lp_min_annulus = 0.0;  // min over the band the wavelets cover

  const Tensor& psi(int j, int theta) const {
    return psi_hat[static_cast<std::size_t>(j * cfg.L + theta)];
  }
  // sqrt(lp_max): Lipschitz bound of the scattering operator.
  double frame_bound() const;
};

FilterBank build_filterbank(const ScatterConfig& cfg, const MorletParams& params = {});

// LP(w) = |phi_hat(w)|^2 + 1/2 * sum_{j,theta} |psi_hat(w)|^2 on the full grid.
Tensor littlewood_paley(const FilterBank& fb);

// Spatial-domain Gabor and Morlet kernels centred on pixel (0,0), periodized
// over a 5x5 tiling of the grid. Exposed for oracles and filter dumps.
Tensor gabor_spatial(std::size_t h, std::size_t w, double sigma, double theta, double xi,
                     double slant);
Tensor morlet_spatial(std::size_t h, std::size_t w, double sigma, double theta, double xi,
                      double slant);

struct PathDescriptor {
  int order = 0;
  int j1 = -1;
  int theta1 = -1;
  int j2 = -1;
  int theta2 = -1;
};

std::vector<PathDescriptor> enumerate_paths(int J, int L);

struct ScatterOutput {
  Tensor coeffs;  // [ceil(H/2^J), ceil(W/2^J), C]
  std::vector<PathDescriptor> paths;
};

enum class Decimation {
  Periodized,  // fold the spectrum, then a small inverse FFT (exact when 2^J divides H, W)
  Reference,   // full-size inverse FFT followed by strided decimation
};

ScatterOutput scatter(const Tensor& x, const FilterBank& fb,
                      Decimation mode = Decimation::Periodized);

struct WstBlockOutput {
  Tensor features;     // [h, w, C + 1]; last channel is the decimated float mask
  Tensor binary_mask;  // [h, w, 1]
};

inline constexpr double kMaskThreshold = 0.5;

WstBlockOutput wst_block(const Tensor& x, const Tensor& float_mask, const FilterBank& fb);

}  // namespace cxr::wst
