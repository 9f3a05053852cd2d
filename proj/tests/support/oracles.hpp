#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cxrnet/graph.hpp"
#include "cxrnet/rng.hpp"
#include "cxrnet/tensor.hpp"
#include "cxrnet/wst.hpp"

namespace cxr::testing {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);

double max_abs_diff(const Tensor& a, const Tensor& b);
// max |a - b| / max |b|
double max_rel_diff(const Tensor& a, const Tensor& b);

// Direct O((HW)^2) transforms and convolutions.
Tensor naive_dft2(const Tensor& x);
Tensor naive_circular_conv(const Tensor& x, const Tensor& k);

// Scattering coefficients computed path by path with spatial-domain circular
// convolutions of the Morlet and Gaussian kernels, explicit modulus and
// strided decimation. No FFT is involved.
Tensor naive_scatter(const Tensor& x, const wst::ScatterConfig& cfg,
                     const wst::MorletParams& params = {});

struct GradCheck {
  std::size_t probes = 0;
  double max_rel_err = 0.0;
  std::string worst;  // where max_rel_err occurred
  std::size_t skipped = 0;  // probes whose step crossed a leaky-ReLU kink
};

// |a - n| / max(|a|, |n|, floor)
double grad_rel_err(double analytic, double numeric, double floor = 1e-6);

// Central differences of L = sum(r * value(output)) against the graph's
// reverse sweep. `probes_per_tensor` entries of every input and every
// parameter are probed. Dropout is reseeded before each pass. A probe whose
// +-step flips the side of any leaky-ReLU unit is not differentiable there;
// it is counted in `skipped` and another entry is drawn instead. The error
// floor is 1e-5 times the largest analytic gradient (at least 1e-6).
GradCheck check_graph_gradients(nn::Graph& g, const std::map<std::string, Tensor>& inputs,
                                nn::Mode mode, Rng& rng, std::size_t probes_per_tensor = 20,
                                double step = 1e-5);

// Central differences of a scalar function of one tensor against `grad`.
GradCheck check_scalar_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                const Tensor& grad, Rng& rng, std::size_t probes = 20,
                                double step = 1e-5);

}  // namespace cxr::testing
