#include "cxrnet/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cxrnet/error.hpp"
#include "cxrnet/preprocess.hpp"

namespace cxr::sal {

namespace {

void require_map(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected [h,w], got " + shape_str(t.shape()));
}

std::vector<std::size_t> single(std::size_t i) { return {i}; }

Tensor cam_from_current(nn::Graph& g, nn::NodeId pooled, nn::NodeId masked, nn::NodeId weight,
                        std::size_t c) {
  Tensor seed(g.value(pooled).shape());
  seed[c] = 1.0;
  g.zero_grad();
  g.backward(pooled, seed, true);
  const Tensor& A = g.value(masked);
  const Tensor& dA = g.grad(masked);
  const Tensor& inc = g.value(weight);
  const std::size_t h = A.dim(1), w = A.dim(2), C = A.dim(3);
  double alpha = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (!(inc[p] > 0.0)) continue;
    alpha += dA[p * C + c];
    ++n;
  }
  if (n == 0) throw ValidationError("empty pooling region");
  alpha /= static_cast<double>(n);
  Tensor map({h, w});
  for (std::size_t p = 0; p < h * w; ++p) map[p] = std::max(0.0, alpha * A[p * C + c]);
  return map;
}

struct Nodes {
  nn::NodeId pooled, masked, probs, weight;
};

Nodes find_nodes(const nn::Graph& g) {
  if (!g.has_node(clf::kPooledNode) || !g.has_node(clf::kMaskedNode))
    throw ParameterError("Grad-CAM needs a shared pooled head (member or feature_mean ensemble)");
  return {g.node(clf::kPooledNode), g.node(clf::kMaskedNode), g.node(clf::kProbsNode),
          g.node(clf::kPoolWeightInput)};
}

}  // namespace

Tensor gradcam(nn::Graph& g, const clf::MemberInputs& in, std::size_t class_index) {
  if (class_index > 1) throw ParameterError("class index must be 0 or 1");
  const Nodes n = find_nodes(g);
  const std::vector<clf::MemberInputs> one{in};
  g.forward(clf::batch_inputs(one, single(0)), nn::Mode::Infer);
  return cam_from_current(g, n.pooled, n.masked, n.weight, class_index);
}

SaliencyMaps gradcam_pair(nn::Graph& g, const clf::MemberInputs& in) {
  const Nodes n = find_nodes(g);
  const std::vector<clf::MemberInputs> one{in};
  g.forward(clf::batch_inputs(one, single(0)), nn::Mode::Infer);
  SaliencyMaps s;
  s.probs = {g.value(n.probs)[0], g.value(n.probs)[1]};
  s.positive = cam_from_current(g, n.pooled, n.masked, n.weight, 1);
  s.negative = cam_from_current(g, n.pooled, n.masked, n.weight, 0);
  s.diff = diff_map(s.positive, s.negative);
  return s;
}

Tensor diff_map(const Tensor& positive, const Tensor& negative) {
  require_map(positive, "diff_map");
  if (positive.shape() != negative.shape())
    throw ShapeError("diff_map: " + shape_str(positive.shape()) + " vs " + shape_str(negative.shape()));
  Tensor d(positive.shape());
  for (std::size_t i = 0; i < d.numel(); ++i) d[i] = positive[i] - negative[i];
  return d;
}

Tensor upsample(const Tensor& map, std::size_t height, std::size_t width) {
  require_map(map, "upsample");
  return img::resize_bilinear(map, height, width);
}

std::array<double, 3> ramp(double v) {
  const double c = std::clamp(v, -1.0, 1.0);
  const int idx = static_cast<int>(std::lround((c + 1.0) * 127.5));
  const double t = idx / 255.0;  // 0 blue, 0.5 white, 1 red
  if (t < 0.5) {
    const double u = t / 0.5;
    return {u, u, 1.0};
  }
  const double u = (1.0 - t) / 0.5;
  return {1.0, u, u};
}

Tensor overlay(const Tensor& base, const Tensor& map) {
  require_map(base, "overlay");
  if (base.shape() != map.shape())
    throw ShapeError("overlay: base " + shape_str(base.shape()) + " vs map " + shape_str(map.shape()));
  const double m = max_abs(map);
  const std::size_t n = base.numel();
  Tensor rgb({base.dim(0), base.dim(1), 3});
  for (std::size_t i = 0; i < n; ++i) {
    const double g = std::clamp(base[i], 0.0, 1.0);
    const double v = m > 0.0 ? map[i] / m : 0.0;
    const double a = 0.5 * std::abs(v);
    const auto col = ramp(v);
    for (std::size_t k = 0; k < 3; ++k) rgb[3 * i + k] = (1.0 - a) * g + a * col[k];
  }
  return rgb;
}

Tensor to_unit(const Tensor& map) {
  const double m = max_abs(map);
  Tensor out(map.shape());
  for (std::size_t i = 0; i < map.numel(); ++i) out[i] = m > 0.0 ? std::max(0.0, map[i]) / m : 0.0;
  return out;
}

Tensor to_unit_signed(const Tensor& map) {
  const double m = max_abs(map);
  Tensor out(map.shape());
  for (std::size_t i = 0; i < map.numel(); ++i) out[i] = 0.5 + (m > 0.0 ? 0.5 * map[i] / m : 0.0);
  return out;
}

}  // namespace cxr::sal
