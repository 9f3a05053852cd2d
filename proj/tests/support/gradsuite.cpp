#include "gradsuite.hpp"

#include <cmath>

#include "cxrnet/blocks.hpp"
#include "cxrnet/layers.hpp"
#include "cxrnet/losses.hpp"

namespace cxr::testing {

using namespace cxr::nn;

namespace {

// Values bounded away from zero so that probes never straddle a kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
  return t;
}

Tensor binary(Shape shape, Rng& rng, double p = 0.5) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform() < p ? 1.0 : 0.0;
  return t;
}

Tensor probabilities(Shape shape, Rng& rng) { return random_tensor(std::move(shape), rng, 0.05, 0.95); }

}  // namespace

SuiteResult layer_gradient_suite(std::uint64_t seed, std::size_t probes) {
  Rng rng(seed);
  SuiteResult out;
  auto run = [&](const std::string& name, Graph& g, const std::map<std::string, Tensor>& in, Mode mode) {
    out.emplace_back(name, check_graph_gradients(g, in, mode, rng, probes));
  };
  {
    Graph g(1);
    const NodeId x = g.add_input("x", {5, 6, 3});
    g.add<SeparableConv2d>("conv", {x}, 3, 4, 3, 2);
    run("separable_atrous_conv2d", g, {{"x", random_tensor({2, 5, 6, 3}, rng)}}, Mode::Train);
  }
  {
    Graph g(2);
    const NodeId x = g.add_input("x", {4, 4, 3});
    g.add<PointwiseConv2d>("pw", {x}, 3, 5);
    run("pointwise_conv2d", g, {{"x", random_tensor({2, 4, 4, 3}, rng)}}, Mode::Train);
  }
  {
    Graph g(3);
    const NodeId x = g.add_input("x", {4, 5, 2});
    g.add<LeakyRelu>("act", {x}, 0.01);
    run("leaky_relu", g, {{"x", away_from_zero({2, 4, 5, 2}, rng)}}, Mode::Train);
  }
  {
    Graph g(4);
    const NodeId x = g.add_input("x", {3, 3, 6});
    g.add<SpatialDropout>("drop", {x}, 0.3);
    run("spatial_dropout", g, {{"x", random_tensor({2, 3, 3, 6}, rng)}}, Mode::Train);
  }
  {
    Graph g(5);
    const NodeId x = g.add_input("x", {3, 4, 3});
    g.add<BatchNorm>("bn", {x}, 3);
    for (auto& p : g.params()) {
      if (p.name == "bn/gamma") p.value = random_tensor({3}, rng, 0.5, 1.5);
      if (p.name == "bn/beta") p.value = random_tensor({3}, rng);
    }
    run("batch_norm (train)", g, {{"x", random_tensor({2, 3, 4, 3}, rng)}}, Mode::Train);
    g.params().get("bn/running_var").value = random_tensor({3}, rng, 0.5, 2.0);
    run("batch_norm (infer)", g, {{"x", random_tensor({2, 3, 4, 3}, rng)}}, Mode::Infer);
  }
  {
    Graph g(6);
    const NodeId q = g.add_input("q", {3, 5, 1});
    const NodeId k = g.add_input("k", {3, 5, 1});
    const NodeId v = g.add_input("v", {3, 5, 1});
    g.add<MultiHeadAttention>("mha", {q, k, v}, 2, 4);
    for (auto& p : g.params()) p.value = random_tensor(p.value.shape(), rng);
    run("multihead_attention", g,
        {{"q", random_tensor({2, 3, 5, 1}, rng)}, {"k", random_tensor({2, 3, 5, 1}, rng)},
         {"v", random_tensor({2, 3, 5, 1}, rng)}},
        Mode::Train);
  }
  {
    Graph g(7);
    const NodeId x = g.add_input("x", {2, 3, 4});
    g.add<Softmax>("sm", {x});
    run("softmax", g, {{"x", random_tensor({2, 2, 3, 4}, rng, -2.0, 2.0)}}, Mode::Train);
  }
  {
    Graph g(8);
    const NodeId x = g.add_input("x", {4, 4, 3});
    const NodeId inc = g.add_input("include", {4, 4, 1});
    g.add<GlobalAvgPoolMasked>("gap", {x, inc});
    Tensor include = binary({2, 4, 4, 1}, rng);
    include[0] = include[16] = 1.0;
    run("global_avg_pool_masked", g, {{"x", random_tensor({2, 4, 4, 3}, rng)}, {"include", include}}, Mode::Train);
  }
  {
    Graph g(9);
    const NodeId a = g.add_input("a", {3, 3, 2});
    const NodeId b = g.add_input("b", {3, 3, 3});
    g.add<Concat>("cat", {a, b});
    run("concat", g, {{"a", random_tensor({2, 3, 3, 2}, rng)}, {"b", random_tensor({2, 3, 3, 3}, rng)}}, Mode::Train);
  }
  {
    Graph g(10);
    const NodeId a = g.add_input("a", {3, 3, 2});
    const NodeId b = g.add_input("b", {3, 3, 2});
    g.add<Add>("add", {a, b});
    run("add", g, {{"a", random_tensor({2, 3, 3, 2}, rng)}, {"b", random_tensor({2, 3, 3, 2}, rng)}}, Mode::Train);
  }
  {
    Graph g(11);
    const NodeId a = g.add_input("a", {3, 4, 3});
    const NodeId b = g.add_input("b", {3, 4, 1});
    const NodeId c = g.add_input("c", {3, 4, 3});
    g.add<PointwiseMultiply>("mul", {a, b, c});
    run("pointwise_multiply", g,
        {{"a", random_tensor({2, 3, 4, 3}, rng)}, {"b", random_tensor({2, 3, 4, 1}, rng)},
         {"c", random_tensor({2, 3, 4, 3}, rng)}},
        Mode::Train);
  }
  {
    Graph g(12);
    const NodeId a = g.add_input("a", {3, 5, 2});
    g.add<TransposeHW>("t", {a});
    run("transpose_hw", g, {{"a", random_tensor({2, 3, 5, 2}, rng)}}, Mode::Train);
  }
  {
    Graph g(13);
    const NodeId a = g.add_input("a", {3, 3, 2});
    const NodeId b = g.add_input("b", {3, 3, 2});
    const NodeId c = g.add_input("c", {3, 3, 2});
    g.add<MeanOverMembers>("mean", {a, b, c});
    run("mean_over_members", g,
        {{"a", random_tensor({2, 3, 3, 2}, rng)}, {"b", random_tensor({2, 3, 3, 2}, rng)},
         {"c", random_tensor({2, 3, 3, 2}, rng)}},
        Mode::Train);
  }
  {
    Graph g(14);
    const NodeId a = g.add_input("a", {3, 3, 5});
    g.add<SelectChannels>("sel", {a}, 1, 3);
    run("select_channels", g, {{"a", random_tensor({2, 3, 3, 5}, rng)}}, Mode::Train);
  }
  // Biases that feed a train-mode batch norm have an identically zero
  // gradient, so the variant with inner norms is checked in inference mode.
  for (bool inner_norm : {false, true}) {
    Graph g(15);
    const NodeId x = g.add_input("x", {6, 6, 2});
    ConvResSpec spec;
    spec.kernels = {3, 3, 3};
    spec.dilations = {1, 2, 3};
    spec.branch_filters = 2;
    spec.shortcut_filters = 6;
    spec.convs_per_branch = 2;
    spec.branch_norm = inner_norm;
    spec.shortcut_norm = inner_norm;
    spec.dropout = 0.2;
    conv_res_block(g, "block", x, 2, spec);
    for (auto& p : g.params())
      if (!p.trainable) p.value = random_tensor(p.value.shape(), rng, 0.5, 1.5);
    run(inner_norm ? "conv_res_block (inner norms, infer)" : "conv_res_block (train)", g,
        {{"x", random_tensor({2, 6, 6, 2}, rng)}}, inner_norm ? Mode::Infer : Mode::Train);
  }
  return out;
}

SuiteResult loss_gradient_suite(std::uint64_t seed, std::size_t probes) {
  Rng rng(seed);
  SuiteResult out;
  const Shape shape{2, 5, 6, 2};
  {
    const Tensor yhat = probabilities(shape, rng), y = binary(shape, rng);
    const LossResult r = dice_loss(yhat, y);
    out.emplace_back("dice_loss", check_scalar_gradient([&](const Tensor& t) { return dice_loss(t, y).value; }, yhat,
                                                        r.grad, rng, probes));
  }
  {
    const Tensor yhat = probabilities(shape, rng), y = binary(shape, rng);
    const LossResult r = tanimoto_loss(yhat, y);
    out.emplace_back("tanimoto_loss", check_scalar_gradient([&](const Tensor& t) { return tanimoto_loss(t, y).value; },
                                                            yhat, r.grad, rng, probes));
  }
  {
    const Tensor yhat = probabilities(shape, rng), y = binary(shape, rng);
    const Tensor w = random_tensor(shape, rng, 0.0, 3.0);
    const LossResult r = weighted_tanimoto_loss(yhat, y, w);
    out.emplace_back("weighted_tanimoto_loss",
                     check_scalar_gradient([&](const Tensor& t) { return weighted_tanimoto_loss(t, y, w).value; }, yhat,
                                           r.grad, rng, probes));
  }
  {
    const Tensor yhat = probabilities(shape, rng);
    Tensor truth(shape);
    for (std::size_t i = 0; i < truth.numel() / 2; ++i) {
      const double v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      truth[2 * i] = v;
      truth[2 * i + 1] = 1.0 - v;
    }
    const Tensor w = random_tensor({2, 5, 6, 1}, rng, 1.0, 3.0);
    for (bool both : {true, false}) {
      const LossResult r = segmentation_loss(yhat, truth, w, 1.0, both);
      out.emplace_back(both ? "segmentation_loss (both channels weighted)" : "segmentation_loss (lung channel weighted)",
                       check_scalar_gradient([&](const Tensor& t) { return segmentation_loss(t, truth, w, 1.0, both).value; },
                                             yhat, r.grad, rng, probes));
    }
  }
  {
    Tensor p({16, 2});
    std::vector<int> labels;
    for (std::size_t i = 0; i < 16; ++i) {
      const double a = rng.uniform(0.05, 0.95);
      p[2 * i] = a;
      p[2 * i + 1] = 1.0 - a;
      labels.push_back(i % 3 == 0 ? 1 : 0);
    }
    const std::array<double, 2> cw = class_weights(labels);
    const LossResult r = weighted_cross_entropy(p, labels, cw);
    out.emplace_back("weighted_cross_entropy",
                     check_scalar_gradient([&](const Tensor& t) { return weighted_cross_entropy(t, labels, cw).value; }, p,
                                           r.grad, rng, probes));
  }
  return out;
}

}  // namespace cxr::testing
