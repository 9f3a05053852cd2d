#include <doctest.h>

#include <cmath>

#include "cxrnet/binio.hpp"
#include "cxrnet/blocks.hpp"
#include "cxrnet/error.hpp"
#include "cxrnet/layers.hpp"
#include "cxrnet/optim.hpp"
#include "cxrnet/weights_io.hpp"
#include "gradsuite.hpp"

using namespace cxr;
using namespace cxr::nn;
using cxr::testing::random_tensor;

namespace {

const Tensor& run1(Graph& g, const Tensor& x, Mode mode = Mode::Infer) {
  g.forward({{"x", x}}, mode);
  return g.value(g.output());
}

}  // namespace

TEST_CASE("reflect_index follows the numpy reflect convention") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(3, 5) == 3);
  CHECK(reflect_index(-9, 5) == 1);
  CHECK(reflect_index(4, 1) == 0);
}

TEST_CASE("separable conv: identity kernels, counts, dilated taps") {
  Graph g(1);
  const NodeId x = g.add_input("x", {0, 0, 3});
  g.add<SeparableConv2d>("conv", {x}, 3, 3, 3, 1);
  Tensor& dw = g.params().get("conv/depthwise").value;
  dw.fill(0.0);
  for (std::size_t c = 0; c < 3; ++c) dw.at(1, 1, c) = 1.0;
  Tensor& pw = g.params().get("conv/pointwise").value;
  pw.fill(0.0);
  for (std::size_t c = 0; c < 3; ++c) pw.at(c, c) = 1.0;
  Rng rng(1);
  const Tensor in = random_tensor({2, 7, 5, 3}, rng);
  CHECK(cxr::testing::max_abs_diff(run1(g, in), in) == 0.0);

  Graph c(2);
  const NodeId y = c.add_input("x", {8, 8, 51});
  c.add<SeparableConv2d>("conv", {y}, 51, 17, 3, 1);
  CHECK(c.count_params().total == 1343);

  Graph d(3);
  const NodeId z = d.add_input("x", {0, 0, 1});
  d.add<SeparableConv2d>("conv", {z}, 1, 1, 3, 2);
  d.params().get("conv/depthwise").value.fill(1.0);
  d.params().get("conv/pointwise").value.fill(1.0);
  Tensor delta({1, 11, 11, 1});
  delta.at(0, 5, 5, 0) = 1.0;
  const Tensor& out = run1(d, delta);
  for (std::size_t i = 0; i < 11; ++i)
    for (std::size_t j = 0; j < 11; ++j) {
      const bool tap = (i == 3 || i == 5 || i == 7) && (j == 3 || j == 5 || j == 7);
      CHECK(out.at(0, i, j, 0) == (tap ? 1.0 : 0.0));
    }

  Graph e(4);
  const NodeId w = e.add_input("x", {4, 4, 2});
  CHECK_THROWS_AS(e.add<SeparableConv2d>("conv", {w}, 2, 2, 4, 1), ParameterError);
}

TEST_CASE("multi-head attention") {
  Graph g(5);
  const NodeId q = g.add_input("q", {4, 6, 1});
  const NodeId k = g.add_input("k", {4, 6, 1});
  const NodeId v = g.add_input("v", {4, 6, 1});
  g.add<MultiHeadAttention>("mha", {q, k, v}, 2, 64);
  CHECK(g.count_params().total == 897);
  Rng rng(2);
  for (auto& p : g.params()) p.value = random_tensor(p.value.shape(), rng);
  const double c = 0.37;
  g.forward({{"q", random_tensor({1, 4, 6, 1}, rng)}, {"k", Tensor::filled({1, 4, 6, 1}, 0.8)}, {"v", Tensor::filled({1, 4, 6, 1}, c)}},
            Mode::Infer);
  // Uniform attention: every head context equals the projected value.
  const auto& P = g.params();
  double expect = P.get("mha/output_bias").value[0];
  for (std::size_t d = 0; d < 128; ++d)
    expect += P.get("mha/output_kernel").value[d] * (P.get("mha/value_kernel").value[d] * c + P.get("mha/value_bias").value[d]);
  for (double o : g.value(g.output()).values()) CHECK(o == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("batch norm") {
  Graph g(6);
  const NodeId x = g.add_input("x", {0, 0, 2});
  g.add<BatchNorm>("bn", {x}, 2);
  Rng rng(3);
  const Tensor in = random_tensor({3, 4, 5, 2}, rng, -2.0, 5.0);
  const Tensor& inf = run1(g, in, Mode::Infer);
  for (std::size_t i = 0; i < in.numel(); ++i) CHECK(inf[i] == doctest::Approx(in[i] / std::sqrt(1.0 + 1e-3)).epsilon(1e-14));
  const Tensor tr = run1(g, in, Mode::Train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0;
    const std::size_t n = tr.numel() / 2;
    for (std::size_t i = 0; i < n; ++i) m += tr[2 * i + c];
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v += (tr[2 * i + c] - m) * (tr[2 * i + c] - m);
    v /= static_cast<double>(n);
    CHECK(std::abs(m) < 1e-6);
    // epsilon inside the square root shrinks the variance slightly
    double raw_var = 0.0, raw_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) raw_mean += in[2 * i + c];
    raw_mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) raw_var += (in[2 * i + c] - raw_mean) * (in[2 * i + c] - raw_mean);
    raw_var /= static_cast<double>(n);
    CHECK(v == doctest::Approx(raw_var / (raw_var + 1e-3)).epsilon(1e-6));
    CHECK(g.params().get("bn/running_mean").value[c] == doctest::Approx(0.1 * raw_mean).epsilon(1e-12));
  }
  CHECK_THROWS(g.forward({{"x", Tensor({0, 4, 5, 2})}}, Mode::Train));
}

TEST_CASE("spatial dropout") {
  Rng rng(4);
  const Tensor in = random_tensor({2, 3, 3, 8}, rng);
  Graph g(7);
  const NodeId x = g.add_input("x", {3, 3, 8});
  g.add<SpatialDropout>("drop", {x}, 0.5);
  CHECK(cxr::testing::max_abs_diff(run1(g, in, Mode::Infer), in) == 0.0);
  g.reseed_dropout(99);
  const Tensor a = run1(g, in, Mode::Train);
  g.reseed_dropout(99);
  const Tensor b = run1(g, in, Mode::Train);
  CHECK(cxr::testing::max_abs_diff(a, b) == 0.0);
  std::size_t dropped = 0;
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t c = 0; c < 8; ++c) {
      const double ratio = a.at(s, 0, 0, c) / in.at(s, 0, 0, c);
      CHECK((ratio == 0.0 || ratio == doctest::Approx(2.0)));
      for (std::size_t p = 0; p < 9; ++p)
        CHECK(a[(s * 9 + p) * 8 + c] == doctest::Approx(ratio * in[(s * 9 + p) * 8 + c]));
      dropped += ratio == 0.0;
    }
  CHECK(dropped > 0);
  CHECK(dropped < 16);
  Graph z(8);
  const NodeId y = z.add_input("x", {3, 3, 8});
  z.add<SpatialDropout>("drop", {y}, 0.0);
  CHECK(cxr::testing::max_abs_diff(run1(z, in, Mode::Train), in) == 0.0);
  Graph bad(9);
  const NodeId w = bad.add_input("x", {3, 3, 8});
  CHECK_THROWS_AS(bad.add<SpatialDropout>("drop", {w}, 1.0), ParameterError);
}

TEST_CASE("masked global average pooling") {
  Graph g(10);
  const NodeId x = g.add_input("x", {4, 5, 3});
  const NodeId inc = g.add_input("include", {4, 5, 1});
  g.add<GlobalAvgPoolMasked>("gap", {x, inc});
  Rng rng(5);
  Tensor in = random_tensor({2, 4, 5, 3}, rng);
  g.forward({{"x", in}, {"include", Tensor::filled({2, 4, 5, 1}, 1.0)}}, Mode::Infer);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0.0;
      for (std::size_t p = 0; p < 20; ++p) m += in[(b * 20 + p) * 3 + c];
      CHECK(g.value(g.output())[b * 3 + c] == doctest::Approx(m / 20.0).epsilon(1e-14));
    }
  Tensor include({2, 4, 5, 1});
  for (std::size_t i = 0; i < include.numel(); ++i) include[i] = (i % 3 == 0) ? 1.0 : 0.0;
  g.forward({{"x", in}, {"include", include}}, Mode::Infer);
  const Tensor before = g.value(g.output());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0.0, n = 0.0;
      for (std::size_t p = 0; p < 20; ++p)
        if (include[b * 20 + p] > 0) {
          s += in[(b * 20 + p) * 3 + c];
          n += 1.0;
        }
      CHECK(std::abs(before[b * 3 + c] - s / n) < 1e-12);
    }
  for (std::size_t i = 0; i < include.numel(); ++i)
    if (include[i] == 0.0)
      for (std::size_t c = 0; c < 3; ++c) in[i * 3 + c] = 1e6 * rng.uniform(-1, 1);
  g.forward({{"x", in}, {"include", include}}, Mode::Infer);
  CHECK(cxr::testing::max_abs_diff(g.value(g.output()), before) == 0.0);
  CHECK_THROWS_WITH_AS(g.forward({{"x", in}, {"include", Tensor({2, 4, 5, 1})}}, Mode::Infer),
                       doctest::Contains("empty pooling region"), ValidationError);
}

TEST_CASE("softmax sums to one and is positive") {
  Graph g(11);
  const NodeId x = g.add_input("x", {3, 3, 4});
  g.add<Softmax>("sm", {x});
  Rng rng(6);
  const Tensor& y = run1(g, random_tensor({2, 3, 3, 4}, rng, -30.0, 30.0));
  for (std::size_t p = 0; p < y.numel() / 4; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(y[p * 4 + c] > 0.0);
      s += y[p * 4 + c];
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("every layer passes the finite-difference check") {
  for (const auto& [name, r] : cxr::testing::layer_gradient_suite(2024)) {
    INFO(name << ": worst " << r.worst);
    CHECK(r.probes >= 20);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("Adam") {
  SUBCASE("lr 0 leaves parameters unchanged") {
    Graph g(12);
    const NodeId x = g.add_input("x", {1, 1, 3});
    g.add<PointwiseConv2d>("lin", {x}, 3, 1);
    Rng rng(7);
    const Tensor xin = random_tensor({4, 1, 1, 3}, rng);
    g.forward({{"x", xin}}, Mode::Train);
    Tensor seed = g.value(g.output());  // d/dy of 0.5 y^2
    g.zero_grad();
    g.backward(g.output(), seed);
    const Tensor before = g.params().get("lin/kernel").value;
    Adam adam({0.0});
    adam.step(g.params());
    CHECK(cxr::testing::max_abs_diff(g.params().get("lin/kernel").value, before) == 0.0);
  }
  SUBCASE("quadratic bowl converges") {
    ParamStore ps;
    Param& p = ps.create("w", {4}, true);
    const std::vector<double> target{1.0, -2.0, 0.5, 3.0};
    Adam adam({0.1});
    auto loss = [&] {
      double l = 0.0;
      for (std::size_t i = 0; i < 4; ++i) l += (p.value[i] - target[i]) * (p.value[i] - target[i]);
      return l;
    };
    for (int s = 0; s < 200; ++s) {
      for (std::size_t i = 0; i < 4; ++i) p.grad[i] = 2.0 * (p.value[i] - target[i]);
      adam.step(ps);
    }
    MESSAGE("loss after 200 steps " << loss());
    CHECK(loss() < 1e-6);
  }
  SUBCASE("non-finite gradient aborts with the parameter name") {
    ParamStore ps;
    Param& p = ps.create("w", {2}, true);
    p.grad[1] = std::nan("");
    Adam adam;
    CHECK_THROWS_WITH_AS(adam.step(ps), doctest::Contains("'w'"), NumericalError);
  }
}

TEST_CASE("parameter counting") {
  Graph empty;
  CHECK(empty.count_params().total == 0);
  auto member = [](Graph& g, const std::string& prefix, NodeId x) {
    ConvResSpec spec;
    spec.kernels = {3, 3, 3};
    spec.dilations = {1, 2, 3};
    spec.branch_filters = 2;
    spec.shortcut_filters = 6;
    return conv_res_block(g, prefix, x, 3, spec);
  };
  Graph one;
  member(one, "m0", one.add_input("x", {4, 4, 3}));
  Graph six;
  const NodeId x = six.add_input("x", {4, 4, 3});
  std::vector<NodeId> outs;
  for (int i = 0; i < 6; ++i) outs.push_back(member(six, "m" + std::to_string(i), x));
  six.add<MeanOverMembers>("mean", outs);
  CHECK(six.count_params().total == 6 * one.count_params().total);
}

TEST_CASE("weight files") {
  auto build = [](std::uint64_t seed) {
    Graph g(seed);
    const NodeId x = g.add_input("x", {0, 0, 2});
    const NodeId c = g.add<SeparableConv2d>("conv", {x}, 2, 3, 3, 1);
    g.add<BatchNorm>("bn", {c}, 3);
    return g;
  };
  Graph a = build(1);
  Rng rng(8);
  const Tensor in = random_tensor({1, 5, 5, 2}, rng);
  a.forward({{"x", in}}, Mode::Train);  // moves the running statistics
  const io::Bytes bytes = weights_to_bytes(a.params());
  Graph b = build(2);
  weights_from_bytes(b.params(), bytes);
  const Tensor ya = run1(a, in);
  CHECK(cxr::testing::max_abs_diff(run1(b, in), ya) == 0.0);
  CHECK(weights_to_bytes(b.params()) == bytes);

  Graph c(3);
  const NodeId x = c.add_input("x", {0, 0, 2});
  const NodeId cv = c.add<SeparableConv2d>("conv", {x}, 2, 3, 3, 1);
  const NodeId bn = c.add<BatchNorm>("bn", {cv}, 3);
  c.add<PointwiseConv2d>("extra", {bn}, 3, 1);
  CHECK_THROWS_WITH_AS(weights_from_bytes(c.params(), bytes), doctest::Contains("extra/kernel"), ValidationError);

  io::Bytes bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(weights_from_bytes(b.params(), bad), doctest::Contains("format error"), FormatError);
  io::Bytes cut(bytes.begin(), bytes.end() - 5);
  CHECK_THROWS_AS(weights_from_bytes(b.params(), cut), FormatError);
}

TEST_CASE("inference is deterministic") {
  Graph g(13);
  const NodeId x = g.add_input("x", {0, 0, 3});
  ConvResSpec spec;
  spec.kernels = {3, 5, 7};
  spec.dilations = {1, 3, 5};
  spec.branch_filters = 2;
  spec.shortcut_filters = 6;
  conv_res_block(g, "b", x, 3, spec);
  Rng rng(9);
  const Tensor in = random_tensor({2, 9, 10, 3}, rng);
  const Tensor a = run1(g, in);
  CHECK(a.shape() == Shape{2, 9, 10, 6});
  CHECK(cxr::testing::max_abs_diff(run1(g, in), a) == 0.0);
}
