#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cxrnet/classifier.hpp"
#include "cxrnet/error.hpp"
#include "cxrnet/phantoms.hpp"
#include "cxrnet/weights_io.hpp"
#include "oracles.hpp"

using namespace cxr;
using cxr::testing::max_abs_diff;
using cxr::testing::random_tensor;

namespace {

// J=1, L=3: 4 scattering channels + mask = 5 features, 6 after attention.
clf::ClfConfig small(std::size_t size) {
  clf::ClfConfig c;
  c.scatter = {1, 3, size, size};
  c.branch_filters = 2;
  c.shortcut_filters = 6;
  c.heads = 1;
  c.head_size = 4;
  return c;
}

std::map<std::string, Tensor> random_inputs(std::size_t B, std::size_t h, std::size_t w, std::size_t C,
                                            Rng& rng) {
  Tensor mask({B, h, w, 1});
  for (auto& v : mask.values()) v = rng.uniform() < 0.6 ? 1.0 : 0.0;
  mask[0] = 1.0;
  return {{clf::kFeaturesInput, random_tensor({B, h, w, C}, rng, -1.0, 1.0)},
          {clf::kBinaryMaskInput, mask},
          {clf::kPoolWeightInput, mask}};
}

}  // namespace

TEST_CASE("default member: shapes and parameter count") {
  clf::ClfConfig cfg;
  cfg.scatter.height = 300;
  cfg.scatter.width = 340;
  CHECK(cfg.feature_channels() == 50);
  nn::Graph g = clf::build_member(cfg, 1);
  const nn::ParamCount pc = g.count_params();
  const std::size_t block = 3 * (9 * 51 + 51 * 17 + 17) + (51 * 51 + 51) + 2 * 51;
  CHECK(pc.total == 2 * 897 + 2 * 51 + 3 * block + (51 * 2 + 2));
  CHECK(pc.total == 22349);
  for (const auto& [name, n] : pc.per_layer) {
    if (name == "attention_rows" || name == "attention_cols") CHECK(n == 897);
    const bool known = name.rfind("attention", 0) == 0 || name.rfind("block", 0) == 0 || name == "projection";
    CHECK_MESSAGE(known, name);
  }

  Rng rng(2);
  g.forward(random_inputs(1, 75, 85, 50, rng), nn::Mode::Infer);
  CHECK(g.value(g.node("attention_concat")).shape() == Shape{1, 75, 85, 51});
  CHECK(g.value(g.node(clf::kFinalNode)).shape() == Shape{1, 75, 85, 2});
  const Tensor& p = g.value(g.node(clf::kProbsNode));
  CHECK(p.numel() == 2);
  CHECK(p[0] > 0.0);
  CHECK(p[1] > 0.0);
  CHECK(std::abs(p[0] + p[1] - 1.0) < 1e-12);
}

TEST_CASE("ensembles count exactly members times member") {
  const clf::ClfConfig cfg;
  for (std::size_t k : {1u, 2u, 6u})
    for (auto f : {clf::Fusion::FeatureMean, clf::Fusion::ProbabilityMean})
      CHECK(clf::build_ensemble_graph(cfg, k, f).count_params().total == k * 22349);
  CHECK(6 * 22349 == 134094);
}

TEST_CASE("invalid configurations") {
  clf::ClfConfig c;
  c.shortcut_filters = 50;
  CHECK_THROWS_AS(clf::build_member(c, 0), ParameterError);
  c = {};
  c.tau = 1.5;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.heads = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.scatter.L = 4;  // 1 + 8 + 16 + 1 = 26 features, shortcut 51 no longer fits
  CHECK_THROWS_AS(c.validate(), ParameterError);
  CHECK_THROWS_AS(clf::build_ensemble_graph(clf::ClfConfig{}, 0, clf::Fusion::FeatureMean), ParameterError);
  CHECK(clf::parse_pool_mode("mask_and_threshold") == clf::PoolMode::MaskAndThreshold);
  CHECK(clf::to_string(clf::Fusion::ProbabilityMean) == "probability_mean");
  CHECK_THROWS_AS(clf::parse_pool_mode("median"), ParameterError);
}

TEST_CASE("attention channel") {
  clf::ClfConfig cfg;
  cfg.scatter.height = 24;
  cfg.scatter.width = 28;
  nn::Graph g = clf::build_member(cfg, 3);
  Rng rng(4);
  const std::size_t h = 6, w = 7, C = 50;
  Tensor feat = random_tensor({1, h, w, C}, rng, -1.0, 1.0);
  for (std::size_t p = 0; p < h * w; ++p) feat[p * C + C - 1] = 0.37;
  const Tensor ones = Tensor::filled({1, h, w, 1}, 1.0);
  g.forward({{clf::kFeaturesInput, feat}, {clf::kBinaryMaskInput, ones}, {clf::kPoolWeightInput, ones}},
            nn::Mode::Infer);
  const Tensor& att = g.value(g.node("attention"));
  const double ratio = att[0] / feat[0];
  double worst = 0.0;
  for (std::size_t p = 0; p < h * w; ++p) worst = std::max(worst, std::abs(att[p] - ratio * feat[p * C]));
  CHECK(worst < 1e-12 * std::max(1.0, std::abs(ratio)));

  for (std::size_t p = 0; p < h * w; ++p) feat[p * C] = 0.0;
  g.forward({{clf::kFeaturesInput, feat}, {clf::kBinaryMaskInput, ones}, {clf::kPoolWeightInput, ones}},
            nn::Mode::Infer);
  CHECK(max_abs(g.value(g.node("attention"))) == 0.0);
}

TEST_CASE("pooling include") {
  Rng rng(5);
  const Tensor ones = Tensor::filled({5, 6}, 1.0);
  const Tensor img = random_tensor({5, 6}, rng, 0.0, 1.0);
  CHECK(max_abs_diff(clf::pooling_include(ones, img, clf::PoolMode::MaskOnly, 0.5), ones) == 0.0);

  Tensor mask({5, 6});
  for (auto& v : mask.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  mask[0] = 1.0;
  const Tensor m0 = clf::pooling_include(mask, img, clf::PoolMode::MaskOnly, 0.5);
  CHECK(max_abs_diff(clf::pooling_include(mask, img, clf::PoolMode::MaskAndThreshold, 0.0), m0) == 0.0);

  const Tensor t = clf::pooling_include(mask, img, clf::PoolMode::MaskAndThreshold, 0.5);
  for (std::size_t i = 0; i < 30; ++i) CHECK(t[i] == ((mask[i] == 1.0 && img[i] >= 0.5) ? 1.0 : 0.0));

  const Tensor wgt = clf::pooling_include(mask, img, clf::PoolMode::ImageWeighted, 0.5);
  for (std::size_t i = 0; i < 30; ++i) CHECK(wgt[i] == mask[i] * img[i]);

  CHECK_THROWS_WITH_AS(clf::pooling_include(Tensor({5, 6}), img, clf::PoolMode::MaskOnly, 0.5),
                       "empty pooling region", ValidationError);
  CHECK_THROWS_AS(clf::pooling_include(ones, Tensor::filled({5, 6}, 0.2), clf::PoolMode::MaskAndThreshold, 0.5),
                  ValidationError);
}

TEST_CASE("excluded positions do not reach the logits") {
  // Same head as the member graph, fed directly.
  nn::Graph g(0);
  const nn::NodeId f = g.add_input("final", {0, 0, 2});
  const nn::NodeId w = g.add_input(clf::kPoolWeightInput, {0, 0, 1});
  const nn::NodeId m = g.add<nn::PointwiseMultiply>(clf::kMaskedNode, {f, w});
  const nn::NodeId pooled = g.add<nn::GlobalAvgPoolMasked>(clf::kPooledNode, {m, w});
  Rng rng(6);
  Tensor fin = random_tensor({1, 8, 9, 2}, rng, -2.0, 2.0);
  Tensor inc({1, 8, 9, 1});
  for (auto& v : inc.values()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  inc[5] = 1.0;
  g.forward({{"final", fin}, {clf::kPoolWeightInput, inc}}, nn::Mode::Infer);
  const Tensor before = g.value(pooled);
  for (std::size_t p = 0; p < 72; ++p)
    if (inc[p] == 0.0) fin[2 * p] += rng.uniform(-100.0, 100.0), fin[2 * p + 1] = 1e6;
  g.forward({{"final", fin}, {clf::kPoolWeightInput, inc}}, nn::Mode::Infer);
  CHECK(max_abs_diff(g.value(pooled), before) == 0.0);
}

TEST_CASE("ensemble fusion") {
  const clf::ClfConfig cfg = small(16);
  nn::Graph a = clf::build_member(cfg, 7), b = clf::build_member(cfg, 8);
  const io::Bytes wa = nn::weights_to_bytes(a.params()), wb = nn::weights_to_bytes(b.params());
  Rng rng(9);
  const auto in = random_inputs(3, 8, 8, cfg.feature_channels(), rng);

  a.forward(in, nn::Mode::Infer);
  const Tensor pa = a.value(a.node(clf::kProbsNode));
  clf::EnsembleFile same{cfg, {}, clf::Fusion::FeatureMean, std::vector<io::Bytes>(6, wa)};
  nn::Graph e6 = clf::instantiate_ensemble(same);
  e6.forward(in, nn::Mode::Infer);
  CHECK(max_abs_diff(e6.value(e6.node(clf::kProbsNode)), pa) < 1e-14);

  clf::EnsembleFile ab{cfg, {}, clf::Fusion::FeatureMean, {wa, wb}};
  nn::Graph e2 = clf::instantiate_ensemble(ab);
  e2.forward(in, nn::Mode::Infer);
  const Tensor& f1 = e2.value(e2.node("m0/projection"));
  const Tensor& f2 = e2.value(e2.node("m1/projection"));
  const Tensor& fused = e2.value(e2.node(clf::kFinalNode));
  double worst = 0.0;
  for (std::size_t i = 0; i < fused.numel(); ++i) worst = std::max(worst, std::abs(fused[i] - 0.5 * (f1[i] + f2[i])));
  CHECK(worst < 1e-15);
  const Tensor p_ab = e2.value(e2.node(clf::kProbsNode));

  clf::EnsembleFile ba{cfg, {}, clf::Fusion::FeatureMean, {wb, wa}};
  nn::Graph e3 = clf::instantiate_ensemble(ba);
  e3.forward(in, nn::Mode::Infer);
  CHECK(max_abs_diff(e3.value(e3.node(clf::kProbsNode)), p_ab) == 0.0);

  ab.fusion = clf::Fusion::ProbabilityMean;
  nn::Graph pm = clf::instantiate_ensemble(ab);
  pm.forward(in, nn::Mode::Infer);
  b.forward(in, nn::Mode::Infer);
  const Tensor& pb = b.value(b.node(clf::kProbsNode));
  const Tensor& pp = pm.value(pm.node(clf::kProbsNode));
  worst = 0.0;
  for (std::size_t i = 0; i < pp.numel(); ++i) worst = std::max(worst, std::abs(pp[i] - 0.5 * (pa[i] + pb[i])));
  CHECK(worst < 1e-14);
}

TEST_CASE("ensemble file round trip") {
  const clf::ClfConfig cfg = small(16);
  nn::Graph a = clf::build_member(cfg, 10);
  clf::EnsembleFile e{cfg, {0.4, 0.2}, clf::Fusion::ProbabilityMean, {nn::weights_to_bytes(a.params())}};
  e.cfg.pool_mode = clf::PoolMode::MaskAndThreshold;
  e.cfg.tau = 0.3;
  const io::Bytes bytes = clf::pack_ensemble(e);
  const clf::EnsembleFile r = clf::unpack_ensemble(bytes);
  CHECK(r.cfg.scatter.J == 1);
  CHECK(r.cfg.scatter.L == 3);
  CHECK(r.cfg.pool_mode == clf::PoolMode::MaskAndThreshold);
  CHECK(r.cfg.tau == 0.3);
  CHECK(r.stats.mean == 0.4);
  CHECK(r.stats.std == 0.2);
  CHECK(r.fusion == clf::Fusion::ProbabilityMean);
  CHECK(r.members == e.members);
  CHECK(clf::pack_ensemble(r) == bytes);

  io::Bytes cut(bytes.begin(), bytes.end() - 7);
  CHECK_THROWS_AS(clf::unpack_ensemble(cut), FormatError);
  io::Bytes bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(clf::unpack_ensemble(bad), FormatError);
}

TEST_CASE("prepared inputs and training") {
  const std::size_t size = 32;
  const clf::ClfConfig cfg = small(size);
  const auto synth = data::synth_phantoms(12, size, 0.5, 21);
  const auto& samples = synth.bundle.samples;
  std::vector<const Tensor*> imgs;
  for (const auto& s : samples) imgs.push_back(&s.image);
  const img::Standardization stats = img::compute_standardization(imgs);
  const wst::FilterBank fb = wst::build_filterbank(cfg.scatter);
  std::vector<clf::MemberInputs> inputs;
  for (const auto& s : samples)
    inputs.push_back(clf::prepare_inputs(s.image, s.float_mask, fb, stats, cfg.pool_mode, cfg.tau));
  CHECK(inputs[0].features.shape() == Shape{16, 16, 5});
  CHECK(inputs[0].binary_mask.shape() == Shape{16, 16, 1});
  CHECK(max_abs_diff(inputs[0].pool_weight, inputs[0].binary_mask) == 0.0);
  CHECK_THROWS_AS(clf::prepare_inputs(Tensor({31, 32}), Tensor({31, 32}), fb, stats, cfg.pool_mode, cfg.tau),
                  ShapeError);

  clf::FoldData fold;
  fold.samples = &samples;
  fold.inputs = &inputs;
  fold.train = {0, 1, 2, 3, 4, 5, 6, 7};
  fold.val = {8, 9, 10, 11};
  clf::ClfTrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.seed = 3;

  {
    nn::Graph g = clf::build_member(cfg, 11);
    clf::ClfTrainConfig z = tc;
    z.adam.lr = 0.0;
    clf::train_clf(g, fold, cfg, z);
    // only trainable tensors are compared; running statistics do move
    nn::Graph ref = clf::build_member(cfg, 11);
    for (const auto& p : g.params())
      if (p.trainable) CHECK(max_abs_diff(p.value, ref.params().get(p.name).value) == 0.0);
  }

  tc.epochs = 2;
  nn::Graph a = clf::build_member(cfg, 11), b = clf::build_member(cfg, 11);
  const auto ha = clf::train_clf(a, fold, cfg, tc), hb = clf::train_clf(b, fold, cfg, tc);
  REQUIRE(ha.epochs.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(ha.epochs[e].train_loss == hb.epochs[e].train_loss);
    CHECK(ha.epochs[e].val_loss == hb.epochs[e].val_loss);
    CHECK(ha.epochs[e].val_auc == hb.epochs[e].val_auc);
  }
  CHECK(nn::weights_to_bytes(a.params()) == nn::weights_to_bytes(b.params()));
  const auto p = clf::predict(a, inputs, 5);
  CHECK(p.size() == 12);
  for (double v : p) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}
