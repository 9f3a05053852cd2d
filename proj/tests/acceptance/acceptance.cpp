// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli/cli.hpp"
#include "cxrnet/binio.hpp"
#include "cxrnet/classifier.hpp"
#include "cxrnet/folds.hpp"
#include "cxrnet/losses.hpp"
#include "cxrnet/metrics.hpp"
#include "cxrnet/phantoms.hpp"
#include "cxrnet/saliency.hpp"
#include "cxrnet/segnet.hpp"
#include "cxrnet/weights_io.hpp"
#include "cxrnet/wst.hpp"
#include "gradsuite.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cxr;
using cxr::testing::max_abs_diff;
using cxr::testing::max_rel_diff;
using cxr::testing::random_tensor;

namespace {

// Tolerances and budgets.
constexpr double kScatterRelTol = 1e-6;
constexpr double kScatterSeconds = 10.0;
constexpr double kCountBand = 0.20;
constexpr std::size_t kReferenceMember = 20467;
constexpr std::size_t kReferenceSeg = 59165;
constexpr std::size_t kAttentionMin = 850, kAttentionMax = 1900;
constexpr double kLayerGradTol = 1e-4;
constexpr double kLossGradTol = 1e-5;
constexpr std::size_t kMinProbes = 20;
constexpr double kGradSeconds = 120.0;
constexpr double kPerfectLossTol = 1e-12;
constexpr double kSegDice = 0.90;
constexpr std::size_t kSegEpochs = 50;
constexpr double kSegSeconds = 600.0;
constexpr double kSegGap = 0.05;
constexpr double kClfAuc = 0.90;
constexpr double kClfSeconds = 1800.0;
constexpr double kEnsembleSlack = 0.02;
constexpr std::size_t kClfEpochs = 15;
constexpr double kCamRelTol = 1e-8;
constexpr double kSymmetricDiffTol = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

wst::ScatterConfig scfg(int J, int L, std::size_t h, std::size_t w) {
  wst::ScatterConfig c;
  c.J = J;
  c.L = L;
  c.height = h;
  c.width = w;
  return c;
}

Outcome scattering_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (std::size_t n : {8u, 12u})
    for (int J : {1, 2}) {
      const wst::ScatterConfig c = scfg(J, 2, n, n);
      const Tensor x = random_tensor({n, n}, rng);
      worst = std::max(worst, max_rel_diff(wst::scatter(x, wst::build_filterbank(c)).coeffs,
                                           cxr::testing::naive_scatter(x, c)));
    }
  const double s = seconds_since(t0);
  return {worst < kScatterRelTol && s < kScatterSeconds,
          "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f", s) + " s"};
}

Outcome shape_fidelity() {
  bool ok = wst::channel_count(2, 6) == 49;
  const auto ph = data::synth_phantoms(1, 340, 0.0, 102).bundle.samples[0];
  const Tensor image = img::resize_bilinear(ph.image, 300, 340);
  const Tensor mask = img::resize_bilinear(ph.float_mask, 300, 340);
  const wst::FilterBank fb = wst::build_filterbank(scfg(2, 6, 300, 340));
  const Tensor s = wst::scatter(image, fb).coeffs;
  const wst::WstBlockOutput blk = wst::wst_block(image, mask, fb);
  clf::ClfConfig cfg;
  cfg.scatter = fb.cfg;
  nn::Graph g = clf::build_member(cfg, 103);
  const std::vector<clf::MemberInputs> in{
      clf::prepare_inputs(image, mask, fb, {0.5, 0.25},
                          cfg.pool_mode, cfg.tau)};
  const std::size_t idx[] = {0};
  g.forward(clf::batch_inputs(in, idx), nn::Mode::Infer);
  const Shape att = g.value(g.node("attention_concat")).shape();
  const Shape fin = g.value(g.node(clf::kFinalNode)).shape();
  ok = ok && s.shape() == Shape{75, 85, 49} && blk.features.shape() == Shape{75, 85, 50} &&
       blk.binary_mask.shape() == Shape{75, 85, 1} && att == Shape{1, 75, 85, 51} && fin == Shape{1, 75, 85, 2};
  return {ok, "scatter " + shape_str(s.shape()) + ", block " + shape_str(blk.features.shape()) + " + mask " +
                  shape_str(blk.binary_mask.shape()) + ", attention " + shape_str(att) + ", final " +
                  shape_str(fin)};
}

// Sum of per-layer counts grouped by the first path component.
std::string grouped(const nn::ParamCount& pc) {
  std::vector<std::pair<std::string, std::size_t>> groups;
  for (const auto& [name, n] : pc.per_layer) {
    const std::string head = name.substr(0, name.find('/'));
    if (groups.empty() || groups.back().first != head) groups.emplace_back(head, 0);
    groups.back().second += n;
  }
  std::string s;
  for (const auto& [g, n] : groups) s += (s.empty() ? "" : ", ") + g + " " + std::to_string(n);
  return s;
}

Outcome parameter_accounting() {
  clf::ClfConfig cfg;
  nn::Graph member = clf::build_member(cfg, 104);
  const nn::ParamCount m = member.count_params();
  const std::size_t ens = clf::build_ensemble_graph(cfg, 6, clf::Fusion::FeatureMean).count_params().total;
  const nn::ParamCount seg = seg::build_segnet({}, 105).count_params();
  std::size_t attention = 0;
  for (const auto& [name, n] : m.per_layer)
    if (name == "attention_rows" || name == "attention_cols") attention += n;
  auto within = [](std::size_t v, std::size_t ref) {
    return std::abs(static_cast<double>(v) - static_cast<double>(ref)) <= kCountBand * static_cast<double>(ref);
  };
  auto delta = [](std::size_t v, std::size_t ref) {
    return fmt("%+.1f%%", 100.0 * (static_cast<double>(v) / static_cast<double>(ref) - 1.0));
  };
  const bool ok = ens == 6 * m.total && within(m.total, kReferenceMember) && within(seg.total, kReferenceSeg) &&
                  attention >= kAttentionMin && attention <= kAttentionMax;
  std::cout << "      member breakdown: " << grouped(m) << "\n";
  std::cout << "      segmentation breakdown: " << grouped(seg) << "\n";
  return {ok, "ensemble " + std::to_string(ens) + " = 6 x " + std::to_string(m.total) + " (" +
                  delta(m.total, kReferenceMember) + "), segmentation " + std::to_string(seg.total) + " (" +
                  delta(seg.total, kReferenceSeg) + "), attention " + std::to_string(attention)};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  double worst_layer = 0.0, worst_loss = 0.0;
  std::size_t checks = 0;
  std::string failing;
  for (const auto& [name, r] : cxr::testing::layer_gradient_suite(106, kMinProbes)) {
    ++checks;
    worst_layer = std::max(worst_layer, r.max_rel_err);
    if (!(r.max_rel_err < kLayerGradTol) || r.probes < kMinProbes) ok = false, failing += " " + name;
  }
  for (const auto& [name, r] : cxr::testing::loss_gradient_suite(107)) {
    ++checks;
    worst_loss = std::max(worst_loss, r.max_rel_err);
    if (!(r.max_rel_err < kLossGradTol) || r.probes < kMinProbes) ok = false, failing += " " + name;
  }
  const double s = seconds_since(t0);
  ok = ok && s < kGradSeconds;
  return {ok, std::to_string(checks) + " checks, worst layer " + fmt("%.2e", worst_layer) + ", worst loss " +
                  fmt("%.2e", worst_loss) + ", " + fmt("%.1f", s) + " s" +
                  (failing.empty() ? "" : ", failing:" + failing)};
}

Outcome loss_identities() {
  Rng rng(108);
  bool symmetric = true;
  for (int t = 0; t < 100; ++t) {
    const Tensor p = random_tensor({7, 5}, rng, 0.0, 1.0);
    Tensor y({7, 5}), p1(p.shape()), y1(p.shape());
    for (auto& v : y.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) p1[i] = 1.0 - p[i], y1[i] = 1.0 - y[i];
    symmetric = symmetric && tanimoto_complement(p, y) == tanimoto_complement(p1, y1);
  }
  double worst_identity = 0.0;
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b) {
      if ((a | b) == 0) continue;
      Tensor p({4}), y({4});
      for (int i = 0; i < 4; ++i) p[i] = (a >> i) & 1, y[i] = (b >> i) & 1;
      const double D = dice_coeff(p, y, 0.0);
      worst_identity = std::max(worst_identity, std::abs(tanimoto(p, y, 0.0) - D / (2.0 - D)));
    }
  Tensor truth({1, 6, 6, 2});
  for (std::size_t i = 0; i < 36; ++i) {
    const double lung = (i % 6 > 1 && i % 6 < 5) ? 1.0 : 0.0;
    truth[2 * i] = lung;
    truth[2 * i + 1] = 1.0 - lung;
  }
  const Tensor w = random_tensor({1, 6, 6, 1}, rng, 0.5, 3.0);
  Tensor onehot({4, 2}, std::vector<double>{1, 0, 0, 1, 0, 1, 1, 0});
  const std::vector<int> labels{0, 1, 1, 0};
  const double perfect = std::max({dice_loss(truth, truth).value, tanimoto_loss(truth, truth).value,
                                   weighted_tanimoto_loss(truth, truth, Tensor::filled(truth.shape(), 2.0)).value,
                                   segmentation_loss(truth, truth, w).value,
                                   weighted_cross_entropy(onehot, labels, {0.7, 1.4}).value});
  return {symmetric && worst_identity < 1e-15 && std::abs(perfect) < kPerfectLossTol,
          std::string("complement symmetry ") + (symmetric ? "exact" : "broken") + ", T = D/(2-D) worst " +
              fmt("%.1e", worst_identity) + " over 255 pairs, perfect-prediction losses " + fmt("%.1e", perfect)};
}

Outcome translation_tolerance() {
  const std::size_t n = 64;
  Tensor x({n, n}), xs({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / n;
      const double b = 2.0 * std::numbers::pi * static_cast<double>(j) / n;
      x.at(i, j) = std::sin(a) * std::cos(2.0 * b) + 0.5 * std::cos(3.0 * a + b);
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) xs.at((i + 2) % n, (j + 2) % n) = x.at(i, j);
  double r[2];
  for (int J : {1, 2}) {
    const wst::FilterBank fb = wst::build_filterbank(scfg(J, 6, n, n));
    const Tensor a = wst::scatter(x, fb).coeffs, b = wst::scatter(xs, fb).coeffs;
    r[J - 1] = l2_norm(a - b) / l2_norm(a);
  }
  return {r[1] < r[0], "relative change J=1 " + fmt("%.4f", r[0]) + ", J=2 " + fmt("%.4f", r[1])};
}

Outcome segmentation_run() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = data::synth_phantoms(200, 64, 0.4, 1).bundle.samples;
  const auto val = data::synth_phantoms(40, 64, 0.4, 2).bundle.samples;
  nn::Graph g = seg::build_segnet({}, 42);
  seg::SegTrainConfig tc;
  tc.epochs = kSegEpochs;
  tc.seed = 3;
  tc.stop_at_val_dice = kSegDice;
  const seg::SegHistory h = seg::train_seg(g, train, val, tc, [](const seg::SegEpoch& e) {
    std::cout << "      epoch " << e.epoch << ": train dice " << fmt("%.4f", e.train_dice) << ", val dice "
              << fmt("%.4f", e.val_dice) << "\n"
              << std::flush;
  });
  const double s = seconds_since(t0);
  if (h.best_epoch == 0) return {false, "no epoch ran"};
  const seg::SegEpoch& best = h.epochs[h.best_epoch - 1];
  const double gap = std::abs(best.train_dice - best.val_dice);
  return {best.val_dice >= kSegDice && s < kSegSeconds && gap <= kSegGap,
          "val dice " + fmt("%.4f", best.val_dice) + " at epoch " + std::to_string(h.best_epoch) + ", gap " +
              fmt("%.4f", gap) + ", " + fmt("%.0f", s) + " s"};
}

Outcome classification_run() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto pool = data::synth_phantoms(360, 64, 0.4, 11).bundle.samples;
  const auto held = data::synth_phantoms(120, 64, 0.4, 12).bundle.samples;
  clf::ClfConfig cfg;
  cfg.scatter.height = 64;
  cfg.scatter.width = 64;
  const wst::FilterBank fb = wst::build_filterbank(cfg.scatter);
  std::vector<const Tensor*> imgs;
  for (const auto& s : pool) imgs.push_back(&s.image);
  const img::Standardization st = img::compute_standardization(imgs);
  std::vector<clf::MemberInputs> in, hin;
  for (const auto& s : pool) in.push_back(clf::prepare_inputs(s.image, s.float_mask, fb, st, cfg.pool_mode, cfg.tau));
  for (const auto& s : held) hin.push_back(clf::prepare_inputs(s.image, s.float_mask, fb, st, cfg.pool_mode, cfg.tau));
  std::vector<int> labels, held_labels;
  std::vector<std::string> groups;
  for (const auto& s : pool) labels.push_back(s.label), groups.push_back(s.group);
  for (const auto& s : held) held_labels.push_back(s.label);
  const data::FoldPlan plan = data::plan_folds(labels, groups, 6, 5);

  clf::EnsembleFile ef{cfg, st, clf::Fusion::FeatureMean, {}};
  double mean_auc = 0.0;
  std::string per_member;
  for (std::size_t f = 0; f < 6; ++f) {
    nn::Graph g = clf::build_member(cfg, 100 + f);
    clf::FoldData fd{&pool, plan.folds[f].train, plan.folds[f].val, &in, &fb, st};
    clf::ClfTrainConfig tc;
    tc.epochs = kClfEpochs;
    tc.seed = 7 + f;
    const clf::ClfHistory h = clf::train_clf(g, fd, cfg, tc);
    const double auc = roc_auc(clf::predict(g, hin), held_labels);
    mean_auc += auc / 6.0;
    std::cout << "      fold " << f << ": " << fd.train.size() << "/" << fd.val.size() << ", best epoch "
              << h.best_epoch << ", held-out auc " << fmt("%.4f", auc) << "\n"
              << std::flush;
    ef.members.push_back(nn::weights_to_bytes(g.params()));
  }
  nn::Graph e = clf::instantiate_ensemble(ef);
  const double ens_auc = roc_auc(clf::predict(e, hin), held_labels);
  const double s = seconds_since(t0);
  return {ens_auc >= kClfAuc && s < kClfSeconds && ens_auc >= mean_auc - kEnsembleSlack,
          "ensemble held-out auc " + fmt("%.4f", ens_auc) + ", member mean " + fmt("%.4f", mean_auc) + ", " +
              fmt("%.0f", s) + " s"};
}

Outcome pooling_independence() {
  const auto ph = data::synth_phantoms(2, 64, 1.0, 109).bundle.samples;
  clf::ClfConfig cfg;
  cfg.scatter.height = 64;
  cfg.scatter.width = 64;
  const wst::FilterBank fb = wst::build_filterbank(cfg.scatter);
  nn::Graph member = clf::build_member(cfg, 110);

  // The member's head, fed with the final feature map directly.
  nn::Graph head(0);
  const nn::NodeId f = head.add_input(clf::kFinalNode, {0, 0, 2});
  const nn::NodeId w = head.add_input(clf::kPoolWeightInput, {0, 0, 1});
  const nn::NodeId m = head.add<nn::PointwiseMultiply>(clf::kMaskedNode, {f, w});
  const nn::NodeId pooled = head.add<nn::GlobalAvgPoolMasked>(clf::kPooledNode, {m, w});

  Rng rng(111);
  bool ok = true;
  std::size_t excluded = 0;
  double change = 0.0;
  for (auto mode : {clf::PoolMode::MaskOnly, clf::PoolMode::MaskAndThreshold})
    for (const auto& s : ph) {
      const std::vector<clf::MemberInputs> in{clf::prepare_inputs(s.image, s.float_mask, fb, {0.5, 0.25}, mode, 0.5)};
      const std::size_t idx[] = {0};
      const auto feeds = clf::batch_inputs(in, idx);
      member.forward(feeds, nn::Mode::Infer);
      Tensor fin = member.value(member.node(clf::kFinalNode));
      const Tensor& pw = feeds.at(clf::kPoolWeightInput);
      head.forward({{clf::kFinalNode, fin}, {clf::kPoolWeightInput, pw}}, nn::Mode::Infer);
      const Tensor before = head.value(pooled);
      ok = ok && max_abs_diff(before, member.value(member.node(clf::kPooledNode))) == 0.0;
      for (std::size_t p = 0; p < pw.numel(); ++p)
        if (pw[p] == 0.0) {
          ++excluded;
          fin[2 * p] += rng.uniform(-50.0, 50.0);
          fin[2 * p + 1] *= rng.uniform(-20.0, 20.0);
        }
      head.forward({{clf::kFinalNode, fin}, {clf::kPoolWeightInput, pw}}, nn::Mode::Infer);
      change = std::max(change, max_abs_diff(head.value(pooled), before));
    }
  return {ok && excluded > 0 && change == 0.0,
          std::to_string(excluded) + " excluded positions perturbed, logit change " + fmt("%.1e", change)};
}

Outcome gradcam_agreement() {
  const auto ph = data::synth_phantoms(1, 64, 1.0, 112).bundle.samples[0];
  clf::ClfConfig cfg;
  cfg.scatter.height = 64;
  cfg.scatter.width = 64;
  const wst::FilterBank fb = wst::build_filterbank(cfg.scatter);
  const clf::MemberInputs in = clf::prepare_inputs(ph.image, ph.float_mask, fb, {0.5, 0.25}, cfg.pool_mode, cfg.tau);
  nn::Graph g = clf::build_member(cfg, 113);
  for (auto& v : g.params().get("projection/bias").value.values()) v = 3.0;
  double sw = 0.0;
  for (double v : in.pool_weight.values()) sw += v;
  double worst = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    const Tensor cam = sal::gradcam(g, in, c);
    const Tensor& masked = g.value(g.node(clf::kMaskedNode));
    Tensor closed(cam.shape());
    for (std::size_t p = 0; p < cam.numel(); ++p) closed[p] = std::max(0.0, masked[2 * p + c]) / sw;
    if (max_abs(closed) == 0.0) return {false, "class " + std::to_string(c) + " map is empty"};
    worst = std::max(worst, max_rel_diff(cam, closed));
  }
  Tensor& k = g.params().get("projection/kernel").value;
  Tensor& b = g.params().get("projection/bias").value;
  for (std::size_t r = 0; r < k.dim(0); ++r) k.at(r, 1) = k.at(r, 0);
  b[1] = b[0];
  const sal::SaliencyMaps s = sal::gradcam_pair(g, in);
  const double sym = max_abs(s.diff);
  return {worst < kCamRelTol && sym < kSymmetricDiffTol,
          "closed-form rel err " + fmt("%.1e", worst) + ", symmetric diff L-inf " + fmt("%.1e", sym)};
}

// Runs the CLI with stdout and stderr discarded.
int quiet(const std::vector<std::string>& args) {
  std::ostringstream sink;
  auto* ob = std::cout.rdbuf(sink.rdbuf());
  auto* eb = std::cerr.rdbuf(sink.rdbuf());
  const int rc = cli::run(args);
  std::cout.rdbuf(ob);
  std::cerr.rdbuf(eb);
  return rc;
}

int pipeline(const fs::path& d) {
  fs::remove_all(d);
  fs::create_directories(d);
  const auto p = [&](const char* name) { return (d / name).string(); };
  const std::vector<std::vector<std::string>> steps{
      {"synth", "--n", "24", "--size", "32", "--seed", "1", "--out", p("b.cxb")},
      {"train-seg", "--bundle", p("b.cxb"), "--val-fraction", "0.25", "--epochs", "1", "--blocks", "1",
       "--branch-filters", "4", "--convs-per-branch", "1", "--seed", "2", "--out",
       p("seg.cxwt")},
      {"segment", "--weights", p("seg.cxwt"), "--bundle", p("b.cxb"), "--out-dir", p("masks"), "--report",
       p("seg_report.csv")},
      {"train-clf", "--bundle", p("b.cxb"), "--masks", p("masks"), "--folds", "2", "--epochs", "1",
       "--batch-size", "6", "--J", "1", "--L", "3", "--branch-filters", "2", "--shortcut-filters", "6",
       "--heads", "1", "--head-size", "4", "--augment", "true", "--seed", "3", "--out-dir", p("clf")},
      {"ensemble", "--model", p("clf/model.json"), "--out", p("e.cxen")},
      {"classify", "--ensemble", p("e.cxen"), "--bundle", p("b.cxb"), "--masks", p("masks"), "--out",
       p("pred.csv")},
      {"gradcam", "--ensemble", p("e.cxen"), "--bundle", p("b.cxb"), "--id", "", "--out-prefix", p("cam")},
  };
  for (auto args : steps) {
    if (args[0] == "gradcam") args[6] = data::load_bundle(d / "b.cxb").samples.front().id;
    if (const int rc = quiet(args); rc != 0) {
      std::cout << "      '" << args[0] << "' exited with " << rc << "\n";
      return rc;
    }
  }
  return 0;
}

Outcome determinism(const fs::path& work) {
  const fs::path a = work / "run_a", b = work / "run_b";
  if (pipeline(a) != 0 || pipeline(b) != 0) return {false, "pipeline failed"};
  std::size_t files = 0;
  std::vector<std::string> differ;
  std::set<std::string> kinds;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ++files;
    kinds.insert(rel.extension().string());
    if (!fs::exists(b / rel) || io::read_file(e.path()) != io::read_file(b / rel)) differ.push_back(rel.string());
  }
  const bool covered = kinds.count(".cxwt") && kinds.count(".csv") && kinds.count(".pgm") && kinds.count(".ppm") &&
                       kinds.count(".cxen");
  std::string detail = std::to_string(files) + " files compared, " + std::to_string(differ.size()) + " differ";
  for (const auto& f : differ) detail += " " + f;
  return {covered && files > 0 && differ.empty(), detail};
}

Outcome fold_integrity() {
  const auto synth = data::synth_phantoms(2265, 32, 0.4, 114).bundle.samples;
  std::vector<int> labels;
  std::vector<std::string> groups;
  std::map<std::string, int> per_group;
  for (const auto& s : synth) labels.push_back(s.label), groups.push_back(s.group), ++per_group[s.group];
  std::size_t multi = 0;
  for (const auto& [g, n] : per_group) multi += n > 1;
  const data::FoldPlan plan = data::plan_folds(labels, groups, 6, 115);
  const std::size_t N = labels.size();
  std::size_t P = 0;
  for (int l : labels) P += l == 1;
  bool ok = plan.folds.size() == 6 && multi > 0;
  std::size_t leaks = 0;
  double worst_ratio = 0.0;
  std::string sizes;
  std::vector<int> covered(N, 0);
  for (const auto& f : plan.folds) {
    std::set<std::string> train_groups;
    for (std::size_t i : f.train) train_groups.insert(groups[i]);
    std::size_t pos = 0;
    for (std::size_t i : f.val) {
      leaks += train_groups.count(groups[i]);
      pos += labels[i] == 1;
      ++covered[i];
    }
    worst_ratio = std::max(worst_ratio, std::abs(double(pos) - double(f.val.size()) * double(P) / double(N)));
    ok = ok && f.train.size() + f.val.size() == N && f.train.size() >= 1886 && f.train.size() <= 1888 &&
         f.val.size() >= 377 && f.val.size() <= 379;
    sizes += (sizes.empty() ? "" : " ") + std::to_string(f.train.size()) + "/" + std::to_string(f.val.size());
  }
  for (int c : covered) ok = ok && c == 1;
  ok = ok && leaks == 0 && worst_ratio <= 1.0;
  return {ok, std::to_string(multi) + " multi-image groups, folds " + sizes + ", leaks " + std::to_string(leaks) +
                  ", worst positive offset " + fmt("%.2f", worst_ratio)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "cxrnet_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc)
      work = argv[++i];
    else if (a == "--only" && i + 1 < argc)
      only.insert(std::stoi(argv[++i]));
    else {
      std::cerr << "usage: acceptance [--work DIR] [--only N]...\n";
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"scattering oracle equivalence", scattering_oracle},
      {"channel and shape fidelity", shape_fidelity},
      {"parameter accounting", parameter_accounting},
      {"gradient suite", gradient_suite},
      {"loss identities", loss_identities},
      {"translation tolerance", translation_tolerance},
      {"desk-scale segmentation", segmentation_run},
      {"desk-scale classification", classification_run},
      {"pooling-region independence", pooling_independence},
      {"Grad-CAM closed-form agreement", gradcam_agreement},
      {"determinism", [&] { return determinism(work); }},
      {"fold-plan integrity", fold_integrity},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
