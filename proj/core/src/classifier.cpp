#include "cxrnet/classifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "cxrnet/error.hpp"
#include "cxrnet/layers.hpp"
#include "cxrnet/losses.hpp"
#include "cxrnet/metrics.hpp"
#include "cxrnet/weights_io.hpp"

namespace cxr::clf {

using nlohmann::json;

std::string to_string(PoolMode m) {
  switch (m) {
    case PoolMode::MaskOnly: return "mask_only";
    case PoolMode::MaskAndThreshold: return "mask_and_threshold";
    case PoolMode::ImageWeighted: return "image_weighted";
  }
  return "?";
}

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "mask_only") return PoolMode::MaskOnly;
  if (s == "mask_and_threshold") return PoolMode::MaskAndThreshold;
  if (s == "image_weighted") return PoolMode::ImageWeighted;
  throw ParameterError("unknown pool mode '" + s + "' (mask_only, mask_and_threshold, image_weighted)");
}

std::string to_string(Fusion f) {
  return f == Fusion::FeatureMean ? "feature_mean" : "probability_mean";
}

Fusion parse_fusion(const std::string& s) {
  if (s == "feature_mean") return Fusion::FeatureMean;
  if (s == "probability_mean") return Fusion::ProbabilityMean;
  throw ParameterError("unknown fusion '" + s + "' (feature_mean, probability_mean)");
}

void ClfConfig::validate() const {
  scatter.validate();
  if (n_blocks == 0) throw ParameterError("at least one residual block is required");
  if (shortcut_filters != 3 * branch_filters)
    throw ParameterError("shortcut filters must equal 3 x branch filters");
  if (dilations.size() != 3) throw ParameterError("exactly three dilation rates are required");
  if (heads == 0 || head_size == 0) throw ParameterError("attention heads and head size must be positive");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ParameterError("tau must lie in [0,1]");
  if (shortcut_filters != feature_channels() + 1)
    throw ParameterError("shortcut filters (" + std::to_string(shortcut_filters) +
                         ") must equal the attention output width (" +
                         std::to_string(feature_channels() + 1) + ")");
  block_spec().validate();
}

std::size_t ClfConfig::feature_channels() const {
  return wst::channel_count(scatter.J, scatter.L) + 1;
}

nn::ConvResSpec ClfConfig::block_spec() const {
  nn::ConvResSpec s;
  s.kernels.assign(dilations.size(), kernel);
  s.dilations = dilations;
  s.branch_filters = branch_filters;
  s.shortcut_filters = shortcut_filters;
  s.convs_per_branch = 1;
  s.branch_norm = false;
  s.shortcut_norm = false;
  s.slope = slope;
  s.dropout = dropout;
  return s;
}

nn::NodeId attention_block(nn::Graph& g, const std::string& prefix, nn::NodeId features,
                           nn::NodeId binary_mask, const ClfConfig& cfg) {
  const std::size_t C = cfg.feature_channels();
  const nn::NodeId q = g.add<nn::SelectChannels>(prefix + "query", {features}, 0, 1);
  const nn::NodeId v = g.add<nn::SelectChannels>(prefix + "value", {features}, C - 1, 1);
  const nn::NodeId rows =
      g.add<nn::MultiHeadAttention>(prefix + "attention_rows", {q, binary_mask, v}, cfg.heads, cfg.head_size);
  const nn::NodeId qt = g.add<nn::TransposeHW>(prefix + "query_t", {q});
  const nn::NodeId kt = g.add<nn::TransposeHW>(prefix + "key_t", {binary_mask});
  const nn::NodeId vt = g.add<nn::TransposeHW>(prefix + "value_t", {v});
  const nn::NodeId cols_t =
      g.add<nn::MultiHeadAttention>(prefix + "attention_cols", {qt, kt, vt}, cfg.heads, cfg.head_size);
  const nn::NodeId cols = g.add<nn::TransposeHW>(prefix + "attention_cols_t", {cols_t});
  const nn::NodeId att = g.add<nn::PointwiseMultiply>(prefix + "attention", {q, rows, cols});
  return g.add<nn::Concat>(prefix + "attention_concat", {features, att});
}

nn::NodeId member_body(nn::Graph& g, const std::string& prefix, nn::NodeId features,
                       nn::NodeId binary_mask, const ClfConfig& cfg) {
  const std::size_t width = cfg.feature_channels() + 1;
  nn::NodeId x = attention_block(g, prefix, features, binary_mask, cfg);
  x = g.add<nn::SpatialDropout>(prefix + "attention_dropout", {x}, cfg.dropout);
  x = g.add<nn::BatchNorm>(prefix + "attention_bn", {x}, width);
  const nn::ConvResSpec spec = cfg.block_spec();
  for (std::size_t b = 0; b < cfg.n_blocks; ++b)
    x = nn::conv_res_block(g, prefix + "block" + std::to_string(b), x, width, spec);
  return g.add<nn::PointwiseConv2d>(prefix + "projection", {x}, cfg.shortcut_filters, 2);
}

namespace {

struct Inputs {
  nn::NodeId features, binary_mask, pool_weight;
};

Inputs add_inputs(nn::Graph& g, const ClfConfig& cfg) {
  const std::size_t h = cfg.scatter.out_height(), w = cfg.scatter.out_width();
  return {g.add_input(kFeaturesInput, {h, w, cfg.feature_channels()}),
          g.add_input(kBinaryMaskInput, {h, w, 1}), g.add_input(kPoolWeightInput, {h, w, 1})};
}

nn::NodeId add_head(nn::Graph& g, const std::string& prefix, nn::NodeId final_map,
                    nn::NodeId pool_weight) {
  const nn::NodeId masked = g.add<nn::PointwiseMultiply>(prefix + kMaskedNode, {final_map, pool_weight});
  const nn::NodeId pooled = g.add<nn::GlobalAvgPoolMasked>(prefix + kPooledNode, {masked, pool_weight});
  return g.add<nn::Softmax>(prefix + kProbsNode, {pooled});
}

}  // namespace

nn::Graph build_member(const ClfConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Graph g(seed);
  const Inputs in = add_inputs(g, cfg);
  const nn::NodeId body = member_body(g, "", in.features, in.binary_mask, cfg);
  const nn::NodeId fin = g.add<nn::MeanOverMembers>(kFinalNode, {body});
  add_head(g, "", fin, in.pool_weight);
  return g;
}

std::string member_prefix(std::size_t i) { return "m" + std::to_string(i) + "/"; }

nn::Graph build_ensemble_graph(const ClfConfig& cfg, std::size_t members, Fusion fusion) {
  cfg.validate();
  if (members == 0) throw ParameterError("an ensemble needs at least one member");
  nn::Graph g(0);
  const Inputs in = add_inputs(g, cfg);
  std::vector<nn::NodeId> outs;
  for (std::size_t i = 0; i < members; ++i) {
    const std::string p = member_prefix(i);
    const nn::NodeId body = member_body(g, p, in.features, in.binary_mask, cfg);
    if (fusion == Fusion::FeatureMean)
      outs.push_back(body);
    else
      outs.push_back(add_head(g, p, body, in.pool_weight));
  }
  if (fusion == Fusion::FeatureMean) {
    const nn::NodeId fin = g.add<nn::MeanOverMembers>(kFinalNode, outs);
    add_head(g, "", fin, in.pool_weight);
  } else {
    g.add<nn::MeanOverMembers>(kProbsNode, outs);
  }
  return g;
}

Tensor pooling_include(const Tensor& binary_mask, const Tensor& image_ds, PoolMode mode,
                       double tau) {
  if (binary_mask.numel() != image_ds.numel() || binary_mask.rank() < 2)
    throw ShapeError("pooling map: mask " + shape_str(binary_mask.shape()) + " vs image " +
                     shape_str(image_ds.shape()));
  Tensor out({binary_mask.dim(0), binary_mask.dim(1)});
  double total = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const bool lung = binary_mask[i] >= 0.5;
    double v = 0.0;
    switch (mode) {
      case PoolMode::MaskOnly: v = lung ? 1.0 : 0.0; break;
      case PoolMode::MaskAndThreshold: v = lung && image_ds[i] >= tau ? 1.0 : 0.0; break;
      case PoolMode::ImageWeighted: v = lung ? std::clamp(image_ds[i], 0.0, 1.0) : 0.0; break;
    }
    out[i] = v;
    total += v;
  }
  if (!(total > 0.0)) throw ValidationError("empty pooling region");
  return out;
}

MemberInputs prepare_inputs(const Tensor& image, const Tensor& float_mask,
                            const wst::FilterBank& fb, const img::Standardization& stats,
                            PoolMode mode, double tau) {
  if (image.shape() != Shape{fb.cfg.height, fb.cfg.width})
    throw ShapeError("image " + shape_str(image.shape()) + " does not match the scattering extent " +
                     std::to_string(fb.cfg.height) + "x" + std::to_string(fb.cfg.width));
  const wst::WstBlockOutput blk = wst::wst_block(img::standardize(image, stats), float_mask, fb);
  const std::size_t h = blk.features.dim(0), w = blk.features.dim(1), C = blk.features.dim(2);
  Tensor order0({h, w});
  for (std::size_t i = 0; i < h * w; ++i) order0[i] = blk.features[i * C];
  const Tensor include = pooling_include(blk.binary_mask, img::rescale_unit(order0), mode, tau);
  return {blk.features, blk.binary_mask, include.reshaped({h, w, 1})};
}

std::map<std::string, Tensor> batch_inputs(const std::vector<MemberInputs>& inputs,
                                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw ParameterError("empty batch");
  auto stack = [&](Tensor MemberInputs::*field) {
    const Tensor& first = inputs.at(indices[0]).*field;
    Shape shape{indices.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor out(shape);
    const std::size_t n = first.numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const Tensor& t = inputs.at(indices[i]).*field;
      if (t.shape() != first.shape()) throw ShapeError("samples in a batch differ in shape");
      std::copy_n(t.data(), n, out.data() + i * n);
    }
    return out;
  };
  return {{kFeaturesInput, stack(&MemberInputs::features)},
          {kBinaryMaskInput, stack(&MemberInputs::binary_mask)},
          {kPoolWeightInput, stack(&MemberInputs::pool_weight)}};
}

std::vector<double> predict(nn::Graph& g, const std::vector<MemberInputs>& inputs,
                            std::size_t batch_size) {
  std::vector<double> p;
  p.reserve(inputs.size());
  const nn::NodeId out = g.node(kProbsNode);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(inputs.size(), start + batch_size); ++i) idx.push_back(i);
    g.forward(batch_inputs(inputs, idx), nn::Mode::Infer);
    const Tensor& probs = g.value(out);
    for (std::size_t i = 0; i < idx.size(); ++i) p.push_back(probs[2 * i + 1]);
  }
  return p;
}

namespace {

struct Scores {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> p;
};

Scores score(nn::Graph& g, const std::vector<MemberInputs>& inputs, std::span<const std::size_t> idx,
             const std::vector<int>& labels, std::array<double, 2> cw, std::size_t batch_size) {
  Scores s;
  const nn::NodeId out = g.node(kProbsNode);
  std::vector<std::size_t> chunk;
  std::vector<int> lab;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    chunk.assign(idx.begin() + static_cast<long>(start), idx.begin() + static_cast<long>(end));
    lab.clear();
    for (std::size_t i : chunk) lab.push_back(labels[i]);
    g.forward(batch_inputs(inputs, chunk), nn::Mode::Infer);
    const Tensor& probs = g.value(out);
    s.loss += weighted_cross_entropy(probs, lab, cw).value * static_cast<double>(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const double p1 = probs[2 * i + 1];
      s.p.push_back(p1);
      s.accuracy += ((p1 >= 0.5) == (lab[i] == 1)) ? 1.0 : 0.0;
    }
  }
  const double n = static_cast<double>(idx.size());
  s.loss /= n;
  s.accuracy /= n;
  return s;
}

}  // namespace

ClfHistory train_clf(nn::Graph& g, const FoldData& fold, const ClfConfig& cfg,
                     const ClfTrainConfig& tcfg, const ClfEpochCallback& on_epoch) {
  if (!fold.samples || !fold.inputs || fold.inputs->size() != fold.samples->size())
    throw ParameterError("fold data is incomplete");
  if (tcfg.batch_size == 0) throw ParameterError("batch size must be positive");
  if ((tcfg.augment || tcfg.augment_val) && !fold.fb)
    throw ParameterError("augmentation needs the filter bank");
  ClfHistory hist;
  if (tcfg.epochs == 0) return hist;
  if (fold.train.empty() || fold.val.empty()) throw ValidationError("empty training or validation split");
  const auto& samples = *fold.samples;
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  std::vector<int> train_labels;
  for (std::size_t i : fold.train) train_labels.push_back(labels[i]);
  const std::array<double, 2> cw = class_weights(train_labels);

  const nn::NodeId out = g.node(kProbsNode);
  nn::Adam adam(tcfg.adam);
  g.reseed_dropout(Rng(tcfg.seed).fork(7).next_u64());
  Rng aug_rng = Rng(tcfg.seed).fork(13);
  auto augmented_inputs = [&](std::span<const std::size_t> idx) {
    std::vector<MemberInputs> a(samples.size());
    for (std::size_t i : idx) {
      const data::Sample s = img::augment(samples[i], tcfg.augmentation, aug_rng);
      a[i] = prepare_inputs(s.image, s.float_mask, *fold.fb, fold.stats, cfg.pool_mode, cfg.tau);
    }
    return a;
  };

  io::Bytes best;
  double best_auc = -1.0, best_loss = 0.0;
  std::vector<std::size_t> chunk;
  std::vector<int> lab;
  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<MemberInputs> aug;
    if (tcfg.augment) aug = augmented_inputs(fold.train);
    const std::vector<MemberInputs>& train_in = tcfg.augment ? aug : *fold.inputs;
    double loss_sum = 0.0, correct = 0.0;
    for (std::size_t start = 0, batch_no = 0; start < fold.train.size(); start += tcfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(fold.train.size(), start + tcfg.batch_size);
      chunk.assign(fold.train.begin() + static_cast<long>(start), fold.train.begin() + static_cast<long>(end));
      lab.clear();
      for (std::size_t i : chunk) lab.push_back(labels[i]);
      g.forward(batch_inputs(train_in, chunk), nn::Mode::Train);
      const Tensor& probs = g.value(out);
      LossResult lr = weighted_cross_entropy(probs, lab, cw);
      if (!std::isfinite(lr.value))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no));
      loss_sum += lr.value * static_cast<double>(chunk.size());
      for (std::size_t i = 0; i < chunk.size(); ++i)
        correct += ((probs[2 * i + 1] >= 0.5) == (lab[i] == 1)) ? 1.0 : 0.0;
      g.zero_grad();
      g.backward(out, lr.grad);
      try {
        adam.step(g.params());
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_no));
      }
    }
    ClfEpoch row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(fold.train.size());
    row.train_accuracy = correct / static_cast<double>(fold.train.size());
    std::vector<MemberInputs> vaug;
    if (tcfg.augment_val) vaug = augmented_inputs(fold.val);
    const Scores v = score(g, tcfg.augment_val ? vaug : *fold.inputs, fold.val, labels, cw, tcfg.batch_size);
    std::vector<int> val_labels;
    for (std::size_t i : fold.val) val_labels.push_back(labels[i]);
    row.val_loss = v.loss;
    row.val_accuracy = v.accuracy;
    row.val_auc = roc_auc(v.p, val_labels);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back(row);
    if (row.val_auc > best_auc || (row.val_auc == best_auc && row.val_loss < best_loss)) {
      best_auc = row.val_auc;
      best_loss = row.val_loss;
      hist.best_epoch = epoch;
      best = nn::weights_to_bytes(g.params());
    }
    if (on_epoch) on_epoch(row);
  }
  nn::weights_from_bytes(g.params(), best, "best checkpoint");
  return hist;
}

// ---------------------------------------------------------------- ensemble file

namespace {

json config_to_json(const ClfConfig& c) {
  return json{{"J", c.scatter.J},
              {"L", c.scatter.L},
              {"height", c.scatter.height},
              {"width", c.scatter.width},
              {"n_blocks", c.n_blocks},
              {"kernel", c.kernel},
              {"dilations", c.dilations},
              {"branch_filters", c.branch_filters},
              {"shortcut_filters", c.shortcut_filters},
              {"heads", c.heads},
              {"head_size", c.head_size},
              {"dropout", c.dropout},
              {"slope", c.slope},
              {"pool_mode", to_string(c.pool_mode)},
              {"tau", c.tau}};
}

ClfConfig config_from_json(const json& j) {
  ClfConfig c;
  c.scatter.J = j.at("J").get<int>();
  c.scatter.L = j.at("L").get<int>();
  c.scatter.height = j.at("height").get<std::size_t>();
  c.scatter.width = j.at("width").get<std::size_t>();
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.dilations = j.at("dilations").get<std::vector<std::size_t>>();
  c.branch_filters = j.at("branch_filters").get<std::size_t>();
  c.shortcut_filters = j.at("shortcut_filters").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.head_size = j.at("head_size").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.slope = j.at("slope").get<double>();
  c.pool_mode = parse_pool_mode(j.at("pool_mode").get<std::string>());
  c.tau = j.at("tau").get<double>();
  return c;
}

}  // namespace

io::Bytes pack_ensemble(const EnsembleFile& e) {
  if (e.members.empty()) throw ParameterError("an ensemble needs at least one member");
  json head{{"config", config_to_json(e.cfg)},
            {"mean", e.stats.mean},
            {"std", e.stats.std},
            {"fusion", to_string(e.fusion)},
            {"members", e.members.size()}};
  const std::string text = head.dump();
  io::Writer w;
  w.str("CXEN");
  w.u32(kEnsembleVersion);
  w.u64(text.size());
  w.str(text);
  for (const io::Bytes& m : e.members) {
    w.u64(m.size());
    w.raw(m.data(), m.size());
  }
  return std::move(w.bytes());
}

EnsembleFile unpack_ensemble(const io::Bytes& bytes, const std::string& context) {
  io::Reader r(bytes, context);
  if (r.remaining() < 4 || r.str(4) != "CXEN") r.fail("bad magic, not an ensemble file");
  const std::uint32_t version = r.u32();
  if (version != kEnsembleVersion) r.fail("unsupported ensemble version " + std::to_string(version));
  const std::uint64_t hlen = r.u64();
  if (hlen > r.remaining()) r.fail("header length exceeds file");
  const std::string text = r.str(static_cast<std::size_t>(hlen));
  EnsembleFile e;
  std::size_t count = 0;
  try {
    const json head = json::parse(text);
    e.cfg = config_from_json(head.at("config"));
    e.stats.mean = head.at("mean").get<double>();
    e.stats.std = head.at("std").get<double>();
    e.fusion = parse_fusion(head.at("fusion").get<std::string>());
    count = head.at("members").get<std::size_t>();
  } catch (const json::exception& ex) {
    throw FormatError("format error in " + context + ": bad header: " + ex.what());
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) r.fail("member " + std::to_string(i) + " length exceeds file");
    const std::uint8_t* p = r.take(static_cast<std::size_t>(len));
    e.members.emplace_back(p, p + len);
  }
  if (!r.done()) r.fail("trailing bytes after the last member");
  return e;
}

void save_ensemble(const EnsembleFile& e, const std::filesystem::path& path) {
  io::write_file_atomic(path, pack_ensemble(e));
}

EnsembleFile load_ensemble(const std::filesystem::path& path) {
  return unpack_ensemble(io::read_file(path), path.string());
}

nn::Graph instantiate_ensemble(const EnsembleFile& e) {
  nn::Graph g = build_ensemble_graph(e.cfg, e.members.size(), e.fusion);
  for (std::size_t i = 0; i < e.members.size(); ++i)
    nn::weights_from_bytes(g.params(), e.members[i], "ensemble member " + std::to_string(i),
                           member_prefix(i));
  return g;
}

}  // namespace cxr::clf
