#include "cxrnet/segnet.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "cxrnet/error.hpp"
#include "cxrnet/metrics.hpp"
#include "cxrnet/weights_io.hpp"

namespace cxr::seg {

void SegConfig::validate() const {
  if (classes != 2) throw ParameterError("the segmentation network has exactly 2 classes");
  if (n_blocks == 0) throw ParameterError("at least one residual block is required");
  block_spec().validate();
}

nn::ConvResSpec SegConfig::block_spec() const {
  nn::ConvResSpec s;
  s.kernels = kernels;
  s.dilations = dilations;
  s.branch_filters = branch_filters;
  s.shortcut_filters = shortcut_filters;
  s.convs_per_branch = convs_per_branch;
  s.branch_norm = branch_norm;
  s.shortcut_norm = shortcut_norm;
  s.slope = slope;
  s.dropout = dropout;
  return s;
}

nn::Graph build_segnet(const SegConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Graph g(seed);
  const nn::ConvResSpec spec = cfg.block_spec();
  nn::NodeId x = g.add_input(kImageInput, {0, 0, 1});
  std::size_t channels = 1;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    x = nn::conv_res_block(g, "block" + std::to_string(b), x, channels, spec);
    channels = spec.shortcut_filters;
  }
  x = g.add<nn::PointwiseConv2d>("classifier", {x}, channels, cfg.classes);
  g.add<nn::Softmax>(kProbsNode, {x});
  return g;
}

namespace {

struct Batch {
  Tensor image;    // [B,H,W,1]
  Tensor truth;    // [B,H,W,2]
  Tensor weights;  // [B,H,W,1]
};

Batch make_batch(const std::vector<const data::Sample*>& items, const std::vector<Tensor>& weights) {
  const std::size_t B = items.size();
  const std::size_t H = items[0]->image.dim(0), W = items[0]->image.dim(1), P = H * W;
  Batch b{Tensor({B, H, W, 1}), Tensor({B, H, W, 2}), Tensor({B, H, W, 1})};
  for (std::size_t i = 0; i < B; ++i) {
    const data::Sample& s = *items[i];
    if (s.image.shape() != Shape{H, W}) throw ShapeError("sample '" + s.id + "': images in a batch must share a shape");
    if (s.seg_truth.shape() != Shape{H, W, 2})
      throw ValidationError("sample '" + s.id + "' has no segmentation truth");
    std::copy_n(s.image.data(), P, b.image.data() + i * P);
    std::copy_n(s.seg_truth.data(), 2 * P, b.truth.data() + i * 2 * P);
    std::copy_n(weights[i].data(), P, b.weights.data() + i * P);
  }
  return b;
}

Tensor lung_weights(const data::Sample& s, const SegTrainConfig& cfg) {
  const std::size_t H = s.seg_truth.dim(0), W = s.seg_truth.dim(1);
  Tensor lung({H, W});
  for (std::size_t i = 0; i < H * W; ++i) lung[i] = s.seg_truth[2 * i];
  return contour_weights(lung, cfg.contour);
}

// Thresholded lung Dice of every image in a [B,H,W,2] prediction.
double batch_dice_sum(const Tensor& probs, const Tensor& truth) {
  const std::size_t B = probs.dim(0), P = probs.dim(1) * probs.dim(2);
  double total = 0.0;
  Tensor a({P}), t({P});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      a[p] = probs[(b * P + p) * 2];
      t[p] = truth[(b * P + p) * 2];
    }
    total += binary_dice(a, t);
  }
  return total;
}

void check_finite(double loss, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss))
    throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch));
}

}  // namespace

std::pair<double, double> evaluate_seg(nn::Graph& g, const std::vector<data::Sample>& samples,
                                       const SegTrainConfig& cfg) {
  if (samples.empty()) return {0.0, 0.0};
  double loss = 0.0, dice = 0.0;
  const nn::NodeId out = g.node(kProbsNode);
  for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(samples.size(), start + cfg.batch_size);
    std::vector<const data::Sample*> items;
    std::vector<Tensor> weights;
    for (std::size_t i = start; i < end; ++i) {
      items.push_back(&samples[i]);
      weights.push_back(lung_weights(samples[i], cfg));
    }
    Batch b = make_batch(items, weights);
    g.forward({{kImageInput, b.image}}, nn::Mode::Infer);
    const Tensor& probs = g.value(out);
    loss += segmentation_loss(probs, b.truth, b.weights, cfg.smoothing, cfg.weight_both_channels).value *
            static_cast<double>(end - start);
    dice += batch_dice_sum(probs, b.truth);
  }
  const double n = static_cast<double>(samples.size());
  return {loss / n, dice / n};
}

SegHistory train_seg(nn::Graph& g, const std::vector<data::Sample>& train,
                     const std::vector<data::Sample>& val, const SegTrainConfig& cfg,
                     const EpochCallback& on_epoch) {
  if (cfg.batch_size == 0) throw ParameterError("batch size must be positive");
  SegHistory hist;
  if (cfg.epochs == 0) return hist;
  if (train.empty()) throw ValidationError("empty training set");
  const nn::NodeId out = g.node(kProbsNode);
  nn::Adam adam(cfg.adam);
  g.reseed_dropout(Rng(cfg.seed).fork(7).next_u64());
  Rng order_rng = Rng(cfg.seed).fork(11);
  Rng aug_rng = Rng(cfg.seed).fork(13);

  std::vector<Tensor> base_weights;
  if (!cfg.augment)
    for (const data::Sample& s : train) base_weights.push_back(lung_weights(s, cfg));

  io::Bytes best;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.shuffle)
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    double loss_sum = 0.0, dice_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<data::Sample> augmented;
      std::vector<const data::Sample*> items;
      std::vector<Tensor> weights;
      if (cfg.augment) {
        augmented.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
          augmented.push_back(img::augment(train[order[i]], cfg.augmentation, aug_rng));
          weights.push_back(lung_weights(augmented.back(), cfg));
        }
        for (const auto& s : augmented) items.push_back(&s);
      } else {
        for (std::size_t i = start; i < end; ++i) {
          items.push_back(&train[order[i]]);
          weights.push_back(base_weights[order[i]]);
        }
      }
      Batch b = make_batch(items, weights);
      g.forward({{kImageInput, b.image}}, nn::Mode::Train);
      const Tensor& probs = g.value(out);
      LossResult lr = segmentation_loss(probs, b.truth, b.weights, cfg.smoothing, cfg.weight_both_channels);
      check_finite(lr.value, epoch, batch_no);
      loss_sum += lr.value * static_cast<double>(end - start);
      dice_sum += batch_dice_sum(probs, b.truth);
      g.zero_grad();
      g.backward(out, lr.grad);
      try {
        adam.step(g.params());
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_no));
      }
    }
    SegEpoch row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(train.size());
    row.train_dice = dice_sum / static_cast<double>(train.size());
    std::tie(row.val_loss, row.val_dice) = evaluate_seg(g, val.empty() ? train : val, cfg);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back(row);
    if (hist.best_epoch == 0 || row.val_dice > hist.best_val_dice) {
      hist.best_epoch = epoch;
      hist.best_val_dice = row.val_dice;
      best = nn::weights_to_bytes(g.params());
    }
    if (on_epoch) on_epoch(row);
    if (cfg.stop_at_val_dice > 0.0 && row.val_dice >= cfg.stop_at_val_dice) break;
  }
  nn::weights_from_bytes(g.params(), best, "best checkpoint");
  return hist;
}

Tensor predict_mask(nn::Graph& g, const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("predict_mask expects an [H,W] image");
  const std::size_t H = image.dim(0), W = image.dim(1);
  g.forward({{kImageInput, image.reshaped({1, H, W, 1})}}, nn::Mode::Infer);
  const Tensor& probs = g.value(g.node(kProbsNode));
  Tensor m({H, W});
  for (std::size_t i = 0; i < H * W; ++i) m[i] = std::clamp(probs[2 * i], 0.0, 1.0);
  return m;
}

}  // namespace cxr::seg
