#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cxrnet/augment.hpp"
#include "cxrnet/blocks.hpp"
#include "cxrnet/dataset.hpp"
#include "cxrnet/graph.hpp"
#include "cxrnet/losses.hpp"
#include "cxrnet/optim.hpp"

// Lung segmentation network: a linear stack of residual blocks at full
// resolution, a 1x1 projection to two classes and a per-pixel softmax.
namespace cxr::seg {

struct SegConfig {
  std::size_t n_blocks = 5;
  std::vector<std::size_t> kernels{3, 5, 7};
  std::vector<std::size_t> dilations{1, 3, 5};
  std::size_t branch_filters = 16;
  std::size_t shortcut_filters = 48;
  std::size_t convs_per_branch = 2;
  bool branch_norm = true;
  bool shortcut_norm = true;
  double dropout = 0.1;
  double slope = 0.01;
  std::size_t classes = 2;

  void validate() const;
  nn::ConvResSpec block_spec() const;
};

inline constexpr const char* kImageInput = "image";
inline constexpr const char* kProbsNode = "softmax";

// Input "image" is [B,H,W,1] with any H, W; output [B,H,W,2] where channel 0
// is the lung probability.
nn::Graph build_segnet(const SegConfig& cfg, std::uint64_t seed);

struct SegTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  nn::AdamConfig adam;
  double smoothing = kDefaultSmoothing;
  ContourWeightConfig contour;
  bool weight_both_channels = true;
  bool shuffle = false;  // batches follow dataset order unless set
  bool augment = false;
  img::AugmentConfig augmentation;
  std::uint64_t seed = 0;
  // Stop once the validation Dice reaches this value (0 disables).
  double stop_at_val_dice = 0.0;
};

struct SegEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_dice = 0.0;  // thresholded lung Dice, averaged over images
  double val_loss = 0.0;
  double val_dice = 0.0;
  double seconds = 0.0;
};

struct SegHistory {
  std::vector<SegEpoch> epochs;
  std::size_t best_epoch = 0;  // 1-based, 0 when no epoch ran
  double best_val_dice = 0.0;
};

using EpochCallback = std::function<void(const SegEpoch&)>;

// Minimises the weighted Tanimoto loss with Adam. The graph ends with the
// weights of the best validation epoch (or unchanged weights if epochs == 0).
SegHistory train_seg(nn::Graph& g, const std::vector<data::Sample>& train,
                     const std::vector<data::Sample>& val, const SegTrainConfig& cfg,
                     const EpochCallback& on_epoch = {});

// Validation loss and mean thresholded Dice of the lung channel.
std::pair<double, double> evaluate_seg(nn::Graph& g, const std::vector<data::Sample>& samples,
                                       const SegTrainConfig& cfg);

// Lung-channel probability map [H,W] for one image, no thresholding.
Tensor predict_mask(nn::Graph& g, const Tensor& image);

}  // namespace cxr::seg
