#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cxrnet/augment.hpp"
#include "cxrnet/binio.hpp"
#include "cxrnet/blocks.hpp"
#include "cxrnet/dataset.hpp"
#include "cxrnet/graph.hpp"
#include "cxrnet/optim.hpp"
#include "cxrnet/preprocess.hpp"
#include "cxrnet/wst.hpp"

// Classifier: a fixed scattering front end, a row/column attention block, a
// stack of residual blocks reduced to two channels, masked global average
// pooling and a softmax. Channel 1 is the Covid-positive class so that the
// channel index equals the label.
namespace cxr::clf {

enum class PoolMode { MaskOnly, MaskAndThreshold, ImageWeighted };
std::string to_string(PoolMode m);
PoolMode parse_pool_mode(const std::string& s);

enum class Fusion { FeatureMean, ProbabilityMean };
std::string to_string(Fusion f);
Fusion parse_fusion(const std::string& s);

struct ClfConfig {
  wst::ScatterConfig scatter{2, 6, 64, 64};
  std::size_t n_blocks = 3;
  std::size_t kernel = 3;
  std::vector<std::size_t> dilations{1, 2, 3};
  std::size_t branch_filters = 17;
  std::size_t shortcut_filters = 51;
  std::size_t heads = 2;
  std::size_t head_size = 64;
  double dropout = 0.1;
  double slope = 0.01;
  PoolMode pool_mode = PoolMode::MaskOnly;
  double tau = 0.5;

  void validate() const;
  nn::ConvResSpec block_spec() const;
  // scattering channels + 1 (the decimated float mask)
  std::size_t feature_channels() const;
};

// Node names shared by members and ensembles.
inline constexpr const char* kFeaturesInput = "features";
inline constexpr const char* kBinaryMaskInput = "binary_mask";
inline constexpr const char* kPoolWeightInput = "pool_weight";
inline constexpr const char* kFinalNode = "final_features";     // [h,w,2]
inline constexpr const char* kMaskedNode = "masked_features";   // final * pool weight
inline constexpr const char* kPooledNode = "pooled";            // [1,1,2] logits
inline constexpr const char* kProbsNode = "probs";

// Appends the attention block (query = scattering channel 0, key = binary
// mask, value = decimated float mask, along rows and along columns) and
// returns the node holding concat(features, Q * A_rows * A_cols).
nn::NodeId attention_block(nn::Graph& g, const std::string& prefix, nn::NodeId features,
                           nn::NodeId binary_mask, const ClfConfig& cfg);

// Trainable body from the inputs to the [h,w,2] map.
nn::NodeId member_body(nn::Graph& g, const std::string& prefix, nn::NodeId features,
                       nn::NodeId binary_mask, const ClfConfig& cfg);

nn::Graph build_member(const ClfConfig& cfg, std::uint64_t seed);

// Bodies prefixed "m<i>/", fused per `fusion`, one shared head. Parameters of
// member i load from a member weight blob with the prefix applied.
nn::Graph build_ensemble_graph(const ClfConfig& cfg, std::size_t members, Fusion fusion);
std::string member_prefix(std::size_t i);

// Inclusion or weight map [h,w] for the pooling layer. image_ds is the
// decimated image already rescaled to [0,1]. Throws "empty pooling region"
// when nothing is included.
Tensor pooling_include(const Tensor& binary_mask, const Tensor& image_ds, PoolMode mode,
                       double tau);

// Per-sample network inputs, each [h,w,C] without a batch axis.
struct MemberInputs {
  Tensor features;     // [h,w,C+1]
  Tensor binary_mask;  // [h,w,1]
  Tensor pool_weight;  // [h,w,1]
};

// Standardizes the image, runs the scattering block and derives the pooling
// map. The image and mask must match the scatter extents.
MemberInputs prepare_inputs(const Tensor& image, const Tensor& float_mask,
                            const wst::FilterBank& fb, const img::Standardization& stats,
                            PoolMode mode, double tau);

// Stacks the selected samples into graph inputs with a batch axis.
std::map<std::string, Tensor> batch_inputs(const std::vector<MemberInputs>& inputs,
                                           std::span<const std::size_t> indices);

// Probability of class 1 (Covid-positive) for every sample.
std::vector<double> predict(nn::Graph& g, const std::vector<MemberInputs>& inputs,
                            std::size_t batch_size = 16);

struct ClfTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 13;
  nn::AdamConfig adam;
  bool augment = false;      // re-scatter augmented training images every epoch
  bool augment_val = false;  // also augment validation images before scoring
  img::AugmentConfig augmentation;
  std::uint64_t seed = 0;
};

struct ClfEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_auc = 0.0;
  double seconds = 0.0;
};

struct ClfHistory {
  std::vector<ClfEpoch> epochs;
  std::size_t best_epoch = 0;  // 1-based; best validation AUC, then lowest loss
};

using ClfEpochCallback = std::function<void(const ClfEpoch&)>;

// Data for one fold: raw samples plus their prepared inputs.
struct FoldData {
  const std::vector<data::Sample>* samples = nullptr;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  const std::vector<MemberInputs>* inputs = nullptr;  // parallel to samples
  // needed only when augmenting
  const wst::FilterBank* fb = nullptr;
  img::Standardization stats;
};

// Weighted cross-entropy with class weights from the fold's training labels.
// The graph ends with the best validation epoch's weights.
ClfHistory train_clf(nn::Graph& member, const FoldData& fold, const ClfConfig& cfg,
                     const ClfTrainConfig& tcfg, const ClfEpochCallback& on_epoch = {});

// Ensemble file: "CXEN", u32 version, u64 header length, JSON header (model
// and scattering configuration, standardization, pooling mode, tau, fusion,
// member count), then per member a u64 length and a CXWT blob.
struct EnsembleFile {
  ClfConfig cfg;
  img::Standardization stats;
  Fusion fusion = Fusion::FeatureMean;
  std::vector<io::Bytes> members;
};

inline constexpr std::uint32_t kEnsembleVersion = 1;

io::Bytes pack_ensemble(const EnsembleFile& e);
EnsembleFile unpack_ensemble(const io::Bytes& bytes, const std::string& context = "ensemble");
void save_ensemble(const EnsembleFile& e, const std::filesystem::path& path);
EnsembleFile load_ensemble(const std::filesystem::path& path);

// Builds the fused graph and loads every member.
nn::Graph instantiate_ensemble(const EnsembleFile& e);

}  // namespace cxr::clf
