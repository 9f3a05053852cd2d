#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cxrnet/graph.hpp"

// The fixed layer vocabulary of the segmentation and classification networks.
// Every layer maps [B,H,W,C] inputs to a [B,H,W,C'] output.
namespace cxr::nn {

// Index of `i` reflected into [0, n) without repeating the edge sample
// (numpy "reflect" convention); valid for offsets of any magnitude.
std::size_t reflect_index(long i, std::size_t n) noexcept;

// Depthwise dilated k x k convolution per channel, then 1x1 channel mixing and
// bias. Borders are reflection padded so H and W are preserved.
class SeparableConv2d final : public Layer {
 public:
  SeparableConv2d(Graph& g, const std::string& name, std::size_t in_channels,
                  std::size_t filters, std::size_t kernel, std::size_t dilation);

  std::string_view kind() const override { return "separable_atrous_conv2d"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
  std::vector<Param*> params() const override { return {depthwise_, pointwise_, bias_}; }

 private:
  std::size_t cin_, filters_, kernel_, dilation_;
  Param* depthwise_;  // [k, k, cin]
  Param* pointwise_;  // [cin, filters]
  Param* bias_;       // [filters]
  Tensor depth_out_;
};

class PointwiseConv2d final : public Layer {
 public:
  PointwiseConv2d(Graph& g, const std::string& name, std::size_t in_channels,
                  std::size_t filters);

  std::string_view kind() const override { return "pointwise_conv2d"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
  std::vector<Param*> params() const override { return {kernel_, bias_}; }

 private:
  std::size_t cin_, filters_;
  Param* kernel_;
  Param* bias_;
};

class LeakyRelu final : public Layer {
 public:
  LeakyRelu(Graph& g, const std::string& name, double slope);

  std::string_view kind() const override { return "leaky_relu"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;

 private:
  double slope_;
};

// Zeroes whole channels per sample with probability `rate` in training and
// rescales the survivors by 1/(1-rate). Identity at inference.
class SpatialDropout final : public Layer {
 public:
  SpatialDropout(Graph& g, const std::string& name, double rate);

  std::string_view kind() const override { return "spatial_dropout"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;

  // Per-(sample, channel) keep factors of the last training pass.
  const std::vector<double>& last_mask() const noexcept { return keep_; }

 private:
  double rate_;
  bool active_ = false;
  std::vector<double> keep_;
};

struct BatchNormConfig {
  double epsilon = 1e-3;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

// Per-channel normalisation over batch and spatial positions. gamma and beta
// are trainable; the running mean and variance are stored as non-trainable
// parameters so they travel with the weights.
class BatchNorm final : public Layer {
 public:
  BatchNorm(Graph& g, const std::string& name, std::size_t channels, BatchNormConfig cfg = {});

  std::string_view kind() const override { return "batch_norm"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
  std::vector<Param*> params() const override {
    return {gamma_, beta_, running_mean_, running_var_};
  }

 private:
  std::size_t channels_;
  BatchNormConfig cfg_;
  Param* gamma_;
  Param* beta_;
  Param* running_mean_;
  Param* running_var_;
  bool train_pass_ = false;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

// Scaled dot-product attention with `heads` heads of `head_size` units over a
// scalar-feature sequence. Inputs are (query, key, value), each [B,H,W,1];
// every row is an independent length-W sequence. Output is [B,H,W,1].
class MultiHeadAttention final : public Layer {
 public:
  MultiHeadAttention(Graph& g, const std::string& name, std::size_t heads,
                     std::size_t head_size);

  std::string_view kind() const override { return "multihead_attention"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
  std::vector<Param*> params() const override {
    return {wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_};
  }

 private:
  std::size_t heads_, head_size_;
  Param *wq_, *bq_, *wk_, *bk_, *wv_, *bv_, *wo_, *bo_;
  // Per-row caches: projections [T, D], attention [heads, T, T], context [T, D].
  std::vector<std::vector<double>> qp_, kp_, vp_, attn_, ctx_;
};

// Softmax over the channel axis at every position.
class Softmax final : public Layer {
 public:
  Softmax(Graph& g, const std::string& name);

  std::string_view kind() const override { return "softmax"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
};

// Inputs (x [B,H,W,C], include [B,H,W,1]). Output [B,1,1,C] equal to the sum of
// x over positions with include > 0 divided by the sum of include. With a
// binary include map this is the masked mean; with a weight map applied to x
// beforehand it is the weighted mean. The include map gets no gradient.
class GlobalAvgPoolMasked final : public Layer {
 public:
  GlobalAvgPoolMasked(Graph& g, const std::string& name);

  std::string_view kind() const override { return "global_avg_pool_masked"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
};

class Concat final : public Layer {
 public:
  Concat(Graph& g, const std::string& name);

  std::string_view kind() const override { return "concat"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
};

class Add final : public Layer {
 public:
  Add(Graph& g, const std::string& name);

  std::string_view kind() const override { return "add"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
};

// Elementwise product of two or more inputs; an input with one channel is
// broadcast across the channels of the first input.
class PointwiseMultiply final : public Layer {
 public:
  PointwiseMultiply(Graph& g, const std::string& name);

  std::string_view kind() const override { return "pointwise_multiply"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
};

class TransposeHW final : public Layer {
 public:
  TransposeHW(Graph& g, const std::string& name);

  std::string_view kind() const override { return "transpose_hw"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
};

class MeanOverMembers final : public Layer {
 public:
  MeanOverMembers(Graph& g, const std::string& name);

  std::string_view kind() const override { return "mean_over_members"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;
};

// Channels [begin, begin + count) of the input.
class SelectChannels final : public Layer {
 public:
  SelectChannels(Graph& g, const std::string& name, std::size_t begin, std::size_t count);

  std::string_view kind() const override { return "select_channels"; }
  StaticShape infer_shape(std::span<const StaticShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor& out,
                               const Tensor& dout) override;

 private:
  std::size_t begin_, count_;
};

}  // namespace cxr::nn
