#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cxrnet/rng.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr::nn {

enum class Mode { Train, Infer };

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Named parameter storage. References stay valid for the store's lifetime and
// iteration follows insertion order, which fixes the weight-file layout.
class ParamStore {
 public:
  Param& create(std::string name, Shape shape, bool trainable);
  Param& get(std::string_view name);
  const Param& get(std::string_view name) const;
  const Param* find(std::string_view name) const;
  Param* find(std::string_view name);

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  std::size_t trainable_scalars() const noexcept;
  void zero_grad();

 private:
  std::deque<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-sample static shape of a node's output. Zero height/width means the
// extent is only known at run time.
struct StaticShape {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  friend bool operator==(const StaticShape&, const StaticShape&) = default;
};

std::string to_string(const StaticShape& s);

struct RunContext {
  Mode mode = Mode::Infer;
  Rng* rng = nullptr;
};

class Graph;

// All node values are [B, H, W, C] tensors.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string_view kind() const = 0;
  virtual StaticShape infer_shape(std::span<const StaticShape> inputs) const = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs, RunContext& ctx) = 0;
  // Returns one gradient per input (an empty tensor when the input is not
  // differentiable) and accumulates parameter gradients.
  virtual std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output,
                                       const Tensor& grad_output) = 0;
  virtual std::vector<Param*> params() const { return {}; }
};

using NodeId = std::size_t;

struct ParamCount {
  std::vector<std::pair<std::string, std::size_t>> per_layer;  // graph order, nonzero only
  std::size_t total = 0;
};

class Graph {
 public:
  explicit Graph(std::uint64_t seed = 0);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId add_input(std::string name, StaticShape shape);

  template <class L, class... Args>
  NodeId add(std::string name, std::vector<NodeId> inputs, Args&&... args) {
    auto layer = std::make_unique<L>(*this, name, std::forward<Args>(args)...);
    return add_layer(std::move(layer), std::move(inputs), std::move(name));
  }
  NodeId add_layer(std::unique_ptr<Layer> layer, std::vector<NodeId> inputs, std::string name);

  // Creates a parameter initialised by the graph's init stream.
  enum class Init { Zeros, Ones, GlorotUniform };
  Param& make_param(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1,
                    std::size_t fan_out = 1, bool trainable = true);

  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  void forward(const std::map<std::string, Tensor>& inputs, Mode mode);
  // Runs only the nodes needed for `target`.
  void forward_until(NodeId target, const std::map<std::string, Tensor>& inputs, Mode mode);

  // Reverse sweep from `from` seeded with d(objective)/d(value(from)).
  // Parameter gradients accumulate; call zero_grad() between steps. Node
  // gradients are released once consumed unless `retain_node_grads` is set.
  void backward(NodeId from, const Tensor& seed, bool retain_node_grads = false);
  void zero_grad() { params_.zero_grad(); }

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  NodeId node(std::string_view name) const;
  bool has_node(std::string_view name) const;
  const std::string& name(NodeId id) const { return nodes_.at(id).name; }
  StaticShape shape(NodeId id) const { return nodes_.at(id).shape; }
  const Layer* layer(NodeId id) const { return nodes_.at(id).layer.get(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  NodeId output() const;

  ParamCount count_params() const;

  // When set, wall time per "kind/forward" and "kind/backward" accumulates
  // into the map.
  void set_profile(std::map<std::string, double>* sink) noexcept { profile_ = sink; }

  Rng& dropout_rng() noexcept { return dropout_rng_; }
  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

 private:
  struct Node {
    std::string name;
    std::unique_ptr<Layer> layer;  // null for inputs
    std::vector<NodeId> inputs;
    StaticShape shape;
    Tensor value;
    Tensor grad;
  };

  void run(NodeId last, const std::map<std::string, Tensor>& inputs, Mode mode);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> by_name_;
  ParamStore params_;
  Rng init_rng_;
  Rng dropout_rng_;
  std::map<std::string, double>* profile_ = nullptr;
};

}  // namespace cxr::nn
