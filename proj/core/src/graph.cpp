#include "cxrnet/graph.hpp"

#include <chrono>
#include <cmath>

#include "cxrnet/error.hpp"

namespace cxr::nn {

Param& ParamStore::create(std::string name, Shape shape, bool trainable) {
  if (index_.contains(name)) throw ParameterError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  Param& p = params_.emplace_back();
  p.name = std::move(name);
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  p.trainable = trainable;
  return p;
}

Param* ParamStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Param* ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

Param& ParamStore::get(std::string_view name) {
  Param* p = find(name);
  if (!p) throw ParameterError("unknown parameter '" + std::string(name) + "'");
  return *p;
}

const Param& ParamStore::get(std::string_view name) const {
  const Param* p = find(name);
  if (!p) throw ParameterError("unknown parameter '" + std::string(name) + "'");
  return *p;
}

std::size_t ParamStore::trainable_scalars() const noexcept {
  std::size_t n = 0;
  for (const Param& p : params_)
    if (p.trainable) n += p.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (Param& p : params_) p.grad.fill(0.0);
}

std::string to_string(const StaticShape& s) {
  auto ext = [](std::size_t v) { return v == 0 ? std::string("?") : std::to_string(v); };
  return "[" + ext(s.h) + "," + ext(s.w) + "," + std::to_string(s.c) + "]";
}

Graph::Graph(std::uint64_t seed) : init_rng_(seed), dropout_rng_(seed ^ 0x5DEECE66DULL) {}

NodeId Graph::add_input(std::string name, StaticShape shape) {
  if (by_name_.contains(name)) throw ParameterError("duplicate node name '" + name + "'");
  const NodeId id = nodes_.size();
  by_name_.emplace(name, id);
  nodes_.push_back(Node{std::move(name), nullptr, {}, shape, {}, {}});
  return id;
}

NodeId Graph::add_layer(std::unique_ptr<Layer> layer, std::vector<NodeId> inputs,
                        std::string name) {
  if (by_name_.contains(name)) throw ParameterError("duplicate node name '" + name + "'");
  std::vector<StaticShape> in_shapes;
  for (NodeId i : inputs) {
    if (i >= nodes_.size()) throw ParameterError("layer '" + name + "' wired to unknown node");
    in_shapes.push_back(nodes_[i].shape);
  }
  StaticShape shape;
  try {
    shape = layer->infer_shape(in_shapes);
  } catch (const ShapeError& e) {
    throw ShapeError("layer '" + name + "' (" + std::string(layer->kind()) + "): " + e.what());
  }
  const NodeId id = nodes_.size();
  by_name_.emplace(name, id);
  nodes_.push_back(Node{std::move(name), std::move(layer), std::move(inputs), shape, {}, {}});
  return id;
}

Param& Graph::make_param(const std::string& name, Shape shape, Init init, std::size_t fan_in,
                         std::size_t fan_out, bool trainable) {
  Param& p = params_.create(name, std::move(shape), trainable);
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      p.value.fill(1.0);
      break;
    case Init::GlorotUniform: {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (double& v : p.value.values()) v = init_rng_.uniform(-limit, limit);
      break;
    }
  }
  return p;
}

void Graph::run(NodeId last, const std::map<std::string, Tensor>& inputs, Mode mode) {
  RunContext ctx{mode, &dropout_rng_};
  std::size_t batch = 0;
  for (NodeId id = 0; id <= last; ++id) {
    Node& n = nodes_[id];
    if (!n.layer) {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw ParameterError("missing graph input '" + n.name + "'");
      const Tensor& t = it->second;
      if (t.rank() != 4 || t.dim(3) != n.shape.c || (n.shape.h && t.dim(1) != n.shape.h) ||
          (n.shape.w && t.dim(2) != n.shape.w))
        throw ShapeError("input '" + n.name + "' has shape " + shape_str(t.shape()) +
                         ", expected [B]" + to_string(n.shape));
      if (batch == 0) batch = t.dim(0);
      if (t.dim(0) != batch) throw ShapeError("inputs disagree on batch size");
      n.value = t;
      continue;
    }
    std::vector<const Tensor*> in;
    in.reserve(n.inputs.size());
    for (NodeId i : n.inputs) in.push_back(&nodes_[i].value);
    if (profile_) {
      const auto t0 = std::chrono::steady_clock::now();
      n.value = n.layer->forward(in, ctx);
      (*profile_)[std::string(n.layer->kind()) + "/forward"] +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
      n.value = n.layer->forward(in, ctx);
    }
  }
  for (Node& n : nodes_) n.grad = Tensor();
}

void Graph::forward(const std::map<std::string, Tensor>& inputs, Mode mode) {
  if (nodes_.empty()) return;
  run(nodes_.size() - 1, inputs, mode);
}

void Graph::forward_until(NodeId target, const std::map<std::string, Tensor>& inputs, Mode mode) {
  run(target, inputs, mode);
}

void Graph::backward(NodeId from, const Tensor& seed, bool retain_node_grads) {
  if (from >= nodes_.size()) throw ParameterError("backward: unknown node");
  if (seed.shape() != nodes_[from].value.shape())
    throw ShapeError("backward: seed " + shape_str(seed.shape()) + " vs node value " +
                     shape_str(nodes_[from].value.shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  nodes_[from].grad = seed;
  for (NodeId id = from + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.layer || n.grad.empty()) continue;
    std::vector<const Tensor*> in;
    for (NodeId i : n.inputs) in.push_back(&nodes_[i].value);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Tensor> grads = n.layer->backward(in, n.value, n.grad);
    if (profile_)
      (*profile_)[std::string(n.layer->kind()) + "/backward"] +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (k >= grads.size() || grads[k].empty()) continue;
      Node& src = nodes_[n.inputs[k]];
      if (src.grad.empty())
        src.grad = std::move(grads[k]);
      else
        src.grad += grads[k];
    }
    if (!retain_node_grads) n.grad = Tensor();
  }
}

const Tensor& Graph::value(NodeId id) const { return nodes_.at(id).value; }

const Tensor& Graph::grad(NodeId id) const { return nodes_.at(id).grad; }

NodeId Graph::node(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ParameterError("unknown node '" + std::string(name) + "'");
  return it->second;
}

bool Graph::has_node(std::string_view name) const { return by_name_.contains(std::string(name)); }

NodeId Graph::output() const {
  if (nodes_.empty()) throw ParameterError("empty graph has no output");
  return nodes_.size() - 1;
}

ParamCount Graph::count_params() const {
  ParamCount count;
  for (const Node& n : nodes_) {
    if (!n.layer) continue;
    std::size_t k = 0;
    for (const Param* p : n.layer->params())
      if (p->trainable) k += p->value.numel();
    if (k) count.per_layer.emplace_back(n.name, k);
    count.total += k;
  }
  return count;
}

}  // namespace cxr::nn
