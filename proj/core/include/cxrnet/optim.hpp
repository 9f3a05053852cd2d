#pragma once

#include <cstddef>
#include <vector>

#include "cxrnet/graph.hpp"

namespace cxr::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// Adam over the trainable parameters of a store. Moment buffers are keyed by
// position in the store, so the store must not grow after the first step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Throws NumericalError naming the parameter if any gradient is not finite.
  void step(ParamStore& params);

  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) noexcept { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace cxr::nn
