#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cxrnet/graph.hpp"
#include "cxrnet/layers.hpp"

namespace cxr::nn {

// One residual unit: parallel separable-atrous branches, concatenated and
// added to a 1x1 shortcut projection, then leaky ReLU, spatial dropout and
// batch norm. The branch outputs must concatenate to the shortcut width.
struct ConvResSpec {
  std::vector<std::size_t> kernels;
  std::vector<std::size_t> dilations;
  std::size_t branch_filters = 16;
  std::size_t shortcut_filters = 48;
  // 1: a single separable conv per branch. 2: conv, [norm], leaky ReLU, conv.
  std::size_t convs_per_branch = 1;
  bool branch_norm = false;    // batch norm after every branch conv
  bool shortcut_norm = false;  // batch norm after the shortcut projection
  double slope = 0.01;
  double dropout = 0.1;
  BatchNormConfig norm;

  void validate() const;
};

// Appends one block named `prefix` reading from `input` (with `in_channels`
// channels) and returns the block output node.
NodeId conv_res_block(Graph& g, const std::string& prefix, NodeId input,
                      std::size_t in_channels, const ConvResSpec& spec);

}  // namespace cxr::nn
