#include "cxrnet/blocks.hpp"

#include "cxrnet/error.hpp"

namespace cxr::nn {

void ConvResSpec::validate() const {
  if (kernels.empty() || kernels.size() != dilations.size())
    throw ParameterError("kernels and dilations must be non-empty and of equal length");
  if (branch_filters == 0) throw ParameterError("branch filters must be positive");
  if (kernels.size() * branch_filters != shortcut_filters)
    throw ParameterError("branches concatenate to " +
                         std::to_string(kernels.size() * branch_filters) +
                         " channels but the shortcut has " + std::to_string(shortcut_filters));
  if (convs_per_branch < 1 || convs_per_branch > 2)
    throw ParameterError("convs per branch must be 1 or 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must be in [0,1)");
  for (std::size_t k : kernels)
    if (k % 2 == 0) throw ParameterError("kernel sizes must be odd");
  for (std::size_t d : dilations)
    if (d == 0) throw ParameterError("dilations must be >= 1");
}

NodeId conv_res_block(Graph& g, const std::string& prefix, NodeId input,
                      std::size_t in_channels, const ConvResSpec& spec) {
  spec.validate();
  std::vector<NodeId> branches;
  for (std::size_t b = 0; b < spec.kernels.size(); ++b) {
    const std::string p = prefix + "/branch" + std::to_string(b);
    const std::size_t k = spec.kernels[b], d = spec.dilations[b];
    NodeId x = g.add<SeparableConv2d>(p + "/sepconv0", {input}, in_channels,
                                      spec.branch_filters, k, d);
    if (spec.branch_norm) x = g.add<BatchNorm>(p + "/bn0", {x}, spec.branch_filters, spec.norm);
    if (spec.convs_per_branch == 2) {
      x = g.add<LeakyRelu>(p + "/act0", {x}, spec.slope);
      x = g.add<SeparableConv2d>(p + "/sepconv1", {x}, spec.branch_filters,
                                 spec.branch_filters, k, d);
      if (spec.branch_norm)
        x = g.add<BatchNorm>(p + "/bn1", {x}, spec.branch_filters, spec.norm);
    }
    branches.push_back(x);
  }
  NodeId cat = branches.size() == 1 ? branches[0] : g.add<Concat>(prefix + "/concat", branches);
  NodeId sc = g.add<PointwiseConv2d>(prefix + "/shortcut", {input}, in_channels,
                                     spec.shortcut_filters);
  if (spec.shortcut_norm)
    sc = g.add<BatchNorm>(prefix + "/shortcut_bn", {sc}, spec.shortcut_filters, spec.norm);
  NodeId y = g.add<Add>(prefix + "/add", {cat, sc});
  y = g.add<LeakyRelu>(prefix + "/act", {y}, spec.slope);
  y = g.add<SpatialDropout>(prefix + "/dropout", {y}, spec.dropout);
  return g.add<BatchNorm>(prefix + "/bn", {y}, spec.shortcut_filters, spec.norm);
}

}  // namespace cxr::nn
