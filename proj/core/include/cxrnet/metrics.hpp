#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cxrnet/tensor.hpp"

namespace cxr {

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;
};

struct EvalReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double dice = 0.0;
  double roc_auc = 0.0;
  std::vector<RocPoint> roc;  // from (0,0) at threshold +inf to (1,1)
};

// Confusion at `threshold` (p >= threshold is positive), the usual ratios
// (0 when a denominator is 0) and the trapezoidal ROC AUC over all distinct
// scores. Throws ValidationError when only one class is present.
EvalReport evaluate(std::span<const double> p_positive, std::span<const int> labels,
                    double threshold = 0.5);

// ROC AUC alone; same conventions as evaluate().
double roc_auc(std::span<const double> p_positive, std::span<const int> labels);

// One header line and one metrics row.
std::string report_csv(const EvalReport& r);
// fpr,tpr,threshold per line; the first threshold is written as "inf".
std::string roc_csv(const EvalReport& r);

// Dice of two binary maps (values >= 0.5 count as foreground). Two empty maps
// score 1.
double binary_dice(const Tensor& a, const Tensor& b);

}  // namespace cxr
