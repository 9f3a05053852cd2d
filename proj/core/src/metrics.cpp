#include "cxrnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "cxrnet/error.hpp"

namespace cxr {

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

void check_inputs(std::span<const double> p, std::span<const int> labels) {
  if (p.size() != labels.size())
    throw ShapeError(std::to_string(p.size()) + " scores for " + std::to_string(labels.size()) +
                     " labels");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw ValidationError("scores must lie in [0,1]");
  }
}

std::vector<RocPoint> roc_curve(std::span<const double> p, std::span<const int> labels) {
  std::size_t pos = 0;
  for (int l : labels) pos += static_cast<std::size_t>(l);
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ValidationError("ROC AUC is undefined with a single class");
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  std::vector<RocPoint> roc{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = p[order[i]];
    while (i < order.size() && p[order[i]] == t) {
      if (labels[order[i]] == 1)
        ++tp;
      else
        ++fp;
      ++i;
    }
    roc.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                   static_cast<double>(tp) / static_cast<double>(pos), t});
  }
  return roc;
}

double trapezoid(const std::vector<RocPoint>& roc) {
  double auc = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    auc += (roc[i].fpr - roc[i - 1].fpr) * 0.5 * (roc[i].tpr + roc[i - 1].tpr);
  return auc;
}

}  // namespace

EvalReport evaluate(std::span<const double> p, std::span<const int> labels, double threshold) {
  check_inputs(p, labels);
  EvalReport r;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pred = p[i] >= threshold;
    const bool truth = labels[i] == 1;
    if (pred && truth) ++r.tp;
    else if (pred) ++r.fp;
    else if (truth) ++r.fn;
    else ++r.tn;
  }
  const double tp = static_cast<double>(r.tp), fp = static_cast<double>(r.fp);
  const double fn = static_cast<double>(r.fn), tn = static_cast<double>(r.tn);
  r.accuracy = ratio(tp + tn, tp + tn + fp + fn);
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.f1 = ratio(2.0 * r.precision * r.recall, r.precision + r.recall);
  r.dice = ratio(2.0 * tp, 2.0 * tp + fp + fn);
  r.roc = roc_curve(p, labels);
  r.roc_auc = trapezoid(r.roc);
  return r;
}

double roc_auc(std::span<const double> p, std::span<const int> labels) {
  check_inputs(p, labels);
  return trapezoid(roc_curve(p, labels));
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "accuracy,precision,recall,f1,dice,roc_auc,tp,fp,fn,tn\n";
  os << r.accuracy << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.dice << ','
     << r.roc_auc << ',' << r.tp << ',' << r.fp << ',' << r.fn << ',' << r.tn << '\n';
  return os.str();
}

std::string roc_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "fpr,tpr,threshold\n";
  for (const RocPoint& pt : r.roc) {
    os << pt.fpr << ',' << pt.tpr << ',';
    if (std::isinf(pt.threshold))
      os << "inf";
    else
      os << pt.threshold;
    os << '\n';
  }
  return os.str();
}

double binary_dice(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("binary dice: size mismatch");
  std::size_t inter = 0, total = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const bool x = a[i] >= 0.5, y = b[i] >= 0.5;
    inter += x && y;
    total += static_cast<std::size_t>(x) + static_cast<std::size_t>(y);
  }
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

}  // namespace cxr
