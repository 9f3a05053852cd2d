#include "cxrnet/optim.hpp"

#include <cmath>

#include "cxrnet/error.hpp"

namespace cxr::nn {

void Adam::step(ParamStore& params) {
  if (m_.empty()) {
    for (const Param& p : params) {
      m_.emplace_back(p.trainable ? p.value.numel() : 0, 0.0);
      v_.emplace_back(p.trainable ? p.value.numel() : 0, 0.0);
    }
  }
  if (m_.size() != params.size()) throw ParameterError("parameter store changed between steps");
  for (const Param& p : params)
    if (p.trainable && !p.grad.all_finite())
      throw NumericalError("non-finite gradient in '" + p.name + "'");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  for (Param& p : params) {
    auto& m = m_[k];
    auto& v = v_[k];
    ++k;
    if (!p.trainable) continue;
    auto w = p.value.values();
    auto g = p.grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.epsilon);
    }
  }
}

}  // namespace cxr::nn
