#include "cxrnet/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "cxrnet/error.hpp"

namespace cxr {

namespace {

std::atomic<std::uint64_t> g_clamps{0};

void check_pair(const Tensor& yhat, const Tensor& y, const char* what) {
  if (yhat.shape() != y.shape() || yhat.is_complex() || y.is_complex())
    throw ShapeError(std::string(what) + ": shapes differ, " + shape_str(yhat.shape()) + " vs " +
                     shape_str(y.shape()));
}

void check_weights(const Tensor& yhat, const Tensor& w) {
  if (w.shape() != yhat.shape()) throw ShapeError("weight map shape " + shape_str(w.shape()) +
                                                  " does not match " + shape_str(yhat.shape()));
  for (double v : w.values())
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("weights must be finite and non-negative");
}

// Weighted Tanimoto coefficient on n elements (w == nullptr means unit
// weights). When `flip` is set the coefficient is taken on (1 - yhat, 1 - y).
// Adds scale * dT/dyhat into grad when grad is non-null.
double tanimoto_term(const double* yhat, const double* y, const double* w, std::size_t n, double s,
                     bool flip, double scale, double* grad) {
  double inter = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = flip ? 1.0 - yhat[i] : yhat[i];
    const double b = flip ? 1.0 - y[i] : y[i];
    const double wi = w ? w[i] : 1.0;
    inter += wi * a * b;
    sq += wi * (a * a + b * b);
  }
  const double num = inter + s;
  const double den = sq - inter + s;
  if (!(den > 0.0)) throw ValidationError("tanimoto: empty union with zero smoothing");
  if (grad) {
    const double sign = flip ? -1.0 : 1.0;
    const double inv = scale * sign / (den * den);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = flip ? 1.0 - yhat[i] : yhat[i];
      const double b = flip ? 1.0 - y[i] : y[i];
      const double wi = w ? w[i] : 1.0;
      grad[i] += inv * wi * (b * den - num * (2.0 * a - b));
    }
  }
  return num / den;
}

}  // namespace

double dice_coeff(const Tensor& yhat, const Tensor& y, double s) {
  check_pair(yhat, y, "dice");
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < yhat.numel(); ++i) {
    inter += yhat[i] * y[i];
    total += yhat[i] + y[i];
  }
  const double den = total + s;
  if (!(den > 0.0)) throw ValidationError("dice: empty union with zero smoothing");
  return (2.0 * inter + s) / den;
}

LossResult dice_loss(const Tensor& yhat, const Tensor& y, double s) {
  check_pair(yhat, y, "dice");
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < yhat.numel(); ++i) {
    inter += yhat[i] * y[i];
    total += yhat[i] + y[i];
  }
  const double num = 2.0 * inter + s, den = total + s;
  if (!(den > 0.0)) throw ValidationError("dice: empty union with zero smoothing");
  LossResult r{1.0 - num / den, Tensor(yhat.shape())};
  for (std::size_t i = 0; i < yhat.numel(); ++i)
    r.grad[i] = -(2.0 * y[i] * den - num) / (den * den);
  return r;
}

double tanimoto(const Tensor& yhat, const Tensor& y, double s) {
  check_pair(yhat, y, "tanimoto");
  return tanimoto_term(yhat.data(), y.data(), nullptr, yhat.numel(), s, false, 0.0, nullptr);
}

double tanimoto_complement(const Tensor& yhat, const Tensor& y, double s) {
  check_pair(yhat, y, "tanimoto");
  const std::size_t n = yhat.numel();
  return 0.5 * (tanimoto_term(yhat.data(), y.data(), nullptr, n, s, false, 0.0, nullptr) +
                tanimoto_term(yhat.data(), y.data(), nullptr, n, s, true, 0.0, nullptr));
}

LossResult tanimoto_loss(const Tensor& yhat, const Tensor& y, double s) {
  check_pair(yhat, y, "tanimoto");
  const std::size_t n = yhat.numel();
  LossResult r{0.0, Tensor(yhat.shape())};
  const double t = tanimoto_term(yhat.data(), y.data(), nullptr, n, s, false, -0.5, r.grad.data()) +
                   tanimoto_term(yhat.data(), y.data(), nullptr, n, s, true, -0.5, r.grad.data());
  r.value = 1.0 - 0.5 * t;
  return r;
}

double weighted_tanimoto_complement(const Tensor& yhat, const Tensor& y, const Tensor& w,
                                    double s) {
  check_pair(yhat, y, "weighted tanimoto");
  check_weights(yhat, w);
  const std::size_t n = yhat.numel();
  return 0.5 * (tanimoto_term(yhat.data(), y.data(), w.data(), n, s, false, 0.0, nullptr) +
                tanimoto_term(yhat.data(), y.data(), w.data(), n, s, true, 0.0, nullptr));
}

LossResult weighted_tanimoto_loss(const Tensor& yhat, const Tensor& y, const Tensor& w, double s) {
  check_pair(yhat, y, "weighted tanimoto");
  check_weights(yhat, w);
  const std::size_t n = yhat.numel();
  LossResult r{0.0, Tensor(yhat.shape())};
  const double t =
      tanimoto_term(yhat.data(), y.data(), w.data(), n, s, false, -0.5, r.grad.data()) +
      tanimoto_term(yhat.data(), y.data(), w.data(), n, s, true, -0.5, r.grad.data());
  r.value = 1.0 - 0.5 * t;
  return r;
}

LossResult segmentation_loss(const Tensor& probs, const Tensor& truth, const Tensor& weights,
                             double s, bool weight_both_channels) {
  check_pair(probs, truth, "segmentation loss");
  if (probs.rank() != 4 || probs.dim(3) != 2)
    throw ShapeError("segmentation loss expects [B,H,W,2], got " + shape_str(probs.shape()));
  const std::size_t B = probs.dim(0), P = probs.dim(1) * probs.dim(2);
  if (weights.rank() != 4 || weights.dim(0) != B || weights.dim(1) * weights.dim(2) != P ||
      weights.dim(3) != 1)
    throw ShapeError("segmentation weights must be [B,H,W,1], got " + shape_str(weights.shape()));
  for (double v : weights.values())
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("weights must be finite and non-negative");
  std::vector<double> a(P), b(P), w(P), g(P);
  LossResult r{0.0, Tensor(probs.shape())};
  const double scale = -0.5 / static_cast<double>(2 * B);
  double total = 0.0;
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t p = 0; p < P; ++p) {
        a[p] = probs[(n * P + p) * 2 + c];
        b[p] = truth[(n * P + p) * 2 + c];
        w[p] = (c == 0 || weight_both_channels) ? weights[n * P + p] : 1.0;
      }
      std::fill(g.begin(), g.end(), 0.0);
      total += tanimoto_term(a.data(), b.data(), w.data(), P, s, false, scale, g.data()) +
               tanimoto_term(a.data(), b.data(), w.data(), P, s, true, scale, g.data());
      for (std::size_t p = 0; p < P; ++p) r.grad[(n * P + p) * 2 + c] = g[p];
    }
  }
  r.value = 1.0 - 0.5 * total / static_cast<double>(2 * B);
  return r;
}

namespace {

// Felzenszwalb-Huttenlocher lower envelope of parabolas, one line at a time.
void edt_1d(const double* f, std::size_t n, double* d, std::vector<std::size_t>& v,
            std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (std::isfinite(f[q])) {
      first = q;
      break;
    }
  if (first == n) {
    for (std::size_t q = 0; q < n; ++q) d[q] = inf;
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double fq = f[q] + static_cast<double>(q * q);
    double sx;
    while (true) {
      const std::size_t p = v[k];
      sx = (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * (static_cast<double>(q) - static_cast<double>(p)));
      if (sx <= z[k] && k > 0)
        --k;
      else
        break;
    }
    if (sx <= z[k]) {
      // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = sx;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

Tensor squared_distance_transform(const Tensor& seeds) {
  if (seeds.rank() != 2) throw ShapeError("distance transform expects [H,W]");
  const std::size_t H = seeds.dim(0), W = seeds.dim(1);
  constexpr double inf = std::numeric_limits<double>::infinity();
  Tensor out({H, W});
  std::vector<double> col(H), res(std::max(H, W));
  std::vector<std::size_t> v;
  std::vector<double> z;
  // columns first, then rows
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) col[y] = seeds.at(y, x) != 0.0 ? 0.0 : inf;
    edt_1d(col.data(), H, res.data(), v, z);
    for (std::size_t y = 0; y < H; ++y) out.at(y, x) = res[y];
  }
  std::vector<double> row(W);
  for (std::size_t y = 0; y < H; ++y) {
    std::copy_n(out.data() + y * W, W, row.data());
    edt_1d(row.data(), W, out.data() + y * W, v, z);
  }
  return out;
}

Tensor contour_weights(const Tensor& mask, ContourWeightConfig cfg) {
  if (mask.rank() != 2) throw ShapeError("contour weights expect an [H,W] mask");
  if (cfg.sigma <= 0.0 || cfg.w0 < 0.0) throw ParameterError("contour weights need sigma > 0 and w0 >= 0");
  const std::size_t H = mask.dim(0), W = mask.dim(1);
  Tensor boundary({H, W});
  bool any = false;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const bool m = mask.at(y, x) >= 0.5;
      const bool edge = (y > 0 && (mask.at(y - 1, x) >= 0.5) != m) ||
                        (y + 1 < H && (mask.at(y + 1, x) >= 0.5) != m) ||
                        (x > 0 && (mask.at(y, x - 1) >= 0.5) != m) ||
                        (x + 1 < W && (mask.at(y, x + 1) >= 0.5) != m);
      if (edge) {
        boundary.at(y, x) = 1.0;
        any = true;
      }
    }
  if (!any) return Tensor::filled({H, W}, 1.0);
  Tensor d2 = squared_distance_transform(boundary);
  const double k = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  for (double& v : d2.values()) v = 1.0 + cfg.w0 * std::exp(-v * k);
  return d2;
}

std::array<double, 2> class_weights(std::span<const int> labels) {
  std::array<std::size_t, 2> n{0, 0};
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
    ++n[static_cast<std::size_t>(l)];
  }
  if (n[0] == 0 || n[1] == 0) throw ValidationError("class weights need both classes present");
  const double total = static_cast<double>(labels.size());
  return {total / (2.0 * static_cast<double>(n[0])), total / (2.0 * static_cast<double>(n[1]))};
}

LossResult weighted_cross_entropy(const Tensor& probs, std::span<const int> labels,
                                  std::array<double, 2> cw) {
  if (probs.rank() == 0 || probs.shape().back() != 2)
    throw ShapeError("cross entropy expects [...,2] probabilities, got " + shape_str(probs.shape()));
  const std::size_t B = probs.numel() / 2;
  if (labels.size() != B)
    throw ShapeError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(B) + " rows");
  LossResult r{0.0, Tensor(probs.shape())};
  if (B == 0) return r;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    const int l = labels[i];
    if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
    double p = probs[2 * i + static_cast<std::size_t>(l)];
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      g_clamps.fetch_add(1, std::memory_order_relaxed);
    }
    const double w = cw[static_cast<std::size_t>(l)];
    r.value -= inv_b * w * std::log(p);
    r.grad[2 * i + static_cast<std::size_t>(l)] = -inv_b * w / p;
  }
  return r;
}

std::uint64_t probability_clamp_count() noexcept { return g_clamps.load(); }

}  // namespace cxr
