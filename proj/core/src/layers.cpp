#include "cxrnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "cxrnet/error.hpp"

namespace cxr::nn {

std::size_t reflect_index(long i, std::size_t n) noexcept {
  if (n <= 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long r = i % period;
  if (r < 0) r += period;
  if (r >= static_cast<long>(n)) r = period - r;
  return static_cast<std::size_t>(r);
}

namespace {

void expect_inputs(std::span<const StaticShape> in, std::size_t n) {
  if (in.size() != n)
    throw ShapeError("expected " + std::to_string(n) + " input(s), got " +
                     std::to_string(in.size()));
}

void expect_channels(const StaticShape& s, std::size_t c) {
  if (s.c != c)
    throw ShapeError("expected " + std::to_string(c) + " channels, got " + to_string(s));
}

// Spatial extents agree unless one side is only known at run time.
void expect_same_hw(const StaticShape& a, const StaticShape& b) {
  if ((a.h && b.h && a.h != b.h) || (a.w && b.w && a.w != b.w))
    throw ShapeError("spatial mismatch " + to_string(a) + " vs " + to_string(b));
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw ShapeError(std::string(what) + ": expected [B,H,W,C], got " + shape_str(t.shape()));
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

// out[n, f] = sum_c x[n, c] * w[c, f] + b[f]
void dense_forward(const double* x, std::size_t rows, std::size_t cin, const double* w,
                   std::size_t f, const double* b, double* out) {
  const auto R = static_cast<Eigen::Index>(rows), C = static_cast<Eigen::Index>(cin),
             F = static_cast<Eigen::Index>(f);
  RowMap o(out, R, F);
  o.noalias() = ConstRowMap(x, R, C) * ConstRowMap(w, C, F);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b, F);
}

void dense_backward(const double* x, std::size_t rows, std::size_t cin, const double* w,
                    std::size_t f, const double* g, double* dx, double* dw, double* db) {
  const auto R = static_cast<Eigen::Index>(rows), C = static_cast<Eigen::Index>(cin),
             F = static_cast<Eigen::Index>(f);
  ConstRowMap gm(g, R, F);
  Eigen::Map<Eigen::RowVectorXd>(db, F) += gm.colwise().sum();
  RowMap(dw, C, F).noalias() += ConstRowMap(x, R, C).transpose() * gm;
  RowMap(dx, R, C).noalias() = gm * ConstRowMap(w, C, F).transpose();
}

}  // namespace

// ---------------------------------------------------------------- separable

SeparableConv2d::SeparableConv2d(Graph& g, const std::string& name, std::size_t in_channels,
                                 std::size_t filters, std::size_t kernel, std::size_t dilation)
    : cin_(in_channels), filters_(filters), kernel_(kernel), dilation_(dilation) {
  if (kernel % 2 == 0) throw ParameterError(name + ": kernel size must be odd");
  if (dilation < 1) throw ParameterError(name + ": dilation must be >= 1");
  if (in_channels == 0 || filters == 0) throw ParameterError(name + ": empty channel count");
  depthwise_ = &g.make_param(name + "/depthwise", {kernel, kernel, in_channels},
                             Graph::Init::GlorotUniform, kernel * kernel, kernel * kernel);
  pointwise_ = &g.make_param(name + "/pointwise", {in_channels, filters},
                             Graph::Init::GlorotUniform, in_channels, filters);
  bias_ = &g.make_param(name + "/bias", {filters}, Graph::Init::Zeros);
}

StaticShape SeparableConv2d::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 1);
  expect_channels(in[0], cin_);
  return {in[0].h, in[0].w, filters_};
}

namespace {

// Channel-planar copy of one sample with reflection padding of `pad` pixels:
// out[c][y][x] for y in [0, H + 2 pad), x in [0, W + 2 pad).
void pad_planar(const double* x, std::size_t H, std::size_t W, std::size_t C, std::size_t pad,
                std::vector<double>& out) {
  const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;
  out.resize(C * PH * PW);
  for (std::size_t py = 0; py < PH; ++py) {
    const std::size_t sy = reflect_index(static_cast<long>(py) - static_cast<long>(pad), H);
    for (std::size_t px = 0; px < PW; ++px) {
      const std::size_t sx = reflect_index(static_cast<long>(px) - static_cast<long>(pad), W);
      const double* src = x + (sy * W + sx) * C;
      for (std::size_t c = 0; c < C; ++c) out[(c * PH + py) * PW + px] = src[c];
    }
  }
}

}  // namespace

Tensor SeparableConv2d::forward(std::span<const Tensor* const> in, RunContext&) {
  const Tensor& x = *in[0];
  require_rank4(x, "separable_atrous_conv2d");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = cin_;
  const std::size_t pad = (kernel_ / 2) * dilation_;
  const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;
  depth_out_ = Tensor({B, H, W, C});
  const double* wd = depthwise_->value.data();
  std::vector<double> padded, plane(H * W);
  for (std::size_t b = 0; b < B; ++b) {
    pad_planar(x.data() + b * H * W * C, H, W, C, pad, padded);
    double* dst = depth_out_.data() + b * H * W * C;
    for (std::size_t c = 0; c < C; ++c) {
      std::fill(plane.begin(), plane.end(), 0.0);
      const double* src = padded.data() + c * PH * PW;
      for (std::size_t ky = 0; ky < kernel_; ++ky)
        for (std::size_t kx = 0; kx < kernel_; ++kx) {
          const double wt = wd[(ky * kernel_ + kx) * C + c];
          const double* s0 = src + ky * dilation_ * PW + kx * dilation_;
          for (std::size_t y = 0; y < H; ++y) {
            const double* sr = s0 + y * PW;
            double* pr = plane.data() + y * W;
            for (std::size_t xx = 0; xx < W; ++xx) pr[xx] += wt * sr[xx];
          }
        }
      for (std::size_t i = 0; i < H * W; ++i) dst[i * C + c] = plane[i];
    }
  }
  Tensor out({B, H, W, filters_});
  dense_forward(depth_out_.data(), B * H * W, C, pointwise_->value.data(), filters_,
                bias_->value.data(), out.data());
  return out;
}

std::vector<Tensor> SeparableConv2d::backward(std::span<const Tensor* const> in, const Tensor&,
                                              const Tensor& dout) {
  const Tensor& x = *in[0];
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = cin_;
  Tensor ddepth({B, H, W, C});
  dense_backward(depth_out_.data(), B * H * W, C, pointwise_->value.data(), filters_,
                 dout.data(), ddepth.data(), pointwise_->grad.data(), bias_->grad.data());
  const std::size_t pad = (kernel_ / 2) * dilation_;
  const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;
  Tensor dx({B, H, W, C});
  const double* wd = depthwise_->value.data();
  double* gwd = depthwise_->grad.data();
  std::vector<double> padded, dpad(PH * PW), gplane(H * W);
  std::vector<std::size_t> ry(PH), rx(PW);
  for (std::size_t py = 0; py < PH; ++py) ry[py] = reflect_index(static_cast<long>(py) - static_cast<long>(pad), H);
  for (std::size_t px = 0; px < PW; ++px) rx[px] = reflect_index(static_cast<long>(px) - static_cast<long>(pad), W);
  for (std::size_t b = 0; b < B; ++b) {
    pad_planar(x.data() + b * H * W * C, H, W, C, pad, padded);
    const double* gsrc = ddepth.data() + b * H * W * C;
    double* dxb = dx.data() + b * H * W * C;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < H * W; ++i) gplane[i] = gsrc[i * C + c];
      std::fill(dpad.begin(), dpad.end(), 0.0);
      const double* src = padded.data() + c * PH * PW;
      for (std::size_t ky = 0; ky < kernel_; ++ky)
        for (std::size_t kx = 0; kx < kernel_; ++kx) {
          const std::size_t tap = (ky * kernel_ + kx) * C + c;
          const double wt = wd[tap];
          const std::size_t off = ky * dilation_ * PW + kx * dilation_;
          double acc = 0.0;
          for (std::size_t y = 0; y < H; ++y) {
            const double* sr = src + off + y * PW;
            double* dr = dpad.data() + off + y * PW;
            const double* gr = gplane.data() + y * W;
            for (std::size_t xx = 0; xx < W; ++xx) {
              acc += gr[xx] * sr[xx];
              dr[xx] += wt * gr[xx];
            }
          }
          gwd[tap] += acc;
        }
      // fold the padded gradient back through the reflection
      for (std::size_t py = 0; py < PH; ++py) {
        const double* dr = dpad.data() + py * PW;
        double* row = dxb + ry[py] * W * C + c;
        for (std::size_t px = 0; px < PW; ++px) row[rx[px] * C] += dr[px];
      }
    }
  }
  return {std::move(dx)};
}

// ---------------------------------------------------------------- pointwise

PointwiseConv2d::PointwiseConv2d(Graph& g, const std::string& name, std::size_t in_channels,
                                 std::size_t filters)
    : cin_(in_channels), filters_(filters) {
  kernel_ = &g.make_param(name + "/kernel", {in_channels, filters}, Graph::Init::GlorotUniform,
                          in_channels, filters);
  bias_ = &g.make_param(name + "/bias", {filters}, Graph::Init::Zeros);
}

StaticShape PointwiseConv2d::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 1);
  expect_channels(in[0], cin_);
  return {in[0].h, in[0].w, filters_};
}

Tensor PointwiseConv2d::forward(std::span<const Tensor* const> in, RunContext&) {
  const Tensor& x = *in[0];
  require_rank4(x, "pointwise_conv2d");
  Tensor out({x.dim(0), x.dim(1), x.dim(2), filters_});
  dense_forward(x.data(), x.dim(0) * x.dim(1) * x.dim(2), cin_, kernel_->value.data(), filters_,
                bias_->value.data(), out.data());
  return out;
}

std::vector<Tensor> PointwiseConv2d::backward(std::span<const Tensor* const> in, const Tensor&,
                                              const Tensor& dout) {
  const Tensor& x = *in[0];
  Tensor dx(x.shape());
  dense_backward(x.data(), x.dim(0) * x.dim(1) * x.dim(2), cin_, kernel_->value.data(),
                 filters_, dout.data(), dx.data(), kernel_->grad.data(), bias_->grad.data());
  return {std::move(dx)};
}

// ---------------------------------------------------------------- leaky relu

LeakyRelu::LeakyRelu(Graph&, const std::string&, double slope) : slope_(slope) {}

StaticShape LeakyRelu::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 1);
  return in[0];
}

Tensor LeakyRelu::forward(std::span<const Tensor* const> in, RunContext&) {
  Tensor out = *in[0];
  for (double& v : out.values())
    if (v < 0.0) v *= slope_;
  return out;
}

std::vector<Tensor> LeakyRelu::backward(std::span<const Tensor* const> in, const Tensor&,
                                        const Tensor& dout) {
  Tensor dx = dout;
  auto xv = in[0]->values();
  auto dv = dx.values();
  for (std::size_t i = 0; i < dv.size(); ++i)
    if (xv[i] < 0.0) dv[i] *= slope_;
  return {std::move(dx)};
}

// ---------------------------------------------------------------- dropout

SpatialDropout::SpatialDropout(Graph&, const std::string& name, double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError(name + ": drop rate must be in [0,1)");
}

StaticShape SpatialDropout::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 1);
  return in[0];
}

Tensor SpatialDropout::forward(std::span<const Tensor* const> in, RunContext& ctx) {
  const Tensor& x = *in[0];
  active_ = ctx.mode == Mode::Train && rate_ > 0.0;
  if (!active_) return x;
  require_rank4(x, "spatial_dropout");
  const std::size_t B = x.dim(0), P = x.dim(1) * x.dim(2), C = x.dim(3);
  keep_.assign(B * C, 0.0);
  const double scale = 1.0 / (1.0 - rate_);
  for (std::size_t i = 0; i < B * C; ++i) keep_[i] = ctx.rng->uniform() < rate_ ? 0.0 : scale;
  Tensor out = x;
  double* o = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) o[(b * P + p) * C + c] *= keep_[b * C + c];
  return out;
}

std::vector<Tensor> SpatialDropout::backward(std::span<const Tensor* const>, const Tensor&,
                                             const Tensor& dout) {
  if (!active_) return {dout};
  Tensor dx = dout;
  const std::size_t B = dx.dim(0), P = dx.dim(1) * dx.dim(2), C = dx.dim(3);
  double* d = dx.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) d[(b * P + p) * C + c] *= keep_[b * C + c];
  return {std::move(dx)};
}

// ---------------------------------------------------------------- batch norm

BatchNorm::BatchNorm(Graph& g, const std::string& name, std::size_t channels,
                     BatchNormConfig cfg)
    : channels_(channels), cfg_(cfg) {
  gamma_ = &g.make_param(name + "/gamma", {channels}, Graph::Init::Ones);
  beta_ = &g.make_param(name + "/beta", {channels}, Graph::Init::Zeros);
  running_mean_ =
      &g.make_param(name + "/running_mean", {channels}, Graph::Init::Zeros, 1, 1, false);
  running_var_ = &g.make_param(name + "/running_var", {channels}, Graph::Init::Ones, 1, 1, false);
}

StaticShape BatchNorm::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 1);
  expect_channels(in[0], channels_);
  return in[0];
}

Tensor BatchNorm::forward(std::span<const Tensor* const> in, RunContext& ctx) {
  const Tensor& x = *in[0];
  require_rank4(x, "batch_norm");
  const std::size_t C = channels_;
  const std::size_t N = x.numel() / C;
  train_pass_ = ctx.mode == Mode::Train;
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (train_pass_) {
    if (N == 0) throw ValidationError("batch_norm: empty batch in training mode");
    const double* xs = x.data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) mean[c] += xs[n * C + c];
    for (double& m : mean) m /= static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const double dlt = xs[n * C + c] - mean[c];
        var[c] += dlt * dlt;
      }
    for (double& v : var) v /= static_cast<double>(N);
    for (std::size_t c = 0; c < C; ++c) {
      running_mean_->value[c] = cfg_.momentum * running_mean_->value[c] + (1.0 - cfg_.momentum) * mean[c];
      running_var_->value[c] = cfg_.momentum * running_var_->value[c] + (1.0 - cfg_.momentum) * var[c];
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean_->value[c];
      var[c] = running_var_->value[c];
    }
  }
  inv_std_.resize(C);
  for (std::size_t c = 0; c < C; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + cfg_.epsilon);
  xhat_ = Tensor(x.shape());
  Tensor out(x.shape());
  const double* xs = x.data();
  double* xh = xhat_.data();
  double* o = out.data();
  const double* gm = gamma_->value.data();
  const double* bt = beta_->value.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double v = (xs[n * C + c] - mean[c]) * inv_std_[c];
      xh[n * C + c] = v;
      o[n * C + c] = gm[c] * v + bt[c];
    }
  return out;
}

std::vector<Tensor> BatchNorm::backward(std::span<const Tensor* const>, const Tensor&,
                                        const Tensor& dout) {
  const std::size_t C = channels_;
  const std::size_t N = dout.numel() / C;
  const double* dy = dout.data();
  const double* xh = xhat_.data();
  std::vector<double> sum_dy(C, 0.0), sum_dy_xh(C, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      sum_dy[c] += dy[n * C + c];
      sum_dy_xh[c] += dy[n * C + c] * xh[n * C + c];
    }
  for (std::size_t c = 0; c < C; ++c) {
    gamma_->grad[c] += sum_dy_xh[c];
    beta_->grad[c] += sum_dy[c];
  }
  Tensor dx(dout.shape());
  double* d = dx.data();
  const double* gm = gamma_->value.data();
  if (train_pass_) {
    const double inv_n = 1.0 / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        d[n * C + c] = gm[c] * inv_std_[c] *
                       (dy[n * C + c] - inv_n * sum_dy[c] - xh[n * C + c] * inv_n * sum_dy_xh[c]);
  } else {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) d[n * C + c] = gm[c] * inv_std_[c] * dy[n * C + c];
  }
  return {std::move(dx)};
}

// ---------------------------------------------------------------- attention

MultiHeadAttention::MultiHeadAttention(Graph& g, const std::string& name, std::size_t heads,
                                       std::size_t head_size)
    : heads_(heads), head_size_(head_size) {
  if (heads == 0 || head_size == 0) throw ParameterError(name + ": heads and head size must be > 0");
  const std::size_t D = heads * head_size;
  using I = Graph::Init;
  wq_ = &g.make_param(name + "/query_kernel", {1, D}, I::GlorotUniform, 1, D);
  bq_ = &g.make_param(name + "/query_bias", {D}, I::Zeros);
  wk_ = &g.make_param(name + "/key_kernel", {1, D}, I::GlorotUniform, 1, D);
  bk_ = &g.make_param(name + "/key_bias", {D}, I::Zeros);
  wv_ = &g.make_param(name + "/value_kernel", {1, D}, I::GlorotUniform, 1, D);
  bv_ = &g.make_param(name + "/value_bias", {D}, I::Zeros);
  wo_ = &g.make_param(name + "/output_kernel", {D, 1}, I::GlorotUniform, D, 1);
  bo_ = &g.make_param(name + "/output_bias", {1}, I::Zeros);
}

StaticShape MultiHeadAttention::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 3);
  for (const auto& s : in) {
    expect_channels(s, 1);
    expect_same_hw(s, in[0]);
  }
  return in[0];
}

Tensor MultiHeadAttention::forward(std::span<const Tensor* const> in, RunContext&) {
  const Tensor& q = *in[0];
  const Tensor& k = *in[1];
  const Tensor& v = *in[2];
  require_rank4(q, "multihead_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw ShapeError("multihead_attention: query/key/value shapes differ");
  const std::size_t rows = q.dim(0) * q.dim(1), T = q.dim(2);
  const std::size_t D = heads_ * head_size_, hs = head_size_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
  qp_.assign(rows, {});
  kp_.assign(rows, {});
  vp_.assign(rows, {});
  attn_.assign(rows, {});
  ctx_.assign(rows, {});
  Tensor out(q.shape());
  auto project = [&](const double* x, const Param* w, const Param* b, std::vector<double>& p) {
    p.resize(T * D);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t e = 0; e < D; ++e) p[t * D + e] = x[t] * w->value[e] + b->value[e];
  };
  std::vector<double> scores(T);
  for (std::size_t r = 0; r < rows; ++r) {
    project(q.data() + r * T, wq_, bq_, qp_[r]);
    project(k.data() + r * T, wk_, bk_, kp_[r]);
    project(v.data() + r * T, wv_, bv_, vp_[r]);
    auto& A = attn_[r];
    auto& O = ctx_[r];
    A.assign(heads_ * T * T, 0.0);
    O.assign(T * D, 0.0);
    const auto& Q = qp_[r];
    const auto& K = kp_[r];
    const auto& V = vp_[r];
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t off = h * hs;
      for (std::size_t t = 0; t < T; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < T; ++s) {
          double acc = 0.0;
          for (std::size_t e = 0; e < hs; ++e) acc += Q[t * D + off + e] * K[s * D + off + e];
          scores[s] = acc * scale;
          mx = std::max(mx, scores[s]);
        }
        double z = 0.0;
        for (std::size_t s = 0; s < T; ++s) {
          scores[s] = std::exp(scores[s] - mx);
          z += scores[s];
        }
        double* a = A.data() + (h * T + t) * T;
        for (std::size_t s = 0; s < T; ++s) a[s] = scores[s] / z;
        double* o = O.data() + t * D + off;
        for (std::size_t s = 0; s < T; ++s) {
          const double as = a[s];
          const double* vs = V.data() + s * D + off;
          for (std::size_t e = 0; e < hs; ++e) o[e] += as * vs[e];
        }
      }
    }
    double* y = out.data() + r * T;
    for (std::size_t t = 0; t < T; ++t) {
      double acc = bo_->value[0];
      for (std::size_t e = 0; e < D; ++e) acc += O[t * D + e] * wo_->value[e];
      y[t] = acc;
    }
  }
  return out;
}

std::vector<Tensor> MultiHeadAttention::backward(std::span<const Tensor* const> in,
                                                 const Tensor&, const Tensor& dout) {
  const Tensor& q = *in[0];
  const Tensor& k = *in[1];
  const Tensor& v = *in[2];
  const std::size_t rows = q.dim(0) * q.dim(1), T = q.dim(2);
  const std::size_t D = heads_ * head_size_, hs = head_size_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
  Tensor dq(q.shape()), dk(k.shape()), dv(v.shape());
  std::vector<double> dO(T * D), dQ(T * D), dK(T * D), dV(T * D), dA(T);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& Q = qp_[r];
    const auto& K = kp_[r];
    const auto& V = vp_[r];
    const auto& A = attn_[r];
    const auto& O = ctx_[r];
    const double* gy = dout.data() + r * T;
    for (std::size_t t = 0; t < T; ++t) {
      bo_->grad[0] += gy[t];
      for (std::size_t e = 0; e < D; ++e) {
        wo_->grad[e] += O[t * D + e] * gy[t];
        dO[t * D + e] = gy[t] * wo_->value[e];
      }
    }
    std::fill(dQ.begin(), dQ.end(), 0.0);
    std::fill(dK.begin(), dK.end(), 0.0);
    std::fill(dV.begin(), dV.end(), 0.0);
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t off = h * hs;
      for (std::size_t t = 0; t < T; ++t) {
        const double* a = A.data() + (h * T + t) * T;
        const double* go = dO.data() + t * D + off;
        double dot = 0.0;
        for (std::size_t s = 0; s < T; ++s) {
          double acc = 0.0;
          const double* vs = V.data() + s * D + off;
          double* dvs = dV.data() + s * D + off;
          for (std::size_t e = 0; e < hs; ++e) {
            acc += go[e] * vs[e];
            dvs[e] += a[s] * go[e];
          }
          dA[s] = acc;
          dot += acc * a[s];
        }
        for (std::size_t s = 0; s < T; ++s) {
          const double ds = a[s] * (dA[s] - dot) * scale;
          if (ds == 0.0) continue;
          const double* qt = Q.data() + t * D + off;
          const double* ks = K.data() + s * D + off;
          double* dqt = dQ.data() + t * D + off;
          double* dks = dK.data() + s * D + off;
          for (std::size_t e = 0; e < hs; ++e) {
            dqt[e] += ds * ks[e];
            dks[e] += ds * qt[e];
          }
        }
      }
    }
    auto back_project = [&](const double* x, const std::vector<double>& dp, Param* w, Param* b,
                            double* dx) {
      for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::size_t e = 0; e < D; ++e) {
          w->grad[e] += x[t] * dp[t * D + e];
          b->grad[e] += dp[t * D + e];
          acc += dp[t * D + e] * w->value[e];
        }
        dx[t] = acc;
      }
    };
    back_project(q.data() + r * T, dQ, wq_, bq_, dq.data() + r * T);
    back_project(k.data() + r * T, dK, wk_, bk_, dk.data() + r * T);
    back_project(v.data() + r * T, dV, wv_, bv_, dv.data() + r * T);
  }
  return {std::move(dq), std::move(dk), std::move(dv)};
}

// ---------------------------------------------------------------- softmax

Softmax::Softmax(Graph&, const std::string&) {}

StaticShape Softmax::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 1);
  return in[0];
}

Tensor Softmax::forward(std::span<const Tensor* const> in, RunContext&) {
  const Tensor& x = *in[0];
  require_rank4(x, "softmax");
  const std::size_t C = x.dim(3), N = x.numel() / C;
  Tensor out(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const double* xi = x.data() + n * C;
    double* o = out.data() + n * C;
    const double mx = *std::max_element(xi, xi + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (o[c] = std::exp(xi[c] - mx));
    for (std::size_t c = 0; c < C; ++c) o[c] /= z;
  }
  return out;
}

std::vector<Tensor> Softmax::backward(std::span<const Tensor* const>, const Tensor& out,
                                      const Tensor& dout) {
  const std::size_t C = out.dim(3), N = out.numel() / C;
  Tensor dx(out.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const double* y = out.data() + n * C;
    const double* g = dout.data() + n * C;
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) dot += y[c] * g[c];
    double* d = dx.data() + n * C;
    for (std::size_t c = 0; c < C; ++c) d[c] = y[c] * (g[c] - dot);
  }
  return {std::move(dx)};
}

// ---------------------------------------------------------------- masked GAP

GlobalAvgPoolMasked::GlobalAvgPoolMasked(Graph&, const std::string&) {}

StaticShape GlobalAvgPoolMasked::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 2);
  expect_channels(in[1], 1);
  expect_same_hw(in[0], in[1]);
  return {1, 1, in[0].c};
}

Tensor GlobalAvgPoolMasked::forward(std::span<const Tensor* const> in, RunContext&) {
  const Tensor& x = *in[0];
  const Tensor& inc = *in[1];
  require_rank4(x, "global_avg_pool_masked");
  if (inc.rank() != 4 || inc.dim(0) != x.dim(0) || inc.dim(1) != x.dim(1) ||
      inc.dim(2) != x.dim(2) || inc.dim(3) != 1)
    throw ShapeError("global_avg_pool_masked: include map " + shape_str(inc.shape()) +
                     " does not match " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), P = x.dim(1) * x.dim(2), C = x.dim(3);
  Tensor out({B, 1, 1, C});
  for (std::size_t b = 0; b < B; ++b) {
    double denom = 0.0;
    for (std::size_t p = 0; p < P; ++p) denom += std::max(0.0, inc[b * P + p]);
    if (!(denom > 0.0)) throw ValidationError("empty pooling region");
    for (std::size_t p = 0; p < P; ++p) {
      if (!(inc[b * P + p] > 0.0)) continue;
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += x[(b * P + p) * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) out[b * C + c] /= denom;
  }
  return out;
}

std::vector<Tensor> GlobalAvgPoolMasked::backward(std::span<const Tensor* const> in,
                                                  const Tensor&, const Tensor& dout) {
  const Tensor& x = *in[0];
  const Tensor& inc = *in[1];
  const std::size_t B = x.dim(0), P = x.dim(1) * x.dim(2), C = x.dim(3);
  Tensor dx(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    double denom = 0.0;
    for (std::size_t p = 0; p < P; ++p) denom += std::max(0.0, inc[b * P + p]);
    for (std::size_t p = 0; p < P; ++p) {
      if (!(inc[b * P + p] > 0.0)) continue;
      for (std::size_t c = 0; c < C; ++c) dx[(b * P + p) * C + c] = dout[b * C + c] / denom;
    }
  }
  return {std::move(dx), Tensor()};
}

// ---------------------------------------------------------------- concat

Concat::Concat(Graph&, const std::string&) {}

StaticShape Concat::infer_shape(std::span<const StaticShape> in) const {
  if (in.empty()) throw ShapeError("concat needs at least one input");
  StaticShape s = in[0];
  s.c = 0;
  for (const auto& i : in) {
    expect_same_hw(i, in[0]);
    s.c += i.c;
  }
  return s;
}

Tensor Concat::forward(std::span<const Tensor* const> in, RunContext&) {
  const Tensor& first = *in[0];
  require_rank4(first, "concat");
  const std::size_t N = first.dim(0) * first.dim(1) * first.dim(2);
  std::size_t C = 0;
  for (const Tensor* t : in) {
    if (t->dim(0) != first.dim(0) || t->dim(1) != first.dim(1) || t->dim(2) != first.dim(2))
      throw ShapeError("concat: spatial mismatch");
    C += t->dim(3);
  }
  Tensor out({first.dim(0), first.dim(1), first.dim(2), C});
  std::size_t off = 0;
  for (const Tensor* t : in) {
    const std::size_t c = t->dim(3);
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(t->data() + n * c, c, out.data() + n * C + off);
    off += c;
  }
  return out;
}

std::vector<Tensor> Concat::backward(std::span<const Tensor* const> in, const Tensor&,
                                     const Tensor& dout) {
  const std::size_t C = dout.dim(3);
  const std::size_t N = dout.numel() / C;
  std::vector<Tensor> grads;
  std::size_t off = 0;
  for (const Tensor* t : in) {
    const std::size_t c = t->dim(3);
    Tensor g(t->shape());
    for (std::size_t n = 0; n < N; ++n) std::copy_n(dout.data() + n * C + off, c, g.data() + n * c);
    off += c;
    grads.push_back(std::move(g));
  }
  return grads;
}

// ---------------------------------------------------------------- add

Add::Add(Graph&, const std::string&) {}

StaticShape Add::infer_shape(std::span<const StaticShape> in) const {
  if (in.size() < 2) throw ShapeError("add needs at least two inputs");
  for (const auto& s : in) {
    expect_channels(s, in[0].c);
    expect_same_hw(s, in[0]);
  }
  return in[0];
}

Tensor Add::forward(std::span<const Tensor* const> in, RunContext&) {
  Tensor out = *in[0];
  for (std::size_t i = 1; i < in.size(); ++i) out += *in[i];
  return out;
}

std::vector<Tensor> Add::backward(std::span<const Tensor* const> in, const Tensor&,
                                  const Tensor& dout) {
  return std::vector<Tensor>(in.size(), dout);
}

// ---------------------------------------------------------------- multiply

PointwiseMultiply::PointwiseMultiply(Graph&, const std::string&) {}

StaticShape PointwiseMultiply::infer_shape(std::span<const StaticShape> in) const {
  if (in.size() < 2) throw ShapeError("pointwise_multiply needs at least two inputs");
  for (const auto& s : in) {
    if (s.c != in[0].c && s.c != 1)
      throw ShapeError("pointwise_multiply: cannot broadcast " + to_string(s) + " onto " +
                       to_string(in[0]));
    expect_same_hw(s, in[0]);
  }
  return in[0];
}

Tensor PointwiseMultiply::forward(std::span<const Tensor* const> in, RunContext&) {
  Tensor out = *in[0];
  require_rank4(out, "pointwise_multiply");
  const std::size_t C = out.dim(3), N = out.numel() / C;
  for (std::size_t i = 1; i < in.size(); ++i) {
    const Tensor& m = *in[i];
    if (m.dim(0) != out.dim(0) || m.dim(1) != out.dim(1) || m.dim(2) != out.dim(2))
      throw ShapeError("pointwise_multiply: shape mismatch");
    const std::size_t mc = m.dim(3);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) out[n * C + c] *= m[n * mc + (mc == 1 ? 0 : c)];
  }
  return out;
}

std::vector<Tensor> PointwiseMultiply::backward(std::span<const Tensor* const> in, const Tensor&,
                                                const Tensor& dout) {
  const std::size_t C = dout.dim(3), N = dout.numel() / C;
  std::vector<Tensor> grads;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t ic = in[i]->dim(3);
    Tensor g(in[i]->shape());
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        double prod = dout[n * C + c];
        for (std::size_t j = 0; j < in.size(); ++j) {
          if (j == i) continue;
          const std::size_t jc = in[j]->dim(3);
          prod *= (*in[j])[n * jc + (jc == 1 ? 0 : c)];
        }
        g[n * ic + (ic == 1 ? 0 : c)] += prod;
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// ---------------------------------------------------------------- transpose

TransposeHW::TransposeHW(Graph&, const std::string&) {}

StaticShape TransposeHW::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 1);
  return {in[0].w, in[0].h, in[0].c};
}

namespace {

Tensor transpose_hw(const Tensor& x) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  Tensor out({B, W, H, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        std::copy_n(x.data() + ((b * H + i) * W + j) * C, C, out.data() + ((b * W + j) * H + i) * C);
  return out;
}

}  // namespace

Tensor TransposeHW::forward(std::span<const Tensor* const> in, RunContext&) {
  require_rank4(*in[0], "transpose_hw");
  return transpose_hw(*in[0]);
}

std::vector<Tensor> TransposeHW::backward(std::span<const Tensor* const>, const Tensor&,
                                          const Tensor& dout) {
  return {transpose_hw(dout)};
}

// ---------------------------------------------------------------- member mean

MeanOverMembers::MeanOverMembers(Graph&, const std::string&) {}

StaticShape MeanOverMembers::infer_shape(std::span<const StaticShape> in) const {
  if (in.empty()) throw ShapeError("mean_over_members needs at least one input");
  for (const auto& s : in) {
    expect_channels(s, in[0].c);
    expect_same_hw(s, in[0]);
  }
  return in[0];
}

Tensor MeanOverMembers::forward(std::span<const Tensor* const> in, RunContext&) {
  Tensor out = *in[0];
  for (std::size_t i = 1; i < in.size(); ++i) out += *in[i];
  const double s = 1.0 / static_cast<double>(in.size());
  for (double& v : out.values()) v *= s;
  return out;
}

std::vector<Tensor> MeanOverMembers::backward(std::span<const Tensor* const> in, const Tensor&,
                                              const Tensor& dout) {
  return std::vector<Tensor>(in.size(), dout * (1.0 / static_cast<double>(in.size())));
}

// ---------------------------------------------------------------- select

SelectChannels::SelectChannels(Graph&, const std::string&, std::size_t begin, std::size_t count)
    : begin_(begin), count_(count) {}

StaticShape SelectChannels::infer_shape(std::span<const StaticShape> in) const {
  expect_inputs(in, 1);
  if (begin_ + count_ > in[0].c || count_ == 0)
    throw ShapeError("select_channels: range out of bounds for " + to_string(in[0]));
  return {in[0].h, in[0].w, count_};
}

Tensor SelectChannels::forward(std::span<const Tensor* const> in, RunContext&) {
  const Tensor& x = *in[0];
  const std::size_t C = x.dim(3), N = x.numel() / C;
  Tensor out({x.dim(0), x.dim(1), x.dim(2), count_});
  for (std::size_t n = 0; n < N; ++n)
    std::copy_n(x.data() + n * C + begin_, count_, out.data() + n * count_);
  return out;
}

std::vector<Tensor> SelectChannels::backward(std::span<const Tensor* const> in, const Tensor&,
                                             const Tensor& dout) {
  const Tensor& x = *in[0];
  const std::size_t C = x.dim(3), N = x.numel() / C;
  Tensor dx(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    std::copy_n(dout.data() + n * count_, count_, dx.data() + n * C + begin_);
  return {std::move(dx)};
}

}  // namespace cxr::nn
