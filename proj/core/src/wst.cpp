#include "cxrnet/wst.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include "cxrnet/error.hpp"
#include "cxrnet/fft.hpp"

namespace cxr::wst {

using cd = std::complex<double>;

void ScatterConfig::validate() const {
  if (J < 1) throw ParameterError("ScatterConfig: J must be >= 1");
  if (L < 1) throw ParameterError("ScatterConfig: L must be >= 1");
  if (J > 30 || factor() > std::min(height, width))
    throw ParameterError("ScatterConfig: 2^J = " + std::to_string(std::size_t{1} << std::min(J, 30)) +
                         " exceeds min(H, W) = " + std::to_string(std::min(height, width)));
}

std::size_t channel_count(int J, int L) {
  const auto j = static_cast<std::size_t>(J);
  const auto l = static_cast<std::size_t>(L);
  return 1 + j * l + j * (j - 1) * l * l / 2;
}

double FilterBank::frame_bound() const { return std::sqrt(lp_max); }

Tensor gabor_spatial(std::size_t h, std::size_t w, double sigma, double theta, double xi,
                     double slant) {
  const double c = std::cos(theta), s = std::sin(theta);
  // curvature = R * diag(1, slant^2) * R^T / (2 sigma^2)
  const double s2 = slant * slant;
  const double k00 = (c * c + s2 * s * s) / (2.0 * sigma * sigma);
  const double k01 = (c * s - s2 * s * c) / (2.0 * sigma * sigma);
  const double k11 = (s * s + s2 * c * c) / (2.0 * sigma * sigma);
  Tensor g({h, w}, true);
  auto gv = g.cvalues();
  const auto hh = static_cast<long>(h), ww = static_cast<long>(w);
  for (long ex = -2; ex <= 2; ++ex) {
    for (long ey = -2; ey <= 2; ++ey) {
      for (long i = 0; i < hh; ++i) {
        const double xx = static_cast<double>(i + ex * hh);
        for (long jj = 0; jj < ww; ++jj) {
          const double yy = static_cast<double>(jj + ey * ww);
          const double re = -(k00 * xx * xx + 2.0 * k01 * xx * yy + k11 * yy * yy);
          const double im = xi * (xx * c + yy * s);
          gv[static_cast<std::size_t>(i * ww + jj)] += std::exp(cd(re, im));
        }
      }
    }
  }
  const double norm = 2.0 * std::numbers::pi * sigma * sigma / slant;
  for (auto& v : gv) v /= norm;
  return g;
}

Tensor morlet_spatial(std::size_t h, std::size_t w, double sigma, double theta, double xi,
                      double slant) {
  Tensor wave = gabor_spatial(h, w, sigma, theta, xi, slant);
  const Tensor envelope = gabor_spatial(h, w, sigma, theta, 0.0, slant);
  cd sw = 0.0, se = 0.0;
  for (auto v : wave.cvalues()) sw += v;
  for (auto v : envelope.cvalues()) se += v;
  const cd k = sw / se;
  auto wv = wave.cvalues();
  auto ev = envelope.cvalues();
  for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= k * ev[i];
  return wave;
}

namespace {

// Morlet and Gaussian kernels are conjugate-symmetric about the origin, so
// their spectra are real; the rounding-level imaginary part is dropped.
Tensor real_spectrum(const Tensor& spatial) {
  Tensor spec = fft2(spatial);
  for (auto& v : spec.cvalues()) v = cd(v.real(), 0.0);
  return spec;
}

}  // namespace

Tensor littlewood_paley(const FilterBank& fb) {
  const std::size_t n = fb.cfg.height * fb.cfg.width;
  Tensor lp({fb.cfg.height, fb.cfg.width});
  for (std::size_t i = 0; i < n; ++i) lp[i] = fb.phi_hat[i] * fb.phi_hat[i];
  for (const Tensor& psi : fb.psi_hat) {
    auto pv = psi.cvalues();
    for (std::size_t i = 0; i < n; ++i) lp[i] += 0.5 * std::norm(pv[i]);
  }
  return lp;
}

FilterBank build_filterbank(const ScatterConfig& cfg, const MorletParams& params) {
  cfg.validate();
  const std::size_t h = cfg.height, w = cfg.width;
  FilterBank fb;
  fb.cfg = cfg;
  const double slant = params.slant_numerator / cfg.L;
  for (int j = 0; j < cfg.J; ++j) {
    const double sigma = params.sigma0 * std::ldexp(1.0, j);
    const double xi = params.xi0 / std::ldexp(1.0, j);
    for (int t = 0; t < cfg.L; ++t) {
      const double theta = t * std::numbers::pi / cfg.L;
      fb.psi_hat.push_back(real_spectrum(morlet_spatial(h, w, sigma, theta, xi, slant)));
    }
  }
  // Low-pass at scale 2^J: sigma0 * 2^(J-1), unit DC gain after L1 normalisation.
  Tensor phi = gabor_spatial(h, w, params.sigma0 * std::ldexp(1.0, cfg.J - 1), 0.0, 0.0, 1.0);
  cd dc = 0.0;
  for (auto v : phi.cvalues()) dc += v;
  for (auto& v : phi.cvalues()) v /= dc;
  fb.phi_hat = real_spectrum(phi).real_part();
  fb.phi_hat[0] = 1.0;

  const Tensor lp = littlewood_paley(fb);
  fb.lp_max = 0.0;
  fb.lp_min_annulus = 0.0;
  double lp_min = std::numeric_limits<double>::infinity();
  // The admissible annulus: frequencies whose radius lies between the lowest
  // and the highest wavelet centre frequency.
  const double r_lo = params.xi0 / std::ldexp(1.0, cfg.J - 1);
  const double r_hi = params.xi0;
  for (std::size_t i = 0; i < h; ++i) {
    const double fy = 2.0 * std::numbers::pi *
                      (static_cast<double>(i <= h / 2 ? i : i - h) / static_cast<double>(h));
    for (std::size_t j = 0; j < w; ++j) {
      const double fx = 2.0 * std::numbers::pi *
                        (static_cast<double>(j <= w / 2 ? j : j - w) / static_cast<double>(w));
      const double v = lp[i * w + j];
      fb.lp_max = std::max(fb.lp_max, v);
      const double r = std::hypot(fy, fx);
      if (r >= r_lo && r <= r_hi) lp_min = std::min(lp_min, v);
    }
  }
  fb.lp_min_annulus = std::isfinite(lp_min) ? lp_min : 0.0;
  return fb;
}

std::vector<PathDescriptor> enumerate_paths(int J, int L) {
  std::vector<PathDescriptor> paths;
  paths.push_back({0, -1, -1, -1, -1});
  for (int j1 = 0; j1 < J; ++j1)
    for (int t1 = 0; t1 < L; ++t1) paths.push_back({1, j1, t1, -1, -1});
  for (int j1 = 0; j1 < J; ++j1)
    for (int t1 = 0; t1 < L; ++t1)
      for (int j2 = j1 + 1; j2 < J; ++j2)
        for (int t2 = 0; t2 < L; ++t2) paths.push_back({2, j1, t1, j2, t2});
  return paths;
}

namespace {

class Scatterer {
 public:
  Scatterer(const FilterBank& fb, Decimation mode)
      : fb_(fb),
        h_(fb.cfg.height),
        w_(fb.cfg.width),
        f_(fb.cfg.factor()),
        oh_(fb.cfg.out_height()),
        ow_(fb.cfg.out_width()),
        periodize_(mode == Decimation::Periodized && h_ % f_ == 0 && w_ % f_ == 0),
        work_(h_ * w_),
        small_(oh_ * ow_) {}

  // Multiplies a full spectrum by phi_hat, returns the decimated real map.
  void lowpass(const std::vector<cd>& spectrum, Tensor& out, std::size_t channel,
               std::size_t channels) {
    const auto phi = fb_.phi_hat.values();
    if (periodize_) {
      std::fill(small_.begin(), small_.end(), cd(0.0, 0.0));
      for (std::size_t i = 0; i < h_; ++i) {
        const std::size_t si = i % oh_;
        for (std::size_t j = 0; j < w_; ++j)
          small_[si * ow_ + j % ow_] += spectrum[i * w_ + j] * phi[i * w_ + j];
      }
      fft2_inplace(small_.data(), oh_, ow_, true);
      const double scale = 1.0 / static_cast<double>(h_ * w_);
      for (std::size_t k = 0; k < oh_ * ow_; ++k)
        out[k * channels + channel] = small_[k].real() * scale;
      return;
    }
    for (std::size_t k = 0; k < h_ * w_; ++k) work_[k] = spectrum[k] * phi[k];
    fft2_inplace(work_.data(), h_, w_, true);
    const double scale = 1.0 / static_cast<double>(h_ * w_);
    for (std::size_t i = 0; i < oh_; ++i)
      for (std::size_t j = 0; j < ow_; ++j)
        out[(i * ow_ + j) * channels + channel] = work_[(i * f_) * w_ + j * f_].real() * scale;
  }

  // |ifft(spectrum * psi)| transformed back to the Fourier domain.
  void modulus_spectrum(const std::vector<cd>& spectrum, const Tensor& psi,
                        std::vector<cd>& out) {
    const auto pv = psi.cvalues();
    out.resize(h_ * w_);
    for (std::size_t k = 0; k < h_ * w_; ++k) out[k] = spectrum[k] * pv[k];
    fft2_inplace(out.data(), h_, w_, true);
    const double scale = 1.0 / static_cast<double>(h_ * w_);
    for (auto& v : out) v = cd(std::abs(v) * scale, 0.0);
    fft2_inplace(out.data(), h_, w_, false);
  }

  ScatterOutput run(const Tensor& x) {
    const int J = fb_.cfg.J, L = fb_.cfg.L;
    ScatterOutput result;
    result.paths = enumerate_paths(J, L);
    const std::size_t channels = result.paths.size();
    result.coeffs = Tensor({oh_, ow_, channels});

    std::vector<cd> xhat(h_ * w_);
    const auto xv = x.values();
    for (std::size_t k = 0; k < h_ * w_; ++k) xhat[k] = cd(xv[k], 0.0);
    fft2_inplace(xhat.data(), h_, w_, false);
    lowpass(xhat, result.coeffs, 0, channels);

    std::size_t order2 = 1 + static_cast<std::size_t>(J * L);
    std::vector<cd> u1, u2;
    for (int j1 = 0; j1 < J; ++j1) {
      for (int t1 = 0; t1 < L; ++t1) {
        modulus_spectrum(xhat, fb_.psi(j1, t1), u1);
        lowpass(u1, result.coeffs, 1 + static_cast<std::size_t>(j1 * L + t1), channels);
        for (int j2 = j1 + 1; j2 < J; ++j2) {
          for (int t2 = 0; t2 < L; ++t2) {
            modulus_spectrum(u1, fb_.psi(j2, t2), u2);
            lowpass(u2, result.coeffs, order2++, channels);
          }
        }
      }
    }
    return result;
  }

 private:
  const FilterBank& fb_;
  std::size_t h_, w_, f_, oh_, ow_;
  bool periodize_;
  std::vector<cd> work_;
  std::vector<cd> small_;
};

}  // namespace

ScatterOutput scatter(const Tensor& x, const FilterBank& fb, Decimation mode) {
  if (x.rank() != 2 || x.dim(0) != fb.cfg.height || x.dim(1) != fb.cfg.width)
    throw ShapeError("scatter: input " + shape_str(x.shape()) + " does not match filter bank [" +
                     std::to_string(fb.cfg.height) + "," + std::to_string(fb.cfg.width) + "]");
  if (x.is_complex()) throw ShapeError("scatter: real input expected");
  return Scatterer(fb, mode).run(x);
}

WstBlockOutput wst_block(const Tensor& x, const Tensor& float_mask, const FilterBank& fb) {
  if (float_mask.shape() != x.shape())
    throw ShapeError("wst_block: mask " + shape_str(float_mask.shape()) + " vs image " +
                     shape_str(x.shape()));
  for (double v : float_mask.values())
    if (!(v >= 0.0 && v <= 1.0))
      throw ValidationError("wst_block: float mask value outside [0,1]");
  const ScatterOutput s = scatter(x, fb);
  const Tensor mask_ds = downsample2d(float_mask, fb.cfg.factor());
  const std::size_t oh = s.coeffs.dim(0), ow = s.coeffs.dim(1), c = s.coeffs.dim(2);
  WstBlockOutput out{Tensor({oh, ow, c + 1}), Tensor({oh, ow, 1})};
  for (std::size_t p = 0; p < oh * ow; ++p) {
    for (std::size_t k = 0; k < c; ++k) out.features[p * (c + 1) + k] = s.coeffs[p * c + k];
    out.features[p * (c + 1) + c] = mask_ds[p];
    out.binary_mask[p] = mask_ds[p] >= kMaskThreshold ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace cxr::wst
