#include "cxrnet/phantoms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cxrnet/error.hpp"
#include "cxrnet/preprocess.hpp"
#include "cxrnet/rng.hpp"

namespace cxr::data {

double Ellipse::level(double y, double x) const noexcept {
  const double c = std::cos(angle), s = std::sin(angle);
  const double dy = y - cy, dx = x - cx;
  const double u = c * dy + s * dx;
  const double v = -s * dy + c * dx;
  return (u / ry) * (u / ry) + (v / rx) * (v / rx);
}

namespace {

struct Anatomy {
  std::array<Ellipse, 2> lungs;
  Ellipse heart;
  Ellipse torso;
  double rib_period;
  double rib_phase;
  double lung_level;
};

Anatomy draw_anatomy(double S, Rng& rng) {
  Anatomy a;
  const double ry = S * rng.uniform(0.28, 0.33);
  const double rx = S * rng.uniform(0.13, 0.16);
  const double cy = S * rng.uniform(0.47, 0.53);
  const double gap = S * rng.uniform(0.18, 0.21);
  const double mid = S * rng.uniform(0.48, 0.52);
  a.lungs[0] = {cy + S * rng.uniform(-0.01, 0.01), mid - gap, ry, rx, rng.uniform(-0.12, 0.0)};
  a.lungs[1] = {cy + S * rng.uniform(-0.01, 0.01), mid + gap, ry * rng.uniform(0.95, 1.05),
                rx * rng.uniform(0.95, 1.05), rng.uniform(0.0, 0.12)};
  a.heart = {cy + S * rng.uniform(0.1, 0.14), mid + S * rng.uniform(0.0, 0.04),
             S * rng.uniform(0.12, 0.15), S * rng.uniform(0.12, 0.16), rng.uniform(-0.3, 0.3)};
  a.torso = {S * 0.5, mid, S * 0.47, S * rng.uniform(0.40, 0.45), 0.0};
  a.rib_period = S * rng.uniform(0.09, 0.12);
  a.rib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  a.lung_level = rng.uniform(0.55, 0.65);
  return a;
}

Ellipse jitter(const Ellipse& e, double S, Rng& rng) {
  return {e.cy + S * rng.uniform(-0.01, 0.01), e.cx + S * rng.uniform(-0.01, 0.01),
          e.ry * rng.uniform(0.97, 1.03), e.rx * rng.uniform(0.97, 1.03),
          e.angle + rng.uniform(-0.03, 0.03)};
}

// Soft membership in [0,1] with a transition about one pixel wide.
double soft_inside(const Ellipse& e, double y, double x) {
  const double r = std::sqrt(e.level(y, x));
  const double edge = 1.0 / std::min(e.ry, e.rx);
  return std::clamp(0.5 + (1.0 - r) / (2.0 * edge), 0.0, 1.0);
}

}  // namespace

SynthResult synth_phantoms(std::size_t n, std::size_t size, double covid_fraction,
                           std::uint64_t seed, const PhantomConfig& cfg) {
  if (size < 32) throw ParameterError("phantom size must be at least 32, got " + std::to_string(size));
  if (!(covid_fraction >= 0.0 && covid_fraction <= 1.0))
    throw ParameterError("covid fraction must lie in [0,1]");
  const double S = static_cast<double>(size);
  Rng root(seed);

  // patients of 2 or 3 images; labels assigned per patient to hit the exact
  // positive count, then the patient order is shuffled
  Rng plan_rng = root.fork(1);
  std::vector<std::size_t> patient_sizes;
  for (std::size_t left = n; left > 0;) {
    std::size_t k = 2 + plan_rng.below(2);
    if (left < k || left - k == 1) k = left <= 3 ? left : 2;
    patient_sizes.push_back(k);
    left -= k;
  }
  const auto positives = static_cast<std::size_t>(std::llround(static_cast<double>(n) * covid_fraction));
  std::vector<std::size_t> porder(patient_sizes.size());
  for (std::size_t i = 0; i < porder.size(); ++i) porder[i] = i;
  for (std::size_t i = porder.size(); i > 1; --i) std::swap(porder[i - 1], porder[plan_rng.below(i)]);
  // whole patients are positive until the count would overshoot; a patient
  // that straddles the boundary is split by shrinking it
  std::vector<int> patient_label(patient_sizes.size(), 0);
  std::size_t assigned = 0;
  for (std::size_t p : porder) {
    if (assigned >= positives) break;
    if (assigned + patient_sizes[p] <= positives) {
      patient_label[p] = 1;
      assigned += patient_sizes[p];
    }
  }
  // remaining positive images come from single-image positive patients carved
  // off negative patients of size 3 (or 2)
  for (std::size_t p : porder) {
    if (assigned == positives) break;
    if (patient_label[p] == 0 && patient_sizes[p] > 1) {
      const std::size_t take = std::min(positives - assigned, patient_sizes[p] - 1);
      patient_sizes[p] -= take;
      for (std::size_t t = 0; t < take; ++t) {
        patient_sizes.push_back(1);
        patient_label.push_back(1);
      }
      assigned += take;
    }
  }

  SynthResult out;
  out.bundle.height = size;
  out.bundle.width = size;
  std::vector<std::size_t> visit(patient_sizes.size());
  for (std::size_t i = 0; i < visit.size(); ++i) visit[i] = i;
  for (std::size_t i = visit.size(); i > 1; --i) std::swap(visit[i - 1], visit[plan_rng.below(i)]);
  std::size_t image_index = 0;
  for (std::size_t pi = 0; pi < visit.size(); ++pi) {
    const std::size_t p = visit[pi];
    Rng prng = root.fork(1000 + p);
    const Anatomy base = draw_anatomy(S, prng);
    for (std::size_t k = 0; k < patient_sizes[p]; ++k, ++image_index) {
      Rng irng = prng.fork(k + 1);
      PhantomInfo info;
      info.lungs = {jitter(base.lungs[0], S, irng), jitter(base.lungs[1], S, irng)};
      info.heart = jitter(base.heart, S, irng);
      const int label = patient_label[p];

      std::vector<std::array<double, 4>> blobs;  // y, x, sigma, amplitude
      if (label == 1) {
        const std::size_t count = 2 + irng.below(4);
        while (blobs.size() < count) {
          const Ellipse& lung = info.lungs[irng.below(2)];
          const double r = irng.uniform(0.5, 0.85);
          const double phi = irng.uniform(0.0, 2.0 * std::numbers::pi);
          const double c = std::cos(lung.angle), s = std::sin(lung.angle);
          const double u = r * lung.ry * std::cos(phi), v = r * lung.rx * std::sin(phi);
          const double y = lung.cy + c * u - s * v, x = lung.cx + s * u + c * v;
          if (info.heart.level(y, x) < 1.2) continue;
          blobs.push_back({y, x, S * irng.uniform(0.04, 0.07),
                           irng.uniform(cfg.blob_amplitude_min, cfg.blob_amplitude_max)});
          info.blob_centres.push_back({y, x});
        }
      }

      Tensor image({size, size}), mask({size, size});
      for (std::size_t yi = 0; yi < size; ++yi)
        for (std::size_t xi = 0; xi < size; ++xi) {
          const double y = static_cast<double>(yi), x = static_cast<double>(xi);
          const double lung = std::max(soft_inside(info.lungs[0], y, x), soft_inside(info.lungs[1], y, x));
          const double heart = soft_inside(info.heart, y, x);
          const double torso = soft_inside(base.torso, y, x);
          const double m = std::clamp(lung - heart, 0.0, 1.0);
          double v = 0.05 + 0.25 * torso;
          const double ribs = 0.06 * std::sin(2.0 * std::numbers::pi * y / base.rib_period + base.rib_phase);
          v += m * (base.lung_level - 0.3 + ribs);
          v += heart * 0.2;
          for (const auto& b : blobs) {
            const double d2 = (y - b[0]) * (y - b[0]) + (x - b[1]) * (x - b[1]);
            v += m * b[3] * std::exp(-d2 / (2.0 * b[2] * b[2]));
          }
          v += cfg.noise_sigma * irng.normal();
          image.at(yi, xi) = std::clamp(v, 0.0, 1.0);
          mask.at(yi, xi) = m;
        }
      Sample s;
      s.id = "phantom_" + std::to_string(image_index);
      s.image = cfg.equalize ? img::hist_equalize(image) : image;
      s.float_mask = mask;
      s.seg_truth = seg_truth_from_mask(mask);
      s.label = label;
      s.group = "patient_" + std::to_string(pi);
      out.bundle.samples.push_back(std::move(s));
      out.info.push_back(std::move(info));
    }
  }
  return out;
}

}  // namespace cxr::data
