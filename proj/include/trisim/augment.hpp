// SPDX-License-Identifier: Apache-2.0
//
// Stochastic view generation. Transform order is fixed:
// crop-resize -> flip -> color jitter -> grayscale -> blur -> normalize.
// A view is a pure function of (patch, policy, RNG state).
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "trisim/image.hpp"
#include "trisim/rng.hpp"
#include "trisim/tensor.hpp"

namespace trisim {

struct AugmentPolicy {
  double crop_scale_min = 0.2;  // of source area
  double crop_scale_max = 1.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;  // in turns of the hue circle
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  std::int64_t output_size = 32;
  std::array<float, 3> norm_mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> norm_std{0.25f, 0.25f, 0.25f};

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    require(prob(flip_prob) && prob(jitter_prob) && prob(grayscale_prob) && prob(blur_prob),
            "augment policy: probabilities must lie in [0,1]");
    require(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
            "augment policy: crop scale range must lie within (0,1]");
    require(output_size > 0, "augment policy: output size must be positive");
    for (float s : norm_std) require(s > 0.f, "augment policy: normalization std must be > 0");
  }

  // Normalize-only identity pipeline.
  static AugmentPolicy disabled(std::int64_t output_size) {
    AugmentPolicy p;
    p.crop_scale_min = p.crop_scale_max = 1.0;
    p.flip_prob = p.jitter_prob = p.grayscale_prob = p.blur_prob = 0.0;
    p.output_size = output_size;
    return p;
  }
};

struct AugmentedTriplet {
  Tensor x1, x2, x3;  // x1, x2 view the anchor patch; x3 views the neighbor
};

namespace detail {

inline float luminance(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

// h in turns [0,1); s, v in [0,1].
inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx == 0.f ? 0.f : d / mx;
  if (d == 0.f) {
    h = 0.f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.f + (b - r) / d;
  else
    h = 4.f + (r - g) / d;
  h /= 6.f;
  if (h < 0.f) h += 1.f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s == 0.f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  const float hh = h * 6.f;
  const int i = std::min(5, static_cast<int>(hh));
  const float f = hh - static_cast<float>(i);
  const float p = v * (1.f - s);
  const float q = v * (1.f - s * f);
  const float t = v * (1.f - s * (1.f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

inline void clamp01(std::vector<float>& v) {
  for (auto& x : v) x = std::clamp(x, 0.f, 1.f);
}

// Separable Gaussian blur with clamp-to-edge padding, planar [3 x S x S].
inline void gaussian_blur(std::vector<float>& img, std::int64_t s, double sigma) {
  const std::int64_t radius = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (static_cast<double>(i) * static_cast<double>(i)) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = static_cast<float>(w);
    total += w;
  }
  for (auto& w : kernel) w = static_cast<float>(w / total);

  std::vector<float> tmp(img.size());
  auto clampi = [s](std::int64_t i) { return std::clamp<std::int64_t>(i, 0, s - 1); };
  for (std::int64_t c = 0; c < 3; ++c) {
    const float* src = img.data() + c * s * s;
    float* dst = tmp.data() + c * s * s;
    for (std::int64_t y = 0; y < s; ++y)
      for (std::int64_t x = 0; x < s; ++x) {
        float acc = 0.f;
        for (std::int64_t k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * src[y * s + clampi(x + k)];
        dst[y * s + x] = acc;
      }
  }
  for (std::int64_t c = 0; c < 3; ++c) {
    const float* src = tmp.data() + c * s * s;
    float* dst = img.data() + c * s * s;
    for (std::int64_t y = 0; y < s; ++y)
      for (std::int64_t x = 0; x < s; ++x) {
        float acc = 0.f;
        for (std::int64_t k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * src[clampi(y + k) * s + x];
        dst[y * s + x] = acc;
      }
  }
}

}  // namespace detail

inline Tensor apply_policy(const ImageU8& patch, const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  require(patch.channels == 3, "apply_policy: expected a 3-channel patch, got ", patch.channels);
  const std::int64_t w = patch.width, h = patch.height;
  const std::int64_t out_s = policy.output_size;

  // Square crop with area drawn from the scale range; a degenerate draw is
  // resampled, never emitted.
  std::int64_t side = 0;
  for (int attempt = 0; attempt < 16 && side < 1; ++attempt) {
    const double scale = rng.uniform(policy.crop_scale_min, policy.crop_scale_max);
    side = static_cast<std::int64_t>(std::llround(std::sqrt(scale * static_cast<double>(w * h))));
    side = std::min(side, std::min(w, h));
  }
  if (side < 1) side = 1;
  const std::int64_t x0 = side < w ? static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - side + 1))) : 0;
  const std::int64_t y0 = side < h ? static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - side + 1))) : 0;

  std::vector<float> crop(static_cast<std::size_t>(3 * side * side));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < side; ++y)
      for (std::int64_t x = 0; x < side; ++x)
        crop[static_cast<std::size_t>((c * side + y) * side + x)] =
            static_cast<float>(patch.at(y0 + y, x0 + x, c)) / 255.f;
  std::vector<float> img = box_resample_planar(crop, 3, side, side, out_s, out_s);

  if (rng.bernoulli(policy.flip_prob)) {
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < out_s; ++y)
        for (std::int64_t x = 0; x < out_s / 2; ++x)
          std::swap(img[static_cast<std::size_t>((c * out_s + y) * out_s + x)],
                    img[static_cast<std::size_t>((c * out_s + y) * out_s + (out_s - 1 - x))]);
  }

  const std::int64_t plane = out_s * out_s;
  if (rng.bernoulli(policy.jitter_prob)) {
    const float fb = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - policy.brightness), 1.0 + policy.brightness));
    const float fc = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - policy.contrast), 1.0 + policy.contrast));
    const float fs = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - policy.saturation), 1.0 + policy.saturation));
    const float dh = static_cast<float>(rng.uniform(-policy.hue, policy.hue));

    for (auto& v : img) v *= fb;
    detail::clamp01(img);

    double lum_acc = 0.0;
    for (std::int64_t i = 0; i < plane; ++i)
      lum_acc += detail::luminance(img[static_cast<std::size_t>(i)],
                                   img[static_cast<std::size_t>(plane + i)],
                                   img[static_cast<std::size_t>(2 * plane + i)]);
    const float mean_lum = static_cast<float>(lum_acc / static_cast<double>(plane));
    for (auto& v : img) v = mean_lum + fc * (v - mean_lum);
    detail::clamp01(img);

    for (std::int64_t i = 0; i < plane; ++i) {
      float& r = img[static_cast<std::size_t>(i)];
      float& g = img[static_cast<std::size_t>(plane + i)];
      float& b = img[static_cast<std::size_t>(2 * plane + i)];
      const float gray = detail::luminance(r, g, b);
      r = gray + fs * (r - gray);
      g = gray + fs * (g - gray);
      b = gray + fs * (b - gray);
    }
    detail::clamp01(img);

    for (std::int64_t i = 0; i < plane; ++i) {
      float& r = img[static_cast<std::size_t>(i)];
      float& g = img[static_cast<std::size_t>(plane + i)];
      float& b = img[static_cast<std::size_t>(2 * plane + i)];
      float hh, ss, vv;
      detail::rgb_to_hsv(r, g, b, hh, ss, vv);
      detail::hsv_to_rgb(hh + dh, ss, vv, r, g, b);
    }
    detail::clamp01(img);
  }

  if (rng.bernoulli(policy.grayscale_prob)) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const float gray = detail::luminance(img[static_cast<std::size_t>(i)],
                                           img[static_cast<std::size_t>(plane + i)],
                                           img[static_cast<std::size_t>(2 * plane + i)]);
      img[static_cast<std::size_t>(i)] = gray;
      img[static_cast<std::size_t>(plane + i)] = gray;
      img[static_cast<std::size_t>(2 * plane + i)] = gray;
    }
  }

  if (rng.bernoulli(policy.blur_prob)) {
    const double sigma = rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max);
    detail::gaussian_blur(img, out_s, sigma);
  }

  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < plane; ++i) {
      float& v = img[static_cast<std::size_t>(c * plane + i)];
      v = (v - policy.norm_mean[static_cast<std::size_t>(c)]) /
          policy.norm_std[static_cast<std::size_t>(c)];
    }

  return make_tensor<float>({3, out_s, out_s}, std::move(img));
}

inline AugmentedTriplet make_triplet(const ImageU8& anchor, const ImageU8& neighbor,
                                     const AugmentPolicy& policy, Rng& rng) {
  AugmentedTriplet t;
  t.x1 = apply_policy(anchor, policy, rng);
  t.x2 = apply_policy(anchor, policy, rng);
  t.x3 = apply_policy(neighbor, policy, rng);
  return t;
}

inline std::pair<Tensor, Tensor> make_pair_views(const ImageU8& patch, const AugmentPolicy& policy,
                                                 Rng& rng) {
  Tensor a = apply_policy(patch, policy, rng);
  Tensor b = apply_policy(patch, policy, rng);
  return {std::move(a), std::move(b)};
}

// Per-channel pixel statistics over a set of source images, used as the
// dataset normalization constants (stored in the manifest sidecar).
struct ChannelStats {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stdev{0.25f, 0.25f, 0.25f};
};

inline ChannelStats compute_channel_stats(const std::vector<const ImageU8*>& images) {
  require(!images.empty(), "compute_channel_stats: no images");
  std::array<double, 3> acc{}, acc2{};
  std::int64_t n = 0;
  for (const ImageU8* img : images) {
    require(img->channels == 3, "compute_channel_stats: expected 3-channel images");
    for (std::int64_t y = 0; y < img->height; ++y)
      for (std::int64_t x = 0; x < img->width; ++x)
        for (std::int64_t c = 0; c < 3; ++c) {
          const double v = static_cast<double>(img->at(y, x, c)) / 255.0;
          acc[static_cast<std::size_t>(c)] += v;
          acc2[static_cast<std::size_t>(c)] += v * v;
        }
    n += img->height * img->width;
  }
  ChannelStats stats;
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = acc[c] / static_cast<double>(n);
    const double var = std::max(1e-8, acc2[c] / static_cast<double>(n) - mean * mean);
    stats.mean[c] = static_cast<float>(mean);
    stats.stdev[c] = static_cast<float>(std::sqrt(var));
  }
  return stats;
}

}  // namespace trisim
