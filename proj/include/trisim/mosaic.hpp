// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale synthetic ground truth: tile grids whose labels form contiguous
// regions (so adjacent tiles usually share a class, mirroring the tissue-type
// premise) and whose classes render as distinct parametric textures.
//
// The class signal lives in the per-channel texture-energy pattern (which
// channel carries the oscillation, and how much), while the per-tile nuisance
// draws (base color, morphology, orientation, frequency, phase) vary freely
// within a class. Hand features (channel means/variances) separate classes on
// clean patches, yet two tiles of one class can look very different, which is
// exactly the regime where pulling adjacent tiles together pays off.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "trisim/rng.hpp"
#include "trisim/sampler.hpp"

namespace trisim {

struct ClassTexture {
  std::array<double, 3> channel_weight;  // relative oscillation energy per channel
  double amplitude;                      // oscillation amplitude in [0,1] pixel units
};

struct TextureParams {
  double base_lo = 0.30;   // per-tile base color range (each channel independently)
  double base_hi = 0.70;
  double amp_jitter = 0.32;  // relative per-tile amplitude jitter
  double period_lo = 9.0;    // oscillation period range in pixels (blur-safe band)
  double period_hi = 18.0;
  // Per-tile distractor oscillation on a random channel, relative to the
  // class amplitude. Inflates within-class appearance diversity.
  double distractor_lo = 0.08;
  double distractor_hi = 0.22;
  std::vector<ClassTexture> classes{
      {{1.00, 0.20, 0.20}, 0.30},
      {{0.20, 1.00, 0.20}, 0.30},
      {{0.20, 0.20, 1.00}, 0.30},
      {{0.55, 0.55, 0.55}, 0.11},
      {{1.00, 1.00, 0.15}, 0.30},
      {{0.15, 1.00, 1.00}, 0.30},
      {{1.00, 0.15, 1.00}, 0.30},
      {{0.55, 0.55, 0.55}, 0.45},
  };
};

struct MosaicSpec {
  int classes = 4;
  std::int64_t rows = 32;
  std::int64_t cols = 32;
  std::int64_t patch_size = 32;
  double region_smoothness = 12.0;  // expected class-region diameter in tiles
  double adjacency_target = 0.9;    // required same-class fraction over adjacent pairs
  TextureParams texture;
};

// Fraction of 8-neighbor tile pairs whose endpoints share a class label.
inline double same_class_adjacency(const TileGrid& grid) {
  require(grid.has_labels(), "same_class_adjacency: grid has no labels");
  static constexpr std::array<std::pair<int, int>, 4> kForward{{{0, 1}, {1, -1}, {1, 0}, {1, 1}}};
  std::int64_t total = 0, same = 0;
  for (std::int64_t r = 0; r < grid.rows; ++r)
    for (std::int64_t c = 0; c < grid.cols; ++c)
      for (const auto& [dr, dc] : kForward) {
        if (!grid.in_bounds(r + dr, c + dc)) continue;
        total++;
        if (grid.label_at(r, c) == grid.label_at(r + dr, c + dc)) same++;
      }
  require(total > 0, "same_class_adjacency: grid has no adjacent pairs");
  return static_cast<double>(same) / static_cast<double>(total);
}

struct Mosaic {
  std::shared_ptr<const ImageU8> image;
  TileGrid grid;  // labels filled
  double adjacency_fraction = 0.0;
};

namespace detail {

// Voronoi labeling of the tile grid from randomly placed class sites. Every
// class owns at least one site; cells are convex, so regions are contiguous.
inline std::vector<int> voronoi_labels(const MosaicSpec& spec, Rng& rng) {
  const std::int64_t tiles = spec.rows * spec.cols;
  const double diam = std::max(2.0, spec.region_smoothness);
  std::int64_t sites = std::max<std::int64_t>(
      spec.classes, static_cast<std::int64_t>(std::llround(static_cast<double>(tiles) / (diam * diam))));
  sites = std::min(sites, tiles);
  std::vector<std::pair<std::int64_t, std::int64_t>> pos;
  std::vector<int> site_class;
  for (std::int64_t i = 0; i < sites; ++i) {
    // Best-candidate placement spreads sites apart, which keeps class-region
    // boundaries short and the same-class adjacency fraction high.
    std::pair<std::int64_t, std::int64_t> best{0, 0};
    std::int64_t best_score = -1;
    for (int cand = 0; cand < 8; ++cand) {
      const std::pair<std::int64_t, std::int64_t> c{
          static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(spec.rows))),
          static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(spec.cols)))};
      std::int64_t score = std::numeric_limits<std::int64_t>::max();
      for (const auto& p : pos) {
        const std::int64_t dr = c.first - p.first, dc = c.second - p.second;
        score = std::min(score, dr * dr + dc * dc);
      }
      if (pos.empty()) score = 0;
      if (score > best_score) {
        best_score = score;
        best = c;
      }
      if (pos.empty()) break;
    }
    pos.push_back(best);
    // The first K sites cover every class; the rest draw uniformly.
    site_class.push_back(i < spec.classes
                             ? static_cast<int>(i)
                             : static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.classes))));
  }
  std::vector<int> labels(static_cast<std::size_t>(tiles));
  for (std::int64_t r = 0; r < spec.rows; ++r)
    for (std::int64_t c = 0; c < spec.cols; ++c) {
      std::int64_t best = -1;
      std::int64_t best_d = 0;
      for (std::int64_t s = 0; s < sites; ++s) {
        const std::int64_t dr = r - pos[static_cast<std::size_t>(s)].first;
        const std::int64_t dc = c - pos[static_cast<std::size_t>(s)].second;
        const std::int64_t d = dr * dr + dc * dc;
        if (best < 0 || d < best_d) {
          best = s;
          best_d = d;
        }
      }
      labels[static_cast<std::size_t>(r * spec.cols + c)] = site_class[static_cast<std::size_t>(best)];
    }
  return labels;
}

// Renders one tile's texture into the mosaic at (row, col).
inline void render_tile(ImageU8& img, const MosaicSpec& spec, std::int64_t row, std::int64_t col,
                        int cls, Rng& rng) {
  const TextureParams& tx = spec.texture;
  const ClassTexture& ct = tx.classes[static_cast<std::size_t>(cls)];
  const std::int64_t p = spec.patch_size;

  const int morphology = static_cast<int>(rng.below(3));
  const double period1 = rng.uniform(tx.period_lo, tx.period_hi);
  const double period2 = rng.uniform(tx.period_lo, tx.period_hi);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double phi1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phi2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::array<double, 3> base{};
  for (auto& b : base) b = rng.uniform(tx.base_lo, tx.base_hi);
  const double amp = ct.amplitude * rng.uniform(1.0 - tx.amp_jitter, 1.0 + tx.amp_jitter);

  // Distractor oscillation: independent morphology draws on one random
  // channel, scaled off the class amplitude.
  const int d_morph = static_cast<int>(rng.below(3));
  const int d_channel = static_cast<int>(rng.below(3));
  const double d_amp = ct.amplitude * rng.uniform(tx.distractor_lo, tx.distractor_hi);
  const double d_period1 = rng.uniform(tx.period_lo, tx.period_hi);
  const double d_period2 = rng.uniform(tx.period_lo, tx.period_hi);
  const double d_theta = rng.uniform(0.0, std::numbers::pi);
  const double d_phi1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double d_phi2 = rng.uniform(0.0, 2.0 * std::numbers::pi);

  const double ux = std::cos(theta), uy = std::sin(theta);
  const double dux = std::cos(d_theta), duy = std::sin(d_theta);
  const double two_pi = 2.0 * std::numbers::pi;
  // Morphology scale factors equalize variance (stripes sit at var 1/2, the
  // two product/mixture fields at 1/4), so class amplitude alone sets energy.
  const double kDotScale = std::numbers::sqrt2;
  auto field = [two_pi, kDotScale](int kind, double a, double b, double p1, double p2, double f1,
                                   double f2) {
    switch (kind) {
      case 0: return std::sin(two_pi * a / p1 + f1);
      case 1:
        return kDotScale * std::sin(two_pi * a / p1 + f1) * std::sin(two_pi * b / p2 + f2);
      default:
        return (std::sin(two_pi * a / p1 + f1) + std::sin(two_pi * b / p2 + f2)) /
               std::numbers::sqrt2;
    }
  };

  for (std::int64_t y = 0; y < p; ++y) {
    for (std::int64_t x = 0; x < p; ++x) {
      const double a = ux * x + uy * y;
      const double b = -uy * x + ux * y;
      const double t = field(morphology, a, b, period1, period2, phi1, phi2);
      const double da = dux * x + duy * y;
      const double db = -duy * x + dux * y;
      const double dt = field(d_morph, da, db, d_period1, d_period2, d_phi1, d_phi2);
      for (std::int64_t c = 0; c < 3; ++c) {
        double v = base[static_cast<std::size_t>(c)] +
                   amp * ct.channel_weight[static_cast<std::size_t>(c)] * t;
        if (c == d_channel) v += d_amp * dt;
        img.at(row * p + y, col * p + x, c) = static_cast<std::uint8_t>(
            std::clamp<long>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0), 0L, 255L));
      }
    }
  }
}

}  // namespace detail

inline Mosaic generate_synthetic_mosaic(const MosaicSpec& spec, std::uint64_t seed,
                                        const std::string& source_id) {
  require(spec.classes >= 2, "mosaic: need at least 2 classes, got ", spec.classes);
  require(spec.classes <= static_cast<int>(spec.texture.classes.size()),
          "mosaic: no texture defined for ", spec.classes, " classes (max ",
          spec.texture.classes.size(), ")");
  require(spec.rows >= 1 && spec.cols >= 1 && spec.rows * spec.cols >= spec.classes,
          "mosaic: grid too small for ", spec.classes, " classes");
  require(spec.patch_size >= 4, "mosaic: patch_size must be at least 4");
  require(spec.adjacency_target >= 0.0 && spec.adjacency_target <= 1.0,
          "mosaic: adjacency target must lie in [0,1]");

  // Deterministic retries: region layout is resampled until the adjacency
  // target holds; the sequence of attempts is a pure function of the seed.
  std::vector<int> labels;
  double achieved = 0.0, best = -1.0;
  bool ok = false;
  for (std::uint64_t attempt = 0; attempt < 24 && !ok; ++attempt) {
    Rng rng(mix_seed(seed, attempt, 0x7a615ULL));
    labels = detail::voronoi_labels(spec, rng);
    TileGrid probe;
    probe.rows = spec.rows;
    probe.cols = spec.cols;
    probe.labels = labels;
    achieved = spec.rows * spec.cols == 1 ? 1.0 : same_class_adjacency(probe);
    best = std::max(best, achieved);
    ok = achieved >= spec.adjacency_target;
  }
  require(ok, "mosaic: adjacency target ", spec.adjacency_target,
          " unreachable for this grid; best achieved fraction ", best);

  auto image = std::make_shared<ImageU8>(
      make_image(spec.cols * spec.patch_size, spec.rows * spec.patch_size, 3));
  for (std::int64_t r = 0; r < spec.rows; ++r)
    for (std::int64_t c = 0; c < spec.cols; ++c) {
      Rng tile_rng(mix_seed(seed, static_cast<std::uint64_t>(r * spec.cols + c), 0x7e47ULL));
      detail::render_tile(*image, spec, r, c, labels[static_cast<std::size_t>(r * spec.cols + c)],
                          tile_rng);
    }

  Mosaic out;
  out.image = image;
  out.grid = tile_image(image, source_id, spec.patch_size);
  out.grid.labels = std::move(labels);
  out.adjacency_fraction = achieved;
  return out;
}

}  // namespace trisim
