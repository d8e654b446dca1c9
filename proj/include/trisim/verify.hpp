// SPDX-License-Identifier: Apache-2.0
//
// Self-check suites behind the `verify` command: finite-difference checks for
// every autodiff primitive and the composite losses, a dual-implementation
// metrics check, and the adjacent-pair sampler laws.
#pragma once

#include <iomanip>
#include <ostream>

#include "trisim/evaluation.hpp"
#include "trisim/grad_check.hpp"
#include "trisim/losses.hpp"
#include "trisim/mosaic.hpp"

namespace trisim::verify {

struct Check {
  std::string name;
  double max_err = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  void print(std::ostream& os) const {
    for (const auto& c : checks)
      os << (c.pass ? "  ok  " : " FAIL ") << suite << "/" << c.name << "  max_err="
         << std::setprecision(4) << std::scientific << c.max_err << " threshold=" << c.threshold
         << std::defaultfloat << "\n";
    os << (pass() ? "PASS " : "FAIL ") << suite << " (" << checks.size() << " checks)\n";
  }
};

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
TensorT<S> rand_tensor(const Shape& shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
  TensorT<S> t = zeros<S>(shape);
  for (auto& v : t.values) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <typename S>
TensorT<S> rand_tensor_off_kink(const Shape& shape, Rng& rng) {
  TensorT<S> t = zeros<S>(shape);
  for (auto& v : t.values) {
    const double mag = rng.uniform(0.2, 1.5);
    v = static_cast<S>(rng.bernoulli(0.5) ? mag : -mag);
  }
  return t;
}

template <typename S>
void run_gradcheck_for(std::vector<Check>& checks, const char* tag) {
  const S eps = std::is_same_v<S, double> ? S(1e-6) : S(1e-3);
  const S tol = std::is_same_v<S, double> ? S(1e-5) : S(1e-2);
  auto record = [&](const char* name, const GradCheckReport<S>& rep) {
    checks.push_back({cat(name, ".", tag), static_cast<double>(rep.max_rel_error),
                      static_cast<double>(tol), rep.pass});
  };
  auto agg = [&](const char* name, std::initializer_list<GradCheckReport<S>> reps) {
    GradCheckReport<S> worst;
    worst.pass = true;
    for (const auto& r : reps) {
      worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
      worst.pass = worst.pass && r.pass;
    }
    record(name, worst);
  };

  Rng rng(0xbead5);
  {
    std::initializer_list<GradCheckReport<S>> reps = {
        grad_check<S>([](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          return sum(t, add(t, in[0], in[1]));
        }, {rand_tensor<S>({3, 4}, rng), rand_tensor<S>({3, 4}, rng)}, eps, tol),
        grad_check<S>([](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          return sum(t, sub(t, in[0], in[1]));
        }, {rand_tensor<S>({3, 4}, rng), rand_tensor<S>({3, 4}, rng)}, eps, tol),
        grad_check<S>([](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          return sum(t, mul(t, in[0], in[1]));
        }, {rand_tensor<S>({3, 4}, rng), rand_tensor<S>({3, 4}, rng)}, eps, tol),
        grad_check<S>([](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          return sum(t, scalar_mul(t, in[0], S(1.7)));
        }, {rand_tensor<S>({3, 4}, rng)}, eps, tol)};
    agg("elementwise", reps);
  }
  record("matmul", grad_check<S>(
      [](TapeT<S>& t, std::vector<TensorT<S>>& in) { return sum(t, matmul(t, in[0], in[1])); },
      {rand_tensor<S>({3, 5}, rng), rand_tensor<S>({5, 4}, rng)}, eps, tol));
  record("conv2d", grad_check<S>(
      [](TapeT<S>& t, std::vector<TensorT<S>>& in) {
        return sum(t, conv2d(t, in[0], in[1], 2, 1));
      },
      {rand_tensor<S>({2, 2, 5, 5}, rng), rand_tensor<S>({3, 2, 3, 3}, rng)}, eps, tol));
  record("relu", grad_check<S>(
      [](TapeT<S>& t, std::vector<TensorT<S>>& in) { return sum(t, relu(t, in[0])); },
      {rand_tensor_off_kink<S>({4, 6}, rng)}, eps, tol));
  record("global_average_pool", grad_check<S>(
      [](TapeT<S>& t, std::vector<TensorT<S>>& in) {
        return sum(t, global_average_pool(t, in[0]));
      },
      {rand_tensor<S>({2, 3, 4, 4}, rng)}, eps, tol));
  record("affine", grad_check<S>(
      [](TapeT<S>& t, std::vector<TensorT<S>>& in) {
        auto y = affine(t, in[0], in[1], in[2]);
        return sum(t, mul(t, y, y));
      },
      {rand_tensor<S>({3, 5}, rng), rand_tensor<S>({5, 4}, rng), rand_tensor<S>({4}, rng)}, eps,
      tol));
  {
    std::initializer_list<GradCheckReport<S>> reps = {
        grad_check<S>([](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto rm = zeros<S>({in[0].shape[1]});
          auto rv = full<S>({in[0].shape[1]}, S(1));
          auto y = batch_norm(t, in[0], in[1], in[2], rm, rv, Mode::train);
          return sum(t, mul(t, y, y));
        }, {rand_tensor<S>({5, 4}, rng), rand_tensor<S>({4}, rng, 0.5, 1.5),
            rand_tensor<S>({4}, rng)}, eps, tol),
        grad_check<S>([](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto rm = zeros<S>({in[0].shape[1]});
          auto rv = full<S>({in[0].shape[1]}, S(1));
          auto y = batch_norm(t, in[0], in[1], in[2], rm, rv, Mode::eval);
          return sum(t, mul(t, y, y));
        }, {rand_tensor<S>({5, 4}, rng), rand_tensor<S>({4}, rng, 0.5, 1.5),
            rand_tensor<S>({4}, rng)}, eps, tol)};
    agg("batch_norm", reps);
  }
  record("l2_normalize", grad_check<S>(
      [](TapeT<S>& t, std::vector<TensorT<S>>& in) {
        auto n = l2_normalize(t, in[0]);
        return sum(t, mul(t, n, n));
      },
      {rand_tensor_off_kink<S>({4, 6}, rng)}, eps, tol));
  record("softmax_cross_entropy", grad_check<S>(
      [](TapeT<S>& t, std::vector<TensorT<S>>& in) {
        return softmax_cross_entropy(t, in[0], {0, 2, 1, 3});
      },
      {rand_tensor<S>({4, 4}, rng)}, eps, tol));
  // stop_gradient against the value-equivalent cut function.
  {
    auto x = rand_tensor_off_kink<S>({3, 4}, rng);
    auto frozen = x.values;
    record("stop_gradient", grad_check<S>(
        [](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          return sum(t, mul(t, in[0], stop_gradient(in[0])));
        },
        [frozen](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto c = make_tensor<S>(in[0].shape, frozen);
          return sum(t, mul(t, in[0], c));
        },
        {x}, eps, tol));
  }

  // Composite cosine losses. Numeric sides freeze the stop-gradient branches
  // at the base point.
  record("neg_cosine", grad_check<S>(
      [](TapeT<S>& t, std::vector<TensorT<S>>& in) { return neg_cosine(t, in[0], in[1]); },
      {rand_tensor_off_kink<S>({4, 6}, rng), rand_tensor_off_kink<S>({4, 6}, rng)}, eps, tol));
  {
    auto y1 = rand_tensor_off_kink<S>({3, 5}, rng);
    auto y2 = rand_tensor_off_kink<S>({3, 5}, rng);
    auto y3 = rand_tensor_off_kink<S>({3, 5}, rng);
    auto z1 = rand_tensor_off_kink<S>({3, 5}, rng);
    auto z2 = rand_tensor_off_kink<S>({3, 5}, rng);
    auto z3 = rand_tensor_off_kink<S>({3, 5}, rng);
    const auto y1v = y1.values, y2v = y2.values, y3v = y3.values;

    auto pack = [](std::vector<TensorT<S>>& in) {
      TripletBatchT<S> b;
      b.y1 = in[0];
      b.y2 = in[1];
      b.y3 = in[2];
      b.z1 = in[3];
      b.z2 = in[4];
      b.z3 = in[5];
      return b;
    };
    auto pack_frozen = [y1v, y2v, y3v](std::vector<TensorT<S>>& in) {
      // stop_gradient branches replaced by constants at the base point
      TripletBatchT<S> b;
      b.y1 = make_tensor<S>(in[0].shape, y1v);
      b.y2 = make_tensor<S>(in[1].shape, y2v);
      b.y3 = make_tensor<S>(in[2].shape, y3v);
      b.z1 = in[3];
      b.z2 = in[4];
      b.z3 = in[5];
      return b;
    };
    std::vector<TensorT<S>> point{y1, y2, y3, z1, z2, z3};
    record("intra_sample_loss", grad_check<S>(
        [&pack](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto b = pack(in);
          return intra_sample_loss(t, b);
        },
        [&pack_frozen](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto b = pack_frozen(in);
          return intra_sample_loss(t, b);
        },
        point, eps, tol));
    record("inter_sample_loss", grad_check<S>(
        [&pack](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto b = pack(in);
          return inter_sample_loss(t, b);
        },
        [&pack_frozen](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto b = pack_frozen(in);
          return inter_sample_loss(t, b);
        },
        point, eps, tol));
    record("simtriplet_loss", grad_check<S>(
        [&pack](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto b = pack(in);
          return simtriplet_loss(t, b).total;
        },
        [&pack_frozen](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto b = pack_frozen(in);
          return simtriplet_loss(t, b).total;
        },
        point, eps, tol));
    record("simsiam_loss", grad_check<S>(
        [](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          return simsiam_loss(t, in[0], in[1], in[2], in[3]);
        },
        [y1v, y2v](TapeT<S>& t, std::vector<TensorT<S>>& in) {
          auto cy1 = make_tensor<S>(in[0].shape, y1v);
          auto cy2 = make_tensor<S>(in[1].shape, y2v);
          auto a = neg_cosine(t, cy1, in[3]);
          auto b = neg_cosine(t, cy2, in[2]);
          return scalar_mul(t, add(t, a, b), S(0.5));
        },
        {y1, y2, z1, z2}, eps, tol));
  }
}

}  // namespace detail

// Finite-difference verification of every primitive and the composite losses,
// in 32-bit and in the 64-bit verification instantiation.
inline SuiteReport run_gradcheck() {
  SuiteReport report;
  report.suite = "gradcheck";
  detail::run_gradcheck_for<float>(report.checks, "f32");
  detail::run_gradcheck_for<double>(report.checks, "f64");
  return report;
}

// ---------------------------------------------------------------------------
// Metrics oracle (independent per-sample re-implementation)
// ---------------------------------------------------------------------------

namespace oracle {

// Expands the matrix into (true, predicted) pairs and counts one-vs-all.
inline std::vector<std::pair<int, int>> expand(const ConfusionMatrix& cm) {
  std::vector<std::pair<int, int>> pairs;
  for (int t = 0; t < cm.num_classes; ++t)
    for (int p = 0; p < cm.num_classes; ++p)
      for (std::int64_t i = 0; i < cm.at(t, p); ++i) pairs.emplace_back(t, p);
  return pairs;
}

inline double balanced_accuracy(const ConfusionMatrix& cm) {
  auto pairs = expand(cm);
  double acc = 0.0;
  int counted = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    std::int64_t tp = 0, fn = 0;
    for (const auto& [t, p] : pairs) {
      if (t == c && p == c) tp++;
      if (t == c && p != c) fn++;
    }
    if (tp + fn == 0) continue;
    acc += static_cast<double>(tp) / static_cast<double>(tp + fn);
    counted++;
  }
  return acc / static_cast<double>(counted);
}

inline double macro_f1(const ConfusionMatrix& cm) {
  auto pairs = expand(cm);
  double acc = 0.0;
  int counted = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& [t, p] : pairs) {
      if (t == c && p == c) tp++;
      if (t != c && p == c) fp++;
      if (t == c && p != c) fn++;
    }
    if (tp + fn == 0) continue;
    const double precision =
        tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double f1 =
        precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    acc += f1;
    counted++;
  }
  return acc / static_cast<double>(counted);
}

}  // namespace oracle

inline SuiteReport run_metrics_suite() {
  SuiteReport report;
  report.suite = "metrics";

  // Worked example: cm = [[1,1],[0,2]].
  ConfusionMatrix worked(2);
  worked.at(0, 0) = 1;
  worked.at(0, 1) = 1;
  worked.at(1, 1) = 2;
  const double ba = balanced_accuracy(worked);
  const double f1 = macro_f1(worked);
  report.checks.push_back(
      {"worked_example.balanced_acc", std::abs(ba - 0.75), 1e-12, std::abs(ba - 0.75) < 1e-12});
  report.checks.push_back({"worked_example.macro_f1", std::abs(f1 - 11.0 / 15.0), 1e-12,
                           std::abs(f1 - 11.0 / 15.0) < 1e-12});

  // 100 random confusion matrices against the per-sample oracle, exactly.
  Rng rng(0x0e7a1);
  bool all_exact = true;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(6));
    ConfusionMatrix cm(k);
    for (int t = 0; t < k; ++t)
      for (int p = 0; p < k; ++p) cm.at(t, p) = static_cast<std::int64_t>(rng.below(20));
    if (cm.total() == 0) cm.at(0, 0) = 1;
    const double d1 = std::abs(balanced_accuracy(cm) - oracle::balanced_accuracy(cm));
    const double d2 = std::abs(macro_f1(cm) - oracle::macro_f1(cm));
    worst = std::max({worst, d1, d2});
    if (d1 != 0.0 || d2 != 0.0) all_exact = false;
  }
  report.checks.push_back({"random_vs_oracle.exact", worst, 0.0, all_exact});
  return report;
}

// ---------------------------------------------------------------------------
// Sampler laws
// ---------------------------------------------------------------------------

inline SuiteReport run_sampler_suite() {
  SuiteReport report;
  report.suite = "sampler";

  // Chebyshev-distance-1 and in-bounds over 1e5 draws on random grids.
  {
    Rng shape_rng(0x5a31);
    bool ok = true;
    std::int64_t draws = 0;
    while (draws < 100000) {
      const std::int64_t rows = 2 + static_cast<std::int64_t>(shape_rng.below(7));
      const std::int64_t cols = 1 + static_cast<std::int64_t>(shape_rng.below(8));
      auto img = std::make_shared<ImageU8>(make_image(cols * 4, rows * 4, 3));
      auto grid = tile_image(img, "verify", 4);
      Rng rng(mix_seed(0xd3a15ULL, static_cast<std::uint64_t>(draws)));
      for (int i = 0; i < 5000 && draws < 100000; ++i, ++draws) {
        auto pair = sample_adjacent_pair(grid, rng);
        if (chebyshev_distance(pair) != 1 || !grid.in_bounds(pair.anchor_row, pair.anchor_col) ||
            !grid.in_bounds(pair.neighbor_row, pair.neighbor_col))
          ok = false;
      }
    }
    report.checks.push_back({"chebyshev_distance_1.1e5_draws", ok ? 0.0 : 1.0, 0.0, ok});
  }

  // Chi-square uniformity over the 8-neighborhood of an interior anchor,
  // 8000 draws, critical value for df = 7 at p = 0.01.
  {
    auto img = std::make_shared<ImageU8>(make_image(12, 12, 3));
    auto grid = tile_image(img, "verify", 4);
    Rng rng(0xc41);
    std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> counts;
    const int draws = 8000;
    for (int i = 0; i < draws; ++i) counts[sample_neighbor(grid, 1, 1, rng)]++;
    double stat = 0.0;
    const double expected = draws / 8.0;
    for (const auto& [pos, n] : counts) {
      const double d = static_cast<double>(n) - expected;
      stat += d * d / expected;
    }
    const double critical = 18.4753;
    report.checks.push_back(
        {"chi_square_uniformity.interior_anchor", stat, critical,
         counts.size() == 8 && stat < critical});
  }

  // Corner anchors expose exactly three candidates.
  {
    auto img = std::make_shared<ImageU8>(make_image(12, 12, 3));
    auto grid = tile_image(img, "verify", 4);
    Rng rng(7);
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    for (int i = 0; i < 400; ++i) seen.insert(sample_neighbor(grid, 0, 0, rng));
    const bool ok = seen == std::set<std::pair<std::int64_t, std::int64_t>>{{0, 1}, {1, 0}, {1, 1}};
    report.checks.push_back({"corner_anchor.three_candidates",
                             static_cast<double>(seen.size()), 3.0, ok});
  }
  return report;
}

}  // namespace trisim::verify
