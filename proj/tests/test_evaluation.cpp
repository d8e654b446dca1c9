// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "trisim/evaluation.hpp"
#include "trisim/mosaic.hpp"
#include "trisim/verify.hpp"

using namespace trisim;

namespace {

// In-memory labeled dataset of mosaic tiles (every tile of every mosaic).
LabeledDataset tiny_labeled_dataset(int mosaics, std::uint64_t seed, std::int64_t patch = 16,
                                    std::int64_t grid_dim = 8) {
  LabeledDataset data;
  MosaicSpec spec;
  spec.patch_size = patch;
  spec.rows = grid_dim;
  spec.cols = grid_dim;
  spec.region_smoothness = 6.0;
  spec.adjacency_target = 0.5;
  for (int i = 0; i < mosaics; ++i) {
    auto m = generate_synthetic_mosaic(spec, seed + static_cast<std::uint64_t>(i),
                                       cat("lab_", i));
    const std::size_t gi = data.grids.size();
    data.grid_index[m.grid.source_id] = gi;
    data.grids.push_back(m.grid);
    for (std::int64_t r = 0; r < grid_dim; ++r)
      for (std::int64_t c = 0; c < grid_dim; ++c) {
        LabeledItem item;
        item.source_id = m.grid.source_id;
        item.grid = gi;
        item.row = r;
        item.col = c;
        item.label = m.grid.label_at(r, c);
        data.items.push_back(std::move(item));
        data.num_classes = std::max(data.num_classes, m.grid.label_at(r, c) + 1);
      }
  }
  data.stats.patch_size = patch;
  data.stats.classes = data.num_classes;
  return data;
}

std::vector<int> all_indices(const LabeledDataset& data) {
  std::vector<int> idx(data.items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return idx;
}

EncoderConfig tiny_encoder() {
  EncoderConfig cfg;
  cfg.input_size = 16;
  cfg.backbone_blocks = {{8, 2}, {16, 2}};
  cfg.projection_dims = {32, 32, 16};
  return cfg;
}

}  // namespace

TEST_CASE("balanced accuracy worked values") {
  ConfusionMatrix perfect(3);
  perfect.at(0, 0) = 5;
  perfect.at(1, 1) = 2;
  perfect.at(2, 2) = 9;
  CHECK(balanced_accuracy(perfect) == 1.0);
  CHECK(macro_f1(perfect) == 1.0);

  ConfusionMatrix cm(2);
  cm.at(0, 0) = 1;
  cm.at(0, 1) = 1;
  cm.at(1, 1) = 2;
  CHECK(balanced_accuracy(cm) == 0.75);
  CHECK_THAT(macro_f1(cm), Catch::Matchers::WithinAbs(11.0 / 15.0, 1e-15));

  ConfusionMatrix empty(2);
  CHECK_THROWS(balanced_accuracy(empty));
  CHECK_THROWS(macro_f1(empty));
}

TEST_CASE("uniform random predictions give balanced accuracy near 1/K") {
  const int k = 4;
  Rng rng(33);
  ConfusionMatrix cm(k);
  for (int i = 0; i < 10000; ++i)
    cm.add(static_cast<int>(rng.below(k)), static_cast<int>(rng.below(k)));
  // sigma of the mean per-class recall at n = 10000
  const double sigma = std::sqrt(0.25 * 0.75 / (10000.0 / k) / k);
  CHECK(std::abs(balanced_accuracy(cm) - 0.25) < 3.0 * sigma);
}

TEST_CASE("metrics match the independent per-sample oracle exactly") {
  auto report = verify::run_metrics_suite();
  for (const auto& c : report.checks) {
    INFO(c.name << " max_err " << c.max_err);
    CHECK(c.pass);
  }
}

TEST_CASE("a zero-support class changes neither metric") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 3;
  cm.at(0, 1) = 1;
  cm.at(1, 0) = 2;
  cm.at(1, 1) = 6;
  ConfusionMatrix padded(3);  // class 2 never appears
  for (int t = 0; t < 2; ++t)
    for (int p = 0; p < 2; ++p) padded.at(t, p) = cm.at(t, p);
  CHECK(balanced_accuracy(cm) == balanced_accuracy(padded));
  CHECK(macro_f1(cm) == macro_f1(padded));
}

TEST_CASE("EvalReport aggregates are recomputable from the stored confusion") {
  Rng rng(12);
  ConfusionMatrix cm(5);
  for (int t = 0; t < 5; ++t)
    for (int p = 0; p < 5; ++p) cm.at(t, p) = static_cast<std::int64_t>(rng.below(9));
  auto report = EvalReport::from_confusion(cm);
  CHECK(report.macro_f1_value == macro_f1(report.confusion));
  CHECK(report.balanced_accuracy_value == balanced_accuracy(report.confusion));

  std::ostringstream os;
  report.write_csv(os, {"suite=test"});
  const std::string text = os.str();
  CHECK(text.find("confusion\n") != std::string::npos);
  CHECK(text.find("macro_f1,balanced_acc") != std::string::npos);
}

TEST_CASE("stratified k-fold split is a deterministic partition with balanced proportions") {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 40 + 10 * c; ++i) labels.push_back(c);
  auto folds = kfold_split(labels, 5, 7);
  REQUIRE(folds.size() == 5);

  std::vector<int> seen(labels.size(), 0);
  for (const auto& fold : folds)
    for (int i : fold) seen[static_cast<std::size_t>(i)]++;
  for (int s : seen) CHECK(s == 1);  // disjoint and covering

  for (int c = 0; c < 3; ++c) {
    const double global = (40.0 + 10 * c) / 5.0;
    for (const auto& fold : folds) {
      int count = 0;
      for (int i : fold)
        if (labels[static_cast<std::size_t>(i)] == c) count++;
      CHECK(std::abs(count - global) <= 1.0);
    }
  }

  auto again = kfold_split(labels, 5, 7);
  CHECK(folds == again);
  auto other = kfold_split(labels, 5, 8);
  CHECK(folds != other);

  std::vector<int> scarce{0, 0, 0, 1, 1, 1, 1, 1};
  CHECK_THROWS(kfold_split(scarce, 5, 1));  // class 0 has 3 < 5 samples
}

TEST_CASE("grouped k-fold split keeps each source in one fold") {
  std::vector<std::string> groups;
  for (int g = 0; g < 7; ++g)
    for (int i = 0; i < 5; ++i) groups.push_back(cat("src", g));
  auto folds = kfold_split_grouped(groups, 5, 3);
  REQUIRE(folds.size() == 5);
  for (const auto& fold : folds) {
    std::set<std::string> sources;
    for (int i : fold) sources.insert(groups[static_cast<std::size_t>(i)]);
    for (const auto& s : sources)
      for (std::size_t i = 0; i < groups.size(); ++i)
        if (groups[i] == s)
          CHECK(std::find(fold.begin(), fold.end(), static_cast<int>(i)) != fold.end());
  }
  CHECK_THROWS(kfold_split_grouped(groups, 8, 1));  // only 7 groups
}

TEST_CASE("subset_fraction balances classes") {
  std::vector<int> labels;
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 100; ++i) labels.push_back(c);

  auto full = subset_fraction(labels, 1.0, 5);
  CHECK(full.size() == labels.size());

  auto quarter = subset_fraction(labels, 0.25, 5);
  CHECK(quarter.size() == 200);
  std::vector<int> counts(8, 0);
  for (int i : quarter) counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]++;
  for (int c : counts) CHECK(c == 25);

  auto odd = subset_fraction(labels, 0.101, 6);
  std::vector<int> oc(8, 0);
  for (int i : odd) oc[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]++;
  const auto [mn, mx] = std::minmax_element(oc.begin(), oc.end());
  CHECK(*mx - *mn <= 1);

  CHECK_THROWS(subset_fraction(labels, 0.001, 5));  // under one sample per class
  CHECK_THROWS(subset_fraction(labels, 0.0, 5));
}

TEST_CASE("ensemble averaging and tie-breaking") {
  auto data = tiny_labeled_dataset(1, 50);
  auto subset = all_indices(data);
  auto encoder = build_encoder(tiny_encoder(), 3);
  const std::int64_t fdim = encoder.config.feature_dim();

  // Feature-independent heads: zero weights, biases = log(target probability).
  auto head_with_probs = [&](std::vector<double> probs) {
    LinearHead head;
    head.w = zeros<float>({fdim, static_cast<std::int64_t>(probs.size())});
    head.b = zeros<float>({static_cast<std::int64_t>(probs.size())});
    for (std::size_t j = 0; j < probs.size(); ++j)
      head.b.values[j] = static_cast<float>(std::log(probs[j]));
    return head;
  };
  LinearHead h1 = head_with_probs({0.6, 0.4});
  LinearHead h2 = head_with_probs({0.2, 0.8});

  std::vector<int> two{0, 1};
  auto pred = ensemble_predict({{&encoder, &h1}, {&encoder, &h2}}, data, two);
  for (std::size_t i = 0; i < pred.probabilities.size(); ++i) {
    CHECK_THAT(pred.probabilities[i][0], Catch::Matchers::WithinAbs(0.4, 1e-6));
    CHECK_THAT(pred.probabilities[i][1], Catch::Matchers::WithinAbs(0.6, 1e-6));
    CHECK(pred.labels[i] == 1);
    const double total = pred.probabilities[i][0] + pred.probabilities[i][1];
    CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-6));
  }

  // Identical heads reduce to a single head.
  auto solo = ensemble_predict({{&encoder, &h1}}, data, two);
  auto dup = ensemble_predict({{&encoder, &h1}, {&encoder, &h1}}, data, two);
  CHECK(solo.labels == dup.labels);
  for (std::size_t i = 0; i < solo.probabilities.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK_THAT(dup.probabilities[i][j],
                 Catch::Matchers::WithinAbs(solo.probabilities[i][j], 1e-12));

  // Exact tie resolves to the lowest class index.
  LinearHead tie = head_with_probs({0.5, 0.5});
  auto tied = ensemble_predict({{&encoder, &tie}}, data, two);
  CHECK(tied.labels[0] == 0);

  // Class-set mismatch is rejected.
  LinearHead three = head_with_probs({0.3, 0.3, 0.4});
  CHECK_THROWS(ensemble_predict({{&encoder, &h1}, {&encoder, &three}}, data, two));
}

TEST_CASE("probe reaches full train accuracy on linearly separable features") {
  // Separable synthetic features: class c has +2 in coordinate c.
  const int k = 3, per_class = 20;
  Rng rng(9);
  Tensor features = zeros<float>({k * per_class, 8});
  std::vector<int> labels;
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < per_class; ++i) {
      const std::int64_t row = c * per_class + i;
      for (std::int64_t j = 0; j < 8; ++j)
        features.values[static_cast<std::size_t>(row * 8 + j)] =
            static_cast<float>(rng.uniform(-0.3, 0.3)) + (j == c ? 2.f : 0.f);
      labels.push_back(c);
    }
  std::vector<int> train_idx, val_idx;
  for (int i = 0; i < k * per_class; ++i) (i % 5 == 0 ? val_idx : train_idx).push_back(i);

  ProbeConfig cfg;
  cfg.epochs = 20;
  cfg.lr = 1.0;
  double val_acc = 0.0;
  auto head = detail::train_linear_head(features, labels, train_idx, val_idx, k, cfg, &val_acc);
  auto cm = detail::score_head(head, rows_of(features, train_idx), [&] {
    std::vector<int> l;
    for (int i : train_idx) l.push_back(labels[static_cast<std::size_t>(i)]);
    return l;
  }(), k);
  CHECK(balanced_accuracy(cm) == 1.0);
  CHECK(val_acc == 1.0);
}

TEST_CASE("linear probe leaves the encoder bit-identical and yields one head per fold") {
  auto data = tiny_labeled_dataset(6, 77);
  auto encoder = build_encoder(tiny_encoder(), 11);
  auto before = encoder.params;

  ProbeConfig cfg;
  cfg.epochs = 3;
  cfg.folds = 5;
  auto result = linear_probe_train(encoder, data, all_indices(data), cfg);
  CHECK(result.heads.size() == 5);
  CHECK(result.fold_val_acc.size() == 5);
  CHECK(result.validation.confusion.total() == static_cast<std::int64_t>(data.items.size()));
  for (const auto& [name, p] : encoder.params)
    CHECK(p.value.values == before.at(name).value.values);
}

TEST_CASE("supervised baseline reaches full train accuracy on a 64-sample subset") {
  auto data = tiny_labeled_dataset(2, 91);
  std::vector<int> labels;
  for (const auto& item : data.items) labels.push_back(item.label);
  auto subset = subset_fraction(labels, 0.5, 3);
  subset.resize(64);
  // ensure all classes survive the truncation
  std::set<int> classes;
  for (int i : subset) classes.insert(labels[static_cast<std::size_t>(i)]);
  REQUIRE(static_cast<int>(classes.size()) == data.num_classes);

  SupervisedConfig cfg;
  cfg.encoder = tiny_encoder();
  cfg.epochs = 80;
  cfg.folds = 2;
  cfg.base_lr = 0.8;
  cfg.seed = 5;
  auto result = supervised_baseline_train(data, subset, cfg);
  REQUIRE(result.models.size() == 2);
  REQUIRE(result.fold_train_acc.size() == 2);
  for (double acc : result.fold_train_acc) {
    INFO("fold train accuracy " << acc);
    CHECK(acc == 1.0);
  }

  // End-to-end gradients reached the backbone: parameters moved.
  auto fresh = build_encoder(cfg.encoder, mix_seed(cfg.seed, 0, 0x5afeULL));
  bool moved = false;
  for (const auto& [name, p] : result.models[0].encoder.params)
    if (p.trainable && p.value.values != fresh.params.at(name).value.values) moved = true;
  CHECK(moved);
}

TEST_CASE("embedding_std diagnoses collapse and rescaling invariance") {
  // Identical rows collapse to zero spread.
  Tensor collapsed = zeros<float>({8, 16});
  for (std::int64_t i = 0; i < 8; ++i)
    for (std::int64_t j = 0; j < 16; ++j)
      collapsed.values[static_cast<std::size_t>(i * 16 + j)] = static_cast<float>(j) + 1.f;
  CHECK(embedding_std_of(collapsed) == 0.0);

  // Random unit Gaussian rows, D = 128: spread near 1/sqrt(128).
  Rng rng(3);
  Tensor gauss = zeros<float>({512, 128});
  for (auto& v : gauss.values) v = static_cast<float>(rng.normal());
  const double spread = embedding_std_of(gauss);
  const double expected = 1.0 / std::sqrt(128.0);
  INFO("spread " << spread << " expected " << expected);
  CHECK(spread > 0.8 * expected);
  CHECK(spread < 1.2 * expected);

  // Invariant to positive rescaling of the raw embeddings.
  Tensor scaled = gauss;
  for (auto& v : scaled.values) v *= 37.5f;
  CHECK_THAT(embedding_std_of(scaled), Catch::Matchers::WithinAbs(spread, 1e-6));

  // Encoder wrapper: duplicated inputs give identical embeddings, zero spread.
  auto encoder = build_encoder(tiny_encoder(), 2);
  Tensor batch = zeros<float>({4, 3, 16, 16});
  Rng prng(8);
  for (std::int64_t j = 0; j < 3 * 16 * 16; ++j) {
    const float v = static_cast<float>(prng.uniform(-1.0, 1.0));
    for (std::int64_t i = 0; i < 4; ++i)
      batch.values[static_cast<std::size_t>(i * 3 * 16 * 16 + j)] = v;
  }
  CHECK(embedding_std(encoder, batch) == 0.0);
}
