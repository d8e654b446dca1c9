// SPDX-License-Identifier: Apache-2.0
//
// Frozen-encoder linear probing with k-fold ensembling, the supervised
// from-scratch baseline, and the classification metrics (macro-F1, balanced
// accuracy) derived from a confusion matrix.
#pragma once

#include <algorithm>
#include <optional>
#include <ostream>
#include <set>

#include "trisim/dataset.hpp"
#include "trisim/trainer.hpp"

namespace trisim {

// ---------------------------------------------------------------------------
// Confusion matrix and metrics
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // row = true class, col = predicted class

  explicit ConfusionMatrix(int k = 0) : num_classes(k), counts(static_cast<std::size_t>(k) * k, 0) {}

  std::int64_t& at(int t, int p) { return counts[static_cast<std::size_t>(t) * num_classes + p]; }
  std::int64_t at(int t, int p) const {
    return counts[static_cast<std::size_t>(t) * num_classes + p];
  }
  void add(int t, int p) { at(t, p)++; }
  std::int64_t total() const {
    std::int64_t n = 0;
    for (auto v : counts) n += v;
    return n;
  }
  std::int64_t row_sum(int t) const {
    std::int64_t n = 0;
    for (int p = 0; p < num_classes; ++p) n += at(t, p);
    return n;
  }
  std::int64_t col_sum(int p) const {
    std::int64_t n = 0;
    for (int t = 0; t < num_classes; ++t) n += at(t, p);
    return n;
  }
};

struct PerClassStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

inline std::vector<PerClassStats> per_class_stats(const ConfusionMatrix& cm) {
  std::vector<PerClassStats> out(static_cast<std::size_t>(cm.num_classes));
  for (int c = 0; c < cm.num_classes; ++c) {
    const std::int64_t tp = cm.at(c, c);
    const std::int64_t support = cm.row_sum(c);
    const std::int64_t predicted = cm.col_sum(c);
    PerClassStats& s = out[static_cast<std::size_t>(c)];
    s.support = support;
    s.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    s.recall = support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(support);
    s.f1 = (s.precision + s.recall) == 0.0 ? 0.0
                                           : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return out;
}

// Mean per-class recall; classes with zero support are excluded from the mean.
inline double balanced_accuracy(const ConfusionMatrix& cm) {
  require(cm.total() > 0, "balanced_accuracy: empty confusion matrix");
  double acc = 0.0;
  int counted = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    const std::int64_t support = cm.row_sum(c);
    if (support == 0) continue;
    acc += static_cast<double>(cm.at(c, c)) / static_cast<double>(support);
    counted++;
  }
  return acc / static_cast<double>(counted);
}

// Unweighted mean of per-class F1 (0 for a class whose precision+recall is 0);
// zero-support classes are excluded.
inline double macro_f1(const ConfusionMatrix& cm) {
  require(cm.total() > 0, "macro_f1: empty confusion matrix");
  auto stats = per_class_stats(cm);
  double acc = 0.0;
  int counted = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    if (stats[static_cast<std::size_t>(c)].support == 0) continue;
    acc += stats[static_cast<std::size_t>(c)].f1;
    counted++;
  }
  return acc / static_cast<double>(counted);
}

struct EvalReport {
  ConfusionMatrix confusion;
  std::vector<PerClassStats> per_class;
  double macro_f1_value = 0.0;
  double balanced_accuracy_value = 0.0;

  static EvalReport from_confusion(ConfusionMatrix cm) {
    EvalReport r;
    r.per_class = per_class_stats(cm);
    r.macro_f1_value = macro_f1(cm);
    r.balanced_accuracy_value = balanced_accuracy(cm);
    r.confusion = std::move(cm);
    return r;
  }

  void write_csv(std::ostream& os, const std::vector<std::string>& comments = {}) const {
    os.precision(9);
    for (const auto& c : comments) os << "# " << c << "\n";
    os << "confusion\n";
    for (int t = 0; t < confusion.num_classes; ++t) {
      for (int p = 0; p < confusion.num_classes; ++p) {
        if (p) os << ',';
        os << confusion.at(t, p);
      }
      os << "\n";
    }
    os << "per_class\nclass,precision,recall,f1,support\n";
    for (int c = 0; c < confusion.num_classes; ++c) {
      const auto& s = per_class[static_cast<std::size_t>(c)];
      os << c << ',' << s.precision << ',' << s.recall << ',' << s.f1 << ',' << s.support << "\n";
    }
    os << "aggregate\nmacro_f1,balanced_acc\n" << macro_f1_value << ',' << balanced_accuracy_value
       << "\n";
  }
};

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Stratified k-fold split: per class, a seeded shuffle dealt round-robin, so
// per-fold class proportions stay within one sample of the global ones.
inline std::vector<std::vector<int>> kfold_split(const std::vector<int>& labels, int k,
                                                 std::uint64_t seed) {
  require(k >= 2, "kfold_split: need k >= 2");
  require(!labels.empty(), "kfold_split: empty label set");
  const int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    by_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
  for (const auto& members : by_class)
    require(members.empty() || static_cast<int>(members.size()) >= k,
            "kfold_split: a class has fewer than k samples; stratification impossible");
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  Rng rng(mix_seed(seed, 0xf01d5ULL));
  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[rng.below(i)]);
    for (std::size_t i = 0; i < members.size(); ++i)
      folds[(i + static_cast<std::size_t>(c)) % static_cast<std::size_t>(k)].push_back(members[i]);
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());
  return folds;
}

// Group-holding k-fold split: every item of one source stays in one fold
// (the desk-scale analogue of per-WSI folds). Groups are dealt to the
// currently smallest fold in seeded random order.
inline std::vector<std::vector<int>> kfold_split_grouped(const std::vector<std::string>& groups,
                                                         int k, std::uint64_t seed) {
  require(k >= 2, "kfold_split_grouped: need k >= 2");
  std::map<std::string, std::vector<int>> by_group;
  for (int i = 0; i < static_cast<int>(groups.size()); ++i)
    by_group[groups[static_cast<std::size_t>(i)]].push_back(i);
  require(static_cast<int>(by_group.size()) >= k, "kfold_split_grouped: only ", by_group.size(),
          " groups for ", k, " folds");
  std::vector<std::string> names;
  for (const auto& [name, members] : by_group) names.push_back(name);
  Rng rng(mix_seed(seed, 0x9f01d5ULL));
  for (std::size_t i = names.size(); i > 1; --i) std::swap(names[i - 1], names[rng.below(i)]);
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  for (const auto& name : names) {
    auto smallest = std::min_element(folds.begin(), folds.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    const auto& members = by_group.at(name);
    smallest->insert(smallest->end(), members.begin(), members.end());
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());
  return folds;
}

// Class-balanced subsample of the given fraction; fraction 1.0 is identity.
inline std::vector<int> subset_fraction(const std::vector<int>& labels, double fraction,
                                        std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, "subset_fraction: fraction must lie in (0, 1]");
  require(!labels.empty(), "subset_fraction: empty label set");
  std::vector<int> all(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) all[i] = static_cast<int>(i);
  if (fraction == 1.0) return all;

  const int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    by_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);

  const std::int64_t target = std::llround(fraction * static_cast<double>(labels.size()));
  const std::int64_t base = target / num_classes;
  const std::int64_t rem = target % num_classes;
  Rng rng(mix_seed(seed, 0x5b5e7ULL));
  std::vector<int> out;
  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    std::int64_t quota = base + (c < rem ? 1 : 0);
    require(quota >= 1, "subset_fraction: fraction ", fraction,
            " yields no samples for class ", c);
    require(!members.empty(), "subset_fraction: class ", c, " has no samples");
    quota = std::min<std::int64_t>(quota, static_cast<std::int64_t>(members.size()));
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[rng.below(i)]);
    out.insert(out.end(), members.begin(), members.begin() + quota);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

// Normalize-only view of a patch, area-resized to the requested side (the
// evaluation pipeline never augments).
inline Tensor clean_view(const ImageU8& patch, const DatasetStats& stats,
                         std::int64_t output_size) {
  AugmentPolicy policy = AugmentPolicy::disabled(output_size);
  policy.norm_mean = stats.mean;
  policy.norm_std = stats.stdev;
  Rng rng(0);
  return apply_policy(patch, policy, rng);
}

// Pooled backbone features (pre-projection-head) for the given items, encoded
// in eval mode in fixed-size chunks.
inline Tensor extract_features(EncoderModel& encoder, const LabeledDataset& data,
                               const std::vector<int>& indices, std::int64_t chunk = 64) {
  const std::int64_t s = encoder.config.input_size;
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  require(n > 0, "extract_features: no items");
  const std::int64_t fdim = encoder.config.feature_dim();
  Tensor features = zeros<float>({n, fdim});
  const std::int64_t view_len = 3 * s * s;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t len = std::min(chunk, n - start);
    Tensor batch = zeros<float>({len, 3, s, s});
    std::exception_ptr failure;
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t j = 0; j < len; ++j) {
      try {
        const auto idx = static_cast<std::size_t>(indices[static_cast<std::size_t>(start + j)]);
        Tensor view = clean_view(data.patch(idx), data.stats, s);
        std::copy(view.values.begin(), view.values.end(), batch.values.begin() + j * view_len);
      } catch (...) {
#if defined(_OPENMP)
#pragma omp critical
#endif
        failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    Tape tape;
    Tensor pooled = encode_full(encoder, tape, batch, Mode::eval).features;
    std::copy(pooled.values.begin(), pooled.values.end(),
              features.values.begin() + start * fdim);
  }
  return features;
}

inline Tensor rows_of(const Tensor& features, const std::vector<int>& rows) {
  const std::int64_t d = features.shape[1];
  Tensor out = zeros<float>({static_cast<std::int64_t>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(features.values.begin() + rows[i] * d, d, out.values.begin() + static_cast<std::int64_t>(i) * d);
  return out;
}

// ---------------------------------------------------------------------------
// Linear heads, ensembling
// ---------------------------------------------------------------------------

struct LinearHead {
  Tensor w;  // [F x K]
  Tensor b;  // [K]
  // Optional frozen feature standardization fitted on the head's training
  // fold; empty tensors mean identity.
  Tensor feature_mean;  // [F]
  Tensor feature_std;   // [F]
  int num_classes() const { return static_cast<int>(b.shape[0]); }
};

inline Tensor standardize_features(const LinearHead& head, const Tensor& features) {
  if (head.feature_mean.values.empty()) return features;
  const std::int64_t n = features.shape[0], d = features.shape[1];
  Tensor out = features;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) {
      float& v = out.values[static_cast<std::size_t>(i * d + j)];
      v = (v - head.feature_mean.values[static_cast<std::size_t>(j)]) /
          head.feature_std.values[static_cast<std::size_t>(j)];
    }
  return out;
}

inline std::vector<std::vector<double>> head_probabilities(const LinearHead& head,
                                                           const Tensor& raw_features) {
  Tensor features = standardize_features(head, raw_features);
  const std::int64_t n = features.shape[0];
  const int k = head.num_classes();
  Tape tape;
  Tensor logits = affine(tape, features, head.w, head.b);
  std::vector<std::vector<double>> probs(static_cast<std::size_t>(n),
                                         std::vector<double>(static_cast<std::size_t>(k)));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.values.data() + i * k;
    float m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - m));
    for (int j = 0; j < k; ++j)
      probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          std::exp(static_cast<double>(row[j] - m)) / z;
  }
  return probs;
}

inline int argmax_lowest_tie(const std::vector<double>& probs) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(probs.size()); ++j)
    if (probs[static_cast<std::size_t>(j)] > probs[static_cast<std::size_t>(best)]) best = j;
  return best;
}

struct EnsembleMember {
  EncoderModel* encoder = nullptr;  // members may share an encoder
  const LinearHead* head = nullptr;
};

struct EnsemblePrediction {
  std::vector<std::vector<double>> probabilities;  // mean over members
  std::vector<int> labels;
};

// Per-member softmax probabilities averaged arithmetically; ties resolve to
// the lowest class index.
inline EnsemblePrediction ensemble_predict(const std::vector<EnsembleMember>& members,
                                           const LabeledDataset& data,
                                           const std::vector<int>& indices) {
  require(!members.empty(), "ensemble_predict: no members");
  const int k = members.front().head->num_classes();
  for (const auto& m : members)
    require(m.head->num_classes() == k, "ensemble_predict: heads disagree on the class set (",
            m.head->num_classes(), " vs ", k, ")");

  std::map<EncoderModel*, Tensor> feature_cache;
  EnsemblePrediction out;
  out.probabilities.assign(indices.size(), std::vector<double>(static_cast<std::size_t>(k), 0.0));
  for (const auto& m : members) {
    if (!feature_cache.count(m.encoder))
      feature_cache.emplace(m.encoder, extract_features(*m.encoder, data, indices));
    auto probs = head_probabilities(*m.head, feature_cache.at(m.encoder));
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (int j = 0; j < k; ++j)
        out.probabilities[i][static_cast<std::size_t>(j)] += probs[i][static_cast<std::size_t>(j)];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    for (auto& p : out.probabilities[i]) p *= inv;
    out.labels[i] = argmax_lowest_tie(out.probabilities[i]);
  }
  return out;
}

inline EvalReport evaluate_ensemble(const std::vector<EnsembleMember>& members,
                                    const LabeledDataset& data, const std::vector<int>& indices,
                                    int num_classes) {
  auto pred = ensemble_predict(members, data, indices);
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < indices.size(); ++i)
    cm.add(data.items[static_cast<std::size_t>(indices[i])].label, pred.labels[i]);
  return EvalReport::from_confusion(std::move(cm));
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  double lr = 30.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::int64_t batch_size = 64;
  std::int64_t epochs = 30;
  int folds = 5;
  std::uint64_t seed = 1;
};

namespace detail {

inline ConfusionMatrix score_head(const LinearHead& head, const Tensor& features,
                                  const std::vector<int>& labels, int num_classes) {
  auto probs = head_probabilities(head, features);
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    cm.add(labels[i], argmax_lowest_tie(probs[i]));
  return cm;
}

// SGD training of one linear head on fixed features; returns the best-epoch
// head selected by validation balanced accuracy. Features are standardized
// per dimension with the training fold's statistics (frozen into the head),
// so the verbatim probe learning rate operates at its intended scale.
inline LinearHead train_linear_head(const Tensor& raw_features, const std::vector<int>& labels,
                                    const std::vector<int>& train_idx,
                                    const std::vector<int>& val_idx, int num_classes,
                                    const ProbeConfig& cfg, double* best_acc_out) {
  const std::int64_t fdim = raw_features.shape[1];
  Rng init_rng(mix_seed(cfg.seed, 0x11ead5ULL));
  LinearHead head;
  head.w = detail::he_uniform({fdim, num_classes}, fdim, init_rng);
  head.b = zeros<float>({num_classes});
  head.feature_mean = zeros<float>({fdim});
  head.feature_std = full<float>({fdim}, 1.f);
  {
    Tensor train_rows_t = rows_of(raw_features, train_idx);
    const std::int64_t n = train_rows_t.shape[0];
    for (std::int64_t j = 0; j < fdim; ++j) {
      double acc = 0.0, acc2 = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double v = train_rows_t.values[static_cast<std::size_t>(i * fdim + j)];
        acc += v;
        acc2 += v * v;
      }
      const double mean = acc / static_cast<double>(n);
      const double var = std::max(0.0, acc2 / static_cast<double>(n) - mean * mean);
      head.feature_mean.values[static_cast<std::size_t>(j)] = static_cast<float>(mean);
      head.feature_std.values[static_cast<std::size_t>(j)] =
          static_cast<float>(std::sqrt(var) + 1e-6);
    }
  }
  Tensor features = standardize_features(head, raw_features);

  Tensor val_features = rows_of(features, val_idx);
  std::vector<int> val_labels;
  for (int i : val_idx) val_labels.push_back(labels[static_cast<std::size_t>(i)]);

  ParamMap params;
  detail::add_param(params, "w", head.w);
  detail::add_param(params, "b", head.b, true, true);
  OptimizerState optim;
  optim.momentum_coef = static_cast<float>(cfg.momentum);
  optim.weight_decay = static_cast<float>(cfg.weight_decay);

  const std::int64_t n = static_cast<std::int64_t>(train_idx.size());
  const std::int64_t batch = std::min<std::int64_t>(cfg.batch_size, n);
  const std::int64_t steps_per_epoch = (n + batch - 1) / batch;
  LrSchedule schedule{cfg.lr * 256.0 / static_cast<double>(batch), batch,
                      cfg.epochs * steps_per_epoch};
  // The probe LR is used verbatim (not linearly rescaled): undo the scaling.

  LinearHead best = head;
  double best_acc = -1.0;
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0x0bde2ULL));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::int64_t start = 0; start < n; start += batch) {
      const std::int64_t len = std::min(batch, n - start);
      std::vector<int> rows(order.begin() + start, order.begin() + start + len);
      Tensor fb = rows_of(features, rows);
      std::vector<int> lb;
      for (int i : rows) lb.push_back(labels[static_cast<std::size_t>(i)]);
      Tape tape;
      auto prefs = collect_params("", params);
      watch_params(tape, params);
      Tensor logits = affine(tape, fb, params.at("w").value, params.at("b").value);
      Tensor loss = softmax_cross_entropy(tape, logits, lb);
      tape.backward(loss);
      std::map<std::string, std::vector<float>> grads;
      for (auto& ref : prefs) grads.emplace(ref.name, tape.grad(ref.entry->value).values);
      sgd_step(prefs, grads, optim, cosine_lr_at(schedule, step));
      step++;
    }
    LinearHead current{params.at("w").value, params.at("b").value, head.feature_mean,
                       head.feature_std};
    LinearHead plain{params.at("w").value, params.at("b").value, Tensor{}, Tensor{}};
    ConfusionMatrix cm = score_head(plain, val_features, val_labels, num_classes);
    const double acc = balanced_accuracy(cm);
    if (acc > best_acc) {
      best_acc = acc;
      best = current;
    }
  }
  if (best_acc_out) *best_acc_out = best_acc;
  return best;
}

inline bool folds_cover_classes(const std::vector<std::vector<int>>& folds,
                                const std::vector<int>& labels, int num_classes) {
  for (const auto& fold : folds) {
    std::set<int> seen;
    for (int i : fold) seen.insert(labels[static_cast<std::size_t>(i)]);
    if (static_cast<int>(seen.size()) < num_classes) return false;
  }
  return true;
}

}  // namespace detail

struct ProbeResult {
  std::vector<LinearHead> heads;  // one per fold
  EvalReport validation;          // aggregated over held-out folds
  std::vector<double> fold_val_acc;
  std::vector<std::string> notes;
};

// K-fold linear evaluation of a frozen encoder. Folds hold out whole source
// mosaics when enough sources exist (and classes stay covered); otherwise the
// split falls back to stratified sampling.
inline ProbeResult linear_probe_train(EncoderModel& encoder, const LabeledDataset& data,
                                      const std::vector<int>& subset, const ProbeConfig& cfg) {
  require(!subset.empty(), "linear_probe_train: empty subset");
  const int num_classes = data.num_classes;
  std::vector<int> labels;
  std::vector<std::string> groups;
  for (int i : subset) {
    labels.push_back(data.items[static_cast<std::size_t>(i)].label);
    groups.push_back(data.items[static_cast<std::size_t>(i)].source_id);
  }

  std::set<std::string> distinct(groups.begin(), groups.end());
  std::vector<std::vector<int>> folds;
  ProbeResult result;
  bool ok = false;
  if (static_cast<int>(distinct.size()) >= cfg.folds) {
    folds = kfold_split_grouped(groups, cfg.folds, cfg.seed);
    ok = detail::folds_cover_classes(folds, labels, num_classes);
    if (!ok) {
      result.notes.push_back("grouped folds missed a class; retrying with a reshuffled split");
      folds = kfold_split_grouped(groups, cfg.folds, cfg.seed + 1);
      ok = detail::folds_cover_classes(folds, labels, num_classes);
    }
    if (!ok)
      result.notes.push_back("grouped folds cannot cover every class; using stratified folds");
  }
  if (!ok) {
    folds = kfold_split(labels, cfg.folds, cfg.seed);
    ok = detail::folds_cover_classes(folds, labels, num_classes);
    if (!ok) {
      folds = kfold_split(labels, cfg.folds, cfg.seed + 1);
      ok = detail::folds_cover_classes(folds, labels, num_classes);
    }
    require(ok, "linear_probe_train: folds cannot cover every class even after a retry");
  }

  Tensor features = extract_features(encoder, data, subset);

  ConfusionMatrix aggregate(num_classes);
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<int> train_rows, val_rows;
    for (int g = 0; g < cfg.folds; ++g)
      for (int i : folds[static_cast<std::size_t>(g)])
        (g == f ? val_rows : train_rows).push_back(i);
    double fold_acc = 0.0;
    ProbeConfig fold_cfg = cfg;
    fold_cfg.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(f), 0xf01dULL);
    LinearHead head = detail::train_linear_head(features, labels, train_rows, val_rows,
                                                num_classes, fold_cfg, &fold_acc);
    Tensor val_features = rows_of(features, val_rows);
    std::vector<int> val_labels;
    for (int i : val_rows) val_labels.push_back(labels[static_cast<std::size_t>(i)]);
    ConfusionMatrix cm = detail::score_head(head, val_features, val_labels, num_classes);
    for (int t = 0; t < num_classes; ++t)
      for (int p = 0; p < num_classes; ++p) aggregate.at(t, p) += cm.at(t, p);
    result.heads.push_back(std::move(head));
    result.fold_val_acc.push_back(fold_acc);
  }
  result.validation = EvalReport::from_confusion(std::move(aggregate));
  return result;
}

// ---------------------------------------------------------------------------
// Supervised baseline (trained end to end)
// ---------------------------------------------------------------------------

struct SupervisedConfig {
  double base_lr = 0.05;  // linearly rescaled by batch/256
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t batch_size = 64;
  std::int64_t epochs = 100;
  int folds = 5;
  std::uint64_t seed = 1;
  EncoderConfig encoder;
};

struct SupervisedModel {
  EncoderModel encoder;
  LinearHead head;
};

struct SupervisedResult {
  std::vector<SupervisedModel> models;  // one per fold
  EvalReport validation;
  std::vector<double> fold_val_acc;
  std::vector<double> fold_train_acc;  // final-epoch model's train-side accuracy
};

namespace detail {

inline ConfusionMatrix score_supervised(EncoderModel& encoder, const LinearHead& head,
                                        const LabeledDataset& data, const std::vector<int>& items,
                                        int num_classes) {
  Tensor features = extract_features(encoder, data, items);
  std::vector<int> labels;
  for (int i : items) labels.push_back(data.items[static_cast<std::size_t>(i)].label);
  return score_head(head, features, labels, num_classes);
}

}  // namespace detail

// Five-fold end-to-end training of the backbone plus a linear classifier on
// pooled features; per fold the best epoch is selected on the held-out fold.
inline SupervisedResult supervised_baseline_train(const LabeledDataset& data,
                                                  const std::vector<int>& subset,
                                                  const SupervisedConfig& cfg) {
  require(!subset.empty(), "supervised_baseline_train: empty subset");
  const int num_classes = data.num_classes;
  std::vector<int> labels;
  for (int i : subset) labels.push_back(data.items[static_cast<std::size_t>(i)].label);

  auto folds = kfold_split(labels, cfg.folds, cfg.seed);
  if (!detail::folds_cover_classes(folds, labels, num_classes))
    folds = kfold_split(labels, cfg.folds, cfg.seed + 1);
  require(detail::folds_cover_classes(folds, labels, num_classes),
          "supervised_baseline_train: folds cannot cover every class");

  const std::int64_t s = cfg.encoder.input_size;
  const std::int64_t view_len = 3 * s * s;
  SupervisedResult result;
  ConfusionMatrix aggregate(num_classes);

  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<int> train_rows, val_rows;
    for (int g = 0; g < cfg.folds; ++g)
      for (int i : folds[static_cast<std::size_t>(g)])
        (g == f ? val_rows : train_rows).push_back(i);
    std::vector<int> train_items, val_items;
    for (int i : train_rows) train_items.push_back(subset[static_cast<std::size_t>(i)]);
    for (int i : val_rows) val_items.push_back(subset[static_cast<std::size_t>(i)]);

    EncoderModel encoder =
        build_encoder(cfg.encoder, mix_seed(cfg.seed, static_cast<std::uint64_t>(f), 0x5afeULL));
    Rng head_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(f), 0x6eadULL));
    ParamMap head_params;
    detail::add_param(head_params, "head.w",
                      detail::he_uniform({cfg.encoder.feature_dim(), num_classes},
                                         cfg.encoder.feature_dim(), head_rng));
    detail::add_param(head_params, "head.b", zeros<float>({num_classes}), true, true);

    OptimizerState optim;
    optim.momentum_coef = static_cast<float>(cfg.momentum);
    optim.weight_decay = static_cast<float>(cfg.weight_decay);
    const std::int64_t n = static_cast<std::int64_t>(train_items.size());
    const std::int64_t batch = std::min<std::int64_t>(cfg.batch_size, n);
    const std::int64_t steps_per_epoch = (n + batch - 1) / batch;
    LrSchedule schedule{cfg.base_lr, batch, cfg.epochs * steps_per_epoch};

    EncoderModel best_encoder = encoder;
    LinearHead best_head{head_params.at("head.w").value, head_params.at("head.b").value};
    double best_acc = -1.0;
    std::int64_t step = 0;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::vector<int> order = train_items;
      Rng rng(mix_seed(cfg.seed, (static_cast<std::uint64_t>(f) << 32) |
                                     static_cast<std::uint64_t>(epoch),
                       0x0bde3ULL));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      for (std::int64_t start = 0; start < n; start += batch) {
        const std::int64_t len = std::min(batch, n - start);
        if (len < 2) break;  // train-mode BN needs at least two samples
        Tensor xb = zeros<float>({len, 3, s, s});
        std::vector<int> lb;
        for (std::int64_t j = 0; j < len; ++j) {
          const int item = order[static_cast<std::size_t>(start + j)];
          Tensor view = clean_view(data.patch(static_cast<std::size_t>(item)), data.stats, s);
          std::copy(view.values.begin(), view.values.end(), xb.values.begin() + j * view_len);
          lb.push_back(data.items[static_cast<std::size_t>(item)].label);
        }
        Tape tape;
        watch_params(tape, encoder.params);
        watch_params(tape, head_params);
        Tensor features = encode_full(encoder, tape, xb, Mode::train).features;
        Tensor logits =
            affine(tape, features, head_params.at("head.w").value, head_params.at("head.b").value);
        Tensor loss = softmax_cross_entropy(tape, logits, lb);
        tape.backward(loss);
        auto prefs = collect_params("encoder.", encoder.params);
        auto hrefs = collect_params("", head_params);
        prefs.insert(prefs.end(), hrefs.begin(), hrefs.end());
        std::map<std::string, std::vector<float>> grads;
        for (auto& ref : prefs) grads.emplace(ref.name, tape.grad(ref.entry->value).values);
        sgd_step(prefs, grads, optim, cosine_lr_at(schedule, std::min(step, schedule.total_steps)));
        step++;
      }
      LinearHead current{head_params.at("head.w").value, head_params.at("head.b").value};
      ConfusionMatrix cm =
          detail::score_supervised(encoder, current, data, val_items, num_classes);
      const double acc = balanced_accuracy(cm);
      if (acc > best_acc) {
        best_acc = acc;
        best_encoder = encoder;
        best_head = current;
      }
    }
    ConfusionMatrix cm =
        detail::score_supervised(best_encoder, best_head, data, val_items, num_classes);
    for (int t = 0; t < num_classes; ++t)
      for (int p = 0; p < num_classes; ++p) aggregate.at(t, p) += cm.at(t, p);
    LinearHead final_head{head_params.at("head.w").value, head_params.at("head.b").value};
    ConfusionMatrix train_cm =
        detail::score_supervised(encoder, final_head, data, train_items, num_classes);
    result.fold_train_acc.push_back(balanced_accuracy(train_cm));
    result.models.push_back({std::move(best_encoder), std::move(best_head)});
    result.fold_val_acc.push_back(best_acc);
  }
  result.validation = EvalReport::from_confusion(std::move(aggregate));
  return result;
}

// ---------------------------------------------------------------------------
// Head and bundle persistence (checkpoint container format)
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kHeadsKindProbe = 0;
inline constexpr std::uint64_t kHeadsKindSupervised = 1;

inline void save_probe_heads(const std::string& path, const std::vector<LinearHead>& heads,
                             int num_classes) {
  std::vector<CkptEntry> entries;
  entries.push_back(CkptEntry::counter("meta.kind", kHeadsKindProbe));
  entries.push_back(CkptEntry::counter("meta.num_classes", static_cast<std::uint64_t>(num_classes)));
  entries.push_back(CkptEntry::counter("meta.folds", heads.size()));
  for (std::size_t i = 0; i < heads.size(); ++i) {
    entries.push_back(CkptEntry::tensor(cat("head", i, ".w"), heads[i].w));
    entries.push_back(CkptEntry::tensor(cat("head", i, ".b"), heads[i].b));
    if (!heads[i].feature_mean.values.empty()) {
      entries.push_back(CkptEntry::tensor(cat("head", i, ".mean"), heads[i].feature_mean));
      entries.push_back(CkptEntry::tensor(cat("head", i, ".std"), heads[i].feature_std));
    }
  }
  write_ckpt(path, entries);
}

struct LoadedHeads {
  std::uint64_t kind = kHeadsKindProbe;
  int num_classes = 0;
  std::vector<LinearHead> heads;                  // probe heads
  std::vector<SupervisedModel> supervised;        // supervised bundle models
};

inline void save_supervised_bundle(const std::string& path,
                                   const std::vector<SupervisedModel>& models,
                                   const EncoderConfig& config, int num_classes) {
  std::vector<CkptEntry> entries;
  entries.push_back(CkptEntry::counter("meta.kind", kHeadsKindSupervised));
  entries.push_back(CkptEntry::counter("meta.num_classes", static_cast<std::uint64_t>(num_classes)));
  entries.push_back(CkptEntry::counter("meta.folds", models.size()));
  append_encoder_config(entries, "config.", config);
  for (std::size_t i = 0; i < models.size(); ++i) {
    append_param_entries(entries, cat("model", i, ".encoder."), models[i].encoder.params);
    entries.push_back(CkptEntry::tensor(cat("model", i, ".head.w"), models[i].head.w));
    entries.push_back(CkptEntry::tensor(cat("model", i, ".head.b"), models[i].head.b));
  }
  write_ckpt(path, entries);
}

inline LoadedHeads load_heads(const std::string& path) {
  auto entries = read_ckpt(path);
  LoadedHeads out;
  out.kind = find_entry(entries, "meta.kind").u64[0];
  out.num_classes = static_cast<int>(find_entry(entries, "meta.num_classes").u64[0]);
  const std::uint64_t folds = find_entry(entries, "meta.folds").u64[0];
  if (out.kind == kHeadsKindProbe) {
    for (std::uint64_t i = 0; i < folds; ++i) {
      LinearHead head;
      const auto& w = find_entry(entries, cat("head", i, ".w"));
      const auto& b = find_entry(entries, cat("head", i, ".b"));
      head.w = make_tensor<float>(w.shape, w.f32);
      head.b = make_tensor<float>(b.shape, b.f32);
      if (has_entry(entries, cat("head", i, ".mean"))) {
        const auto& m = find_entry(entries, cat("head", i, ".mean"));
        const auto& sd = find_entry(entries, cat("head", i, ".std"));
        head.feature_mean = make_tensor<float>(m.shape, m.f32);
        head.feature_std = make_tensor<float>(sd.shape, sd.f32);
      }
      out.heads.push_back(std::move(head));
    }
  } else {
    io_require(out.kind == kHeadsKindSupervised, "heads file ", path, ": unknown kind ", out.kind);
    EncoderConfig config = read_encoder_config(entries, "config.");
    for (std::uint64_t i = 0; i < folds; ++i) {
      SupervisedModel model;
      model.encoder = build_encoder(config, 0);
      restore_param_map(entries, cat("model", i, ".encoder."), model.encoder.params);
      const auto& w = find_entry(entries, cat("model", i, ".head.w"));
      const auto& b = find_entry(entries, cat("model", i, ".head.b"));
      model.head.w = make_tensor<float>(w.shape, w.f32);
      model.head.b = make_tensor<float>(b.shape, b.f32);
      out.supervised.push_back(std::move(model));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Collapse diagnostic
// ---------------------------------------------------------------------------

// Mean over dimensions of the per-dimension standard deviation of the
// l2-normalized embedding rows; constant embeddings give 0.
inline double embedding_std_of(const Tensor& embeddings) {
  require(embeddings.shape.size() == 2 && embeddings.shape[0] >= 2,
          "embedding_std: needs BxD embeddings with B >= 2");
  Tape tape;
  Tensor yn = l2_normalize(tape, embeddings);
  const std::int64_t n = yn.shape[0], d = yn.shape[1];
  double acc = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += yn.values[static_cast<std::size_t>(i * d + j)];
    mean /= static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double dv = yn.values[static_cast<std::size_t>(i * d + j)] - mean;
      var += dv * dv;
    }
    acc += std::sqrt(var / static_cast<double>(n));
  }
  return acc / static_cast<double>(d);
}

inline double embedding_std(EncoderModel& encoder, const Tensor& batch) {
  require(batch.shape.size() == 4 && batch.shape[0] >= 2, "embedding_std: batch of >= 2 required");
  Tape tape;
  return embedding_std_of(encode(encoder, tape, batch, Mode::eval));
}

}  // namespace trisim
