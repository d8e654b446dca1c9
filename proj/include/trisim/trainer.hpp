// SPDX-License-Identifier: Apache-2.0
//
// Momentum-SGD pretraining loops for the triplet and two-view methods, with
// linear-scaled base LR, cosine decay, decoupled weight-decay exemptions for
// BN parameters and biases, and an optional reduced-precision mode (32-bit
// master weights, 16-bit activation storage and parameter copies, dynamic
// loss scaling).
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>

#include "trisim/augment.hpp"
#include "trisim/checkpoint.hpp"
#include "trisim/dataset.hpp"
#include "trisim/losses.hpp"
#include "trisim/model.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace trisim {

// ---------------------------------------------------------------------------
// LR schedule
// ---------------------------------------------------------------------------

inline double scaled_lr(double base_lr, std::int64_t batch_size) {
  require(base_lr > 0.0 && batch_size > 0, "scaled_lr: base_lr and batch_size must be positive");
  return base_lr * static_cast<double>(batch_size) / 256.0;
}

struct LrSchedule {
  double base_lr = 0.05;
  std::int64_t batch_size = 128;
  std::int64_t total_steps = 0;

  double scaled() const { return scaled_lr(base_lr, batch_size); }
};

inline double cosine_lr_at(const LrSchedule& schedule, std::int64_t t) {
  require(schedule.total_steps > 0, "cosine_lr_at: schedule has no steps");
  require(t >= 0 && t <= schedule.total_steps, "cosine_lr_at: step ", t, " outside [0, ",
          schedule.total_steps, "]");
  const double frac = static_cast<double>(t) / static_cast<double>(schedule.total_steps);
  return 0.5 * schedule.scaled() * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
  std::map<std::string, std::vector<float>> momentum;
  float momentum_coef = 0.9f;
  float weight_decay = 1e-4f;
  std::int64_t step = 0;
};

struct ParamRef {
  std::string name;
  ParamEntry* entry = nullptr;
};

inline std::vector<ParamRef> collect_params(const std::string& prefix, ParamMap& params) {
  std::vector<ParamRef> out;
  for (auto& [name, p] : params)
    if (p.trainable) out.push_back({prefix + name, &p});
  return out;
}

// g' = g + wd*p (wd skipped for decay-exempt parameters); buf = m*buf + g';
// p <- p - lr*buf.
inline void sgd_step(const std::vector<ParamRef>& params,
                     const std::map<std::string, std::vector<float>>& grads,
                     OptimizerState& state, double lr) {
  for (const ParamRef& ref : params) {
    auto git = grads.find(ref.name);
    require(git != grads.end(), "sgd_step: missing gradient for ", ref.name);
    const std::vector<float>& g = git->second;
    std::vector<float>& p = ref.entry->value.values;
    require(g.size() == p.size(), "sgd_step: gradient/parameter shape mismatch for ", ref.name);
    for (float v : g)
      require(std::isfinite(v), "sgd_step: non-finite gradient in parameter ", ref.name);
    auto& buf = state.momentum[ref.name];
    if (buf.empty()) buf.assign(p.size(), 0.f);
    require(buf.size() == p.size(), "sgd_step: momentum buffer shape mismatch for ", ref.name);
    const float wd = ref.entry->decay_exempt ? 0.f : state.weight_decay;
    const float m = state.momentum_coef;
    const float flr = static_cast<float>(lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gp = g[i] + wd * p[i];
      buf[i] = m * buf[i] + gp;
      p[i] -= flr * buf[i];
    }
  }
  state.step++;
}

// ---------------------------------------------------------------------------
// Reduced precision
// ---------------------------------------------------------------------------

enum class Precision { full, reduced };

inline Precision parse_precision(const std::string& s) {
  if (s == "full") return Precision::full;
  if (s == "reduced") return Precision::reduced;
  throw std::invalid_argument(cat("unknown precision mode '", s, "' (expected full|reduced)"));
}

struct LossScaleState {
  float scale = 32768.f;  // 2^15
  std::int64_t clean_steps = 0;
  std::int64_t growth_interval = 1000;
};

// Dynamic loss-scale policy: halve on overflow (and skip the step), double
// after growth_interval clean steps. Returns true when the step must be
// skipped.
inline bool loss_scale_update(LossScaleState& state, bool overflow) {
  if (overflow) {
    state.scale = std::max(1.f, state.scale * 0.5f);
    state.clean_steps = 0;
    return true;
  }
  state.clean_steps++;
  if (state.clean_steps >= state.growth_interval) {
    state.scale = std::min(state.scale * 2.f, 16777216.f);
    state.clean_steps = 0;
  }
  return false;
}

struct ReducedTensor {
  Shape shape;
  std::vector<std::uint16_t> values;
};

inline ReducedTensor cast_reduced(const Tensor& t) {
  ReducedTensor out;
  out.shape = t.shape;
  out.values.resize(t.values.size());
  for (std::size_t i = 0; i < t.values.size(); ++i) out.values[i] = float_to_half(t.values[i]);
  return out;
}

inline Tensor restore_full(const ReducedTensor& t) {
  Tensor out;
  out.shape = t.shape;
  out.values.resize(t.values.size());
  for (std::size_t i = 0; i < t.values.size(); ++i) out.values[i] = half_to_float(t.values[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

enum class Method { simtriplet, simsiam };

inline Method parse_method(const std::string& s) {
  if (s == "simtriplet") return Method::simtriplet;
  if (s == "simsiam") return Method::simsiam;
  throw std::invalid_argument(cat("unknown method '", s, "' (expected simtriplet|simsiam)"));
}

inline const char* method_name(Method m) {
  return m == Method::simtriplet ? "simtriplet" : "simsiam";
}

struct PretrainConfig {
  Method method = Method::simtriplet;
  std::int64_t epochs = 400;
  std::int64_t batch_size = 128;
  Precision precision = Precision::full;
  std::uint64_t seed = 1;
  double base_lr = 0.05;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  EncoderConfig encoder;
  std::int64_t predictor_bottleneck_div = 4;
  std::int64_t checkpoint_every_epochs = 0;  // 0: final checkpoint only
  std::string out_dir;                       // required when checkpoints are written
  std::int64_t divergence_patience = 50;     // consecutive positive-loss steps after warm start

  AugmentPolicy policy_for(const DatasetStats& stats) const {
    AugmentPolicy policy;
    policy.output_size = encoder.input_size;
    policy.norm_mean = stats.mean;
    policy.norm_std = stats.stdev;
    return policy;
  }
};

struct StepStats {
  std::int64_t step = 0;
  double lr = 0.0;
  float l_intra = 0.f;
  float l_inter = 0.f;  // NaN for the two-view method (written as an empty CSV field)
  float l_total = 0.f;
  bool skipped = false;  // reduced-precision overflow backoff
  std::size_t activation_bytes = 0;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(const PairDataset& data, PretrainConfig cfg)
      : data_(&data), cfg_(std::move(cfg)) {
    require(!data.pairs.empty(), "pretrain: dataset has no pairs");
    require(cfg_.batch_size > 0 && cfg_.epochs > 0, "pretrain: bad epochs/batch config");
    require(steps_per_epoch() > 0, "pretrain: batch size ", cfg_.batch_size,
            " exceeds dataset size ", data.pairs.size());
    encoder_ = build_encoder(cfg_.encoder, cfg_.seed);
    const std::int64_t d = cfg_.encoder.output_dim();
    predictor_ = build_predictor({d, std::max<std::int64_t>(1, d / cfg_.predictor_bottleneck_div), d},
                                 cfg_.seed + 1);
    optim_.momentum_coef = cfg_.momentum;
    optim_.weight_decay = cfg_.weight_decay;
    schedule_ = LrSchedule{cfg_.base_lr, cfg_.batch_size, total_steps()};
    policy_ = cfg_.policy_for(data.stats);
  }

  std::int64_t steps_per_epoch() const {
    return static_cast<std::int64_t>(data_->pairs.size()) / cfg_.batch_size;
  }
  std::int64_t total_steps() const { return steps_per_epoch() * cfg_.epochs; }

  EncoderModel& encoder() { return encoder_; }
  PredictorModel& predictor() { return predictor_; }
  const PretrainConfig& config() const { return cfg_; }
  const OptimizerState& optimizer() const { return optim_; }
  const LossScaleState& loss_scale() const { return scale_; }

  StepStats run_step() {
    const std::int64_t t = optim_.step;
    require(t < total_steps(), "run_step: schedule exhausted at step ", t);
    const std::int64_t spe = steps_per_epoch();
    const std::int64_t epoch = t / spe;
    const std::int64_t batch_index = t % spe;
    refresh_epoch_order(epoch);

    const bool reduced = cfg_.precision == Precision::reduced;
    const std::int64_t b = cfg_.batch_size;
    const std::int64_t s = cfg_.encoder.input_size;
    const bool triplet = cfg_.method == Method::simtriplet;

    Tensor x1 = zeros<float>({b, 3, s, s});
    Tensor x2 = zeros<float>({b, 3, s, s});
    Tensor x3 = triplet ? zeros<float>({b, 3, s, s}) : Tensor{};
    const std::int64_t view_len = 3 * s * s;
    std::exception_ptr failure;
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t j = 0; j < b; ++j) {
      try {
        const std::uint32_t pair_idx = epoch_order_[static_cast<std::size_t>(batch_index * b + j)];
        const PatchPair& pair = data_->pairs[pair_idx];
        const TileGrid& grid = data_->grid_for(pair);
        Rng view_rng(mix_seed(cfg_.seed, (static_cast<std::uint64_t>(epoch) << 32) | pair_idx,
                              0xa06e47ULL));
        const ImageU8 anchor =
            extract_patch(grid, pair.anchor_row, pair.anchor_col, grid.patch_size);
        if (triplet) {
          const ImageU8 neighbor =
              extract_patch(grid, pair.neighbor_row, pair.neighbor_col, grid.patch_size);
          AugmentedTriplet views = make_triplet(anchor, neighbor, policy_, view_rng);
          std::copy(views.x1.values.begin(), views.x1.values.end(),
                    x1.values.begin() + j * view_len);
          std::copy(views.x2.values.begin(), views.x2.values.end(),
                    x2.values.begin() + j * view_len);
          std::copy(views.x3.values.begin(), views.x3.values.end(),
                    x3.values.begin() + j * view_len);
        } else {
          auto [v1, v2] = make_pair_views(anchor, policy_, view_rng);
          std::copy(v1.values.begin(), v1.values.end(), x1.values.begin() + j * view_len);
          std::copy(v2.values.begin(), v2.values.end(), x2.values.begin() + j * view_len);
        }
      } catch (...) {
#if defined(_OPENMP)
#pragma omp critical
#endif
        failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);

    if (triplet) return train_step_simtriplet(x1, x2, x3, cosine_lr_at(schedule_, t));
    return train_step_simsiam(x1, x2, cosine_lr_at(schedule_, t));
  }

  // One optimization step on a prebuilt batch of augmented triplet views:
  // three encoder passes, three predictor passes, one backward on the total
  // loss, one SGD update.
  StepStats train_step_simtriplet(const Tensor& x1, const Tensor& x2, const Tensor& x3,
                                  double lr) {
    return step_on_views(&x1, &x2, &x3, lr);
  }

  StepStats train_step_simsiam(const Tensor& x1, const Tensor& x2, double lr) {
    return step_on_views(&x1, &x2, nullptr, lr);
  }

  void save(const std::string& path) const {
    std::vector<CkptEntry> entries;
    append_encoder_config(entries, "config.", cfg_.encoder);
    {
      CkptEntry pdims;
      pdims.name = "config.predictor_dims";
      pdims.dtype = CkptDtype::u64;
      pdims.shape = {3};
      for (auto d : predictor_.dims) pdims.u64.push_back(static_cast<std::uint64_t>(d));
      entries.push_back(std::move(pdims));
    }
    entries.push_back(CkptEntry::counter("meta.method",
                                         cfg_.method == Method::simtriplet ? 0 : 1));
    entries.push_back(CkptEntry::counter("optim.step", static_cast<std::uint64_t>(optim_.step)));
    entries.push_back(CkptEntry::counter("scale.clean_steps",
                                         static_cast<std::uint64_t>(scale_.clean_steps)));
    entries.push_back(CkptEntry::tensor("scale.loss_scale",
                                        make_tensor<float>({1}, {scale_.scale})));
    append_param_entries(entries, "encoder.", encoder_.params);
    append_param_entries(entries, "predictor.", predictor_.params);
    for (const auto& [name, buf] : optim_.momentum)
      entries.push_back(CkptEntry::tensor(
          "optim.momentum." + name,
          make_tensor<float>({static_cast<std::int64_t>(buf.size())}, buf)));
    write_ckpt(path, entries);
  }

  void restore(const std::vector<CkptEntry>& entries) {
    restore_param_map(entries, "encoder.", encoder_.params);
    restore_param_map(entries, "predictor.", predictor_.params);
    optim_.momentum.clear();
    for (const auto& e : entries)
      if (e.name.rfind("optim.momentum.", 0) == 0)
        optim_.momentum[e.name.substr(15)] = e.f32;
    optim_.step = static_cast<std::int64_t>(find_entry(entries, "optim.step").u64[0]);
    scale_.clean_steps = static_cast<std::int64_t>(find_entry(entries, "scale.clean_steps").u64[0]);
    scale_.scale = find_entry(entries, "scale.loss_scale").f32[0];
    cur_epoch_ = -1;
  }

 private:
  StepStats step_on_views(const Tensor* x1, const Tensor* x2, const Tensor* x3, double lr) {
    const bool reduced = cfg_.precision == Precision::reduced;
    const bool triplet = x3 != nullptr;
    const std::int64_t t = optim_.step;

    Tape tape;
    tape.set_reduced(reduced);

    // Reduced mode runs the forward/backward on binary16 parameter copies;
    // the 32-bit masters only ever see the optimizer update.
    std::map<std::string, std::vector<float>> masters;
    if (reduced) {
      for (auto& [name, p] : encoder_.params)
        if (p.trainable) {
          masters["encoder." + name] = p.value.values;
          for (auto& v : p.value.values) v = half_round_trip(v);
        }
      for (auto& [name, p] : predictor_.params)
        if (p.trainable) {
          masters["predictor." + name] = p.value.values;
          for (auto& v : p.value.values) v = half_round_trip(v);
        }
    }

    watch_params(tape, encoder_.params);
    watch_params(tape, predictor_.params);

    StepStats stats;
    stats.step = t;
    stats.lr = lr;

    Tensor loss_total;
    if (triplet) {
      TripletBatch batch;
      batch.y1 = encode(encoder_, tape, *x1, Mode::train);
      batch.y2 = encode(encoder_, tape, *x2, Mode::train);
      batch.y3 = encode(encoder_, tape, *x3, Mode::train);
      batch.z1 = predict(predictor_, tape, batch.y1);
      batch.z2 = predict(predictor_, tape, batch.y2);
      batch.z3 = predict(predictor_, tape, batch.y3);
      TripletLoss loss = simtriplet_loss(tape, batch);
      stats.l_intra = loss.intra.scalar();
      stats.l_inter = loss.inter.scalar();
      stats.l_total = loss.total.scalar();
      loss_total = loss.total;
    } else {
      Tensor y1 = encode(encoder_, tape, *x1, Mode::train);
      Tensor y2 = encode(encoder_, tape, *x2, Mode::train);
      Tensor z1 = predict(predictor_, tape, y1);
      Tensor z2 = predict(predictor_, tape, y2);
      Tensor loss = simsiam_loss(tape, y1, y2, z1, z2);
      stats.l_intra = loss.scalar();
      stats.l_inter = std::numeric_limits<float>::quiet_NaN();
      stats.l_total = loss.scalar();
      loss_total = loss;
    }

    if (!reduced) {
      require(std::isfinite(stats.l_total), "pretrain: non-finite loss at step ", t,
              " (last finite state: step ", t - 1, ")");
    }

    tape.backward(loss_total, reduced ? scale_.scale : 1.f);
    stats.activation_bytes = tape.saved_bytes();

    auto params = collect_params("encoder.", encoder_.params);
    auto pp = collect_params("predictor.", predictor_.params);
    params.insert(params.end(), pp.begin(), pp.end());

    std::map<std::string, std::vector<float>> grads;
    bool overflow = reduced && !std::isfinite(stats.l_total);
    for (const ParamRef& ref : params) {
      Tensor g = tape.grad(ref.entry->value);
      if (reduced) {
        const float inv = 1.f / scale_.scale;
        for (auto& v : g.values) {
          if (!std::isfinite(v)) overflow = true;
          v *= inv;
        }
      }
      grads.emplace(ref.name, std::move(g.values));
    }

    if (reduced) {
      // Masters are restored before any update decision.
      for (auto& [name, p] : encoder_.params)
        if (p.trainable) p.value.values = masters.at("encoder." + name);
      for (auto& [name, p] : predictor_.params)
        if (p.trainable) p.value.values = masters.at("predictor." + name);
      if (loss_scale_update(scale_, overflow)) {
        optim_.step++;  // the step is consumed, just not applied
        stats.skipped = true;
        return stats;
      }
    }

    sgd_step(params, grads, optim_, stats.lr);
    return stats;
  }

  void refresh_epoch_order(std::int64_t epoch) {
    if (epoch == cur_epoch_) return;
    const std::size_t n = data_->pairs.size();
    epoch_order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) epoch_order_[i] = static_cast<std::uint32_t>(i);
    Rng rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(epoch), 0x5fffe1ULL));
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(epoch_order_[i - 1], epoch_order_[j]);
    }
    cur_epoch_ = epoch;
  }

  const PairDataset* data_;
  PretrainConfig cfg_;
  EncoderModel encoder_;
  PredictorModel predictor_;
  OptimizerState optim_;
  LossScaleState scale_;
  LrSchedule schedule_;
  AugmentPolicy policy_;
  std::vector<std::uint32_t> epoch_order_;
  std::int64_t cur_epoch_ = -1;
};

// Reads the encoder (and optionally the full training state) back from a
// checkpoint without outside knowledge of the architecture.
struct LoadedCheckpoint {
  EncoderConfig config;
  std::array<std::int64_t, 3> predictor_dims{};
  Method method = Method::simtriplet;
  EncoderModel encoder;
  PredictorModel predictor;
  std::int64_t step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto entries = read_ckpt(path);
  LoadedCheckpoint out;
  out.config = read_encoder_config(entries, "config.");
  const auto& pdims = find_entry(entries, "config.predictor_dims");
  for (std::size_t i = 0; i < 3; ++i)
    out.predictor_dims[i] = static_cast<std::int64_t>(pdims.u64[i]);
  out.method = find_entry(entries, "meta.method").u64[0] == 0 ? Method::simtriplet
                                                              : Method::simsiam;
  out.step = static_cast<std::int64_t>(find_entry(entries, "optim.step").u64[0]);
  out.encoder = build_encoder(out.config, 0);
  restore_param_map(entries, "encoder.", out.encoder.params);
  out.predictor = build_predictor(out.predictor_dims, 0);
  restore_param_map(entries, "predictor.", out.predictor.params);
  return out;
}

// Spec-level convenience pair over the Trainer state.
inline void save_checkpoint(const Trainer& trainer, const std::string& path) {
  trainer.save(path);
}

struct PretrainResult {
  std::vector<StepStats> curve;
  std::string checkpoint_path;
  double seconds = 0.0;
};

inline void write_curve_header(std::ostream& os, const PretrainConfig& cfg,
                               const PairDataset& data) {
  os << "# method=" << method_name(cfg.method) << "\n";
  os << "# epochs=" << cfg.epochs << "\n";
  os << "# batch=" << cfg.batch_size << "\n";
  os << "# precision=" << (cfg.precision == Precision::full ? "full" : "reduced") << "\n";
  os << "# seed=" << cfg.seed << "\n";
  os << "# base_lr=" << cfg.base_lr << "\n";
  os << "# scaled_lr=" << scaled_lr(cfg.base_lr, cfg.batch_size) << "\n";
  os << "# weight_decay=" << cfg.weight_decay << "\n";
  os << "# momentum=" << cfg.momentum << "\n";
  os << "# pairs=" << data.pairs.size() << "\n";
  os << "# input_size=" << cfg.encoder.input_size << "\n";
  const AugmentPolicy policy = cfg.policy_for(data.stats);
  os << "# augment.crop_scale_min=" << policy.crop_scale_min << "\n";
  os << "# augment.crop_scale_max=" << policy.crop_scale_max << "\n";
  os << "# augment.flip_prob=" << policy.flip_prob << "\n";
  os << "# augment.jitter_prob=" << policy.jitter_prob << "\n";
  os << "# augment.brightness=" << policy.brightness << "\n";
  os << "# augment.contrast=" << policy.contrast << "\n";
  os << "# augment.saturation=" << policy.saturation << "\n";
  os << "# augment.hue=" << policy.hue << "\n";
  os << "# augment.grayscale_prob=" << policy.grayscale_prob << "\n";
  os << "# augment.blur_prob=" << policy.blur_prob << "\n";
  os << "# augment.blur_sigma_min=" << policy.blur_sigma_min << "\n";
  os << "# augment.blur_sigma_max=" << policy.blur_sigma_max << "\n";
  os << "# augment.norm_mean=" << policy.norm_mean[0] << ',' << policy.norm_mean[1] << ','
     << policy.norm_mean[2] << "\n";
  os << "# augment.norm_std=" << policy.norm_std[0] << ',' << policy.norm_std[1] << ','
     << policy.norm_std[2] << "\n";
  os << "step,lr,l_intra,l_inter,l_total\n";
}

inline void write_curve_row(std::ostream& os, const StepStats& s) {
  char buf[160];
  if (std::isnan(s.l_inter)) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,,%.9g", static_cast<long long>(s.step), s.lr,
                  static_cast<double>(s.l_intra), static_cast<double>(s.l_total));
  } else {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(s.step),
                  s.lr, static_cast<double>(s.l_intra), static_cast<double>(s.l_inter),
                  static_cast<double>(s.l_total));
  }
  os << buf << "\n";
}

// Full pretraining driver: runs every step, streams the loss curve, watches
// for divergence, and writes checkpoints under cfg.out_dir.
inline Trainer pretrain(const PairDataset& data, const PretrainConfig& cfg,
                        std::ostream* curve = nullptr, PretrainResult* result = nullptr) {
  Trainer trainer(data, cfg);
  if (curve) write_curve_header(*curve, cfg, data);
  const std::int64_t total = trainer.total_steps();
  const std::int64_t warm = trainer.steps_per_epoch();
  std::int64_t positive_streak = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t t = 0; t < total; ++t) {
    StepStats s = trainer.run_step();
    if (curve) write_curve_row(*curve, s);
    if (result) result->curve.push_back(s);
    if (t >= warm) {
      positive_streak = s.l_total > 0.f ? positive_streak + 1 : 0;
      if (positive_streak >= cfg.divergence_patience)
        throw DivergenceError(cat("pretrain: loss positive for ", positive_streak,
                                  " consecutive steps at step ", t));
    }
    if (!cfg.out_dir.empty() && cfg.checkpoint_every_epochs > 0 &&
        (t + 1) % (warm * cfg.checkpoint_every_epochs) == 0 && t + 1 < total) {
      trainer.save((std::filesystem::path(cfg.out_dir) /
                    cat("checkpoint_epoch", (t + 1) / warm, ".tsck")).string());
    }
  }
  if (!cfg.out_dir.empty()) {
    const std::string final_path =
        (std::filesystem::path(cfg.out_dir) / "checkpoint.tsck").string();
    trainer.save(final_path);
    if (result) result->checkpoint_path = final_path;
  }
  if (result)
    result->seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return trainer;
}

}  // namespace trisim
