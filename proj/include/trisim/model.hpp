// SPDX-License-Identifier: Apache-2.0
//
// Encoder (residual CNN backbone + 3-layer MLP projection head) and the
// bottleneck MLP predictor. All three encoder streams of the triplet share
// one parameter set; sharing falls out of reusing the same model object.
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "trisim/rng.hpp"
#include "trisim/tensor.hpp"

namespace trisim {

struct ParamEntry {
  Tensor value;
  bool trainable = true;
  bool decay_exempt = false;  // BN affine parameters and biases skip weight decay
};

using ParamMap = std::map<std::string, ParamEntry>;

inline std::int64_t parameter_count(const ParamMap& params) {
  std::int64_t n = 0;
  for (const auto& [name, p] : params)
    if (p.trainable) n += p.value.numel();
  return n;
}

struct StageSpec {
  std::int64_t channels = 0;
  std::int64_t stride = 1;
};

struct EncoderConfig {
  std::int64_t input_size = 64;
  std::int64_t channels = 3;
  std::vector<StageSpec> backbone_blocks{{32, 2}, {64, 2}, {128, 2}, {256, 2}};
  std::array<std::int64_t, 3> projection_dims{512, 512, 128};
  bool use_bn_in_head = true;

  std::int64_t feature_dim() const { return backbone_blocks.back().channels; }
  std::int64_t output_dim() const { return projection_dims[2]; }

  void validate() const {
    require(input_size > 0 && channels > 0, "encoder config: non-positive input dims");
    require(!backbone_blocks.empty(), "encoder config: no backbone blocks");
    std::int64_t spatial = input_size;
    for (const auto& s : backbone_blocks) {
      require(s.channels > 0 && s.stride >= 1, "encoder config: bad stage spec");
      spatial = (spatial + 2 - 3) / s.stride + 1;
      require(spatial >= 1, "encoder config: input ", input_size, " too small for stage strides");
    }
    for (auto d : projection_dims) require(d > 0, "encoder config: projection dims must be > 0");
  }

  // Desk-scale preset sized for CPU experiment sweeps.
  static EncoderConfig small() {
    EncoderConfig c;
    c.input_size = 32;
    c.backbone_blocks = {{16, 2}, {32, 2}, {64, 2}};
    c.projection_dims = {256, 256, 64};
    return c;
  }

  // Deeper variant (two blocks per stage); not the default.
  static EncoderConfig deep() {
    EncoderConfig c;
    c.backbone_blocks = {{32, 1}, {32, 2}, {64, 1}, {64, 2}, {128, 1}, {128, 2}, {256, 1}, {256, 2}};
    return c;
  }
};

struct EncoderModel {
  EncoderConfig config;
  ParamMap params;
};

struct PredictorModel {
  std::array<std::int64_t, 3> dims{128, 32, 128};  // in, bottleneck, out
  ParamMap params;
};

namespace detail {

inline Tensor he_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  Tensor t = zeros<float>(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

inline void add_param(ParamMap& m, const std::string& name, Tensor value, bool trainable = true,
                      bool decay_exempt = false) {
  ParamEntry e;
  e.value = std::move(value);
  e.trainable = trainable;
  e.decay_exempt = decay_exempt;
  m.emplace(name, std::move(e));
}

inline void add_conv(ParamMap& m, const std::string& name, std::int64_t out_ch, std::int64_t in_ch,
                     std::int64_t k, Rng& rng) {
  add_param(m, name + ".w", he_uniform({out_ch, in_ch, k, k}, in_ch * k * k, rng));
}

inline void add_bn(ParamMap& m, const std::string& name, std::int64_t ch) {
  add_param(m, name + ".gamma", full<float>({ch}, 1.f), true, true);
  add_param(m, name + ".beta", zeros<float>({ch}), true, true);
  add_param(m, name + ".mean", zeros<float>({ch}), false);
  add_param(m, name + ".var", full<float>({ch}, 1.f), false);
}

inline void add_fc(ParamMap& m, const std::string& name, std::int64_t in, std::int64_t out,
                   Rng& rng, bool uniform_bias = false) {
  add_param(m, name + ".w", he_uniform({in, out}, in, rng));
  // uniform_bias keeps narrow layers away from exactly-zero outputs at init
  // (an all-negative ReLU row would otherwise emit a zero vector, which the
  // cosine losses reject).
  Tensor bias = zeros<float>({out});
  if (uniform_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : bias.values) v = static_cast<float>(rng.uniform(-bound, bound));
  }
  add_param(m, name + ".b", std::move(bias), true, true);
}

inline bool block_needs_down(const StageSpec& s, std::int64_t in_ch) {
  return s.stride != 1 || s.channels != in_ch;
}

}  // namespace detail

inline EncoderModel build_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0xe4c0de5ULL));
  EncoderModel model;
  model.config = config;
  ParamMap& p = model.params;

  const std::int64_t stem_ch = config.backbone_blocks.front().channels;
  detail::add_conv(p, "stem.conv", stem_ch, config.channels, 3, rng);
  detail::add_bn(p, "stem.bn", stem_ch);

  std::int64_t in_ch = stem_ch;
  for (std::size_t i = 0; i < config.backbone_blocks.size(); ++i) {
    const StageSpec& s = config.backbone_blocks[i];
    const std::string base = cat("block", i + 1);
    detail::add_conv(p, base + ".conv1", s.channels, in_ch, 3, rng);
    detail::add_bn(p, base + ".bn1", s.channels);
    detail::add_conv(p, base + ".conv2", s.channels, s.channels, 3, rng);
    detail::add_bn(p, base + ".bn2", s.channels);
    if (detail::block_needs_down(s, in_ch)) {
      detail::add_conv(p, base + ".down", s.channels, in_ch, 1, rng);
      detail::add_bn(p, base + ".down_bn", s.channels);
    }
    in_ch = s.channels;
  }

  const auto [h1, h2, d] = config.projection_dims;
  detail::add_fc(p, "head.fc1", config.feature_dim(), h1, rng);
  if (config.use_bn_in_head) detail::add_bn(p, "head.bn1", h1);
  detail::add_fc(p, "head.fc2", h1, h2, rng);
  if (config.use_bn_in_head) detail::add_bn(p, "head.bn2", h2);
  detail::add_fc(p, "head.fc3", h2, d, rng);
  if (config.use_bn_in_head) detail::add_bn(p, "head.bn3", d);
  return model;
}

inline PredictorModel build_predictor(std::array<std::int64_t, 3> dims, std::uint64_t seed) {
  require(dims[0] == dims[2], "predictor: input dim ", dims[0], " must equal output dim ",
          dims[2]);
  require(dims[1] > 0 && dims[1] < dims[0], "predictor: bottleneck ", dims[1],
          " must be in (0, ", dims[0], ")");
  Rng rng(mix_seed(seed, 0x9d1c70aULL));
  PredictorModel model;
  model.dims = dims;
  detail::add_fc(model.params, "pred.fc1", dims[0], dims[1], rng, /*uniform_bias=*/true);
  detail::add_bn(model.params, "pred.bn1", dims[1]);
  detail::add_fc(model.params, "pred.fc2", dims[1], dims[2], rng, /*uniform_bias=*/true);
  return model;
}

// Makes every trainable parameter a leaf of the tape so gradients are
// collected for it.
inline void watch_params(Tape& tape, ParamMap& params) {
  for (auto& [name, p] : params)
    if (p.trainable) tape.watch(p.value);
}

struct EncodeResult {
  Tensor features;    // pooled backbone output (linear-probe input)
  Tensor projection;  // projection-head output y
};

namespace detail {

inline Tensor bn_layer(Tape& tape, ParamMap& p, const std::string& base, const Tensor& x,
                       Mode mode) {
  return batch_norm(tape, x, p.at(base + ".gamma").value, p.at(base + ".beta").value,
                    p.at(base + ".mean").value, p.at(base + ".var").value, mode);
}

}  // namespace detail

inline EncodeResult encode_full(EncoderModel& model, Tape& tape, const Tensor& batch, Mode mode) {
  const EncoderConfig& cfg = model.config;
  require(batch.shape.size() == 4, "encode: batch must be Bx", cfg.channels, "xHxW, got ",
          shape_str(batch.shape));
  require(batch.shape[1] == cfg.channels && batch.shape[2] == cfg.input_size &&
              batch.shape[3] == cfg.input_size,
          "encode: expected Bx", cfg.channels, "x", cfg.input_size, "x", cfg.input_size,
          ", got ", shape_str(batch.shape));
  ParamMap& p = model.params;

  Tensor x = conv2d(tape, batch, p.at("stem.conv.w").value, 1, 1);
  x = relu(tape, detail::bn_layer(tape, p, "stem.bn", x, mode));

  std::int64_t in_ch = cfg.backbone_blocks.front().channels;
  for (std::size_t i = 0; i < cfg.backbone_blocks.size(); ++i) {
    const StageSpec& s = cfg.backbone_blocks[i];
    const std::string base = cat("block", i + 1);
    Tensor main = conv2d(tape, x, p.at(base + ".conv1.w").value, s.stride, 1);
    main = relu(tape, detail::bn_layer(tape, p, base + ".bn1", main, mode));
    main = conv2d(tape, main, p.at(base + ".conv2.w").value, 1, 1);
    main = detail::bn_layer(tape, p, base + ".bn2", main, mode);
    Tensor shortcut = x;
    if (detail::block_needs_down(s, in_ch)) {
      shortcut = conv2d(tape, x, p.at(base + ".down.w").value, s.stride, 0);
      shortcut = detail::bn_layer(tape, p, base + ".down_bn", shortcut, mode);
    }
    x = relu(tape, add(tape, main, shortcut));
    in_ch = s.channels;
  }

  EncodeResult out;
  out.features = global_average_pool(tape, x);

  Tensor h = affine(tape, out.features, p.at("head.fc1.w").value, p.at("head.fc1.b").value);
  if (cfg.use_bn_in_head) h = detail::bn_layer(tape, p, "head.bn1", h, mode);
  h = relu(tape, h);
  h = affine(tape, h, p.at("head.fc2.w").value, p.at("head.fc2.b").value);
  if (cfg.use_bn_in_head) h = detail::bn_layer(tape, p, "head.bn2", h, mode);
  h = relu(tape, h);
  h = affine(tape, h, p.at("head.fc3.w").value, p.at("head.fc3.b").value);
  if (cfg.use_bn_in_head) h = detail::bn_layer(tape, p, "head.bn3", h, mode);
  out.projection = std::move(h);
  return out;
}

inline Tensor encode(EncoderModel& model, Tape& tape, const Tensor& batch, Mode mode) {
  return encode_full(model, tape, batch, mode).projection;
}

inline Tensor predict(PredictorModel& model, Tape& tape, const Tensor& y,
                      Mode mode = Mode::train) {
  require(y.shape.size() == 2 && y.shape[1] == model.dims[0], "predict: expected Bx",
          model.dims[0], ", got ", shape_str(y.shape));
  ParamMap& p = model.params;
  Tensor h = affine(tape, y, p.at("pred.fc1.w").value, p.at("pred.fc1.b").value);
  h = detail::bn_layer(tape, p, "pred.bn1", h, mode);
  h = relu(tape, h);
  return affine(tape, h, p.at("pred.fc2.w").value, p.at("pred.fc2.b").value);
}

}  // namespace trisim
