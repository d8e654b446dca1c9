// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "trisim/checkpoint.hpp"
#include "trisim/model.hpp"
#include "trisim/rng.hpp"

using namespace trisim;

namespace {

Tensor random_batch(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = zeros<float>(shape);
  for (auto& v : t.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("build_encoder is deterministic per seed") {
  EncoderConfig cfg = EncoderConfig::small();
  auto a = build_encoder(cfg, 99);
  auto b = build_encoder(cfg, 99);
  auto c = build_encoder(cfg, 100);
  REQUIRE(a.params.size() == b.params.size());
  bool identical = true, differs_somewhere = false;
  for (const auto& [name, p] : a.params) {
    if (p.value.values != b.params.at(name).value.values) identical = false;
    if (p.value.values != c.params.at(name).value.values) differs_somewhere = true;
  }
  CHECK(identical);
  CHECK(differs_somewhere);
}

TEST_CASE("default config maps 64x64 input to a 128-dim projection") {
  EncoderConfig cfg;  // default desk config: stages 32,64,128,256; head 512,512,128
  auto model = build_encoder(cfg, 1);
  Tape tape;
  auto batch = random_batch({2, 3, 64, 64}, 5);
  auto out = encode_full(model, tape, batch, Mode::eval);
  CHECK(out.projection.shape == Shape{2, 128});
  CHECK(out.features.shape == Shape{2, 256});
}

TEST_CASE("parameter count of the default config is frozen") {
  auto model = build_encoder(EncoderConfig{}, 7);
  INFO("observed " << parameter_count(model.params));
  CHECK(parameter_count(model.params) == 1689696);
}

TEST_CASE("encoder rejects wrong spatial size") {
  auto model = build_encoder(EncoderConfig::small(), 3);
  Tape tape;
  auto bad = random_batch({2, 3, 16, 16}, 5);
  CHECK_THROWS(encode(model, tape, bad, Mode::eval));
}

TEST_CASE("encoder config validation") {
  EncoderConfig cfg = EncoderConfig::small();
  cfg.projection_dims = {0, 32, 16};
  CHECK_THROWS(build_encoder(cfg, 1));
  EncoderConfig bad_stride = EncoderConfig::small();
  bad_stride.backbone_blocks = {{8, 0}};
  CHECK_THROWS(build_encoder(bad_stride, 1));
  EncoderConfig no_stages = EncoderConfig::small();
  no_stages.backbone_blocks.clear();
  CHECK_THROWS(build_encoder(no_stages, 1));
}

TEST_CASE("duplicated rows produce identical outputs in eval mode") {
  auto model = build_encoder(EncoderConfig::small(), 11);
  Tape tape;
  auto one = random_batch({1, 3, 32, 32}, 21);
  Tensor dup = zeros<float>({2, 3, 32, 32});
  std::copy(one.values.begin(), one.values.end(), dup.values.begin());
  std::copy(one.values.begin(), one.values.end(), dup.values.begin() + one.values.size());
  auto y = encode(model, tape, dup, Mode::eval);
  const std::int64_t d = y.shape[1];
  for (std::int64_t j = 0; j < d; ++j)
    CHECK(y.values[static_cast<std::size_t>(j)] == y.values[static_cast<std::size_t>(d + j)]);
}

TEST_CASE("train and eval modes diverge once running stats differ from batch stats") {
  auto model = build_encoder(EncoderConfig::small(), 13);
  auto batch = random_batch({4, 3, 32, 32}, 31);
  Tape t1;
  auto train_out = encode(model, t1, batch, Mode::train);  // also updates running stats
  Tape t2;
  auto eval_out = encode(model, t2, batch, Mode::eval);
  bool differ = false;
  for (std::size_t i = 0; i < train_out.values.size(); ++i)
    if (train_out.values[i] != eval_out.values[i]) differ = true;
  CHECK(differ);
}

TEST_CASE("weight sharing: concatenated batch equals per-view encoding in eval mode") {
  auto model = build_encoder(EncoderConfig::small(), 17);
  auto x1 = random_batch({3, 3, 32, 32}, 41);
  auto x2 = random_batch({3, 3, 32, 32}, 42);
  auto x3 = random_batch({3, 3, 32, 32}, 43);
  Tensor concat = zeros<float>({9, 3, 32, 32});
  auto it = concat.values.begin();
  it = std::copy(x1.values.begin(), x1.values.end(), it);
  it = std::copy(x2.values.begin(), x2.values.end(), it);
  std::copy(x3.values.begin(), x3.values.end(), it);

  Tape t0;
  auto all = encode(model, t0, concat, Mode::eval);
  Tape t1, t2, t3;
  auto y1 = encode(model, t1, x1, Mode::eval);
  auto y2 = encode(model, t2, x2, Mode::eval);
  auto y3 = encode(model, t3, x3, Mode::eval);
  const std::int64_t d = all.shape[1];
  auto rows_close = [&](const Tensor& part, std::int64_t offset) {
    for (std::int64_t i = 0; i < part.shape[0]; ++i)
      for (std::int64_t j = 0; j < d; ++j) {
        const float a = part.values[static_cast<std::size_t>(i * d + j)];
        const float b = all.values[static_cast<std::size_t>((offset + i) * d + j)];
        if (std::abs(a - b) > 1e-6f) return false;
      }
    return true;
  };
  CHECK(rows_close(y1, 0));
  CHECK(rows_close(y2, 3));
  CHECK(rows_close(y3, 6));
}

TEST_CASE("He-uniform initialization statistics") {
  auto model = build_encoder(EncoderConfig{}, 23);
  // Pool all conv weights, standardized by each tensor's init bound; the
  // standardized draws are U(-1, 1) with standard deviation 1/sqrt(3).
  double acc = 0.0;
  std::int64_t n = 0;
  for (const auto& [name, p] : model.params) {
    if (name.find(".w") == std::string::npos || p.value.shape.size() != 4) continue;
    const auto& s = p.value.shape;
    const double bound = std::sqrt(6.0 / static_cast<double>(s[1] * s[2] * s[3]));
    for (float v : p.value.values) acc += v / bound;
    n += p.value.numel();
  }
  REQUIRE(n >= 10000);
  const double mean = acc / static_cast<double>(n);
  const double se = (1.0 / std::sqrt(3.0)) / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("predictor is shape preserving with gradients flowing to its parameters") {
  auto pred = build_predictor({64, 16, 64}, 31);
  Tape tape;
  watch_params(tape, pred.params);
  auto y = random_batch({4, 64}, 51);
  auto z = predict(pred, tape, y);
  CHECK(z.shape == y.shape);

  auto loss = sum(tape, z);
  tape.backward(loss);
  float mag = 0.f;
  for (auto& [name, p] : pred.params)
    if (p.trainable)
      for (float v : tape.grad(p.value).values) mag += std::abs(v);
  CHECK(mag > 0.f);

  // Zero input stays finite.
  Tape t2;
  auto z0 = predict(pred, t2, zeros<float>({4, 64}));
  for (float v : z0.values) CHECK(std::isfinite(v));

  CHECK_THROWS(build_predictor({64, 16, 32}, 1));   // in != out
  CHECK_THROWS(build_predictor({64, 64, 64}, 1));   // bottleneck not < in
  Tape t3;
  CHECK_THROWS(predict(pred, t3, zeros<float>({4, 32})));  // dim mismatch
}

TEST_CASE("checkpoint container round-trips bit-exactly") {
  auto model = build_encoder(EncoderConfig::small(), 37);
  const std::string path = temp_path("trisim_test_model.tsck");
  std::vector<CkptEntry> entries;
  append_param_entries(entries, "encoder.", model.params);
  entries.push_back(CkptEntry::counter("meta.step", 1234567890123ULL));
  write_ckpt(path, entries);

  auto loaded = read_ckpt(path);
  auto fresh = build_encoder(EncoderConfig::small(), 1);  // different seed on purpose
  restore_param_map(loaded, "encoder.", fresh.params);
  for (const auto& [name, p] : model.params)
    CHECK(p.value.values == fresh.params.at(name).value.values);
  CHECK(find_entry(loaded, "meta.step").u64[0] == 1234567890123ULL);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint with corrupt magic bytes is rejected") {
  const std::string path = temp_path("trisim_test_magic.tsck");
  auto model = build_encoder(EncoderConfig::small(), 41);
  std::vector<CkptEntry> entries;
  append_param_entries(entries, "encoder.", model.params);
  write_ckpt(path, entries);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXXXXX", 7);
  }
  CHECK_THROWS_WITH(read_ckpt(path), Catch::Matchers::ContainsSubstring("magic"));
  std::remove(path.c_str());
}

TEST_CASE("truncated checkpoint is rejected") {
  const std::string path = temp_path("trisim_test_trunc.tsck");
  auto model = build_encoder(EncoderConfig::small(), 43);
  std::vector<CkptEntry> entries;
  append_param_entries(entries, "encoder.", model.params);
  write_ckpt(path, entries);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  CHECK_THROWS_WITH(read_ckpt(path), Catch::Matchers::ContainsSubstring("truncated"));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint from a larger config is rejected naming the mismatched tensor") {
  const std::string path = temp_path("trisim_test_mismatch.tsck");
  auto big = build_encoder(EncoderConfig{}, 47);
  std::vector<CkptEntry> entries;
  append_param_entries(entries, "encoder.", big.params);
  write_ckpt(path, entries);

  auto loaded = read_ckpt(path);
  auto small_model = build_encoder(EncoderConfig::small(), 1);
  CHECK_THROWS_WITH(restore_param_map(loaded, "encoder.", small_model.params),
                    Catch::Matchers::ContainsSubstring("stem.conv.w") ||
                        Catch::Matchers::ContainsSubstring("block"));
  std::remove(path.c_str());
}
