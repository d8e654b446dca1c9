// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor container: magic "TRISIM1", a manifest of (name, dtype,
// shape) records, then raw little-endian value blocks in manifest order.
// All integers are 64-bit little-endian.
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "trisim/common.hpp"
#include "trisim/model.hpp"

namespace trisim {

inline constexpr char kCheckpointMagic[] = "TRISIM1";  // 7 bytes on the wire

enum class CkptDtype : std::uint64_t { f32 = 0, u64 = 1 };

struct CkptEntry {
  std::string name;
  CkptDtype dtype = CkptDtype::f32;
  Shape shape;
  std::vector<float> f32;
  std::vector<std::uint64_t> u64;

  static CkptEntry tensor(std::string name, const Tensor& t) {
    CkptEntry e;
    e.name = std::move(name);
    e.dtype = CkptDtype::f32;
    e.shape = t.shape;
    e.f32 = t.values;
    return e;
  }
  static CkptEntry counter(std::string name, std::uint64_t v) {
    CkptEntry e;
    e.name = std::move(name);
    e.dtype = CkptDtype::u64;
    e.shape = {1};
    e.u64 = {v};
    return e;
  }
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t v = std::bit_cast<std::uint32_t>(f);
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline std::uint64_t get_u64(std::istream& is, const std::string& path) {
  char b[8];
  is.read(b, 8);
  io_require(is.gcount() == 8, "checkpoint ", path, ": truncated (u64 field)");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

inline float get_f32(std::istream& is, const std::string& path) {
  char b[4];
  is.read(b, 4);
  io_require(is.gcount() == 4, "checkpoint ", path, ": truncated (f32 block)");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return std::bit_cast<float>(v);
}

}  // namespace detail

inline void write_ckpt(const std::string& path, const std::vector<CkptEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  io_require(os.good(), "checkpoint ", path, ": cannot open for writing");
  os.write(kCheckpointMagic, 7);
  detail::put_u64(os, entries.size());
  for (const auto& e : entries) {
    detail::put_u64(os, e.name.size());
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_u64(os, static_cast<std::uint64_t>(e.dtype));
    detail::put_u64(os, e.shape.size());
    for (auto d : e.shape) detail::put_u64(os, static_cast<std::uint64_t>(d));
  }
  for (const auto& e : entries) {
    if (e.dtype == CkptDtype::f32) {
      io_require(static_cast<std::int64_t>(e.f32.size()) == numel(e.shape), "checkpoint entry ",
                 e.name, ": value count does not match shape");
      for (float v : e.f32) detail::put_f32(os, v);
    } else {
      io_require(static_cast<std::int64_t>(e.u64.size()) == numel(e.shape), "checkpoint entry ",
                 e.name, ": value count does not match shape");
      for (auto v : e.u64) detail::put_u64(os, v);
    }
  }
  os.flush();
  io_require(os.good(), "checkpoint ", path, ": write failed");
}

inline std::vector<CkptEntry> read_ckpt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  io_require(is.good(), "checkpoint ", path, ": cannot open");
  char magic[7];
  is.read(magic, 7);
  io_require(is.gcount() == 7 && std::string(magic, 7) == kCheckpointMagic, "checkpoint ", path,
             ": bad magic bytes");
  const std::uint64_t count = detail::get_u64(is, path);
  io_require(count < (1ULL << 32), "checkpoint ", path, ": implausible entry count");
  std::vector<CkptEntry> entries(count);
  for (auto& e : entries) {
    const std::uint64_t name_len = detail::get_u64(is, path);
    io_require(name_len < (1ULL << 16), "checkpoint ", path, ": implausible name length");
    e.name.resize(name_len);
    is.read(e.name.data(), static_cast<std::streamsize>(name_len));
    io_require(is.gcount() == static_cast<std::streamsize>(name_len), "checkpoint ", path,
               ": truncated (name)");
    const std::uint64_t dtype = detail::get_u64(is, path);
    io_require(dtype <= 1, "checkpoint ", path, ": unknown dtype tag ", dtype, " for ", e.name);
    e.dtype = static_cast<CkptDtype>(dtype);
    const std::uint64_t ndim = detail::get_u64(is, path);
    io_require(ndim <= 8, "checkpoint ", path, ": implausible rank ", ndim);
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = static_cast<std::int64_t>(detail::get_u64(is, path));
  }
  for (auto& e : entries) {
    const std::int64_t n = numel(e.shape);
    if (e.dtype == CkptDtype::f32) {
      e.f32.resize(static_cast<std::size_t>(n));
      for (auto& v : e.f32) v = detail::get_f32(is, path);
    } else {
      e.u64.resize(static_cast<std::size_t>(n));
      for (auto& v : e.u64) v = detail::get_u64(is, path);
    }
  }
  return entries;
}

inline void append_param_entries(std::vector<CkptEntry>& out, const std::string& prefix,
                                 const ParamMap& params) {
  for (const auto& [name, p] : params) out.push_back(CkptEntry::tensor(prefix + name, p.value));
}

// Restores every parameter under `prefix` into an existing map; names and
// shapes must match the map exactly in both directions.
inline void restore_param_map(const std::vector<CkptEntry>& entries, const std::string& prefix,
                              ParamMap& params) {
  std::size_t matched = 0;
  for (const auto& e : entries) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    const std::string local = e.name.substr(prefix.size());
    auto it = params.find(local);
    io_require(it != params.end(), "checkpoint: unknown tensor name '", e.name, "'");
    io_require(e.dtype == CkptDtype::f32, "checkpoint: tensor '", e.name, "' has non-f32 dtype");
    io_require(e.shape == it->second.value.shape, "checkpoint: tensor '", e.name, "' has shape ",
               shape_str(e.shape), " but the model expects ", shape_str(it->second.value.shape));
    it->second.value.values = e.f32;
    matched++;
  }
  io_require(matched == params.size(), "checkpoint: found ", matched, " of ", params.size(),
             " tensors with prefix '", prefix, "'");
}

inline const CkptEntry& find_entry(const std::vector<CkptEntry>& entries,
                                   const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::runtime_error(cat("checkpoint: missing entry '", name, "'"));
}

inline bool has_entry(const std::vector<CkptEntry>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

// Encoder architecture entries, so checkpoints are self-describing.
inline void append_encoder_config(std::vector<CkptEntry>& out, const std::string& prefix,
                                  const EncoderConfig& config) {
  out.push_back(CkptEntry::counter(prefix + "input_size",
                                   static_cast<std::uint64_t>(config.input_size)));
  out.push_back(CkptEntry::counter(prefix + "channels",
                                   static_cast<std::uint64_t>(config.channels)));
  out.push_back(CkptEntry::counter(prefix + "use_bn_in_head", config.use_bn_in_head ? 1 : 0));
  CkptEntry stages;
  stages.name = prefix + "stages";
  stages.dtype = CkptDtype::u64;
  stages.shape = {static_cast<std::int64_t>(config.backbone_blocks.size()), 2};
  for (const auto& s : config.backbone_blocks) {
    stages.u64.push_back(static_cast<std::uint64_t>(s.channels));
    stages.u64.push_back(static_cast<std::uint64_t>(s.stride));
  }
  out.push_back(std::move(stages));
  CkptEntry proj;
  proj.name = prefix + "projection_dims";
  proj.dtype = CkptDtype::u64;
  proj.shape = {3};
  for (auto d : config.projection_dims) proj.u64.push_back(static_cast<std::uint64_t>(d));
  out.push_back(std::move(proj));
}

inline EncoderConfig read_encoder_config(const std::vector<CkptEntry>& entries,
                                         const std::string& prefix) {
  EncoderConfig config;
  config.input_size = static_cast<std::int64_t>(find_entry(entries, prefix + "input_size").u64[0]);
  config.channels = static_cast<std::int64_t>(find_entry(entries, prefix + "channels").u64[0]);
  config.use_bn_in_head = find_entry(entries, prefix + "use_bn_in_head").u64[0] != 0;
  const auto& stages = find_entry(entries, prefix + "stages");
  config.backbone_blocks.clear();
  for (std::size_t i = 0; i + 1 < stages.u64.size(); i += 2)
    config.backbone_blocks.push_back({static_cast<std::int64_t>(stages.u64[i]),
                                      static_cast<std::int64_t>(stages.u64[i + 1])});
  const auto& proj = find_entry(entries, prefix + "projection_dims");
  io_require(proj.u64.size() == 3, "checkpoint: projection_dims must have 3 entries");
  for (std::size_t i = 0; i < 3; ++i)
    config.projection_dims[i] = static_cast<std::int64_t>(proj.u64[i]);
  return config;
}

}  // namespace trisim
