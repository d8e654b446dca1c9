// SPDX-License-Identifier: Apache-2.0
//
// 8-bit interleaved RGB images and the TRIMG1 container: magic "TRIMG1",
// u32 width, u32 height, u8 channels, then raw interleaved bytes. Integers
// are little-endian.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "trisim/common.hpp"

namespace trisim {

struct ImageU8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved

  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

inline ImageU8 make_image(std::int64_t width, std::int64_t height, std::int64_t channels) {
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(width * height * channels), 0);
  return img;
}

inline constexpr char kImageMagic[] = "TRIMG1";  // 6 bytes on the wire

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  char b[4];
  is.read(b, 4);
  io_require(is.gcount() == 4, "image ", path, ": truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_trimg(const std::string& path, const ImageU8& img) {
  io_require(img.width > 0 && img.height > 0 && img.channels > 0 && img.channels <= 255,
             "image ", path, ": invalid dimensions");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  io_require(os.good(), "image ", path, ": cannot open for writing");
  os.write(kImageMagic, 6);
  detail::put_u32(os, static_cast<std::uint32_t>(img.width));
  detail::put_u32(os, static_cast<std::uint32_t>(img.height));
  const char ch = static_cast<char>(img.channels);
  os.write(&ch, 1);
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  os.flush();
  io_require(os.good(), "image ", path, ": write failed");
}

inline ImageU8 read_trimg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  io_require(is.good(), "image ", path, ": cannot open");
  char magic[6];
  is.read(magic, 6);
  io_require(is.gcount() == 6 && std::string(magic, 6) == kImageMagic, "image ", path,
             ": bad magic bytes");
  ImageU8 img;
  img.width = detail::get_u32(is, path);
  img.height = detail::get_u32(is, path);
  char ch = 0;
  is.read(&ch, 1);
  io_require(is.gcount() == 1, "image ", path, ": truncated header");
  img.channels = static_cast<unsigned char>(ch);
  io_require(img.width > 0 && img.height > 0 && img.channels > 0, "image ", path,
             ": invalid dimensions");
  const std::size_t n = static_cast<std::size_t>(img.width * img.height * img.channels);
  img.pixels.resize(n);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
  io_require(is.gcount() == static_cast<std::streamsize>(n), "image ", path,
             ": truncated pixel data");
  return img;
}

// 1-D box (area-average) resample of `count` parallel rows. Each destination
// cell averages the source interval it covers, with fractional end weights.
inline void box_resample_1d(const float* src, std::int64_t src_len, float* dst,
                            std::int64_t dst_len, std::int64_t count, std::int64_t src_stride,
                            std::int64_t dst_stride, std::int64_t row_stride_src,
                            std::int64_t row_stride_dst) {
  const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
  for (std::int64_t r = 0; r < count; ++r) {
    const float* s = src + r * row_stride_src;
    float* d = dst + r * row_stride_dst;
    for (std::int64_t i = 0; i < dst_len; ++i) {
      const double lo = i * scale;
      const double hi = (i + 1) * scale;
      const std::int64_t first = static_cast<std::int64_t>(std::floor(lo));
      const std::int64_t last = std::min(src_len - 1, static_cast<std::int64_t>(std::ceil(hi)) - 1);
      double acc = 0.0;
      for (std::int64_t j = first; j <= last; ++j) {
        const double cell_lo = std::max(lo, static_cast<double>(j));
        const double cell_hi = std::min(hi, static_cast<double>(j + 1));
        acc += (cell_hi - cell_lo) * static_cast<double>(s[j * src_stride]);
      }
      d[i * dst_stride] = static_cast<float>(acc / scale);
    }
  }
}

// Area-average resample of a planar float image [C x H x W].
inline std::vector<float> box_resample_planar(const std::vector<float>& src, std::int64_t ch,
                                              std::int64_t sh, std::int64_t sw, std::int64_t dh,
                                              std::int64_t dw) {
  if (sh == dh && sw == dw) return src;
  // Horizontal pass, then vertical pass.
  std::vector<float> mid(static_cast<std::size_t>(ch * sh * dw));
  for (std::int64_t c = 0; c < ch; ++c)
    box_resample_1d(src.data() + c * sh * sw, sw, mid.data() + c * sh * dw, dw, sh, 1, 1, sw, dw);
  std::vector<float> out(static_cast<std::size_t>(ch * dh * dw));
  for (std::int64_t c = 0; c < ch; ++c)
    box_resample_1d(mid.data() + c * sh * dw, sh, out.data() + c * dh * dw, dh, dw, dw, dw, 1, 1);
  return out;
}

// Area-average resize of an 8-bit image (values rounded to nearest).
inline ImageU8 resize_area(const ImageU8& src, std::int64_t dw, std::int64_t dh) {
  require(dw > 0 && dh > 0, "resize_area: non-positive target size");
  if (dw == src.width && dh == src.height) return src;
  const std::int64_t c = src.channels;
  std::vector<float> planar(static_cast<std::size_t>(c * src.height * src.width));
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < src.height; ++y)
      for (std::int64_t x = 0; x < src.width; ++x)
        planar[static_cast<std::size_t>((ch * src.height + y) * src.width + x)] =
            static_cast<float>(src.at(y, x, ch));
  auto resized = box_resample_planar(planar, c, src.height, src.width, dh, dw);
  ImageU8 out = make_image(dw, dh, c);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < dh; ++y)
      for (std::int64_t x = 0; x < dw; ++x) {
        const float v = resized[static_cast<std::size_t>((ch * dh + y) * dw + x)];
        out.at(y, x, ch) = static_cast<std::uint8_t>(
            std::clamp<long>(std::lround(v), 0L, 255L));
      }
  return out;
}

}  // namespace trisim
