// SPDX-License-Identifier: Apache-2.0
//
// Non-overlapping tile grids over source images, adjacent positive-pair
// sampling over the 8-neighborhood, patch extraction, and the CSV manifests.
#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trisim/image.hpp"
#include "trisim/rng.hpp"

namespace trisim {

struct TileGrid {
  std::string source_id;
  std::int64_t image_width = 0;
  std::int64_t image_height = 0;
  std::int64_t patch_size = 0;
  std::int64_t stride = 0;  // tile origin spacing; equal to patch_size by default
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<int> labels;  // empty, or one label per tile in row-major order
  std::shared_ptr<const ImageU8> image;

  bool has_labels() const { return !labels.empty(); }
  int label_at(std::int64_t r, std::int64_t c) const {
    return labels[static_cast<std::size_t>(r * cols + c)];
  }
  bool in_bounds(std::int64_t r, std::int64_t c) const {
    return r >= 0 && r < rows && c >= 0 && c < cols;
  }
};

struct PatchPair {
  std::string source_id;
  std::int64_t anchor_row = 0;
  std::int64_t anchor_col = 0;
  std::int64_t neighbor_row = 0;
  std::int64_t neighbor_col = 0;
};

inline std::int64_t chebyshev_distance(const PatchPair& p) {
  return std::max(std::abs(p.anchor_row - p.neighbor_row),
                  std::abs(p.anchor_col - p.neighbor_col));
}

// Non-overlapping by default. A stride smaller than the patch size yields
// overlapping crops (the flag-controlled variant of the tiling policy); edge
// remainder pixels are discarded either way.
inline TileGrid tile_image(std::shared_ptr<const ImageU8> image, std::string source_id,
                           std::int64_t patch_size, std::int64_t stride = 0) {
  require(image != nullptr, "tile_image: null image");
  require(patch_size > 0, "tile_image: patch_size must be positive");
  if (stride == 0) stride = patch_size;
  require(stride > 0, "tile_image: stride must be positive");
  require(image->width >= patch_size && image->height >= patch_size, "tile_image: image ",
          image->width, "x", image->height, " smaller than one ", patch_size, "x", patch_size,
          " patch");
  TileGrid grid;
  grid.source_id = std::move(source_id);
  grid.image_width = image->width;
  grid.image_height = image->height;
  grid.patch_size = patch_size;
  grid.stride = stride;
  grid.rows = (image->height - patch_size) / stride + 1;
  grid.cols = (image->width - patch_size) / stride + 1;
  grid.image = std::move(image);
  return grid;
}

inline constexpr std::array<std::pair<int, int>, 8> kNeighborOffsets{
    {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};

// Uniform draw over the in-bounds 8-neighborhood of (row, col).
inline std::pair<std::int64_t, std::int64_t> sample_neighbor(const TileGrid& grid,
                                                             std::int64_t row, std::int64_t col,
                                                             Rng& rng) {
  require(grid.in_bounds(row, col), "sample_neighbor: anchor out of bounds");
  std::array<std::pair<std::int64_t, std::int64_t>, 8> candidates;
  std::size_t n = 0;
  for (const auto& [dr, dc] : kNeighborOffsets) {
    const std::int64_t r = row + dr, c = col + dc;
    if (grid.in_bounds(r, c)) candidates[n++] = {r, c};
  }
  require(n > 0, "sample_neighbor: no in-bounds neighbors (1x1 grid)");
  return candidates[rng.below(n)];
}

inline PatchPair sample_adjacent_pair(const TileGrid& grid, Rng& rng) {
  require(grid.rows >= 2 || grid.cols >= 2, "sample_adjacent_pair: grid ", grid.rows, "x",
          grid.cols, " has no adjacent tiles");
  const std::int64_t idx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(grid.rows * grid.cols)));
  const std::int64_t row = idx / grid.cols, col = idx % grid.cols;
  const auto [nr, nc] = sample_neighbor(grid, row, col, rng);
  PatchPair pair;
  pair.source_id = grid.source_id;
  pair.anchor_row = row;
  pair.anchor_col = col;
  pair.neighbor_row = nr;
  pair.neighbor_col = nc;
  return pair;
}

// Pixel block at (row*stride, col*stride), area-average resized to
// target_size.
inline ImageU8 extract_patch(const TileGrid& grid, std::int64_t row, std::int64_t col,
                             std::int64_t target_size) {
  require(grid.in_bounds(row, col), "extract_patch: tile (", row, ",", col, ") out of bounds for ",
          grid.rows, "x", grid.cols, " grid");
  require(target_size > 0, "extract_patch: non-positive target size");
  require(grid.image != nullptr, "extract_patch: grid has no pixel data");
  const std::int64_t p = grid.patch_size;
  const std::int64_t s = grid.stride > 0 ? grid.stride : p;
  const ImageU8& src = *grid.image;
  ImageU8 crop = make_image(p, p, src.channels);
  for (std::int64_t y = 0; y < p; ++y)
    for (std::int64_t x = 0; x < p; ++x)
      for (std::int64_t c = 0; c < src.channels; ++c)
        crop.at(y, x, c) = src.at(row * s + y, col * s + x, c);
  if (target_size == p) return crop;
  return resize_area(crop, target_size, target_size);
}

// ---------------------------------------------------------------------------
// Manifests (UTF-8 CSV; '#'-prefixed lines are config-echo comments)
// ---------------------------------------------------------------------------

struct LabeledPatch {
  std::string source_id;
  std::int64_t row = 0;
  std::int64_t col = 0;
  int label = 0;
};

inline constexpr const char* kPairHeader =
    "source_id,anchor_row,anchor_col,neighbor_row,neighbor_col";
inline constexpr const char* kLabelHeader = "source_id,row,col,label";

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::int64_t parse_int(const std::string& s, const std::string& path, std::size_t line_no) {
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  io_require(!s.empty() && pos == s.size(), "manifest ", path, " line ", line_no,
             ": malformed integer field '", s, "'");
  return v;
}

using GridDims = std::map<std::string, std::pair<std::int64_t, std::int64_t>>;  // rows, cols

}  // namespace detail

inline void write_pair_manifest(const std::string& path, const std::vector<PatchPair>& pairs,
                                const std::vector<std::string>& header_comments = {}) {
  std::ofstream os(path, std::ios::trunc);
  io_require(os.good(), "manifest ", path, ": cannot open for writing");
  for (const auto& c : header_comments) os << "# " << c << "\n";
  os << kPairHeader << "\n";
  for (const auto& p : pairs)
    os << p.source_id << ',' << p.anchor_row << ',' << p.anchor_col << ',' << p.neighbor_row
       << ',' << p.neighbor_col << "\n";
  os.flush();
  io_require(os.good(), "manifest ", path, ": write failed");
}

inline std::vector<PatchPair> read_pair_manifest(const std::string& path,
                                                 const detail::GridDims* dims = nullptr) {
  std::ifstream is(path);
  io_require(is.good(), "manifest ", path, ": cannot open");
  std::vector<PatchPair> out;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(is, line)) {
    line_no++;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      io_require(line == kPairHeader, "manifest ", path, " line ", line_no,
                 ": expected header '", kPairHeader, "'");
      saw_header = true;
      continue;
    }
    auto fields = detail::split_csv(line);
    io_require(fields.size() == 5, "manifest ", path, " line ", line_no, ": expected 5 fields, got ",
               fields.size());
    PatchPair p;
    p.source_id = fields[0];
    p.anchor_row = detail::parse_int(fields[1], path, line_no);
    p.anchor_col = detail::parse_int(fields[2], path, line_no);
    p.neighbor_row = detail::parse_int(fields[3], path, line_no);
    p.neighbor_col = detail::parse_int(fields[4], path, line_no);
    io_require(chebyshev_distance(p) == 1, "manifest ", path, " line ", line_no,
               ": pair violates Chebyshev-distance-1 invariant");
    if (dims) {
      auto it = dims->find(p.source_id);
      io_require(it != dims->end(), "manifest ", path, " line ", line_no, ": unknown source '",
                 p.source_id, "'");
      const auto [rows, cols] = it->second;
      io_require(p.anchor_row >= 0 && p.anchor_row < rows && p.anchor_col >= 0 &&
                     p.anchor_col < cols && p.neighbor_row >= 0 && p.neighbor_row < rows &&
                     p.neighbor_col >= 0 && p.neighbor_col < cols,
                 "manifest ", path, " line ", line_no, ": tile out of grid bounds");
    }
    out.push_back(std::move(p));
  }
  io_require(saw_header, "manifest ", path, ": missing header");
  return out;
}

inline void write_label_manifest(const std::string& path, const std::vector<LabeledPatch>& items,
                                 const std::vector<std::string>& header_comments = {}) {
  std::ofstream os(path, std::ios::trunc);
  io_require(os.good(), "manifest ", path, ": cannot open for writing");
  for (const auto& c : header_comments) os << "# " << c << "\n";
  os << kLabelHeader << "\n";
  for (const auto& it : items)
    os << it.source_id << ',' << it.row << ',' << it.col << ',' << it.label << "\n";
  os.flush();
  io_require(os.good(), "manifest ", path, ": write failed");
}

inline std::vector<LabeledPatch> read_label_manifest(const std::string& path,
                                                     const detail::GridDims* dims = nullptr) {
  std::ifstream is(path);
  io_require(is.good(), "manifest ", path, ": cannot open");
  std::vector<LabeledPatch> out;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(is, line)) {
    line_no++;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      io_require(line == kLabelHeader, "manifest ", path, " line ", line_no,
                 ": expected header '", kLabelHeader, "'");
      saw_header = true;
      continue;
    }
    auto fields = detail::split_csv(line);
    io_require(fields.size() == 4, "manifest ", path, " line ", line_no, ": expected 4 fields, got ",
               fields.size());
    LabeledPatch it;
    it.source_id = fields[0];
    it.row = detail::parse_int(fields[1], path, line_no);
    it.col = detail::parse_int(fields[2], path, line_no);
    it.label = static_cast<int>(detail::parse_int(fields[3], path, line_no));
    io_require(it.label >= 0, "manifest ", path, " line ", line_no, ": negative label");
    if (dims) {
      auto dit = dims->find(it.source_id);
      io_require(dit != dims->end(), "manifest ", path, " line ", line_no, ": unknown source '",
                 it.source_id, "'");
      const auto [rows, cols] = dit->second;
      io_require(it.row >= 0 && it.row < rows && it.col >= 0 && it.col < cols, "manifest ", path,
                 " line ", line_no, ": tile out of grid bounds");
    }
    out.push_back(std::move(it));
  }
  io_require(saw_header, "manifest ", path, ": missing header");
  return out;
}

}  // namespace trisim
