// SPDX-License-Identifier: Apache-2.0
//
// On-disk dataset layout: a directory holding TRIMG1 mosaics named
// "mosaic_<source_id>.trimg", CSV manifests, and a "stats.txt" sidecar with
// the dataset normalization statistics (flat key=value lines).
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "trisim/augment.hpp"
#include "trisim/sampler.hpp"

namespace trisim {

struct DatasetStats {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stdev{0.25f, 0.25f, 0.25f};
  std::int64_t patch_size = 0;
  std::int64_t crop_stride = 0;  // 0 means non-overlapping (stride = patch_size)
  int classes = 0;
};

inline void write_stats_sidecar(const std::string& path, const DatasetStats& stats,
                                const std::vector<std::string>& header_comments = {}) {
  std::ofstream os(path, std::ios::trunc);
  io_require(os.good(), "stats sidecar ", path, ": cannot open for writing");
  os.precision(9);
  for (const auto& c : header_comments) os << "# " << c << "\n";
  os << "patch_size=" << stats.patch_size << "\n";
  os << "crop_stride=" << stats.crop_stride << "\n";
  os << "classes=" << stats.classes << "\n";
  const char* names[3] = {"r", "g", "b"};
  for (int c = 0; c < 3; ++c) os << "mean_" << names[c] << "=" << stats.mean[static_cast<std::size_t>(c)] << "\n";
  for (int c = 0; c < 3; ++c) os << "std_" << names[c] << "=" << stats.stdev[static_cast<std::size_t>(c)] << "\n";
  os.flush();
  io_require(os.good(), "stats sidecar ", path, ": write failed");
}

inline DatasetStats read_stats_sidecar(const std::string& path) {
  std::ifstream is(path);
  io_require(is.good(), "stats sidecar ", path, ": cannot open");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    io_require(eq != std::string::npos, "stats sidecar ", path, ": malformed line '", line, "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    io_require(it != kv.end(), "stats sidecar ", path, ": missing key '", key, "'");
    return it->second;
  };
  DatasetStats stats;
  stats.patch_size = std::stoll(need("patch_size"));
  if (kv.count("crop_stride")) stats.crop_stride = std::stoll(kv.at("crop_stride"));
  stats.classes = std::stoi(need("classes"));
  const char* names[3] = {"r", "g", "b"};
  for (int c = 0; c < 3; ++c) {
    stats.mean[static_cast<std::size_t>(c)] = std::stof(need(cat("mean_", names[c])));
    stats.stdev[static_cast<std::size_t>(c)] = std::stof(need(cat("std_", names[c])));
  }
  return stats;
}

namespace detail {

inline std::string mosaic_path(const std::string& dir, const std::string& source_id) {
  return (std::filesystem::path(dir) / cat("mosaic_", source_id, ".trimg")).string();
}

template <typename Item>
inline void load_grids_for(const std::string& dir, const std::vector<Item>& items,
                           std::int64_t patch_size, std::int64_t stride,
                           std::vector<TileGrid>& grids,
                           std::map<std::string, std::size_t>& index) {
  for (const auto& item : items) {
    if (index.count(item.source_id)) continue;
    auto img = std::make_shared<ImageU8>(read_trimg(mosaic_path(dir, item.source_id)));
    index[item.source_id] = grids.size();
    grids.push_back(tile_image(std::move(img), item.source_id, patch_size, stride));
  }
}

template <typename Item>
inline void check_bounds(const std::vector<Item>& items, const std::vector<TileGrid>& grids,
                         const std::map<std::string, std::size_t>& index) {
  for (const auto& item : items) {
    const TileGrid& g = grids[index.at(item.source_id)];
    if constexpr (requires { item.anchor_row; }) {
      io_require(g.in_bounds(item.anchor_row, item.anchor_col) &&
                     g.in_bounds(item.neighbor_row, item.neighbor_col),
                 "dataset: pair in '", item.source_id, "' is out of grid bounds");
    } else {
      io_require(g.in_bounds(item.row, item.col), "dataset: labeled patch in '", item.source_id,
                 "' is out of grid bounds");
    }
  }
}

}  // namespace detail

struct PairDataset {
  std::vector<TileGrid> grids;
  std::map<std::string, std::size_t> grid_index;
  std::vector<PatchPair> pairs;
  DatasetStats stats;

  const TileGrid& grid_for(const PatchPair& p) const { return grids[grid_index.at(p.source_id)]; }
};

inline PairDataset load_pair_dataset(const std::string& dir) {
  PairDataset ds;
  ds.stats = read_stats_sidecar((std::filesystem::path(dir) / "stats.txt").string());
  ds.pairs = read_pair_manifest((std::filesystem::path(dir) / "pairs.csv").string());
  detail::load_grids_for(dir, ds.pairs, ds.stats.patch_size, ds.stats.crop_stride,
                         ds.grids, ds.grid_index);
  detail::check_bounds(ds.pairs, ds.grids, ds.grid_index);
  return ds;
}

struct LabeledItem {
  std::string source_id;
  std::size_t grid = 0;
  std::int64_t row = 0;
  std::int64_t col = 0;
  int label = 0;
};

struct LabeledDataset {
  std::vector<TileGrid> grids;
  std::map<std::string, std::size_t> grid_index;
  std::vector<LabeledItem> items;
  int num_classes = 0;
  DatasetStats stats;

  ImageU8 patch(std::size_t i) const {
    const LabeledItem& it = items[i];
    return extract_patch(grids[it.grid], it.row, it.col, grids[it.grid].patch_size);
  }
};

inline LabeledDataset load_labeled_dataset(const std::string& dir,
                                           const std::string& manifest_name) {
  LabeledDataset ds;
  ds.stats = read_stats_sidecar((std::filesystem::path(dir) / "stats.txt").string());
  auto rows = read_label_manifest((std::filesystem::path(dir) / manifest_name).string());
  detail::load_grids_for(dir, rows, ds.stats.patch_size, ds.stats.crop_stride, ds.grids,
                         ds.grid_index);
  detail::check_bounds(rows, ds.grids, ds.grid_index);
  ds.items.reserve(rows.size());
  for (const auto& r : rows) {
    LabeledItem item;
    item.source_id = r.source_id;
    item.grid = ds.grid_index.at(r.source_id);
    item.row = r.row;
    item.col = r.col;
    item.label = r.label;
    io_require(r.label < std::max(2, ds.stats.classes), "dataset: label ", r.label,
               " exceeds declared class count ", ds.stats.classes);
    ds.items.push_back(std::move(item));
    ds.num_classes = std::max(ds.num_classes, r.label + 1);
  }
  if (ds.stats.classes > 0) ds.num_classes = std::max(ds.num_classes, ds.stats.classes);
  return ds;
}

}  // namespace trisim
