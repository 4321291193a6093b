#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpseq/image.hpp"
#include "dpseq/manifest.hpp"
#include "dpseq/preprocess.hpp"
#include "dpseq/training.hpp"

namespace dpseq {

// Tile source backed by manifest rows; decodes and standardizes on access.
// Relative tile paths resolve against base_dir.
template <typename T>
class ManifestTiles : public TileSource<T> {
 public:
  ManifestTiles(std::vector<ManifestRow> rows, ModelConfig config,
                std::filesystem::path base_dir = {})
      : rows_(std::move(rows)), config_(std::move(config)), base_dir_(std::move(base_dir)) {
    for (const auto& r : rows_)
      if (!r.label)
        throw ManifestError("tile '" + r.tile_path + "' has no label");
  }

  std::size_t size() const override { return rows_.size(); }

  Tensor<T> tile(std::size_t i) const override {
    return tile_to_tensor<T>(read_image(resolve(rows_[i].tile_path)), config_);
  }

  std::size_t label(std::size_t i) const override {
    return static_cast<std::size_t>(*rows_[i].label);
  }

  std::string patient(std::size_t i) const override { return rows_[i].patient_id; }

  const ManifestRow& row(std::size_t i) const { return rows_[i]; }

 private:
  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path fp(p);
    return fp.is_absolute() || base_dir_.empty() ? fp : base_dir_ / fp;
  }

  std::vector<ManifestRow> rows_;
  ModelConfig config_;
  std::filesystem::path base_dir_;
};

// rows whose split tag matches (all rows when tag is empty)
inline std::vector<ManifestRow> rows_for_split(const TileManifest& manifest,
                                               const std::string& tag) {
  std::vector<ManifestRow> out;
  for (const auto& r : manifest.rows)
    if (tag.empty() || r.split == tag) out.push_back(r);
  return out;
}

}  // namespace dpseq
