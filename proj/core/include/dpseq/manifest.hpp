#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpseq {

class ManifestError : public std::runtime_error {
 public:
  explicit ManifestError(const std::string& what) : std::runtime_error(what) {}
};

struct ManifestRow {
  std::string patient_id;
  std::string tile_path;
  std::string tissue_class;          // empty when unknown
  std::optional<double> tumor_score;
  std::optional<int> label;          // biomarker label
  std::string split;                 // train / val / test, empty when unassigned
};

struct TileManifest {
  std::vector<ManifestRow> rows;

  // patient_id non-empty, tile_path unique
  void validate() const;
};

TileManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const TileManifest& manifest);

}  // namespace dpseq
