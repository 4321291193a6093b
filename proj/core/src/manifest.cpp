#include "dpseq/manifest.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

namespace dpseq {

namespace {
constexpr const char* kHeader = "patient_id,tile_path,tissue_class,tumor_score,label,split";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}
}  // namespace

void TileManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.patient_id.empty())
      throw ManifestError("row " + std::to_string(i + 1) + " has an empty patient_id");
    if (r.tile_path.empty())
      throw ManifestError("row " + std::to_string(i + 1) + " has an empty tile_path");
    if (!seen.insert(r.tile_path).second)
      throw ManifestError("duplicate tile_path '" + r.tile_path + "'");
  }
}

TileManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != split_csv(kHeader))
    throw ManifestError("manifest " + path.string() + " is missing the expected header '" +
                        kHeader + "'");
  TileManifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv(line);
    if (f.size() != 6)
      throw ManifestError("manifest line " + std::to_string(lineno) + " has " +
                          std::to_string(f.size()) + " fields, expected 6");
    ManifestRow r;
    r.patient_id = f[0];
    r.tile_path = f[1];
    r.tissue_class = f[2];
    try {
      if (!f[3].empty()) r.tumor_score = std::stod(f[3]);
      if (!f[4].empty()) r.label = std::stoi(f[4]);
    } catch (const std::exception&) {
      throw ManifestError("manifest line " + std::to_string(lineno) + " has a non-numeric field");
    }
    r.split = f[5];
    m.rows.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const TileManifest& manifest) {
  manifest.validate();
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  out << kHeader << '\n';
  out.precision(8);
  for (const auto& r : manifest.rows) {
    out << r.patient_id << ',' << r.tile_path << ',' << r.tissue_class << ',';
    if (r.tumor_score) out << *r.tumor_score;
    out << ',';
    if (r.label) out << *r.label;
    out << ',' << r.split << '\n';
  }
}

}  // namespace dpseq
