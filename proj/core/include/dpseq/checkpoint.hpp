#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpseq/model.hpp"
#include "dpseq/tensor.hpp"

namespace dpseq {

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

// Named-tensor archive: a text header (format version, optional embedded
// config line, one "tensor <name> f32 <rank> <dims...>" line per entry),
// a "data" separator, then raw little-endian float32 payloads in header order.
struct ArchiveEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Archive {
  int version = 1;
  std::string config_json;  // empty when absent
  std::vector<ArchiveEntry> entries;
};

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(const DpseqModel<T>& model, const std::filesystem::path& path) {
  Archive a;
  a.config_json = model_config_to_json(model.config);
  visit_params(const_cast<DpseqModel<T>&>(model), [&](const std::string& name, Tensor<T>& t) {
    ArchiveEntry e;
    e.name = name;
    e.shape = t.shape();
    e.data.assign(t.values().begin(), t.values().end());
    a.entries.push_back(std::move(e));
  });
  save_archive(path, a);
}

template <typename T>
void load_into(DpseqModel<T>& model, const Archive& archive) {
  std::unordered_map<std::string, const ArchiveEntry*> by_name;
  for (const auto& e : archive.entries) by_name.emplace(e.name, &e);
  std::size_t used = 0;
  visit_params(model, [&](const std::string& name, Tensor<T>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("archive is missing tensor '" + name + "'");
    const ArchiveEntry& e = *it->second;
    if (e.shape != t.shape())
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(e.shape) +
                            " in the archive but " + shape_str(t.shape()) + " in the model");
    for (std::size_t i = 0; i < e.data.size(); ++i) t.values()[i] = static_cast<T>(e.data[i]);
    ++used;
  });
  if (used != archive.entries.size())
    throw CheckpointError("archive holds " + std::to_string(archive.entries.size()) +
                          " tensors but the model consumed only " + std::to_string(used));
}

template <typename T>
DpseqModel<T> load_checkpoint(const std::filesystem::path& path) {
  Archive a = load_archive(path);
  if (a.config_json.empty())
    throw CheckpointError("checkpoint " + path.string() + " carries no embedded model config");
  DpseqModel<T> model = init_model<T>(model_config_from_json(a.config_json), 0);
  load_into(model, a);
  return model;
}

}  // namespace dpseq
