#pragma once

#include <cstdint>
#include <string>

#include "dpseq/model.hpp"

namespace dpseq {

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// digest over every parameter's name and raw values
template <typename T>
std::uint64_t model_checksum(const DpseqModel<T>& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  visit_params(const_cast<DpseqModel<T>&>(model), [&](const std::string& name, Tensor<T>& t) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.values().data(), t.values().size() * sizeof(T), h);
  });
  return h;
}

// digest over the backbone only (classifier excluded)
template <typename T>
std::uint64_t backbone_checksum(const DpseqModel<T>& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  visit_params(const_cast<DpseqModel<T>&>(model), [&](const std::string& name, Tensor<T>& t) {
    if (name.rfind("classifier.", 0) == 0) return;
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.values().data(), t.values().size() * sizeof(T), h);
  });
  return h;
}

}  // namespace dpseq
