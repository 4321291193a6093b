#pragma once

#include <cstdint>
#include <string_view>
#include <utility>

namespace dpseq {

// Deterministic across platforms: splitmix64 state advance plus explicit
// bit-to-float mapping, no std:: distributions (their output is
// implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  template <typename Seq>
  void shuffle(Seq& seq) {
    if (seq.size() < 2) return;
    for (std::size_t i = seq.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(below(i + 1));
      using std::swap;
      swap(seq[i], seq[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Fans one master seed out into independent purpose-labeled streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose) {
  std::uint64_t h = 0xcbf29ce484222325ull ^ master;
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  // one splitmix round to spread low-entropy purposes
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

}  // namespace dpseq
