#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace otcf {

/// Stream-splitting scheme shared by simulation and resampling.
///
/// Every unit of random work (a block of simulated rows, one bootstrap
/// replicate) draws from its own engine, seeded by hashing
/// (master seed, stream tag, unit index) through SplitMix64. Results then
/// depend only on the master seed, never on how units are spread over
/// worker threads.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t tag,
                                    std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(master) ^ tag) + index);
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t master, std::uint64_t tag,
                          std::uint64_t index) {
  return Engine(substream_seed(master, tag, index));
}

// Stream tags.
inline constexpr std::uint64_t kStreamSimulate = 0x53494d55ULL;
inline constexpr std::uint64_t kStreamBootstrap = 0x424f4f54ULL;
inline constexpr std::uint64_t kStreamMatching = 0x4d415443ULL;
inline constexpr std::uint64_t kStreamSubsample = 0x53554253ULL;

/// Uniform index in [0, n) without relying on the implementation-defined
/// std::uniform_int_distribution algorithm.
inline std::size_t uniform_index(Engine& eng, std::size_t n) {
  const std::uint64_t range = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = Engine::max() - Engine::max() % range;
  std::uint64_t v;
  do {
    v = eng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % range);
}

/// Fisher-Yates with uniform_index, reproducible across standard libraries.
template <class T>
void shuffle(std::vector<T>& v, Engine& eng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(eng, i)]);
  }
}

/// k distinct indices from [0, n), returned sorted.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                           std::size_t k,
                                                           Engine& eng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + uniform_index(eng, n - i)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace otcf
