#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace bipgps {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Independent stream keyed by (master seed, path...). The same key always
/// yields the same stream, whatever order streams are created in.
inline Rng substream(std::uint64_t master, std::initializer_list<std::uint64_t> path = {}) {
  std::vector<std::uint32_t> words;
  std::uint64_t h = detail::splitmix64(master);
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(h);
  for (std::uint64_t p : path) {
    h = detail::splitmix64(h ^ detail::splitmix64(p + 0x632be59bd9b4e019ULL));
    push(h);
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Derives a child seed; used where an API takes a seed rather than a stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  Rng r = substream(master, path);
  return r();
}

}  // namespace bipgps
