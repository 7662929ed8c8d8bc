#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace camml {

// FNV-1a, used both for tokenizer hashing and for deriving per-component
// RNG substreams from one global seed.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fnv1a_bytes(const void* p, size_t n, uint64_t h = 1469598103934665603ULL) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic substream: same (seed, tag) always yields the same engine.
inline std::mt19937_64 substream(uint64_t seed, std::string_view tag) {
  uint64_t h = fnv1a(tag);
  h ^= seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return std::mt19937_64(h);
}

}  // namespace camml
