#pragma once

#include <cstdint>

namespace baa {

// splitmix64 finaliser; used to derive independent child seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return mix64(parent ^ mix64(index + 0x632be59bd9b4e019ULL));
}

// Uniform in [0, 1) from a hash.
inline double hash_unit(std::uint64_t h) { return static_cast<double>(mix64(h) >> 11) * 0x1.0p-53; }

}  // namespace baa
