#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace curio {

inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

// 64-bit FNV-1a. The seed is XORed into the offset basis, so seed 0 gives the
// textbook hash.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0) noexcept {
  std::uint64_t h = kFnvOffsetBasis ^ seed;
  for (const char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(std::uint64_t value);

inline std::string hash_hex(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

}  // namespace curio
