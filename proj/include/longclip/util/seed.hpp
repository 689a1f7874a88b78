#pragma once

#include <cstdint>
#include <string_view>

namespace longclip::util {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent stream per (seed, name): what one consumer draws never shifts another's values.
inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view name) {
  return splitmix(seed ^ splitmix(fnv1a(name)));
}

}  // namespace longclip::util
