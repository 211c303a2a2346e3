#pragma once

#include <cstdint>
#include <string>

namespace agediff {

// FNV-1a 64-bit, used for config digests and artifact checksums.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string to_hex(uint64_t v);

// Checksum of a file's raw bytes, as a 16-char hex string.
std::string file_checksum(const std::string& path);

}  // namespace agediff
