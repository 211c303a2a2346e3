#include "agediff/digest.hpp"

#include <array>
#include <fstream>

#include "agediff/error.hpp"

namespace agediff {

std::string to_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    const std::streamsize got = in.gcount();
    if (got > 0) h = fnv1a64(buf.data(), static_cast<size_t>(got), h);
  }
  return to_hex(h);
}

}  // namespace agediff
