#include "gotune/digest.hpp"

#include <cstdio>
#include <fstream>

#include "gotune/errors.hpp"

namespace gotune {

Digest& Digest::update(const void* data, size_t n) {
  const unsigned char* bytes = static_cast<const unsigned char*>(data);
  uint64_t h = state_;
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  state_ = h;
  return *this;
}

Digest& Digest::update(std::string_view s) { return update(s.data(), s.size()); }

Digest& Digest::update_u64(uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return update(bytes, 8);
}

Digest& Digest::update_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot read file for digest: " + p.string());
  char buf[1 << 16];
  size_t total = 0;
  while (in) {
    in.read(buf, sizeof(buf));
    std::streamsize got = in.gcount();
    if (got > 0) {
      update(buf, static_cast<size_t>(got));
      total += static_cast<size_t>(got);
    }
  }
  update_u64(total);
  return *this;
}

std::string Digest::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(state_));
  return buf;
}

}  // namespace gotune
