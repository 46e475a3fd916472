#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace gotune {

// FNV-1a 64-bit content digest. Not cryptographic; used to stamp reports
// and checkpoints so a result can be traced back to the exact inputs and
// flags that produced it.
class Digest {
 public:
  Digest& update(const void* data, size_t n);
  Digest& update(std::string_view s);
  Digest& update_u64(uint64_t v);
  // Hashes the file's bytes (prefixed by its size). Throws ValidationError
  // naming the path if the file cannot be read.
  Digest& update_file(const std::filesystem::path& p);

  uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace gotune
