#pragma once

#include <stdexcept>
#include <string>

namespace gotune {

// Bad input data or a violated operation precondition. The CLI maps this
// to exit code 2; unexpected failures stay plain std::runtime_error (3).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gotune
