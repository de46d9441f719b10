#pragma once

#include <stdexcept>
#include <string>

namespace advoverlay {

/// Invalid parameters: bad strides, missing target class, n = 0, ...
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Tensor / image / mask dimensions that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Unusable input data (empty trial list, undecodable files, corrupt weights).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace advoverlay
