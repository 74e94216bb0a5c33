#pragma once

#include <stdexcept>
#include <string>

namespace probex {

// Error taxonomy shared by every module. The CLI maps these to exit codes:
// config/format/data -> 2, numeric -> 3.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

struct UnsupportedError : Error {
  explicit UnsupportedError(const std::string& msg) : Error(msg) {}
};

}  // namespace probex
