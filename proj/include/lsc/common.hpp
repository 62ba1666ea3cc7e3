#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lsc {

// Error taxonomy. The CLI maps these onto distinct exit codes:
// ConfigError -> 2, DataError/StreamError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// Bitstream parsing/decoding failures, with a category so callers can
// distinguish a wrong file from a damaged one.
struct StreamError : Error {
  enum class Kind { bad_magic, bad_version, bad_checksum, truncated, corrupt };
  Kind kind;
  StreamError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

}  // namespace lsc
