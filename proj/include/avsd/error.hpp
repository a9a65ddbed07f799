#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace avsd {

/// Base class of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape mismatch, empty input,
/// invalid token id, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed dialog JSON or configuration.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Missing or inconsistent data at run time (feature file absent, empty split).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN gradients, diverging loss, failed gradient check.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Binary feature-file decoding failure; carries the byte offset at which the
/// problem was detected.
class CodecError : public Error {
 public:
  CodecError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

#define AVSD_REQUIRE(cond, msg)                 \
  do {                                          \
    if (!(cond)) throw ::avsd::ContractError(msg); \
  } while (0)

}  // namespace avsd
