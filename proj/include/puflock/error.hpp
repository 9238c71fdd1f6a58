#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace puflock {

/// Invalid argument to a library call (bad length, out-of-range parameter).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed, truncated or unsupported serialized data.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& section, std::size_t offset, const std::string& what)
      : std::runtime_error("format error in " + section + " at offset " + std::to_string(offset) +
                           ": " + what),
        section_(section),
        offset_(offset) {}

  const std::string& section() const noexcept { return section_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::string section_;
  std::size_t offset_;
};

/// A chaotic iteration left its admissible interval.
class RangeError : public std::range_error {
 public:
  using std::range_error::range_error;
};

/// Authentication or protocol-order failure.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The device holds no helper data for the challenge it was sent. Raised
/// locally; nothing is sent to the peer.
class MissingHelperError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

}  // namespace puflock
