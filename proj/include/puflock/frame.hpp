#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "puflock/bytes.hpp"
#include "puflock/error.hpp"

namespace puflock {

enum class FrameType : std::uint8_t {
  device_request = 0x01,   // M_d1
  provider_auth = 0x02,    // M_p1
  device_reply = 0x03,     // M_d2
  provider_model = 0x04,   // M_p2
  registration = 0x10,     // REG_*, first field is the sub-tag
  error = 0x7F,
};

enum class RegTag : std::uint8_t {
  hello = 1,       // device -> provider: device id
  challenges = 2,  // provider -> device: z challenges
  responses = 3,   // device -> provider: enrollment responses
  helpers = 4,     // provider -> device: (challenge, helper) pairs
};

inline constexpr std::size_t kMaxFrameBytes = 64u << 20;

struct Frame {
  FrameType type{};
  Bytes payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

inline bool known_frame_type(std::uint8_t t) {
  return (t >= 0x01 && t <= 0x04) || t == 0x10 || t == 0x7F;
}

/// u32 big-endian length (type byte + payload), type, payload.
inline Bytes encode_frame(const Frame& f) {
  const std::size_t len = 1 + f.payload.size();
  if (len > kMaxFrameBytes) throw ProtocolError("frame exceeds the 64 MiB limit");
  Bytes out;
  out.reserve(4 + len);
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(len >> s));
  out.push_back(static_cast<std::uint8_t>(f.type));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

/// Incremental reassembly of frames from an arbitrarily fragmented stream.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  std::optional<Frame> next() {
    if (buf_.size() < 4) return std::nullopt;
    std::size_t len = 0;
    for (int i = 0; i < 4; ++i) len = (len << 8) | buf_[i];
    if (len == 0) throw ProtocolError("zero-length frame");
    if (len > kMaxFrameBytes) throw ProtocolError("frame length " + std::to_string(len) + " exceeds the 64 MiB limit");
    if (buf_.size() < 4 + len) return std::nullopt;
    const auto type = buf_[4];
    if (!known_frame_type(type)) throw ProtocolError("unknown frame type " + std::to_string(type));
    Frame f{static_cast<FrameType>(type), Bytes(buf_.begin() + 5, buf_.begin() + 4 + static_cast<std::ptrdiff_t>(len))};
    buf_.erase(buf_.begin(), buf_.begin() + 4 + static_cast<std::ptrdiff_t>(len));
    return f;
  }

  std::size_t buffered() const noexcept { return buf_.size(); }

 private:
  std::deque<std::uint8_t> buf_;
};

/// Payload body: a sequence of u32-LE length-prefixed fields.
class FieldWriter {
 public:
  FieldWriter& add(std::span<const std::uint8_t> field) {
    if (field.size() > kMaxFrameBytes) throw ProtocolError("field too large");
    w_.u32(static_cast<std::uint32_t>(field.size()));
    w_.raw(field);
    return *this;
  }
  FieldWriter& add(std::string_view s) {
    return add(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  FieldWriter& add_u8(std::uint8_t v) { return add(std::span<const std::uint8_t>(&v, 1)); }

  Bytes take() { return std::move(w_).bytes(); }

 private:
  ByteWriter w_;
};

class FieldReader {
 public:
  explicit FieldReader(std::span<const std::uint8_t> payload) : r_(payload) { r_.section("frame payload"); }

  std::span<const std::uint8_t> next() {
    try {
      auto n = r_.u32();
      return r_.raw(n);
    } catch (const FormatError& e) {
      throw ProtocolError(std::string("malformed payload: ") + e.what());
    }
  }
  std::span<const std::uint8_t> next(std::size_t expected_len) {
    auto f = next();
    if (f.size() != expected_len)
      throw ProtocolError("field has " + std::to_string(f.size()) + " bytes, expected " + std::to_string(expected_len));
    return f;
  }
  std::string next_string() {
    auto f = next();
    return std::string(f.begin(), f.end());
  }
  std::uint8_t next_u8() { return next(1)[0]; }
  bool at_end() const noexcept { return r_.at_end(); }
  void expect_end() const {
    if (!r_.at_end()) throw ProtocolError("unexpected trailing payload fields");
  }

 private:
  ByteReader r_;
};

inline Frame error_frame(std::string_view reason) {
  return {FrameType::error, FieldWriter().add(reason).take()};
}

inline std::string error_reason(const Frame& f) {
  if (f.type != FrameType::error) return {};
  try {
    return FieldReader(f.payload).next_string();
  } catch (const ProtocolError&) {
    return "malformed-error";
  }
}

}  // namespace puflock
