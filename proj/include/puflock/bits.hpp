#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "puflock/error.hpp"

namespace puflock {

/// Unpacked bit string: one element per bit, each 0 or 1.
///
/// Packing (for hashing and files) is MSB-first within each byte, so bit 0 of
/// the vector is the top bit of byte 0.
class BitVector {
 public:
  BitVector() = default;
  explicit BitVector(std::size_t n, std::uint8_t fill = 0) : bits_(n, fill ? 1 : 0) {}
  BitVector(std::initializer_list<int> bits) {
    bits_.reserve(bits.size());
    for (int b : bits) bits_.push_back(b ? 1 : 0);
  }

  /// Parses a string of '0'/'1' characters; other characters are rejected.
  static BitVector from_string(std::string_view s) {
    BitVector v;
    v.bits_.reserve(s.size());
    for (char c : s) {
      if (c != '0' && c != '1') throw ParameterError("bit string contains non-binary character");
      v.bits_.push_back(c == '1');
    }
    return v;
  }

  static BitVector from_bytes(std::span<const std::uint8_t> bytes, std::size_t nbits) {
    if (nbits > bytes.size() * 8) throw ParameterError("bit count exceeds byte payload");
    BitVector v(nbits);
    for (std::size_t i = 0; i < nbits; ++i) v.bits_[i] = (bytes[i / 8] >> (7 - i % 8)) & 1u;
    return v;
  }

  template <class Rng>
  static BitVector random(std::size_t n, Rng& rng) {
    BitVector v(n);
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 64 == 0) word = rng();
      v.bits_[i] = static_cast<std::uint8_t>((word >> (i % 64)) & 1u);
    }
    return v;
  }

  std::size_t size() const noexcept { return bits_.size(); }
  bool empty() const noexcept { return bits_.empty(); }

  std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }
  std::uint8_t& operator[](std::size_t i) noexcept { return bits_[i]; }

  void push_back(std::uint8_t b) { bits_.push_back(b ? 1 : 0); }
  void resize(std::size_t n) { bits_.resize(n, 0); }
  void flip(std::size_t i) noexcept { bits_[i] ^= 1u; }
  /// Overwrites the contents with zeros, then empties the vector.
  void wipe() noexcept {
    volatile std::uint8_t* p = bits_.data();
    for (std::size_t i = 0; i < bits_.size(); ++i) p[i] = 0;
    bits_.clear();
  }

  auto begin() const noexcept { return bits_.begin(); }
  auto end() const noexcept { return bits_.end(); }

  std::span<const std::uint8_t> view() const noexcept { return bits_; }

  BitVector slice(std::size_t pos, std::size_t len) const {
    if (pos + len > size()) throw ParameterError("bit slice out of range");
    BitVector v;
    v.bits_.assign(bits_.begin() + static_cast<std::ptrdiff_t>(pos),
                   bits_.begin() + static_cast<std::ptrdiff_t>(pos + len));
    return v;
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out((size() + 7) / 8, 0);
    for (std::size_t i = 0; i < size(); ++i)
      if (bits_[i]) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
    return out;
  }

  std::string to_string() const {
    std::string s;
    s.reserve(size());
    for (auto b : bits_) s.push_back(b ? '1' : '0');
    return s;
  }

  std::size_t weight() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  BitVector& operator^=(const BitVector& o) {
    if (o.size() != size()) throw ParameterError("xor of bit vectors with different lengths");
    for (std::size_t i = 0; i < size(); ++i) bits_[i] ^= o.bits_[i];
    return *this;
  }

  friend BitVector operator^(BitVector a, const BitVector& b) { return a ^= b; }
  friend bool operator==(const BitVector&, const BitVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

inline std::size_t hamming_distance(const BitVector& a, const BitVector& b) {
  if (a.size() != b.size()) throw ParameterError("hamming distance of unequal lengths");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

inline double fractional_hamming_distance(const BitVector& a, const BitVector& b) {
  return a.empty() ? 0.0 : static_cast<double>(hamming_distance(a, b)) / static_cast<double>(a.size());
}

/// Unsigned integer value of `bits[pos, pos+len)`, first bit most significant.
inline std::uint64_t bits_to_uint(const BitVector& bits, std::size_t pos, std::size_t len) {
  if (len > 64) throw ParameterError("bit group wider than 64 bits");
  if (pos + len > bits.size()) throw ParameterError("bit group out of range");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < len; ++i) v = (v << 1) | bits[pos + i];
  return v;
}

}  // namespace puflock
