#pragma once

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/roots.hpp>

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "puflock/bits.hpp"
#include "puflock/bytes.hpp"
#include "puflock/error.hpp"
#include "puflock/hash.hpp"

namespace puflock {

inline constexpr std::size_t kChallengeBits = 128;
inline constexpr std::size_t kDefaultResponseBits = 384;

using DeviceId = std::array<std::uint8_t, 16>;
using DeviceSecret = std::array<std::uint8_t, 32>;
using Response = BitVector;

/// Fixed-width (128-bit) PUF challenge.
class Challenge {
 public:
  Challenge() = default;
  explicit Challenge(const std::array<std::uint8_t, kChallengeBits / 8>& bytes) : bytes_(bytes) {}

  static Challenge from_bits(const BitVector& bits) {
    if (bits.size() != kChallengeBits)
      throw ParameterError("challenge must be " + std::to_string(kChallengeBits) + " bits, got " +
                           std::to_string(bits.size()));
    Challenge c;
    auto packed = bits.to_bytes();
    std::copy(packed.begin(), packed.end(), c.bytes_.begin());
    return c;
  }

  static Challenge from_bytes(std::span<const std::uint8_t> b) {
    if (b.size() != kChallengeBits / 8) throw ParameterError("challenge must be 16 bytes");
    Challenge c;
    std::copy(b.begin(), b.end(), c.bytes_.begin());
    return c;
  }

  template <class Rng>
  static Challenge random(Rng& rng) {
    Challenge c;
    for (std::size_t i = 0; i < c.bytes_.size(); i += 8) {
      std::uint64_t w = rng();
      for (std::size_t k = 0; k < 8; ++k) c.bytes_[i + k] = static_cast<std::uint8_t>(w >> (8 * k));
    }
    return c;
  }

  BitVector bits() const { return BitVector::from_bytes(bytes_, kChallengeBits); }
  std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }
  std::string hex() const { return to_hex(bytes_); }

  friend auto operator<=>(const Challenge&, const Challenge&) = default;

 private:
  std::array<std::uint8_t, kChallengeBits / 8> bytes_{};
};

/// Statistical stand-in for one fabricated delay-PUF instance.
///
/// Each response bit is the sign of a device-specific latent standard normal
/// (keyed SHAKE256 expansion of secret, challenge and bit index, pushed through
/// the inverse normal CDF) plus fresh Gaussian evaluation noise.
class PufDevice {
 public:
  PufDevice(const DeviceSecret& secret, double noise_sigma, std::size_t response_len)
      : secret_(secret), noise_sigma_(noise_sigma), response_len_(response_len) {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
      throw ParameterError("noise_sigma must be a finite non-negative value");
    if (response_len == 0) throw ParameterError("response_len must be at least 1");
    if (response_len > 0xFFFFFFFFu) throw ParameterError("response_len exceeds 32 bits");
    auto d = sha256({std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("PUFD-ID"), 7), secret_});
    std::copy_n(d.begin(), id_.size(), id_.begin());
  }

  const DeviceId& id() const noexcept { return id_; }
  const DeviceSecret& secret() const noexcept { return secret_; }
  double noise_sigma() const noexcept { return noise_sigma_; }
  std::size_t response_len() const noexcept { return response_len_; }

  /// Same physical instance under a different operating condition.
  PufDevice with_noise(double sigma) const {
    PufDevice d(secret_, sigma, response_len_);
    d.id_ = id_;
    return d;
  }

  /// Deterministic standard-normal latent for bit `index` under `c`.
  double latent(const Challenge& c, std::uint32_t index) const {
    std::array<std::uint8_t, 4> idx{};
    for (int k = 0; k < 4; ++k) idx[k] = static_cast<std::uint8_t>(index >> (8 * k));
    auto x = shake256({secret_, c.bytes(), idx}, 8);
    std::uint64_t word = 0;
    for (int k = 0; k < 8; ++k) word |= std::uint64_t{x[k]} << (8 * k);
    // 53 significant bits keep u strictly inside (0, 1) in double precision.
    double u = (static_cast<double>(word >> 11) + 0.5) * 0x1p-53;
    return boost::math::quantile(boost::math::normal_distribution<double>(), u);
  }

  /// Noiseless reference response (the enrollment read).
  Response reference_response(const Challenge& c) const {
    Response r(response_len_);
    for (std::size_t j = 0; j < response_len_; ++j) r[j] = latent(c, static_cast<std::uint32_t>(j)) > 0.0;
    return r;
  }

  template <class Rng>
  Response evaluate(const Challenge& c, Rng& rng) const {
    if (noise_sigma_ == 0.0) return reference_response(c);
    std::normal_distribution<double> noise(0.0, noise_sigma_);
    Response r(response_len_);
    for (std::size_t j = 0; j < response_len_; ++j)
      r[j] = latent(c, static_cast<std::uint32_t>(j)) + noise(rng) > 0.0;
    return r;
  }

  template <class Rng>
  Response evaluate(const BitVector& challenge_bits, Rng& rng) const {
    return evaluate(Challenge::from_bits(challenge_bits), rng);
  }

  /// Bitwise majority over `reads` noisy evaluations.
  template <class Rng>
  Response majority_response(const Challenge& c, unsigned reads, Rng& rng) const {
    if (reads == 0 || reads % 2 == 0) throw ParameterError("majority vote needs an odd read count");
    std::vector<unsigned> ones(response_len_, 0);
    for (unsigned k = 0; k < reads; ++k) {
      auto r = evaluate(c, rng);
      for (std::size_t j = 0; j < response_len_; ++j) ones[j] += r[j];
    }
    Response out(response_len_);
    for (std::size_t j = 0; j < response_len_; ++j) out[j] = 2 * ones[j] > reads;
    return out;
  }

 private:
  PufDevice() = default;
  friend PufDevice load_device_bytes(std::span<const std::uint8_t>);

  DeviceSecret secret_{};
  DeviceId id_{};
  double noise_sigma_ = 0.0;
  std::size_t response_len_ = 0;
};

inline PufDevice new_device(const DeviceSecret& seed, double noise_sigma,
                            std::size_t response_len = kDefaultResponseBits) {
  return PufDevice(seed, noise_sigma, response_len);
}

/// Device secret with the low-order bytes set from `n` (0x00..01 for n = 1).
inline DeviceSecret secret_from_u64(std::uint64_t n) {
  DeviceSecret s{};
  for (int k = 0; k < 8; ++k) s[31 - k] = static_cast<std::uint8_t>(n >> (8 * k));
  return s;
}

template <class Rng>
DeviceSecret random_secret(Rng& rng) {
  DeviceSecret s{};
  for (std::size_t i = 0; i < s.size(); i += 8) {
    std::uint64_t w = rng();
    for (std::size_t k = 0; k < 8; ++k) s[i + k] = static_cast<std::uint8_t>(w >> (8 * k));
  }
  return s;
}

/// Expected per-bit flip probability for standard-normal latents and noise
/// N(0, sigma^2): P(sign(X + E) != sign(X)) = atan(sigma) / pi.
inline double flip_probability(double sigma) { return std::atan(sigma) / std::numbers::pi; }

/// Noise level whose expected bit-error rate equals `target_ber`.
inline double calibrate_sigma(double target_ber) {
  if (!(target_ber > 0.0 && target_ber < 0.5)) throw ParameterError("target BER must lie in (0, 0.5)");
  double hi = 1.0;
  while (flip_probability(hi) < target_ber) hi *= 2.0;
  auto f = [&](double s) { return flip_probability(s) - target_ber; };
  std::uintmax_t iters = 200;
  auto [a, b] = boost::math::tools::toms748_solve(f, 0.0, hi, f(0.0), f(hi),
                                                  boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (a + b);
}

// --- persisted device record: "PUFD" v1 ---

inline constexpr std::uint8_t kDeviceFormatVersion = 1;

inline Bytes save_device_bytes(const PufDevice& d) {
  ByteWriter w;
  w.raw("PUFD");
  w.u8(kDeviceFormatVersion);
  w.raw(d.id());
  w.raw(d.secret());
  w.f64(d.noise_sigma());
  w.u32(static_cast<std::uint32_t>(d.response_len()));
  return std::move(w).bytes();
}

inline PufDevice load_device_bytes(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.section("device header");
  r.expect_magic("PUFD");
  auto version = r.u8();
  if (version != kDeviceFormatVersion) r.fail("unsupported device record version " + std::to_string(version), r.offset() - 1);
  r.section("device body");
  PufDevice d;
  auto id = r.raw(16);
  auto secret = r.raw(32);
  std::copy(id.begin(), id.end(), d.id_.begin());
  std::copy(secret.begin(), secret.end(), d.secret_.begin());
  d.noise_sigma_ = r.f64();
  d.response_len_ = r.u32();
  if (!(d.noise_sigma_ >= 0.0) || !std::isfinite(d.noise_sigma_)) r.fail("invalid noise_sigma");
  if (d.response_len_ == 0) r.fail("zero response length");
  if (!r.at_end()) r.fail("trailing bytes after device record");
  return d;
}

inline void save_device(const std::string& path, const PufDevice& d) { write_file(path, save_device_bytes(d)); }
inline PufDevice load_device(const std::string& path) { return load_device_bytes(read_file(path)); }

// --- population statistics ---

/// Mean fractional Hamming distance between reference responses of all device
/// pairs over the given challenges.
inline double inter_device_distance(std::span<const PufDevice> devices, std::span<const Challenge> challenges) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& c : challenges) {
    std::vector<Response> rs;
    rs.reserve(devices.size());
    for (const auto& d : devices) rs.push_back(d.reference_response(c));
    for (std::size_t a = 0; a < rs.size(); ++a)
      for (std::size_t b = a + 1; b < rs.size(); ++b) {
        sum += fractional_hamming_distance(rs[a], rs[b]);
        ++count;
      }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Measured bit-error rate of noisy reads against the reference response.
template <class Rng>
double measured_ber(const PufDevice& d, std::span<const Challenge> challenges, unsigned reads_per_challenge, Rng& rng) {
  std::size_t flips = 0, total = 0;
  for (const auto& c : challenges) {
    auto ref = d.reference_response(c);
    for (unsigned k = 0; k < reads_per_challenge; ++k) {
      flips += hamming_distance(ref, d.evaluate(c, rng));
      total += ref.size();
    }
  }
  return total ? static_cast<double>(flips) / static_cast<double>(total) : 0.0;
}

/// Per-position fraction of ones across devices, pooled over the challenges.
inline std::vector<double> bit_bias(std::span<const PufDevice> devices, std::span<const Challenge> challenges) {
  if (devices.empty() || challenges.empty()) return {};
  std::vector<double> ones(devices.front().response_len(), 0.0);
  for (const auto& c : challenges)
    for (const auto& d : devices) {
      auto r = d.reference_response(c);
      for (std::size_t j = 0; j < ones.size() && j < r.size(); ++j) ones[j] += r[j];
    }
  for (auto& v : ones) v /= static_cast<double>(devices.size() * challenges.size());
  return ones;
}

}  // namespace puflock
