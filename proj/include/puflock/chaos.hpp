#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "puflock/bits.hpp"
#include "puflock/error.hpp"

namespace puflock {

inline constexpr unsigned kDefaultGroupBits = 16;
inline constexpr std::size_t kDefaultWarmup = 1000;

/// 2n key bits: the first half drives permutation, the second half diffusion.
class SecretKey {
 public:
  explicit SecretKey(BitVector bits) : bits_(std::move(bits)) {
    if (bits_.empty() || bits_.size() % 2) throw ParameterError("secret key needs a non-zero even bit length");
  }

  const BitVector& bits() const noexcept { return bits_; }
  std::size_t half() const noexcept { return bits_.size() / 2; }
  BitVector permute_half() const { return bits_.slice(0, half()); }
  BitVector diffusion_half() const { return bits_.slice(half(), half()); }

  friend bool operator==(const SecretKey&, const SecretKey&) = default;

 private:
  BitVector bits_;
};

struct LogisticParams {
  double s0;
  double lambda;
  unsigned group_bits;
};

struct NcaParams {
  double s0;
  double alpha;
  double beta;
  double gamma;
  unsigned group_bits;
};

/// gamma = (1 - beta^-4) * cot(alpha / (1 + beta)) * (1 + 1/beta)^beta
inline double nca_gamma(double alpha, double beta) {
  return (1.0 - std::pow(beta, -4.0)) / std::tan(alpha / (1.0 + beta)) * std::pow(1.0 + 1.0 / beta, beta);
}

namespace detail {

inline double group_fraction(const BitVector& bits, std::size_t group, unsigned b) {
  return static_cast<double>(bits_to_uint(bits, group * b, b)) / std::ldexp(1.0, static_cast<int>(b));
}

inline void check_group_bits(unsigned b, std::size_t groups, std::size_t available) {
  if (b < 1 || b > 52) throw ParameterError("bit-group size must be in [1, 52]");
  if (groups * b > available)
    throw ParameterError(std::to_string(groups) + " groups of " + std::to_string(b) + " bits exceed the " +
                         std::to_string(available) + "-bit key half");
}

}  // namespace detail

/// Initial state and control parameter of the logistic map from k_p.
///
/// Each b_p-bit group is read as an unsigned integer over 2^b_p. s0 values that
/// sit on a fixed point (0 or 1 - 1/lambda) are nudged by 2^-(b_p+1).
inline LogisticParams derive_logistic(const BitVector& kp, unsigned bp = kDefaultGroupBits) {
  detail::check_group_bits(bp, 2, kp.size());
  LogisticParams p{detail::group_fraction(kp, 0, bp), 3.6 + 0.2 * detail::group_fraction(kp, 1, bp), bp};
  if (p.s0 == 0.0 || p.s0 == 1.0 - 1.0 / p.lambda) p.s0 += std::ldexp(1.0, -static_cast<int>(bp) - 1);
  return p;
}

/// Initial state and (alpha, beta, gamma) of the nonlinear chaotic map from k_d.
inline NcaParams derive_nca(const BitVector& kd, unsigned bd = kDefaultGroupBits) {
  detail::check_group_bits(bd, 3, kd.size());
  NcaParams p{};
  p.group_bits = bd;
  p.s0 = detail::group_fraction(kd, 0, bd);
  if (p.s0 == 0.0) p.s0 = std::ldexp(1.0, -static_cast<int>(bd) - 1);
  p.alpha = std::min(1.1 + 0.35 * detail::group_fraction(kd, 1, bd), 1.4);
  p.beta = std::clamp(6.0 + 35.0 * detail::group_fraction(kd, 2, bd), 5.0, 43.0);
  p.gamma = nca_gamma(p.alpha, p.beta);
  return p;
}

/// s <- lambda * s * (1 - s)
class LogisticStream {
 public:
  LogisticStream(const LogisticParams& p, std::size_t warmup) : s_(p.s0), lambda_(p.lambda) {
    for (std::size_t i = 0; i < warmup; ++i) next();
  }
  double next() noexcept { return s_ = lambda_ * s_ * (1.0 - s_); }

 private:
  double s_;
  double lambda_;
};

/// s <- gamma * tan(alpha * s) * (1 - s)^beta; throws RangeError on escape from [0, 1].
class NcaStream {
 public:
  NcaStream(const NcaParams& p, std::size_t warmup) : p_(p), s_(p.s0) {
    if (!(p.alpha > 1.0 && p.alpha <= 1.4) || !(p.beta >= 5.0 && p.beta <= 43.0) || !std::isfinite(p.gamma))
      throw ParameterError("NCA parameters outside the chaotic region");
    for (std::size_t i = 0; i < warmup; ++i) next();
  }

  double next() {
    s_ = p_.gamma * std::tan(p_.alpha * s_) * std::pow(1.0 - s_, p_.beta);
    if (!(s_ >= 0.0 && s_ <= 1.0)) throw RangeError("NCA iterate left [0, 1]");
    return s_;
  }

 private:
  NcaParams p_;
  double s_;
};

inline std::vector<double> logistic_sequence(const LogisticParams& p, std::size_t warmup, std::size_t len) {
  LogisticStream st(p, warmup);
  std::vector<double> out(len);
  for (auto& v : out) v = st.next();
  return out;
}

inline std::vector<double> nca_sequence(const NcaParams& p, std::size_t warmup, std::size_t len) {
  NcaStream st(p, warmup);
  std::vector<double> out(len);
  for (auto& v : out) v = st.next();
  return out;
}

using Permutation = std::vector<std::uint32_t>;

/// Stable ascending argsort: pi[t] is the source index of the t-th smallest value.
inline Permutation permutation_from_sequence(std::span<const double> seq) {
  if (seq.empty()) throw ParameterError("permutation from an empty sequence");
  Permutation pi(seq.size());
  std::iota(pi.begin(), pi.end(), 0u);
  std::stable_sort(pi.begin(), pi.end(), [&](std::uint32_t a, std::uint32_t b) { return seq[a] < seq[b]; });
  return pi;
}

}  // namespace puflock
