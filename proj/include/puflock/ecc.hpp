#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "puflock/bits.hpp"
#include "puflock/bytes.hpp"
#include "puflock/error.hpp"

namespace puflock {

/// Rate-1/L feed-forward convolutional code with memory M.
///
/// Generator l is stored as a polynomial mask: bit m holds g_m^(l), the tap on
/// the input delayed by m steps.
class ConvCodeSpec {
 public:
  ConvCodeSpec(unsigned memory, std::vector<BitVector> generators) : memory_(memory) {
    if (memory < 1 || memory > 16) throw ParameterError("memory M must be in [1, 16]");
    if (generators.size() < 2) throw ParameterError("need at least two generators (L >= 2)");
    bool any_g0 = false;
    for (const auto& g : generators) {
      if (g.size() != memory + 1) throw ParameterError("each generator needs exactly M+1 coefficients");
      std::uint32_t mask = 0;
      for (unsigned m = 0; m <= memory; ++m) mask |= std::uint32_t{g[m]} << m;
      any_g0 |= (mask & 1u) != 0;
      masks_.push_back(mask);
    }
    if (!any_g0) throw ParameterError("g_0 is zero for every generator");
  }

  /// Generators in the usual octal notation, read MSB-first as g_0 .. g_M.
  static ConvCodeSpec from_octal(unsigned memory, std::initializer_list<unsigned> octal) {
    std::vector<BitVector> gens;
    for (unsigned o : octal) {
      if (o >> (memory + 1)) throw ParameterError("octal generator wider than M+1 bits");
      BitVector g(memory + 1);
      for (unsigned m = 0; m <= memory; ++m) g[m] = (o >> (memory - m)) & 1u;
      gens.push_back(std::move(g));
    }
    return ConvCodeSpec(memory, std::move(gens));
  }

  /// (1,3,3) with generators 13, 15, 17 (octal).
  static ConvCodeSpec default_code() { return from_octal(3, {013, 015, 017}); }

  unsigned n_in() const noexcept { return 1; }
  unsigned n_out() const noexcept { return static_cast<unsigned>(masks_.size()); }
  unsigned memory() const noexcept { return memory_; }
  std::size_t states() const noexcept { return std::size_t{1} << memory_; }
  std::uint32_t generator_mask(unsigned l) const { return masks_.at(l); }

  BitVector generator(unsigned l) const {
    BitVector g(memory_ + 1);
    for (unsigned m = 0; m <= memory_; ++m) g[m] = (masks_.at(l) >> m) & 1u;
    return g;
  }

  /// Output bits for shift-register contents `reg` (bit m = input delayed m steps).
  std::uint32_t branch_output(std::uint32_t reg) const noexcept {
    std::uint32_t out = 0;
    for (std::size_t l = 0; l < masks_.size(); ++l)
      out |= static_cast<std::uint32_t>(std::popcount(reg & masks_[l]) & 1) << l;
    return out;
  }

 private:
  unsigned memory_;
  std::vector<std::uint32_t> masks_;
};

namespace detail {

inline int poly_degree(std::uint64_t p) { return p ? 63 - std::countl_zero(p) : -1; }

inline std::uint64_t poly_mod(std::uint64_t a, std::uint64_t b) {
  const int db = poly_degree(b);
  for (int da = poly_degree(a); da >= db; da = poly_degree(a)) a ^= b << (da - db);
  return a;
}

inline std::uint64_t poly_gcd(std::uint64_t a, std::uint64_t b) {
  while (b) {
    a = poly_mod(a, b);
    std::swap(a, b);
  }
  return a;
}

}  // namespace detail

/// Catastrophic iff the generator polynomials share a factor other than D^k.
inline bool is_catastrophic(const ConvCodeSpec& code) {
  std::uint64_t g = code.generator_mask(0);
  for (unsigned l = 1; l < code.n_out(); ++l) g = detail::poly_gcd(g, code.generator_mask(l));
  return std::popcount(g) != 1;
}

/// Zero-terminated encoding: B info bits followed by M flush zeros give
/// T = B + M trellis steps, emitted step-major (v_t^(1) .. v_t^(L)).
inline BitVector conv_encode(const BitVector& info, const ConvCodeSpec& code) {
  if (info.empty()) throw ParameterError("cannot encode an empty information word");
  const unsigned M = code.memory(), L = code.n_out();
  const std::size_t T = info.size() + M;
  const std::uint32_t reg_mask = (1u << (M + 1)) - 1;
  BitVector out;
  std::uint32_t reg = 0;
  for (std::size_t t = 0; t < T; ++t) {
    std::uint32_t u = t < info.size() ? info[t] : 0;
    reg = ((reg << 1) | u) & reg_mask;
    auto o = code.branch_output(reg);
    for (unsigned l = 0; l < L; ++l) out.push_back((o >> l) & 1u);
  }
  return out;
}

/// Hard-decision Viterbi decoding over the zero-terminated trellis.
///
/// Returns the information word whose codeword is nearest in Hamming distance;
/// among equally near words the lexicographically smallest wins.
inline BitVector viterbi_decode(const BitVector& received, const ConvCodeSpec& code) {
  const unsigned M = code.memory(), L = code.n_out();
  if (received.size() % L != 0) throw ParameterError("received length is not a multiple of L");
  const std::size_t T = received.size() / L;
  if (T <= M) throw ParameterError("received frame shorter than the flush tail");
  const std::size_t B = T - M;
  const std::size_t S = code.states();
  const std::size_t words = (T + 63) / 64;
  constexpr std::uint32_t kInf = std::numeric_limits<std::uint32_t>::max() / 2;

  std::vector<std::uint32_t> branch(2 * S);
  for (std::uint32_t full = 0; full < 2 * S; ++full) branch[full] = code.branch_output(full);

  std::vector<std::uint32_t> metric(S, kInf), next_metric(S);
  std::vector<std::uint64_t> paths(S * words, 0), next_paths(S * words);
  metric[0] = 0;

  auto less_path = [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(paths.begin() + a * words, paths.begin() + (a + 1) * words,
                                        paths.begin() + b * words, paths.begin() + (b + 1) * words);
  };

  for (std::size_t t = 0; t < T; ++t) {
    std::uint32_t rx = 0;
    for (unsigned l = 0; l < L; ++l) rx |= std::uint32_t{received[t * L + l]} << l;
    std::fill(next_metric.begin(), next_metric.end(), kInf);
    const bool tail = t >= B;
    for (std::uint32_t ns = 0; ns < S; ++ns) {
      const std::uint32_t u = ns & 1u;
      if (tail && u) continue;
      // Predecessors differ only in the oldest register bit.
      std::size_t best = S;
      std::uint32_t best_metric = kInf;
      for (std::uint32_t top = 0; top < 2; ++top) {
        const std::uint32_t ps = (ns >> 1) | (top << (M - 1));
        if (metric[ps] >= kInf) continue;
        const std::uint32_t full = (ps << 1) | u;
        const std::uint32_t m = metric[ps] + static_cast<std::uint32_t>(std::popcount(branch[full] ^ rx));
        if (m < best_metric || (m == best_metric && less_path(ps, best))) {
          best_metric = m;
          best = ps;
        }
      }
      if (best == S) continue;
      next_metric[ns] = best_metric;
      std::copy_n(paths.begin() + best * words, words, next_paths.begin() + ns * words);
      if (u) next_paths[ns * words + t / 64] |= std::uint64_t{1} << (63 - t % 64);
    }
    metric.swap(next_metric);
    paths.swap(next_paths);
  }

  BitVector info(B);
  for (std::size_t t = 0; t < B; ++t) info[t] = (paths[t / 64] >> (63 - t % 64)) & 1u;
  return info;
}

struct FreeDistance {
  unsigned d_free;
  unsigned correctable;  // r = floor((d_free - 1) / 2)
};

/// Minimum output weight over all trellis paths that leave the zero state and
/// return to it (weighted breadth-first search, pruned at the impulse-response
/// weight, which is an upper bound).
inline FreeDistance free_distance(const ConvCodeSpec& code) {
  if (is_catastrophic(code)) throw ParameterError("catastrophic code: generators share a non-monomial factor");
  const std::uint32_t S = static_cast<std::uint32_t>(code.states());
  const std::uint32_t state_mask = S - 1;

  unsigned bound = 0;
  for (unsigned l = 0; l < code.n_out(); ++l) bound += static_cast<unsigned>(std::popcount(code.generator_mask(l)));

  std::vector<unsigned> dist(S, std::numeric_limits<unsigned>::max());
  using Item = std::pair<unsigned, std::uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> frontier;
  const unsigned w0 = static_cast<unsigned>(std::popcount(code.branch_output(1u)));
  const std::uint32_t s0 = 1u & state_mask;
  unsigned best = bound;
  if (s0 == 0) best = std::min(best, w0);
  dist[s0] = w0;
  frontier.push({w0, s0});
  while (!frontier.empty()) {
    auto [w, s] = frontier.top();
    frontier.pop();
    if (w != dist[s] || w >= best) continue;
    for (std::uint32_t u = 0; u < 2; ++u) {
      const std::uint32_t full = (s << 1) | u;
      const std::uint32_t ns = full & state_mask;
      const unsigned nw = w + static_cast<unsigned>(std::popcount(code.branch_output(full)));
      if (ns == 0) {
        best = std::min(best, nw);
        continue;
      }
      if (nw < dist[ns] && nw < best) {
        dist[ns] = nw;
        frontier.push({nw, ns});
      }
    }
  }
  return {best, (best - 1) / 2};
}

// --- convolutional interleaver, block (circular) mode ---

/// S branches with delays 0, Q, ..., (S-1)Q commutator cycles.
struct InterleaverSpec {
  unsigned branches = 8;  // S
  unsigned step = 4;      // Q

  void validate() const {
    if (branches < 2) throw ParameterError("interleaver needs S >= 2 branches");
    if (step < 1) throw ParameterError("interleaver step Q must be >= 1");
  }
};

namespace detail {

/// Destination index of every source position. Symbol i rides branch i mod S
/// and leaves (i mod S)*Q*S positions later; the register contents wrap around
/// the end of the frame so the block maps onto itself.
inline std::vector<std::size_t> interleave_map(std::size_t n, const InterleaverSpec& il) {
  il.validate();
  std::vector<std::size_t> dest(n);
  const std::size_t S = il.branches;
  for (std::size_t b = 0; b < S && b < n; ++b) {
    const std::size_t nb = (n - b + S - 1) / S;
    const std::size_t shift = (b * il.step) % nb;
    for (std::size_t k = 0; k < nb; ++k) dest[b + S * k] = b + S * ((k + shift) % nb);
  }
  return dest;
}

}  // namespace detail

inline BitVector interleave(const BitVector& x, const InterleaverSpec& il) {
  auto dest = detail::interleave_map(x.size(), il);
  BitVector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[dest[i]] = x[i];
  return out;
}

inline BitVector deinterleave(const BitVector& y, const InterleaverSpec& il) {
  auto dest = detail::interleave_map(y.size(), il);
  BitVector out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[dest[i]];
  return out;
}

// --- fuzzy extractor ---

enum class HelperScheme : std::uint8_t {
  code_offset = 0,
  literal = 1,  // helper data is the interleaved codeword of the response itself; leaks the key
};

struct HelperData {
  BitVector bits;
  HelperScheme scheme = HelperScheme::code_offset;

  friend bool operator==(const HelperData&, const HelperData&) = default;
};

/// Code + interleaver + frame geometry. The frame (= PUF response) holds one
/// terminated codeword of `info_len()` information bits.
struct FuzzyExtractor {
  ConvCodeSpec code = ConvCodeSpec::default_code();
  InterleaverSpec interleaver{};
  std::size_t frame_len = 384;

  std::size_t info_len() const {
    if (frame_len % code.n_out() != 0) throw ParameterError("frame length is not a multiple of L");
    const std::size_t steps = frame_len / code.n_out();
    if (steps <= code.memory()) throw ParameterError("frame too short for the code memory");
    return steps - code.memory();
  }

  void validate() const {
    interleaver.validate();
    (void)info_len();
    if (is_catastrophic(code)) throw ParameterError("catastrophic code rejected for key reconstruction");
  }
};

/// Canonical key layout under the literal scheme: the decodable response
/// prefix, zero-padded to the frame.
inline BitVector literal_key(const BitVector& response, const FuzzyExtractor& fe) {
  auto k = response.slice(0, fe.info_len());
  k.resize(fe.frame_len);
  return k;
}

template <class Rng>
HelperData fe_generate(const BitVector& response, const FuzzyExtractor& fe, HelperScheme scheme, Rng& rng) {
  fe.validate();
  if (response.size() != fe.frame_len)
    throw ParameterError("response length " + std::to_string(response.size()) + " != frame length " +
                         std::to_string(fe.frame_len));
  if (scheme == HelperScheme::literal)
    return {interleave(conv_encode(response.slice(0, fe.info_len()), fe.code), fe.interleaver), scheme};
  auto seed = BitVector::random(fe.info_len(), rng);
  return {interleave(conv_encode(seed, fe.code), fe.interleaver) ^ response, scheme};
}

/// Recovers the enrolled response from a noisy re-read. Patterns outside the
/// code's correctable set yield a wrong response without any signal; callers
/// detect that downstream.
inline BitVector fe_reproduce(const BitVector& noisy, const HelperData& hd, const FuzzyExtractor& fe) {
  fe.validate();
  if (hd.bits.size() != fe.frame_len) throw ParameterError("helper data length != frame length");
  if (hd.scheme == HelperScheme::literal) {
    auto k = viterbi_decode(deinterleave(hd.bits, fe.interleaver), fe.code);
    k.resize(fe.frame_len);
    return k;
  }
  if (noisy.size() != fe.frame_len) throw ParameterError("response length != frame length");
  auto seed = viterbi_decode(deinterleave(hd.bits ^ noisy, fe.interleaver), fe.code);
  return hd.bits ^ interleave(conv_encode(seed, fe.code), fe.interleaver);
}

// --- helper-data record: "PFHD" v1 ---

inline constexpr std::uint8_t kHelperFormatVersion = 1;

inline void write_helper(ByteWriter& w, const HelperData& hd) {
  w.raw("PFHD");
  w.u8(kHelperFormatVersion);
  w.u8(static_cast<std::uint8_t>(hd.scheme));
  w.u32(static_cast<std::uint32_t>(hd.bits.size()));
  w.raw(hd.bits.to_bytes());
}

inline HelperData read_helper(ByteReader& r) {
  r.expect_magic("PFHD");
  auto version = r.u8();
  if (version != kHelperFormatVersion) r.fail("unsupported helper-data version " + std::to_string(version), r.offset() - 1);
  auto tag = r.u8();
  if (tag > 1) r.fail("unknown helper scheme tag " + std::to_string(tag), r.offset() - 1);
  auto n = r.u32();
  auto payload = r.raw((std::size_t{n} + 7) / 8);
  return {BitVector::from_bytes(payload, n), static_cast<HelperScheme>(tag)};
}

inline Bytes save_helper_bytes(const HelperData& hd) {
  ByteWriter w;
  write_helper(w, hd);
  return std::move(w).bytes();
}

inline HelperData load_helper_bytes(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.section("helper data");
  auto hd = read_helper(r);
  if (!r.at_end()) r.fail("trailing bytes after helper record");
  return hd;
}

}  // namespace puflock
