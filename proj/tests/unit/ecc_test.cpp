#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <deque>
#include <numeric>
#include <random>
#include <vector>

#include "puflock/ecc.hpp"

using namespace puflock;

namespace {

// Direct evaluation of v_j^(l) = sum_m k_{j-m} g_m^(l) (mod 2) for j = 0..B+M-1,
// with k_j = 0 outside [0, B).
BitVector convolve_oracle(const BitVector& k, const std::vector<BitVector>& g, unsigned M) {
  const std::size_t B = k.size(), T = B + M, L = g.size();
  std::vector<std::vector<int>> v(L, std::vector<int>(T, 0));
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t m = 0; m <= M; ++m)
        if (j >= m && j - m < B) v[l][j] ^= k[j - m] & g[l][m];
  BitVector out;
  for (std::size_t j = 0; j < T; ++j)
    for (std::size_t l = 0; l < L; ++l) out.push_back(static_cast<std::uint8_t>(v[l][j]));
  return out;
}

// Minimum codeword weight over every non-zero information word of length <= max_len.
unsigned min_weight_oracle(const ConvCodeSpec& code, unsigned max_len) {
  unsigned best = ~0u;
  for (unsigned len = 1; len <= max_len; ++len)
    for (std::uint32_t w = 1; w < (1u << len); ++w) {
      BitVector k(len);
      for (unsigned i = 0; i < len; ++i) k[i] = (w >> i) & 1u;
      best = std::min(best, static_cast<unsigned>(conv_encode(k, code).weight()));
    }
  return best;
}

BitVector bits_of(std::uint32_t w, unsigned len) {
  BitVector k(len);
  for (unsigned i = 0; i < len; ++i) k[i] = (w >> i) & 1u;
  return k;
}

}  // namespace

TEST(ConvCodeSpec, ValidatesShape) {
  EXPECT_THROW(ConvCodeSpec(0, {BitVector{1}, BitVector{1}}), ParameterError);
  EXPECT_THROW(ConvCodeSpec(2, {BitVector{1, 0, 1}}), ParameterError);
  EXPECT_THROW(ConvCodeSpec(2, {BitVector{1, 0, 1}, BitVector{1, 1}}), ParameterError);
  EXPECT_THROW(ConvCodeSpec(2, {BitVector{0, 0, 1}, BitVector{0, 1, 1}}), ParameterError);
  auto c = ConvCodeSpec::default_code();
  EXPECT_EQ(c.n_in(), 1u);
  EXPECT_EQ(c.n_out(), 3u);
  EXPECT_EQ(c.memory(), 3u);
  EXPECT_EQ(c.generator(0).to_string(), "1011");
  EXPECT_EQ(c.generator(1).to_string(), "1101");
  EXPECT_EQ(c.generator(2).to_string(), "1111");
}

TEST(ConvEncode, ImpulseResponseIsGenerators) {
  auto code = ConvCodeSpec::default_code();
  auto v = conv_encode(BitVector{1}, code);
  ASSERT_EQ(v.size(), 3u * (1 + 3));
  for (unsigned l = 0; l < 3; ++l)
    for (unsigned t = 0; t <= 3; ++t) EXPECT_EQ(v[t * 3 + l], code.generator(l)[t]) << l << "," << t;
}

TEST(ConvEncode, ZeroInputGivesZeroCodeword) {
  auto code = ConvCodeSpec::default_code();
  auto v = conv_encode(BitVector(8), code);
  EXPECT_EQ(v.size(), 3u * (8 + 3));
  EXPECT_EQ(v.weight(), 0u);
}

TEST(ConvEncode, EmptyInputRejected) {
  EXPECT_THROW(conv_encode(BitVector{}, ConvCodeSpec::default_code()), ParameterError);
}

TEST(ConvEncode, MatchesDirectConvolution) {
  auto code = ConvCodeSpec::default_code();
  std::vector<BitVector> g{code.generator(0), code.generator(1), code.generator(2)};
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    auto k = BitVector::random(16, rng);
    EXPECT_EQ(conv_encode(k, code), convolve_oracle(k, g, 3));
  }
  auto other = ConvCodeSpec::from_octal(2, {07, 05});
  std::vector<BitVector> g2{other.generator(0), other.generator(1)};
  for (int trial = 0; trial < 50; ++trial) {
    auto k = BitVector::random(1 + trial % 20, rng);
    EXPECT_EQ(conv_encode(k, other), convolve_oracle(k, g2, 2));
  }
}

TEST(ConvEncode, LinearOverGf2) {
  auto code = ConvCodeSpec::default_code();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    auto a = BitVector::random(40, rng), b = BitVector::random(40, rng);
    EXPECT_EQ(conv_encode(a ^ b, code), conv_encode(a, code) ^ conv_encode(b, code));
  }
}

TEST(Viterbi, NoiselessRoundTripExhaustiveUpTo12) {
  auto code = ConvCodeSpec::default_code();
  for (unsigned len = 1; len <= 12; ++len)
    for (std::uint32_t w = 0; w < (1u << len); ++w) {
      auto k = bits_of(w, len);
      ASSERT_EQ(viterbi_decode(conv_encode(k, code), code), k) << len << ":" << w;
    }
}

TEST(Viterbi, RejectsLengthNotMultipleOfL) {
  auto code = ConvCodeSpec::default_code();
  EXPECT_THROW(viterbi_decode(BitVector(14), code), ParameterError);
  EXPECT_THROW(viterbi_decode(BitVector(9), code), ParameterError);  // T = 3 <= M
}

TEST(Viterbi, TiesResolveToLexicographicallySmallerWord) {
  // Rate 1/2, M = 1, generators 1+D and 1: codeword of k=1 is 11 10, of k=0 is 00 00.
  auto code = ConvCodeSpec::from_octal(1, {03, 02});
  // Codewords: k=0 -> 00 00, k=1 -> 11 10.
  EXPECT_EQ(viterbi_decode(BitVector::from_string("1100"), code).to_string(), "1");
  EXPECT_EQ(viterbi_decode(BitVector::from_string("0110"), code).to_string(), "1");
  EXPECT_EQ(viterbi_decode(BitVector::from_string("1000"), code).to_string(), "0");
  EXPECT_EQ(viterbi_decode(BitVector::from_string("0100"), code).to_string(), "0");
  // Two-bit words: 00 -> 000000, 10 -> 111000, 11 -> 110110, 01 -> 001110.
  // 100100 and 010010 sit at distance 2 from both 00 and 11.
  EXPECT_EQ(viterbi_decode(BitVector::from_string("100100"), code).to_string(), "00");
  EXPECT_EQ(viterbi_decode(BitVector::from_string("010010"), code).to_string(), "00");
  // 101010 sits at distance 2 from both 10 and 01.
  EXPECT_EQ(viterbi_decode(BitVector::from_string("101010"), code).to_string(), "01");
  // Unambiguous: 111110 is one flip away from 11.
  EXPECT_EQ(viterbi_decode(BitVector::from_string("111110"), code).to_string(), "11");
}

TEST(FreeDistance, DefaultCodeMatchesBruteForce) {
  auto code = ConvCodeSpec::default_code();
  auto fd = free_distance(code);
  EXPECT_EQ(fd.d_free, min_weight_oracle(code, 16));
  EXPECT_EQ(fd.d_free, 10u);  // published optimum for rate 1/3, constraint length 4
  EXPECT_EQ(fd.correctable, 4u);
}

TEST(FreeDistance, SmallCodesMatchBruteForce) {
  for (auto code : {ConvCodeSpec::from_octal(2, {07, 05}), ConvCodeSpec::from_octal(1, {03, 02}),
                    ConvCodeSpec::from_octal(4, {023, 035}), ConvCodeSpec::from_octal(3, {015, 017})}) {
    auto fd = free_distance(code);
    EXPECT_EQ(fd.d_free, min_weight_oracle(code, 14));
    EXPECT_EQ(fd.correctable, (fd.d_free - 1) / 2);
  }
}

TEST(FreeDistance, HandEnumeratedTwoTapCode) {
  // Generators 1+D and 1: k=1 -> 11 10 (weight 3); k=11 -> 11 01 10 (weight 4);
  // longer words only add weight. d_free = 3, r = 1.
  auto fd = free_distance(ConvCodeSpec::from_octal(1, {03, 02}));
  EXPECT_EQ(fd.d_free, 3u);
  EXPECT_EQ(fd.correctable, 1u);
}

TEST(FreeDistance, RejectsCatastrophicCode) {
  // Both generators equal 1+D: the all-ones input produces a finite-weight output.
  ConvCodeSpec rep(1, {BitVector{1, 1}, BitVector{1, 1}});
  EXPECT_TRUE(is_catastrophic(rep));
  EXPECT_THROW(free_distance(rep), ParameterError);
  EXPECT_FALSE(is_catastrophic(ConvCodeSpec::default_code()));
  // D + D^2 = D(1 + D) and 1 + D^2 = (1 + D)^2 share 1 + D.
  EXPECT_TRUE(is_catastrophic(ConvCodeSpec(2, {BitVector{0, 1, 1}, BitVector{1, 0, 1}})));
  // 1 + D + D^2 is irreducible and does not divide D(1 + D).
  EXPECT_FALSE(is_catastrophic(ConvCodeSpec(2, {BitVector{0, 1, 1}, BitVector{1, 1, 1}})));
}

TEST(Viterbi, CorrectsRandomErrorsUpToR) {
  auto code = ConvCodeSpec::default_code();
  const unsigned r = free_distance(code).correctable;
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    auto k = BitVector::random(125, rng);
    auto c = conv_encode(k, code);
    std::vector<std::size_t> pos(c.size());
    std::iota(pos.begin(), pos.end(), 0);
    std::shuffle(pos.begin(), pos.end(), rng);
    for (unsigned e = 0; e < r; ++e) c.flip(pos[e]);
    ASSERT_EQ(viterbi_decode(c, code), k) << trial;
  }
}

TEST(Viterbi, CorrectsEveryPatternUpToRShortWords) {
  auto code = ConvCodeSpec::default_code();
  const unsigned r = free_distance(code).correctable;
  std::mt19937_64 rng(8);
  for (unsigned len : {1u, 3u, 8u}) {
    const std::size_t n = 3 * (len + 3);
    std::vector<BitVector> words{BitVector(len), BitVector::random(len, rng)};
    for (const auto& k : words) {
      const auto c = conv_encode(k, code);
      std::vector<std::size_t> idx;
      std::size_t checked = 0;
      auto rec = [&](auto&& self, std::size_t start, unsigned left, BitVector& y) -> void {
        ASSERT_EQ(viterbi_decode(y, code), k);
        ++checked;
        if (left == 0) return;
        for (std::size_t i = start; i < n; ++i) {
          y.flip(i);
          self(self, i + 1, left - 1, y);
          y.flip(i);
        }
      };
      auto y = c;
      rec(rec, 0, r, y);
      EXPECT_GT(checked, 0u);
    }
  }
}

TEST(Viterbi, BurstBeyondRWithoutInterleavingCanFail) {
  auto code = ConvCodeSpec::default_code();
  const unsigned burst = free_distance(code).correctable + 3;
  std::mt19937_64 rng(12);
  int failures = 0, trials = 500;
  for (int t = 0; t < trials; ++t) {
    auto k = BitVector::random(125, rng);
    auto c = conv_encode(k, code);
    std::size_t start = rng() % (c.size() - burst);
    for (std::size_t i = 0; i < burst; ++i) c.flip(start + i);
    failures += viterbi_decode(c, code) != k;
  }
  std::printf("[ burst ] %u consecutive flips, no interleaver: %d/%d decoding failures\n", burst, failures, trials);
  EXPECT_GT(failures, 0);
}

TEST(Interleaver, InverseForAllLengths) {
  std::mt19937_64 rng(3);
  for (InterleaverSpec il : {InterleaverSpec{8, 4}, InterleaverSpec{2, 1}, InterleaverSpec{5, 3}}) {
    for (std::size_t n = 1; n <= 200; ++n) {
      auto x = BitVector::random(n, rng);
      ASSERT_EQ(deinterleave(interleave(x, il), il), x) << n;
      ASSERT_EQ(interleave(deinterleave(x, il), il), x) << n;
    }
  }
  for (int trial = 0; trial < 1000; ++trial) {
    auto x = BitVector::random(1 + rng() % 600, rng);
    ASSERT_EQ(deinterleave(interleave(x, InterleaverSpec{}), InterleaverSpec{}), x);
  }
}

TEST(Interleaver, RejectsDegenerateGeometry) {
  EXPECT_THROW(interleave(BitVector(8), InterleaverSpec{1, 4}), ParameterError);
  EXPECT_THROW(interleave(BitVector(8), InterleaverSpec{8, 0}), ParameterError);
}

TEST(Interleaver, MatchesShiftRegisterSchedule) {
  // Streaming convolutional interleaver: the commutator visits branch t mod S;
  // branch b is a FIFO of b*Q cells. Feeding the block twice and keeping the
  // second period yields the steady-state (wrapped) block mapping.
  auto simulate = [](const BitVector& x, unsigned S, unsigned Q) {
    std::vector<std::deque<std::uint8_t>> fifo(S);
    for (unsigned b = 0; b < S; ++b) fifo[b].assign(b * Q, 0);
    BitVector out;
    for (std::size_t t = 0; t < 2 * x.size(); ++t) {
      auto& f = fifo[t % S];
      f.push_back(x[t % x.size()]);
      std::uint8_t y = f.front();
      f.pop_front();
      if (t >= x.size()) out.push_back(y);
    }
    return out;
  };
  auto x = BitVector::from_string("110100");
  EXPECT_EQ(interleave(x, {2, 1}), simulate(x, 2, 1));
  // by hand: odd positions are delayed by two places (wrapping), even ones pass through.
  EXPECT_EQ(interleave(x, {2, 1}).to_string(), "100101");
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto y = BitVector::random(384, rng);
    EXPECT_EQ(interleave(y, {8, 4}), simulate(y, 8, 4));
  }
}

TEST(Interleaver, DispersesBurstsOfLengthS) {
  const InterleaverSpec il{8, 4};
  const std::size_t n = 384;
  std::size_t min_gap = n;
  for (std::size_t start = 0; start + il.branches <= n; ++start) {
    BitVector e(n);
    for (std::size_t i = 0; i < il.branches; ++i) e[start + i] = 1;
    auto d = deinterleave(e, il);
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < n; ++i)
      if (d[i]) pos.push_back(i);
    ASSERT_EQ(pos.size(), il.branches);
    for (std::size_t a = 1; a < pos.size(); ++a) min_gap = std::min(min_gap, pos[a] - pos[a - 1]);
  }
  // Symbols on adjacent branches end up Q*S - 1 apart.
  EXPECT_EQ(min_gap, std::size_t{il.step} * il.branches - 1);
}

TEST(FuzzyExtractor, DefaultGeometry) {
  FuzzyExtractor fe;
  EXPECT_EQ(fe.info_len(), 125u);
  EXPECT_EQ(conv_encode(BitVector(fe.info_len()), fe.code).size(), fe.frame_len);
}

TEST(FuzzyExtractor, CodeOffsetHelperMasksACodeword) {
  FuzzyExtractor fe;
  std::mt19937_64 rng(1);
  auto resp = BitVector::random(fe.frame_len, rng);
  auto hd = fe_generate(resp, fe, HelperScheme::code_offset, rng);
  auto c = deinterleave(hd.bits ^ resp, fe.interleaver);
  EXPECT_EQ(conv_encode(viterbi_decode(c, fe.code), fe.code), c);
  auto hd2 = fe_generate(resp, fe, HelperScheme::code_offset, rng);
  EXPECT_NE(hd.bits, hd2.bits);
}

TEST(FuzzyExtractor, RejectsLengthMismatch) {
  FuzzyExtractor fe;
  std::mt19937_64 rng(1);
  EXPECT_THROW(fe_generate(BitVector(383), fe, HelperScheme::code_offset, rng), ParameterError);
  auto hd = fe_generate(BitVector(384), fe, HelperScheme::code_offset, rng);
  EXPECT_THROW(fe_reproduce(BitVector(380), hd, fe), ParameterError);
}

TEST(FuzzyExtractor, NoiselessReproductionIsExact) {
  FuzzyExtractor fe;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    auto resp = BitVector::random(fe.frame_len, rng);
    auto hd = fe_generate(resp, fe, HelperScheme::code_offset, rng);
    ASSERT_EQ(fe_reproduce(resp, hd, fe), resp);
  }
}

TEST(FuzzyExtractor, OnePercentBerSuccessRate) {
  FuzzyExtractor fe;
  std::mt19937_64 rng(2025);
  std::bernoulli_distribution flip(0.01);
  int ok = 0;
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) {
    auto resp = BitVector::random(fe.frame_len, rng);
    auto hd = fe_generate(resp, fe, HelperScheme::code_offset, rng);
    auto noisy = resp;
    for (std::size_t j = 0; j < noisy.size(); ++j)
      if (flip(rng)) noisy.flip(j);
    ok += fe_reproduce(noisy, hd, fe) == resp;
  }
  std::printf("[ fe ] 1%% BER reproduction success: %d/%d\n", ok, trials);
  EXPECT_GE(ok, 990);
}

TEST(FuzzyExtractor, EveryPatternUpToRInSmallFrame) {
  // info length 8 -> 33-bit frame.
  FuzzyExtractor fe{ConvCodeSpec::default_code(), InterleaverSpec{8, 4}, 33};
  ASSERT_EQ(fe.info_len(), 8u);
  const unsigned r = free_distance(fe.code).correctable;
  std::mt19937_64 rng(9);
  auto resp = BitVector::random(fe.frame_len, rng);
  auto hd = fe_generate(resp, fe, HelperScheme::code_offset, rng);
  std::size_t patterns = 0;
  auto rec = [&](auto&& self, std::size_t start, unsigned left, BitVector& y) -> void {
    ASSERT_EQ(fe_reproduce(y, hd, fe), resp);
    ++patterns;
    if (left == 0) return;
    for (std::size_t i = start; i < fe.frame_len; ++i) {
      y.flip(i);
      self(self, i + 1, left - 1, y);
      y.flip(i);
    }
  };
  auto y = resp;
  rec(rec, 0, r, y);
  EXPECT_EQ(patterns, 1u + 33 + 528 + 5456 + 40920);
}

TEST(FuzzyExtractor, LiteralHelperRevealsKey) {
  FuzzyExtractor fe;
  std::mt19937_64 rng(10);
  auto resp = BitVector::random(fe.frame_len, rng);
  auto hd = fe_generate(resp, fe, HelperScheme::literal, rng);
  // The helper data alone reproduces the key, whatever response is presented.
  EXPECT_EQ(fe_reproduce(BitVector::random(fe.frame_len, rng), hd, fe), literal_key(resp, fe));
  EXPECT_EQ(fe_reproduce(resp, hd, fe), literal_key(resp, fe));
}

TEST(HelperRecord, RoundTripAndErrors) {
  HelperData hd{BitVector::from_string("1011001110"), HelperScheme::code_offset};
  auto bytes = save_helper_bytes(hd);
  EXPECT_EQ(bytes.size(), 4u + 1 + 1 + 4 + 2);
  EXPECT_EQ(load_helper_bytes(bytes), hd);
  auto bad = bytes;
  bad[5] = 7;
  EXPECT_THROW(load_helper_bytes(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(load_helper_bytes(bad), FormatError);
}
