#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "puflock/puf.hpp"

using namespace puflock;

namespace {

std::vector<Challenge> random_challenges(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Challenge> cs;
  for (std::size_t i = 0; i < n; ++i) cs.push_back(Challenge::random(rng));
  return cs;
}

// P(sign(X + E) != sign(X)) for X ~ N(0,1), E ~ N(0, sigma^2), by quadrature:
// 2 * int_0^inf phi(x) * Phi(-x / sigma) dx.
double flip_probability_quadrature(double sigma) {
  boost::math::normal_distribution<double> n01;
  auto f = [&](double x) { return boost::math::pdf(n01, x) * boost::math::cdf(n01, -x / sigma); };
  return 2.0 * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                   f, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-12);
}

}  // namespace

TEST(PufDevice, SameSeedSameDevice) {
  auto a = new_device(secret_from_u64(1), 0.0, 384);
  auto b = new_device(secret_from_u64(1), 0.0, 384);
  EXPECT_EQ(a.id(), b.id());
  for (const auto& c : random_challenges(20, 3)) EXPECT_EQ(a.reference_response(c), b.reference_response(c));
}

TEST(PufDevice, DistinctSeedsDifferInHalfTheBits) {
  auto a = new_device(secret_from_u64(1), 0.0, 384);
  auto b = new_device(secret_from_u64(2), 0.0, 384);
  double sum = 0.0;
  auto cs = random_challenges(1000, 11);
  for (const auto& c : cs) sum += fractional_hamming_distance(a.reference_response(c), b.reference_response(c));
  const double mean = sum / static_cast<double>(cs.size());
  EXPECT_NEAR(mean, 0.50, 0.03);
}

TEST(PufDevice, RejectsBadParameters) {
  EXPECT_THROW(new_device(secret_from_u64(1), -0.1, 384), ParameterError);
  EXPECT_THROW(new_device(secret_from_u64(1), 0.1, 0), ParameterError);
  EXPECT_THROW(new_device(secret_from_u64(1), std::nan(""), 384), ParameterError);
}

TEST(PufDevice, NoiselessEvaluationIsReproducible) {
  auto d = new_device(secret_from_u64(9), 0.0, 384);
  std::mt19937_64 rng(1);
  auto c = random_challenges(1, 4).front();
  EXPECT_EQ(d.evaluate(c, rng), d.evaluate(c, rng));
  EXPECT_EQ(d.evaluate(c, rng), d.reference_response(c));
}

TEST(PufDevice, RejectsWrongChallengeWidth) {
  auto d = new_device(secret_from_u64(9), 0.0, 384);
  std::mt19937_64 rng(1);
  EXPECT_THROW(d.evaluate(BitVector(64), rng), ParameterError);
  EXPECT_NO_THROW(d.evaluate(BitVector(kChallengeBits), rng));
}

TEST(PufDevice, LatentsAreStandardNormal) {
  auto d = new_device(secret_from_u64(21), 0.0, 384);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& c : random_challenges(50, 8))
    for (std::uint32_t j = 0; j < 384; ++j) {
      double x = d.latent(c, j);
      sum += x;
      sq += x * x;
      ++n;
    }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(CalibrateSigma, AnalyticFlipProbabilityMatchesQuadrature) {
  for (double s : {0.01, 0.05, 0.2, 1.0, 3.0}) EXPECT_NEAR(flip_probability(s), flip_probability_quadrature(s), 1e-9) << s;
}

TEST(CalibrateSigma, HitsTargetWithinTolerance) {
  for (double t : {0.001, 0.01, 0.02, 0.1, 0.3, 0.49}) {
    double sigma = calibrate_sigma(t);
    EXPECT_NEAR(flip_probability_quadrature(sigma), t, 1e-3) << t;
  }
}

TEST(CalibrateSigma, RejectsClosedBoundaries) {
  EXPECT_THROW(calibrate_sigma(0.0), ParameterError);
  EXPECT_THROW(calibrate_sigma(0.5), ParameterError);
  EXPECT_THROW(calibrate_sigma(-0.1), ParameterError);
}

TEST(CalibrateSigma, MonteCarloBerWithinHalfPercent) {
  for (double target : {0.01, 0.02, 0.05}) {
    auto d = new_device(secret_from_u64(5), calibrate_sigma(target), 384);
    std::mt19937_64 rng(77);
    // 1000 evaluations x 384 bits > 1e5 bit evaluations.
    auto cs = random_challenges(100, 13);
    double ber = measured_ber(d, cs, 10, rng);
    EXPECT_NEAR(ber, target, 0.005) << target;
  }
}

TEST(PufPopulation, UniquenessAndBias) {
  std::vector<PufDevice> devices;
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 100; ++i) devices.push_back(new_device(random_secret(rng), 0.0, 384));
  auto cs = random_challenges(4, 99);
  double inter = inter_device_distance(devices, cs);
  EXPECT_GE(inter, 0.45);
  EXPECT_LE(inter, 0.55);

  auto bias = bit_bias(devices, cs);
  for (double b : bias) {
    EXPECT_GE(b, 0.4);
    EXPECT_LE(b, 0.6);
  }
}

TEST(PufDeviceRecord, RoundTripAndErrors) {
  auto d = new_device(secret_from_u64(3), 0.125, 256);
  auto bytes = save_device_bytes(d);
  EXPECT_EQ(bytes.size(), 4u + 1 + 16 + 32 + 8 + 4);
  auto back = load_device_bytes(bytes);
  EXPECT_EQ(back.id(), d.id());
  EXPECT_EQ(back.secret(), d.secret());
  EXPECT_EQ(back.noise_sigma(), d.noise_sigma());
  EXPECT_EQ(back.response_len(), d.response_len());

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(load_device_bytes(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(load_device_bytes(bad), FormatError);
  bad.assign(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(load_device_bytes(bad), FormatError);
}

TEST(PufDevice, MajorityReadRecoversReference) {
  auto d = new_device(secret_from_u64(12), calibrate_sigma(0.02), 384);
  std::mt19937_64 rng(3);
  auto c = random_challenges(1, 5).front();
  auto maj = d.majority_response(c, 17, rng);
  EXPECT_LE(hamming_distance(maj, d.reference_response(c)), 2u);
  EXPECT_THROW(d.majority_response(c, 4, rng), ParameterError);
}
