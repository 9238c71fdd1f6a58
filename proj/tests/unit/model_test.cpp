#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>
#include <sstream>

#include "puflock/experiments.hpp"

using namespace puflock;

namespace {

const Experiment& trained() {
  static const Experiment ex = prepare_experiment(ExperimentSetup{});
  return ex;
}

CipherConfig float_cfg() {
  CipherConfig c;
  c.mode = CipherMode::floating;
  return c;
}

ModelWeights random_model(const std::vector<std::size_t>& arch, std::uint64_t seed) {
  auto m = init_mlp(arch, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<float> nd(0.0f, 0.3f);
  for (auto& l : m.layers)
    for (auto& b : l.bias) b = nd(rng);
  return m;
}

}  // namespace

TEST(ModelFormat, RoundTripIsBitIdentical) {
  auto m = random_model({5, 7, 3}, 1);
  m.layers[0].weights[2] = -0.0f;
  auto bytes = save_model_bytes(m);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PDWM");
  auto back = load_model_bytes(bytes);
  EXPECT_EQ(back, m);
  EXPECT_EQ(std::bit_cast<std::uint32_t>(back.layers[0].weights[2]), 0x80000000u);
  EXPECT_EQ(save_model_bytes(back), bytes);
}

TEST(ModelFormat, TruncationNamesTheSection) {
  auto bytes = save_model_bytes(random_model({4, 3, 2}, 2));
  for (std::size_t cut : {std::size_t{3}, std::size_t{8}, bytes.size() - 1, bytes.size() - 30}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      load_model_bytes(t);
      FAIL() << "loaded a truncated file";
    } catch (const FormatError& e) {
      EXPECT_FALSE(e.section().empty());
      EXPECT_LE(e.offset(), cut);
    }
  }
  std::vector<std::uint8_t> t(bytes.begin(), bytes.end() - 1);
  try {
    load_model_bytes(t);
  } catch (const FormatError& e) {
    EXPECT_EQ(e.section(), "layer 1");
  }
}

TEST(ModelFormat, UnknownVersionAndMagicRejected) {
  auto bytes = save_model_bytes(random_model({4, 2}, 3));
  auto v = bytes;
  v[4] = 9;
  EXPECT_THROW(load_model_bytes(v), FormatError);
  auto m = bytes;
  m[0] = 'X';
  EXPECT_THROW(load_model_bytes(m), FormatError);
  auto a = bytes;
  a.push_back(0);
  EXPECT_THROW(load_model_bytes(a), FormatError);
}

TEST(EncryptedFormat, RoundTripAllVariants) {
  auto m = random_model({6, 5, 4}, 4);
  std::mt19937_64 rng(4);
  ChallengeId id{};
  id[0] = 0xAB;
  id[15] = 0x01;
  for (auto mode : {CipherMode::floating, CipherMode::exact})
    for (bool biases : {false, true})
      for (std::size_t k : {std::size_t{1}, std::size_t{2}}) {
        CipherConfig cfg;
        cfg.mode = mode;
        cfg.encrypt_biases = biases;
        cfg.permute_rounds = 2;
        cfg.diffusion_rounds = 3;
        auto key = random_key(rng);
        auto e = encrypt_model(m, key, cfg, id, first_layers(2, k));
        auto bytes = save_encrypted_bytes(e);
        EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PDWE");
        auto back = load_encrypted_bytes(bytes);
        EXPECT_EQ(back.config, cfg);
        EXPECT_EQ(back.challenge_id, id);
        EXPECT_EQ(save_encrypted_bytes(back), bytes);
        EXPECT_EQ(decrypt_model(back, key), m);
      }
}

TEST(EncryptedFormat, ErrorsNameSectionAndRejectUnknownVersion) {
  std::mt19937_64 rng(5);
  auto e = encrypt_model(random_model({4, 3}, 5), random_key(rng), CipherConfig{}, ChallengeId{});
  auto bytes = save_encrypted_bytes(e);
  auto v = bytes;
  v[4] = 2;
  EXPECT_THROW(load_encrypted_bytes(v), FormatError);
  std::vector<std::uint8_t> t(bytes.begin(), bytes.end() - 5);
  try {
    load_encrypted_bytes(t);
    FAIL();
  } catch (const FormatError& err) {
    EXPECT_EQ(err.section(), "encrypted layer 0");
  }
  auto mode = bytes;
  mode[5] = 7;
  EXPECT_THROW(load_encrypted_bytes(mode), FormatError);
}

TEST(EncryptedFormat, EncryptionIsDeterministic) {
  std::mt19937_64 rng(6);
  auto key = random_key(rng);
  auto m = random_model({8, 4, 3}, 6);
  EXPECT_EQ(save_encrypted_bytes(encrypt_model(m, key, CipherConfig{}, ChallengeId{})),
            save_encrypted_bytes(encrypt_model(m, key, CipherConfig{}, ChallengeId{})));
}

TEST(Forward, IdentityLayer) {
  DenseLayer l{"id", 3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}, Activation::none};
  ModelWeights m{{l}};
  std::vector<float> x{0.5f, -2.0f, 3.25f};
  auto y = forward(m, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], double{x[i]});
  EXPECT_THROW(forward(m, std::vector<float>{1.0f}), ParameterError);
}

TEST(Forward, SoftmaxSumsToOne) {
  std::mt19937_64 rng(7);
  std::normal_distribution<float> nd(0.0f, 5.0f);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_model({6, 8, 5}, trial);
    std::vector<float> x(6);
    for (auto& v : x) v = nd(rng);
    auto y = forward(m, x);
    double s = 0;
    for (double v : y) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Forward, ArgmaxIgnoresNaN) {
  std::vector<double> v{std::nan(""), 0.2, std::nan(""), 0.7, 0.1};
  EXPECT_EQ(argmax(v), 3u);
  std::vector<double> all{std::nan(""), std::nan("")};
  EXPECT_EQ(argmax(all), 0u);
}

TEST(Forward, EncryptedEquivalenceExactIsBitwise) {
  const auto& ex = trained();
  std::mt19937_64 rng(8);
  auto key = random_key(rng);
  auto e = encrypt_model(ex.model, key, CipherConfig{}, ChallengeId{});
  for (std::size_t i = 0; i < 50; ++i) {
    auto a = forward(ex.model, ex.test.row(i));
    auto b = forward(e, &key, ex.test.row(i));
    ASSERT_EQ(a, b);
  }
}

TEST(Forward, EncryptedEquivalenceFloatWithinTolerance) {
  const auto& ex = trained();
  std::mt19937_64 rng(9);
  auto key = random_key(rng);
  auto e = encrypt_model(ex.model, key, float_cfg(), ChallengeId{});
  for (std::size_t i = 0; i < 50; ++i) {
    auto a = forward(ex.model, ex.test.row(i));
    auto b = forward(e, &key, ex.test.row(i));
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a[k], b[k], 1e-6);
  }
}

TEST(Forward, MissingKeyIsAUsageError) {
  std::mt19937_64 rng(10);
  auto m = random_model({4, 3}, 10);
  auto e = encrypt_model(m, random_key(rng), CipherConfig{}, ChallengeId{});
  EXPECT_THROW(forward(e, nullptr, std::vector<float>(4)), ParameterError);
  auto plain = encrypt_model(m, random_key(rng), CipherConfig{}, ChallengeId{}, first_layers(1, 0));
  EXPECT_NO_THROW(forward(plain, nullptr, std::vector<float>(4)));
}

TEST(Evaluate, TrainedModelAndChanceCollapse) {
  const auto& ex = trained();
  EXPECT_GE(ex.plain_accuracy, 0.9);
  std::mt19937_64 rng(11);
  for (auto cfg : {CipherConfig{}, float_cfg()}) {
    auto key = random_key(rng);
    auto e = encrypt_model(ex.model, key, cfg, ChallengeId{});
    EXPECT_NEAR(evaluate(ciphertext_as_model(e), ex.test).accuracy, 0.1, 0.05);
    auto wrong = random_key(rng);
    EXPECT_NEAR(evaluate(e, &wrong, ex.test).accuracy, 0.1, 0.05);
    EXPECT_EQ(evaluate(e, &key, ex.test).accuracy, ex.plain_accuracy);
  }
}

TEST(Evaluate, Preconditions) {
  const auto& ex = trained();
  Dataset empty{ex.test.dims, 10, {}, {}};
  EXPECT_THROW(evaluate(ex.model, empty), ParameterError);
  EXPECT_THROW(evaluate(ex.model, synth_blobs(10, 5, 2, 1)), ParameterError);
}

TEST(Evaluate, ReportText) {
  const auto& ex = trained();
  auto r = evaluate(ex.model, ex.test.slice(0, 100));
  r.config["model"] = "blobs";
  auto text = r.to_text();
  EXPECT_NE(text.find("accuracy="), std::string::npos);
  EXPECT_NE(text.find("total=100\n"), std::string::npos);
  EXPECT_NE(text.find("model=blobs\n"), std::string::npos);
  std::size_t sum = 0;
  for (auto c : r.class_total) sum += c;
  EXPECT_EQ(sum, 100u);
}

TEST(Train, SeparableTwoClassBlobs) {
  auto ds = synth_blobs(2, 4, 200, 3, 3.0);
  auto m = train_tiny(ds.slice(0, 300), {4, 8, 2}, {10, 0.01, 5});
  EXPECT_GE(evaluate(m, ds.slice(300, 100)).accuracy, 0.95);
}

TEST(Train, ZeroLearningRateKeepsInitialisation) {
  auto ds = synth_blobs(3, 4, 20, 3);
  EXPECT_EQ(train_tiny(ds, {4, 6, 3}, {3, 0.0, 9}), init_mlp({4, 6, 3}, 9));
}

TEST(Train, DeterministicPerSeed) {
  auto ds = synth_blobs(3, 4, 30, 3);
  EXPECT_EQ(train_tiny(ds, {4, 6, 3}, {2, 0.05, 4}), train_tiny(ds, {4, 6, 3}, {2, 0.05, 4}));
  EXPECT_NE(train_tiny(ds, {4, 6, 3}, {2, 0.05, 4}), train_tiny(ds, {4, 6, 3}, {2, 0.05, 5}));
  EXPECT_THROW(train_tiny(ds, {5, 6, 3}, {}), ParameterError);
  EXPECT_THROW(train_tiny(ds, {4, 6, 2}, {}), ParameterError);
}

TEST(Train, GradientsMatchCentralDifferences) {
  // 2 -> 1 -> 3: five weights (plus four biases).
  DenseLayer l1{"h", 1, 2, {0.7f, -0.4f}, {0.3f}, Activation::relu};
  DenseLayer l2{"o", 3, 1, {1.2f, -0.8f, 0.5f}, {0.1f, 0.0f, -0.2f}, Activation::softmax};
  ModelWeights toy{{l1, l2}};
  std::vector<std::pair<std::vector<float>, std::uint32_t>> samples{{{1.0f, 0.5f}, 0}, {{0.2f, -0.9f}, 2}, {{2.0f, 1.0f}, 1}};
  auto check = [](Net net, std::span<const float> x, std::uint32_t y) {
    std::vector<Net::Layer> g;
    net.loss_and_gradient(x, y, g);
    const double h = 1e-6;
    for (std::size_t j = 0; j < net.layers().size(); ++j) {
      for (int which = 0; which < 2; ++which) {
        auto& params = which ? net.layers()[j].b : net.layers()[j].w;
        const auto& grads = which ? g[j].b : g[j].w;
        for (std::size_t k = 0; k < params.size(); ++k) {
          const double saved = params[k];
          params[k] = saved + h;
          const double up = net.loss(x, y);
          params[k] = saved - h;
          const double down = net.loss(x, y);
          params[k] = saved;
          const double fd = (up - down) / (2 * h);
          const double scale = std::max({std::abs(fd), std::abs(grads[k]), 1e-8});
          EXPECT_LE(std::abs(fd - grads[k]) / scale, 1e-4) << j << "/" << which << "/" << k;
        }
      }
    }
  };
  for (const auto& [x, y] : samples) check(Net(toy), x, y);
  // and a wider random network away from ReLU kinks
  check(Net(random_model({5, 7, 6, 4}, 12)), std::vector<float>{0.3f, -1.1f, 0.8f, 0.05f, 1.7f}, 2);
}

TEST(Finetune, FractionValidation) {
  const auto& ex = trained();
  std::mt19937_64 rng(13);
  auto e = encrypt_model(ex.model, random_key(rng), float_cfg(), ChallengeId{});
  EXPECT_THROW(finetune_attack(e, ex.train, ex.test, {0.0}), ParameterError);
  EXPECT_THROW(finetune_attack(e, ex.train, ex.test, {1.5}), ParameterError);
}

TEST(Finetune, FullFractionApproachesRetraining) {
  const auto& ex = trained();
  std::mt19937_64 rng(14);
  auto e = encrypt_model(ex.model, random_key(rng), float_cfg(), ChallengeId{});
  auto attack = finetune_attack(e, ex.train, ex.test, {1.0, 10, 0.01, 3});
  std::printf("[ finetune ] fraction 1.0: %.3f, retrained from scratch: %.3f\n", attack.accuracy, ex.plain_accuracy);
  EXPECT_GE(attack.accuracy, ex.plain_accuracy - 0.05);
  EXPECT_EQ(attack.config.at("attack.rows"), "5000");
}

TEST(Finetune, ExactModeCiphertextStillTrains) {
  const auto& ex = trained();
  std::mt19937_64 rng(15);
  auto e = encrypt_model(ex.model, random_key(rng), CipherConfig{}, ChallengeId{});
  auto r = finetune_attack(e, ex.train, ex.test, {0.02, 2, 0.01, 3});
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
}

TEST(Dataset, ParseCsv) {
  std::istringstream in("# label,x,y\n0,1.5,2\n\n2, -1 ,0.25\n1,3,4\n");
  auto d = parse_csv(in, 3);
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.dims, 2u);
  EXPECT_EQ(d.labels, (std::vector<std::uint32_t>{0, 2, 1}));
  EXPECT_EQ(d.row(1)[0], -1.0f);
}

TEST(Dataset, CsvErrorsCarryLineNumbers) {
  auto expect_line = [](const std::string& text, const std::string& line) {
    std::istringstream in(text);
    try {
      parse_csv(in, 3);
      FAIL() << text;
    } catch (const ParameterError& e) {
      EXPECT_NE(std::string(e.what()).find(line), std::string::npos) << e.what();
    }
  };
  expect_line("0,1,2\n1,1,2\n3,1,2\n", "line 3");
  expect_line("0,1,2\nx,1,2\n", "line 2");
  expect_line("0,1,2\n1,1\n", "line 2");
  expect_line("0,1,abc\n", "line 1");
  expect_line("0\n", "line 1");
}

TEST(Dataset, BlobsAreDeterministic) {
  EXPECT_EQ(synth_blobs(10, 64, 100, 5), synth_blobs(10, 64, 100, 5));
  EXPECT_NE(synth_blobs(10, 64, 100, 5), synth_blobs(10, 64, 100, 6));
  auto d = synth_blobs(4, 3, 25, 1);
  EXPECT_EQ(d.size(), 100u);
  std::vector<int> counts(4, 0);
  for (auto y : d.labels) ++counts[y];
  EXPECT_EQ(counts, (std::vector<int>{25, 25, 25, 25}));
  EXPECT_THROW(synth_blobs(1, 3, 5, 1), ParameterError);
}

TEST(Dataset, CsvRoundTrip) {
  auto d = synth_blobs(3, 4, 5, 2);
  std::stringstream s;
  s.precision(9);
  write_csv(s, d);
  EXPECT_EQ(parse_csv(s, 3), d);
}
