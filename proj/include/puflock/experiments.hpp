#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "puflock/dataset.hpp"
#include "puflock/encrypted_model.hpp"
#include "puflock/train.hpp"

namespace puflock {

/// Desk-scale stand-in for the encrypted-model experiments: a small MLP on
/// 10-class Gaussian blobs.
struct ExperimentSetup {
  unsigned classes = 10;
  std::size_t dims = 32;
  std::size_t per_class = 600;
  std::size_t train_rows = 5000;  // the rest is the test split
  double spread = 0.75;
  std::vector<std::size_t> hidden{64, 32};
  TrainConfig train{10, 0.01, 1};
  std::uint64_t data_seed = 7;
};

struct Experiment {
  Dataset train;
  Dataset test;
  ModelWeights model;
  double plain_accuracy = 0.0;
};

inline Experiment prepare_experiment(const ExperimentSetup& s) {
  auto all = synth_blobs(s.classes, s.dims, s.per_class, s.data_seed, s.spread);
  if (s.train_rows >= all.size()) throw ParameterError("no rows left for the test split");
  Experiment e{all.slice(0, s.train_rows), all.slice(s.train_rows, all.size() - s.train_rows), {}, 0.0};
  std::vector<std::size_t> arch{s.dims};
  arch.insert(arch.end(), s.hidden.begin(), s.hidden.end());
  arch.push_back(s.classes);
  e.model = train_tiny(e.train, arch, s.train);
  e.plain_accuracy = evaluate(e.model, e.test).accuracy;
  return e;
}

/// Key of the default response width drawn from `rng`.
template <class Rng>
SecretKey random_key(Rng& rng, std::size_t bits = 384) {
  return SecretKey(BitVector::random(bits, rng));
}

/// Accuracy of the ciphertext used directly as weights (no key).
inline double keyless_accuracy(const ModelWeights& m, const Dataset& test, const SecretKey& key, const CipherConfig& cfg,
                               std::vector<bool> selection = {}) {
  auto e = encrypt_model(m, key, cfg, ChallengeId{}, std::move(selection));
  return evaluate(ciphertext_as_model(e), test).accuracy;
}

/// Mean keyless accuracy over `keys` independent keys.
inline double mean_keyless_accuracy(const Experiment& ex, const CipherConfig& cfg, const std::vector<bool>& selection,
                                    unsigned keys, std::uint64_t key_seed) {
  std::mt19937_64 rng(key_seed);
  double sum = 0.0;
  for (unsigned k = 0; k < keys; ++k) sum += keyless_accuracy(ex.model, ex.test, random_key(rng), cfg, selection);
  return sum / keys;
}

/// Mean post-attack accuracy, indexed [encrypted layer count - 1][fraction].
inline std::vector<std::vector<double>> finetune_grid(const Experiment& ex, const CipherConfig& cfg,
                                                      const std::vector<double>& fractions,
                                                      const std::vector<std::size_t>& layer_counts, unsigned keys,
                                                      std::uint64_t key_seed, FinetuneConfig ft = {}) {
  std::vector<std::vector<double>> grid(layer_counts.size(), std::vector<double>(fractions.size(), 0.0));
  std::mt19937_64 rng(key_seed);
  for (unsigned k = 0; k < keys; ++k) {
    const auto key = random_key(rng);
    for (std::size_t a = 0; a < layer_counts.size(); ++a) {
      auto e = encrypt_model(ex.model, key, cfg, ChallengeId{}, first_layers(ex.model.layers.size(), layer_counts[a]));
      for (std::size_t b = 0; b < fractions.size(); ++b) {
        ft.fraction = fractions[b];
        grid[a][b] += finetune_attack(e, ex.train, ex.test, ft).accuracy / keys;
      }
    }
  }
  return grid;
}

}  // namespace puflock
