#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "puflock/chaos.hpp"
#include "puflock/error.hpp"

namespace puflock {

enum class CipherMode : std::uint8_t {
  floating = 0,  // 64-bit real add/subtract of the keystream value
  exact = 1,     // modular add/subtract on the 32-bit IEEE-754 pattern of each weight
};

inline const char* to_string(CipherMode m) { return m == CipherMode::exact ? "exact" : "float"; }

struct CipherConfig {
  unsigned permute_rounds = 3;    // n_p
  unsigned diffusion_rounds = 2;  // n_d
  CipherMode mode = CipherMode::exact;
  std::size_t warmup = kDefaultWarmup;  // T_pre
  bool encrypt_biases = false;
  unsigned permute_group_bits = kDefaultGroupBits;
  unsigned diffusion_group_bits = kDefaultGroupBits;

  void validate() const {
    if (permute_rounds < 1 || diffusion_rounds < 1) throw ParameterError("n_p and n_d must be at least 1");
  }

  friend bool operator==(const CipherConfig&, const CipherConfig&) = default;
};

/// Row-major dense tensor.
template <class T>
struct BasicTensor {
  std::vector<std::size_t> shape;
  std::vector<T> values;

  static std::size_t count(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  static BasicTensor from_rows(const std::vector<std::vector<T>>& rows) {
    BasicTensor t;
    t.shape = {rows.size(), rows.empty() ? 0 : rows.front().size()};
    for (const auto& r : rows) {
      if (r.size() != t.shape[1]) throw ParameterError("ragged rows");
      t.values.insert(t.values.end(), r.begin(), r.end());
    }
    return t;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;
};

using Tensor = BasicTensor<float>;

template <class T>
std::vector<T> flatten(const BasicTensor<T>& t) {
  if (BasicTensor<T>::count(t.shape) != t.values.size()) throw ParameterError("tensor shape does not match element count");
  return t.values;
}

template <class T>
BasicTensor<T> reshape(std::vector<T> v, std::vector<std::size_t> shape) {
  if (BasicTensor<T>::count(shape) != v.size())
    throw ParameterError("reshape: " + std::to_string(v.size()) + " elements do not fit the requested shape");
  return {std::move(shape), std::move(v)};
}

/// out[t] = v[pi[t]]
template <class T>
std::vector<T> permute_round(std::span<const T> v, const Permutation& pi) {
  if (pi.size() != v.size()) throw ParameterError("permutation length mismatch");
  std::vector<T> out(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) out[t] = v[pi[t]];
  return out;
}

template <class T>
std::vector<T> unpermute_round(std::span<const T> v, const Permutation& pi) {
  if (pi.size() != v.size()) throw ParameterError("permutation length mismatch");
  std::vector<T> out(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) out[pi[t]] = v[t];
  return out;
}

inline std::uint32_t keystream_word(double s) { return static_cast<std::uint32_t>(std::floor(s * 0x1p32)); }

/// Float diffusion: v + s where s < 0.5, v - s otherwise.
inline std::vector<double> diffuse(std::span<const double> v, std::span<const double> s) {
  if (v.size() != s.size()) throw ParameterError("keystream length mismatch");
  std::vector<double> out(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) out[t] = s[t] < 0.5 ? v[t] + s[t] : v[t] - s[t];
  return out;
}

inline std::vector<double> undiffuse(std::span<const double> v, std::span<const double> s) {
  if (v.size() != s.size()) throw ParameterError("keystream length mismatch");
  std::vector<double> out(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) out[t] = s[t] < 0.5 ? v[t] - s[t] : v[t] + s[t];
  return out;
}

/// Exact diffusion on 32-bit words, arithmetic modulo 2^32.
inline std::vector<std::uint32_t> diffuse(std::span<const std::uint32_t> v, std::span<const double> s) {
  if (v.size() != s.size()) throw ParameterError("keystream length mismatch");
  std::vector<std::uint32_t> out(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) out[t] = s[t] < 0.5 ? v[t] + keystream_word(s[t]) : v[t] - keystream_word(s[t]);
  return out;
}

inline std::vector<std::uint32_t> undiffuse(std::span<const std::uint32_t> v, std::span<const double> s) {
  if (v.size() != s.size()) throw ParameterError("keystream length mismatch");
  std::vector<std::uint32_t> out(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) out[t] = s[t] < 0.5 ? v[t] - keystream_word(s[t]) : v[t] + keystream_word(s[t]);
  return out;
}

/// Every keystream segment one layer consumes, in forward order.
///
/// Round (d, p) takes logistic values [(d*n_p + p)*n, (d*n_p + p + 1)*n) after
/// warmup; diffusion round d takes NCA values [d*n, (d+1)*n). Both streams
/// restart for each layer.
struct KeySchedule {
  std::size_t length = 0;
  unsigned permute_rounds = 0;
  std::vector<Permutation> permutations;     // index d*n_p + p
  std::vector<std::size_t> permute_offsets;  // logistic stream offset of each permutation
  std::vector<std::vector<double>> diffusion;
  std::vector<std::size_t> diffusion_offsets;
};

inline KeySchedule make_schedule(const SecretKey& key, const CipherConfig& cfg, std::size_t n) {
  cfg.validate();
  if (n == 0) throw ParameterError("cannot schedule an empty layer");
  const auto lp = derive_logistic(key.permute_half(), cfg.permute_group_bits);
  const auto np = derive_nca(key.diffusion_half(), cfg.diffusion_group_bits);
  LogisticStream logistic(lp, cfg.warmup);
  NcaStream nca(np, cfg.warmup);

  KeySchedule ks;
  ks.length = n;
  ks.permute_rounds = cfg.permute_rounds;
  std::vector<double> seg(n);
  for (unsigned d = 0; d < cfg.diffusion_rounds; ++d) {
    for (unsigned p = 0; p < cfg.permute_rounds; ++p) {
      ks.permute_offsets.push_back((std::size_t{d} * cfg.permute_rounds + p) * n);
      for (auto& v : seg) v = logistic.next();
      ks.permutations.push_back(permutation_from_sequence(seg));
    }
    ks.diffusion_offsets.push_back(std::size_t{d} * n);
    for (auto& v : seg) v = nca.next();
    ks.diffusion.push_back(seg);
  }
  return ks;
}

template <class T>
std::vector<T> encrypt_flat(std::vector<T> v, const KeySchedule& ks) {
  if (v.size() != ks.length) throw ParameterError("layer length does not match key schedule");
  for (std::size_t d = 0; d < ks.diffusion.size(); ++d) {
    for (unsigned p = 0; p < ks.permute_rounds; ++p)
      v = permute_round<T>(v, ks.permutations[d * ks.permute_rounds + p]);
    v = diffuse(std::span<const T>(v), ks.diffusion[d]);
  }
  return v;
}

template <class T>
std::vector<T> decrypt_flat(std::vector<T> v, const KeySchedule& ks) {
  if (v.size() != ks.length) throw ParameterError("layer length does not match key schedule");
  for (std::size_t d = ks.diffusion.size(); d-- > 0;) {
    v = undiffuse(std::span<const T>(v), ks.diffusion[d]);
    for (unsigned p = ks.permute_rounds; p-- > 0;)
      v = unpermute_round<T>(v, ks.permutations[d * ks.permute_rounds + p]);
  }
  return v;
}

using CipherPayload = std::variant<std::vector<double>, std::vector<std::uint32_t>>;

struct LayerCiphertext {
  std::vector<std::size_t> shape;
  CipherMode mode = CipherMode::exact;
  std::uint32_t layer_index = 0;
  CipherPayload payload;

  std::size_t size() const {
    return std::visit([](const auto& v) { return v.size(); }, payload);
  }

  /// The ciphertext read as ordinary weights (what a keyless holder sees).
  std::vector<float> as_weights() const {
    std::vector<float> out(size());
    if (const auto* real = std::get_if<std::vector<double>>(&payload))
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((*real)[i]);
    else {
      const auto& words = std::get<std::vector<std::uint32_t>>(payload);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(words[i]);
    }
    return out;
  }

  friend bool operator==(const LayerCiphertext&, const LayerCiphertext&) = default;
};

inline LayerCiphertext encrypt_values(std::span<const float> values, std::vector<std::size_t> shape,
                                      const SecretKey& key, const CipherConfig& cfg, std::uint32_t layer_index) {
  if (Tensor::count(shape) != values.size()) throw ParameterError("tensor shape does not match element count");
  const auto ks = make_schedule(key, cfg, values.size());
  LayerCiphertext c{std::move(shape), cfg.mode, layer_index, {}};
  if (cfg.mode == CipherMode::floating) {
    c.payload = encrypt_flat(std::vector<double>(values.begin(), values.end()), ks);
  } else {
    std::vector<std::uint32_t> words(values.size());
    for (std::size_t i = 0; i < words.size(); ++i) words[i] = std::bit_cast<std::uint32_t>(values[i]);
    c.payload = encrypt_flat(std::move(words), ks);
  }
  return c;
}

inline LayerCiphertext encrypt_layer(const Tensor& w, const SecretKey& key, const CipherConfig& cfg,
                                     std::uint32_t layer_index) {
  return encrypt_values(flatten(w), w.shape, key, cfg, layer_index);
}

namespace detail {

inline void check_cipher_metadata(const LayerCiphertext& c, const CipherConfig& cfg) {
  if (c.mode != cfg.mode) throw FormatError("layer ciphertext", 0, "cipher mode does not match configuration");
  const bool real = std::holds_alternative<std::vector<double>>(c.payload);
  if (real != (c.mode == CipherMode::floating))
    throw FormatError("layer ciphertext", 0, "payload element type does not match cipher mode");
  if (Tensor::count(c.shape) != c.size()) throw FormatError("layer ciphertext", 0, "shape does not match element count");
}

}  // namespace detail

/// Decrypted float-mode values before rounding back to binary32.
inline std::vector<double> decrypt_real(const LayerCiphertext& c, const SecretKey& key, const CipherConfig& cfg) {
  detail::check_cipher_metadata(c, cfg);
  if (c.mode != CipherMode::floating) throw ParameterError("decrypt_real needs a float-mode ciphertext");
  return decrypt_flat(std::get<std::vector<double>>(c.payload), make_schedule(key, cfg, c.size()));
}

inline Tensor decrypt_layer(const LayerCiphertext& c, const SecretKey& key, const CipherConfig& cfg) {
  detail::check_cipher_metadata(c, cfg);
  Tensor t{c.shape, std::vector<float>(c.size())};
  if (c.mode == CipherMode::floating) {
    auto v = decrypt_real(c, key, cfg);
    for (std::size_t i = 0; i < v.size(); ++i) t.values[i] = static_cast<float>(v[i]);
  } else {
    auto w = decrypt_flat(std::get<std::vector<std::uint32_t>>(c.payload), make_schedule(key, cfg, c.size()));
    for (std::size_t i = 0; i < w.size(); ++i) t.values[i] = std::bit_cast<float>(w[i]);
  }
  return t;
}

}  // namespace puflock
