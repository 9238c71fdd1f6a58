#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "puflock/bytes.hpp"
#include "puflock/cipher.hpp"
#include "puflock/error.hpp"
#include "puflock/model.hpp"

namespace puflock {

using ChallengeId = std::array<std::uint8_t, 16>;

/// One layer of an encrypted model. Encrypted layers carry their weights (and,
/// with encrypt_biases, the bias appended after them) as a single ciphertext;
/// everything else stays in plain f32.
struct EncryptedLayer {
  std::string name;
  Activation act = Activation::none;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::optional<LayerCiphertext> cipher;
  std::vector<float> weights;  // plain weights when not encrypted
  std::vector<float> bias;     // plain bias unless covered by the ciphertext

  bool encrypted() const noexcept { return cipher.has_value(); }

  friend bool operator==(const EncryptedLayer&, const EncryptedLayer&) = default;
};

struct EncryptedModel {
  CipherConfig config;
  ChallengeId challenge_id{};
  std::vector<EncryptedLayer> layers;

  std::size_t encrypted_count() const {
    return static_cast<std::size_t>(std::count_if(layers.begin(), layers.end(), [](const auto& l) { return l.encrypted(); }));
  }

  friend bool operator==(const EncryptedModel&, const EncryptedModel&) = default;
};

/// Encrypt the first `k` layers (all of them by default).
inline std::vector<bool> first_layers(std::size_t total, std::size_t k) {
  std::vector<bool> sel(total, false);
  for (std::size_t j = 0; j < std::min(k, total); ++j) sel[j] = true;
  return sel;
}

inline EncryptedModel encrypt_model(const ModelWeights& m, const SecretKey& key, const CipherConfig& cfg,
                                    const ChallengeId& challenge, std::vector<bool> selection = {}) {
  m.validate();
  cfg.validate();
  if (selection.empty()) selection.assign(m.layers.size(), true);
  if (selection.size() != m.layers.size()) throw ParameterError("layer selection does not match the model");
  EncryptedModel e{cfg, challenge, {}};
  for (std::size_t j = 0; j < m.layers.size(); ++j) {
    const auto& l = m.layers[j];
    EncryptedLayer el{l.name, l.act, l.rows, l.cols, std::nullopt, {}, {}};
    if (selection[j]) {
      std::vector<float> plain = l.weights;
      if (cfg.encrypt_biases) plain.insert(plain.end(), l.bias.begin(), l.bias.end());
      else el.bias = l.bias;
      el.cipher = encrypt_values(plain, {plain.size()}, key, cfg, static_cast<std::uint32_t>(j));
    } else {
      el.weights = l.weights;
      el.bias = l.bias;
    }
    e.layers.push_back(std::move(el));
  }
  return e;
}

/// Plaintext of layer j. The caller owns it for as long as it needs and is
/// expected to drop it before loading the next layer.
inline DenseLayer decrypt_layer_at(const EncryptedModel& e, std::size_t j, const SecretKey& key) {
  const auto& el = e.layers.at(j);
  DenseLayer l{el.name, el.rows, el.cols, el.weights, el.bias, el.act};
  if (!el.encrypted()) return l;
  auto flat = decrypt_layer(*el.cipher, key, e.config).values;
  const std::size_t nw = el.rows * el.cols;
  const std::size_t expected = nw + (e.config.encrypt_biases ? el.rows : 0);
  if (flat.size() != expected) throw FormatError("layer " + std::to_string(j), 0, "ciphertext length does not match layer shape");
  l.weights.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(nw));
  if (e.config.encrypt_biases) l.bias.assign(flat.begin() + static_cast<std::ptrdiff_t>(nw), flat.end());
  return l;
}

inline ModelWeights decrypt_model(const EncryptedModel& e, const SecretKey& key) {
  ModelWeights m;
  for (std::size_t j = 0; j < e.layers.size(); ++j) m.layers.push_back(decrypt_layer_at(e, j, key));
  return m;
}

/// What a holder without the key can run: ciphertext values read as weights.
inline ModelWeights ciphertext_as_model(const EncryptedModel& e) {
  ModelWeights m;
  for (const auto& el : e.layers) {
    DenseLayer l{el.name, el.rows, el.cols, el.weights, el.bias, el.act};
    if (el.encrypted()) {
      auto flat = el.cipher->as_weights();
      const std::size_t nw = el.rows * el.cols;
      l.weights.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(nw));
      if (e.config.encrypt_biases) l.bias.assign(flat.begin() + static_cast<std::ptrdiff_t>(nw), flat.end());
    }
    m.layers.push_back(std::move(l));
  }
  return m;
}

/// Decrypt-on-load inference over a batch: layer j is decrypted, applied to
/// every row, and released before layer j+1 is touched.
inline std::vector<std::vector<double>> forward_batch(const EncryptedModel& e, const SecretKey* key,
                                                      std::vector<std::vector<double>> h) {
  if (e.encrypted_count() > 0 && key == nullptr) throw ParameterError("encrypted model needs a key for inference");
  for (std::size_t j = 0; j < e.layers.size(); ++j) {
    const DenseLayer layer = key ? decrypt_layer_at(e, j, *key)
                                 : DenseLayer{e.layers[j].name, e.layers[j].rows, e.layers[j].cols,
                                              e.layers[j].weights, e.layers[j].bias, e.layers[j].act};
    for (auto& row : h) row = apply_dense(layer, row);
  }
  return h;
}

inline std::vector<double> forward(const EncryptedModel& e, const SecretKey* key, std::span<const float> x) {
  std::vector<std::vector<double>> h{{x.begin(), x.end()}};
  return std::move(forward_batch(e, key, std::move(h)).front());
}

// --- encrypted weight file: "PDWE" v1 ---

inline constexpr std::uint8_t kEncryptedFormatVersion = 1;

inline Bytes save_encrypted_bytes(const EncryptedModel& e) {
  if (e.layers.size() > 0xFFFF) throw ParameterError("too many layers for the container");
  const auto& c = e.config;
  ByteWriter w;
  w.raw("PDWE");
  w.u8(kEncryptedFormatVersion);
  w.u8(static_cast<std::uint8_t>(c.mode));
  w.u16(static_cast<std::uint16_t>(c.permute_rounds));
  w.u16(static_cast<std::uint16_t>(c.diffusion_rounds));
  w.u32(static_cast<std::uint32_t>(c.warmup));
  w.raw(e.challenge_id);
  w.u8(c.encrypt_biases ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(c.permute_group_bits));
  w.u8(static_cast<std::uint8_t>(c.diffusion_group_bits));
  w.u16(static_cast<std::uint16_t>(e.layers.size()));
  for (const auto& l : e.layers) {
    w.str16(l.name);
    w.u8(static_cast<std::uint8_t>(l.act));
    w.u8(l.encrypted() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(l.rows));
    w.u32(static_cast<std::uint32_t>(l.cols));
    if (l.encrypted()) {
      if (const auto* real = std::get_if<std::vector<double>>(&l.cipher->payload))
        for (double v : *real) w.f64(v);
      else
        for (auto v : std::get<std::vector<std::uint32_t>>(l.cipher->payload)) w.u32(v);
    } else {
      detail::write_f32s(w, l.weights);
    }
    if (!(l.encrypted() && c.encrypt_biases)) detail::write_f32s(w, l.bias);
  }
  return std::move(w).bytes();
}

inline EncryptedModel load_encrypted_bytes(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.section("encrypted header");
  r.expect_magic("PDWE");
  auto version = r.u8();
  if (version != kEncryptedFormatVersion) r.fail("unsupported encrypted-model version " + std::to_string(version), r.offset() - 1);
  EncryptedModel e;
  auto& c = e.config;
  auto mode = r.u8();
  if (mode > 1) r.fail("unknown cipher mode " + std::to_string(mode), r.offset() - 1);
  c.mode = static_cast<CipherMode>(mode);
  c.permute_rounds = r.u16();
  c.diffusion_rounds = r.u16();
  c.warmup = r.u32();
  auto id = r.raw(16);
  std::copy(id.begin(), id.end(), e.challenge_id.begin());
  auto flags = r.u8();
  if (flags > 1) r.fail("unknown flag bits", r.offset() - 1);
  c.encrypt_biases = flags & 1;
  c.permute_group_bits = r.u8();
  c.diffusion_group_bits = r.u8();
  if (c.permute_rounds == 0 || c.diffusion_rounds == 0) r.fail("zero round count");
  const auto count = r.u16();
  for (std::size_t j = 0; j < count; ++j) {
    r.section("encrypted layer " + std::to_string(j));
    EncryptedLayer l;
    l.name = r.str16();
    l.act = detail::read_activation(r);
    auto enc = r.u8();
    if (enc > 1) r.fail("bad encryption flag", r.offset() - 1);
    l.rows = r.u32();
    l.cols = r.u32();
    if (enc) {
      const std::size_t n = l.rows * l.cols + (c.encrypt_biases ? l.rows : 0);
      LayerCiphertext ct{{n}, c.mode, static_cast<std::uint32_t>(j), {}};
      if (c.mode == CipherMode::floating) {
        if (r.remaining() / 8 < n) r.fail("truncated ciphertext payload");
        std::vector<double> v(n);
        for (auto& x : v) x = r.f64();
        ct.payload = std::move(v);
      } else {
        if (r.remaining() / 4 < n) r.fail("truncated ciphertext payload");
        std::vector<std::uint32_t> v(n);
        for (auto& x : v) x = r.u32();
        ct.payload = std::move(v);
      }
      l.cipher = std::move(ct);
    } else {
      l.weights = detail::read_f32s(r, l.rows * l.cols);
    }
    if (!(enc && c.encrypt_biases)) l.bias = detail::read_f32s(r, l.rows);
    e.layers.push_back(std::move(l));
  }
  r.section("encrypted trailer");
  if (!r.at_end()) r.fail("trailing bytes after last layer");
  return e;
}

inline void save_encrypted(const std::string& path, const EncryptedModel& e) { write_file(path, save_encrypted_bytes(e)); }
inline EncryptedModel load_encrypted(const std::string& path) { return load_encrypted_bytes(read_file(path)); }

}  // namespace puflock
