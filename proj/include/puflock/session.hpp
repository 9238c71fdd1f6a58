#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "puflock/encrypted_model.hpp"
#include "puflock/frame.hpp"
#include "puflock/hash.hpp"
#include "puflock/store.hpp"

namespace puflock {

using Nonce = std::array<std::uint8_t, 16>;

enum class Phase { idle, challenged, authenticated, delivered, failed };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::idle: return "idle";
    case Phase::challenged: return "challenged";
    case Phase::authenticated: return "authenticated";
    case Phase::delivered: return "delivered";
    default: return "failed";
  }
}

// Error reasons carried in ERROR frames.
namespace reason {
inline constexpr const char* unsubscribed = "unsubscribed";
inline constexpr const char* no_crp = "no-crp";
inline constexpr const char* auth_failed = "auth-failed";                // device could not authenticate the provider
inline constexpr const char* device_auth_failed = "device-auth-failed";  // provider could not authenticate the device
inline constexpr const char* unexpected = "unexpected-message";
inline constexpr const char* malformed = "malformed-message";
inline constexpr const char* already_enrolled = "already-enrolled";
}  // namespace reason

/// hash(a || b) = SHA-256(u32le(|a|) || a || b)
inline Digest protocol_hash(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::array<std::uint8_t, 4> len{};
  for (int k = 0; k < 4; ++k) len[k] = static_cast<std::uint8_t>(a.size() >> (8 * k));
  return sha256({len, a, b});
}

/// Mask covering a packed response of `nbytes`: N_p itself followed by a
/// SHAKE256 expansion of N_p, so the whole response is blinded and N_p can
/// still be read back by a holder of R.
inline Bytes nonce_mask(const Nonce& np, std::size_t nbytes) {
  if (nbytes < np.size()) throw ParameterError("response shorter than the nonce");
  Bytes m(np.begin(), np.end());
  auto tail = shake256({np}, nbytes - np.size());
  m.insert(m.end(), tail.begin(), tail.end());
  return m;
}

inline Bytes xor_bytes(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ParameterError("xor of unequal lengths");
  Bytes out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ^ b[i];
  return out;
}

template <class Rng>
Nonce random_nonce(Rng& rng) {
  Nonce n{};
  for (std::size_t i = 0; i < n.size(); i += 8) {
    std::uint64_t w = rng();
    for (std::size_t k = 0; k < 8; ++k) n[i + k] = static_cast<std::uint8_t>(w >> (8 * k));
  }
  return n;
}

inline ChallengeId challenge_id(const Challenge& c) {
  ChallengeId id{};
  std::copy(c.bytes().begin(), c.bytes().end(), id.begin());
  return id;
}

/// The secret both ends agree on for a CRP: the response itself under the
/// code-offset scheme, the decodable prefix under the literal one.
inline BitVector session_secret(const CrpRecord& rec, const FuzzyExtractor& fe) {
  return rec.helper.scheme == HelperScheme::literal ? literal_key(rec.response, fe) : rec.response;
}

struct ProviderConfig {
  FuzzyExtractor fe{};
  CipherConfig cipher{};
  HelperScheme scheme = HelperScheme::code_offset;
};

class Provider;

/// Provider side of one deployment: M_d1 -> M_p1, M_d2 -> M_p2.
class ProviderSession {
 public:
  explicit ProviderSession(Provider& p) : provider_(&p) {}

  /// Consumes one inbound frame and returns the reply, if any.
  std::optional<Frame> handle(const Frame& in);

  Phase phase() const noexcept { return phase_; }
  const std::string& failure() const noexcept { return failure_; }
  std::optional<Challenge> challenge() const {
    return crp_ ? std::optional<Challenge>(crp_->challenge) : std::nullopt;
  }
  bool done() const noexcept { return phase_ == Phase::delivered || phase_ == Phase::failed; }

 private:
  Frame fail(const std::string& why) {
    phase_ = Phase::failed;
    failure_ = why;
    return error_frame(why);
  }

  Provider* provider_;
  Phase phase_ = Phase::idle;
  std::string failure_;
  DeviceId device_{};
  Nonce nd_{}, np_{};
  std::optional<CrpRecord> crp_;
};

/// Provider side of enrollment: REG hello -> challenges, responses -> helpers.
class ProviderRegistration {
 public:
  ProviderRegistration(Provider& p, std::size_t z) : provider_(&p), z_(z) {
    if (z == 0) throw ParameterError("registration needs z >= 1 challenges");
  }

  std::optional<Frame> handle(const Frame& in);
  bool done() const noexcept { return done_ || failed_; }
  bool failed() const noexcept { return failed_; }
  const std::string& failure() const noexcept { return failure_; }

 private:
  Frame fail(const std::string& why) {
    failed_ = true;
    failure_ = why;
    return error_frame(why);
  }

  Provider* provider_;
  std::size_t z_;
  DeviceId device_{};
  std::vector<Challenge> issued_;
  bool done_ = false, failed_ = false;
  std::string failure_;
};

/// The model owner. Safe to share between concurrently running sessions.
class Provider {
 public:
  Provider(CrpStore& store, ModelWeights model, ProviderConfig cfg, std::uint64_t seed)
      : store_(&store), model_(std::move(model)), cfg_(std::move(cfg)), rng_(seed) {
    cfg_.fe.validate();
    cfg_.cipher.validate();
  }

  ProviderSession session() { return ProviderSession(*this); }
  ProviderRegistration registration(std::size_t z) { return ProviderRegistration(*this, z); }

  CrpStore& store() noexcept { return *store_; }
  const ModelWeights& model() const noexcept { return model_; }
  const ProviderConfig& config() const noexcept { return cfg_; }

  template <class F>
  auto with_rng(F&& f) {
    std::lock_guard lock(rng_mu_);
    return f(rng_);
  }

 private:
  CrpStore* store_;
  ModelWeights model_;
  ProviderConfig cfg_;
  std::mutex rng_mu_;
  std::mt19937_64 rng_;
};

inline std::optional<Frame> ProviderSession::handle(const Frame& in) {
  if (done()) throw ProtocolError("session already finished");
  if (in.type == FrameType::error) {
    phase_ = Phase::failed;
    failure_ = "peer: " + error_reason(in);
    return std::nullopt;
  }
  try {
    if (phase_ == Phase::idle && in.type == FrameType::device_request) {
      FieldReader r(in.payload);
      auto id = r.next(16);
      auto nd = r.next(16);
      r.expect_end();
      std::copy(id.begin(), id.end(), device_.begin());
      std::copy(nd.begin(), nd.end(), nd_.begin());
      auto& store = provider_->store();
      if (!store.subscribed(device_)) return fail(reason::unsubscribed);
      crp_ = provider_->with_rng([&](auto& rng) { return store.take_unused(device_, rng); });
      if (!crp_) return fail(reason::no_crp);
      np_ = provider_->with_rng([](auto& rng) { return random_nonce(rng); });
      const auto r_bytes = session_secret(*crp_, provider_->config().fe).to_bytes();
      const auto blinded = xor_bytes(r_bytes, nonce_mask(np_, r_bytes.size()));
      const auto h = protocol_hash(nd_, r_bytes);
      phase_ = Phase::challenged;
      return Frame{FrameType::provider_auth, FieldWriter().add(crp_->challenge.bytes()).add(blinded).add(h).take()};
    }
    if (phase_ == Phase::challenged && in.type == FrameType::device_reply) {
      FieldReader r(in.payload);
      auto got = r.next(32);
      r.expect_end();
      const auto secret = session_secret(*crp_, provider_->config().fe);
      const auto expected = protocol_hash(np_, secret.to_bytes());
      if (!std::equal(got.begin(), got.end(), expected.begin())) return fail(reason::device_auth_failed);
      phase_ = Phase::authenticated;
      const auto& model = provider_->model();
      if (model.layers.empty()) throw ProtocolError("refusing to deliver a model with no layers");
      model.validate();
      const SecretKey key(secret);
      auto container = encrypt_model(model, key, provider_->config().cipher, challenge_id(crp_->challenge));
      phase_ = Phase::delivered;
      return Frame{FrameType::provider_model, FieldWriter().add(save_encrypted_bytes(container)).take()};
    }
  } catch (const ProtocolError&) {
    if (phase_ == Phase::authenticated) {
      phase_ = Phase::failed;
      throw;
    }
    return fail(reason::malformed);
  }
  return fail(reason::unexpected);
}

inline std::optional<Frame> ProviderRegistration::handle(const Frame& in) {
  if (done()) throw ProtocolError("registration already finished");
  if (in.type == FrameType::error) {
    failed_ = true;
    failure_ = "peer: " + error_reason(in);
    return std::nullopt;
  }
  if (in.type != FrameType::registration) return fail(reason::unexpected);
  try {
    FieldReader r(in.payload);
    const auto tag = static_cast<RegTag>(r.next_u8());
    auto& store = provider_->store();
    if (tag == RegTag::hello && issued_.empty()) {
      auto id = r.next(16);
      r.expect_end();
      std::copy(id.begin(), id.end(), device_.begin());
      if (store.enrolled(device_)) return fail(reason::already_enrolled);
      store.add_device(device_, true);
      FieldWriter w;
      w.add_u8(static_cast<std::uint8_t>(RegTag::challenges));
      provider_->with_rng([&](auto& rng) {
        while (issued_.size() < z_) {
          auto c = Challenge::random(rng);
          if (std::find(issued_.begin(), issued_.end(), c) == issued_.end()) issued_.push_back(c);
        }
        return 0;
      });
      for (const auto& c : issued_) w.add(c.bytes());
      return Frame{FrameType::registration, w.take()};
    }
    if (tag == RegTag::responses && !issued_.empty()) {
      const auto& fe = provider_->config().fe;
      FieldWriter w;
      w.add_u8(static_cast<std::uint8_t>(RegTag::helpers));
      for (const auto& c : issued_) {
        auto packed = r.next((fe.frame_len + 7) / 8);
        CrpRecord rec{device_, c, BitVector::from_bytes(packed, fe.frame_len), {}, false};
        rec.helper = provider_->with_rng([&](auto& rng) { return fe_generate(rec.response, fe, provider_->config().scheme, rng); });
        store.add_crp(rec);
        w.add(c.bytes());
        w.add(save_helper_bytes(rec.helper));
      }
      r.expect_end();
      done_ = true;
      return Frame{FrameType::registration, w.take()};
    }
  } catch (const ProtocolError&) {
    return fail(reason::malformed);
  }
  return fail(reason::unexpected);
}

struct DeviceConfig {
  FuzzyExtractor fe{};
  unsigned enrollment_reads = 0;  // 0: noiseless reference read; odd n: majority of n noisy reads
  std::optional<DeviceId> claimed_id;  // identity announced instead of the PUF's own (clone attempts)
};

class Device;

/// Device side of one deployment. The corrected response lives only in this
/// object and is wiped once the model has been decrypted or the run fails.
class DeviceSession {
 public:
  explicit DeviceSession(Device& d) : device_(&d) {}
  ~DeviceSession() { wipe(); }
  DeviceSession(DeviceSession&&) = default;

  Frame start();
  std::optional<Frame> handle(const Frame& in);

  Phase phase() const noexcept { return phase_; }
  const std::string& failure() const noexcept { return failure_; }
  bool done() const noexcept { return phase_ == Phase::delivered || phase_ == Phase::failed; }

  /// Plaintext model after a successful delivery.
  const std::optional<ModelWeights>& model() const noexcept { return model_; }
  /// The container exactly as received (ciphertext only).
  const std::optional<EncryptedModel>& container() const noexcept { return container_; }

 private:
  Frame fail(const std::string& why) {
    phase_ = Phase::failed;
    failure_ = why;
    wipe();
    return error_frame(why);
  }
  void wipe() noexcept { r_.wipe(); }

  Device* device_;
  Phase phase_ = Phase::idle;
  std::string failure_;
  Nonce nd_{};
  std::optional<Challenge> challenge_;
  BitVector r_;
  std::optional<ModelWeights> model_;
  std::optional<EncryptedModel> container_;
};

/// Device side of enrollment.
class DeviceRegistration {
 public:
  explicit DeviceRegistration(Device& d) : device_(&d) {}
  Frame start();
  std::optional<Frame> handle(const Frame& in);
  bool done() const noexcept { return done_ || failed_; }
  bool failed() const noexcept { return failed_; }
  const std::string& failure() const noexcept { return failure_; }

 private:
  Frame fail(const std::string& why) {
    failed_ = true;
    failure_ = why;
    return error_frame(why);
  }

  Device* device_;
  std::vector<Challenge> challenges_;
  bool done_ = false, failed_ = false;
  std::string failure_;
};

/// A PUF-equipped edge device. Persistent state is the DeviceStore only.
class Device {
 public:
  Device(PufDevice puf, DeviceStore store, DeviceConfig cfg, std::uint64_t seed)
      : puf_(std::move(puf)), store_(std::move(store)), cfg_(std::move(cfg)), rng_(seed) {
    if (store_.size() == 0) store_ = DeviceStore(id());
    if (store_.device() != id()) throw ParameterError("device store belongs to another device");
    if (puf_.response_len() != cfg_.fe.frame_len) throw ParameterError("PUF response length != fuzzy-extractor frame");
    cfg_.fe.validate();
  }

  DeviceSession session() { return DeviceSession(*this); }
  DeviceRegistration registration() { return DeviceRegistration(*this); }

  const PufDevice& puf() const noexcept { return puf_; }
  /// Same physical device under a different operating condition.
  void set_noise(double sigma) { puf_ = puf_.with_noise(sigma); }
  const DeviceId& id() const noexcept { return cfg_.claimed_id ? *cfg_.claimed_id : puf_.id(); }
  DeviceStore& store() noexcept { return store_; }
  const DeviceStore& store() const noexcept { return store_; }
  const DeviceConfig& config() const noexcept { return cfg_; }
  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  PufDevice puf_;
  DeviceStore store_;
  DeviceConfig cfg_;
  std::mt19937_64 rng_;
};

inline Frame DeviceSession::start() {
  if (phase_ != Phase::idle) throw ProtocolError("session already started");
  nd_ = random_nonce(device_->rng());
  phase_ = Phase::challenged;
  return Frame{FrameType::device_request, FieldWriter().add(device_->id()).add(nd_).take()};
}

inline std::optional<Frame> DeviceSession::handle(const Frame& in) {
  if (done()) throw ProtocolError("session already finished");
  if (in.type == FrameType::error) {
    phase_ = Phase::failed;
    failure_ = "peer: " + error_reason(in);
    wipe();
    return std::nullopt;
  }
  try {
    const auto& fe = device_->config().fe;
    if (phase_ == Phase::challenged && in.type == FrameType::provider_auth) {
      FieldReader r(in.payload);
      const auto c = Challenge::from_bytes(r.next(16));
      const std::size_t nbytes = (fe.frame_len + 7) / 8;
      const auto blinded = r.next(nbytes);
      const auto h = r.next(32);
      r.expect_end();
      const HelperData* hd = device_->store().find(c);
      // Local precondition: no frame goes out.
      if (!hd) throw MissingHelperError("no helper data stored for challenge " + c.hex());
      auto noisy = device_->puf().evaluate(c, device_->rng());
      r_ = fe_reproduce(noisy, *hd, fe);
      const auto r_bytes = r_.to_bytes();
      const auto check = protocol_hash(nd_, r_bytes);
      if (!std::equal(h.begin(), h.end(), check.begin())) return fail(reason::auth_failed);
      const auto mask = xor_bytes(blinded, r_bytes);
      Nonce np{};
      std::copy_n(mask.begin(), np.size(), np.begin());
      if (nonce_mask(np, nbytes) != mask) return fail(reason::auth_failed);
      challenge_ = c;
      phase_ = Phase::authenticated;
      return Frame{FrameType::device_reply, FieldWriter().add(protocol_hash(np, r_bytes)).take()};
    }
    if (phase_ == Phase::authenticated && in.type == FrameType::provider_model) {
      FieldReader r(in.payload);
      auto bytes = r.next();
      r.expect_end();
      EncryptedModel container;
      try {
        container = load_encrypted_bytes(bytes);
      } catch (const FormatError&) {
        return fail(reason::malformed);
      }
      if (container.challenge_id != challenge_id(*challenge_)) return fail(reason::malformed);
      model_ = decrypt_model(container, SecretKey(r_));
      container_ = std::move(container);
      wipe();
      phase_ = Phase::delivered;
      return std::nullopt;
    }
  } catch (const MissingHelperError& e) {
    phase_ = Phase::failed;
    failure_ = e.what();
    wipe();
    throw;
  } catch (const ProtocolError&) {
    return fail(reason::malformed);
  } catch (const FormatError&) {
    return fail(reason::malformed);
  }
  return fail(reason::unexpected);
}

inline Frame DeviceRegistration::start() {
  return Frame{FrameType::registration,
               FieldWriter().add_u8(static_cast<std::uint8_t>(RegTag::hello)).add(device_->id()).take()};
}

inline std::optional<Frame> DeviceRegistration::handle(const Frame& in) {
  if (done()) throw ProtocolError("registration already finished");
  if (in.type == FrameType::error) {
    failed_ = true;
    failure_ = "peer: " + error_reason(in);
    return std::nullopt;
  }
  if (in.type != FrameType::registration) return fail(reason::unexpected);
  try {
    FieldReader r(in.payload);
    const auto tag = static_cast<RegTag>(r.next_u8());
    if (tag == RegTag::challenges && challenges_.empty()) {
      FieldWriter w;
      w.add_u8(static_cast<std::uint8_t>(RegTag::responses));
      while (!r.at_end()) challenges_.push_back(Challenge::from_bytes(r.next(16)));
      if (challenges_.empty()) return fail(reason::malformed);
      const auto reads = device_->config().enrollment_reads;
      for (const auto& c : challenges_) {
        auto resp = reads == 0 ? device_->puf().reference_response(c)
                               : device_->puf().majority_response(c, reads, device_->rng());
        w.add(resp.to_bytes());
      }
      return Frame{FrameType::registration, w.take()};
    }
    if (tag == RegTag::helpers && !challenges_.empty()) {
      for (std::size_t i = 0; i < challenges_.size(); ++i) {
        auto c = Challenge::from_bytes(r.next(16));
        if (c != challenges_[i]) return fail(reason::malformed);
        device_->store().put(c, load_helper_bytes(r.next()));
      }
      r.expect_end();
      done_ = true;
      return std::nullopt;
    }
  } catch (const ProtocolError&) {
    return fail(reason::malformed);
  } catch (const FormatError&) {
    return fail(reason::malformed);
  } catch (const ParameterError&) {
    return fail(reason::malformed);
  }
  return fail(reason::unexpected);
}

}  // namespace puflock
