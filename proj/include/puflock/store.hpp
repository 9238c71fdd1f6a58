#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "puflock/bytes.hpp"
#include "puflock/ecc.hpp"
#include "puflock/error.hpp"
#include "puflock/puf.hpp"

namespace puflock {

struct CrpRecord {
  DeviceId device{};
  Challenge challenge;
  Response response;
  HelperData helper;
  bool used = false;

  friend bool operator==(const CrpRecord&, const CrpRecord&) = default;
};

/// Provider-side CRP database. Mutations are appended to a "PFDB" file when
/// one is attached; opening the file replays them. Record selection and the
/// used-flag update happen under one lock.
class CrpStore {
 public:
  CrpStore() = default;

  /// Opens (or creates) an append-only store at `path`.
  explicit CrpStore(std::string path) : path_(std::move(path)) {
    std::ifstream probe(path_, std::ios::binary);
    if (probe) {
      replay(read_file(path_));
    } else {
      ByteWriter w;
      w.raw("PFDB");
      w.u8(kVersion);
      write_file(path_, w.bytes());
    }
  }

  CrpStore(const CrpStore&) = delete;
  CrpStore& operator=(const CrpStore&) = delete;

  const std::string& path() const noexcept { return path_; }

  void add_device(const DeviceId& id, bool subscribed = true) {
    std::lock_guard lock(mu_);
    if (devices_.count(id)) throw ProtocolError("device " + to_hex(id) + " is already enrolled");
    ByteWriter w;
    w.u8(kDeviceRecord);
    w.raw(id);
    w.u8(subscribed ? 1 : 0);
    persist(w.bytes());
    devices_[id] = subscribed;
  }

  void set_subscribed(const DeviceId& id, bool subscribed) {
    std::lock_guard lock(mu_);
    if (!devices_.count(id)) throw ProtocolError("unknown device");
    ByteWriter w;
    w.u8(kDeviceRecord);
    w.raw(id);
    w.u8(subscribed ? 1 : 0);
    persist(w.bytes());
    devices_[id] = subscribed;
  }

  bool enrolled(const DeviceId& id) const {
    std::lock_guard lock(mu_);
    return devices_.count(id) > 0;
  }

  bool subscribed(const DeviceId& id) const {
    std::lock_guard lock(mu_);
    auto it = devices_.find(id);
    return it != devices_.end() && it->second;
  }

  void add_crp(const CrpRecord& rec) {
    std::lock_guard lock(mu_);
    if (!devices_.count(rec.device)) throw ProtocolError("CRP for an unenrolled device");
    auto& list = crps_[rec.device];
    for (const auto& r : list)
      if (r.challenge == rec.challenge) throw ProtocolError("duplicate challenge for device");
    ByteWriter w;
    w.u8(kCrpRecord);
    w.raw(rec.device);
    w.raw(rec.challenge.bytes());
    w.u32(static_cast<std::uint32_t>(rec.response.size()));
    w.raw(rec.response.to_bytes());
    write_helper(w, rec.helper);
    persist(w.bytes());
    list.push_back(rec);
    list.back().used = false;
    if (rec.used) mark_locked(rec.device, rec.challenge);
  }

  /// Picks a uniformly random unused CRP for `id` and marks it used in the
  /// same critical section.
  template <class Rng>
  std::optional<CrpRecord> take_unused(const DeviceId& id, Rng& rng) {
    std::lock_guard lock(mu_);
    auto it = crps_.find(id);
    if (it == crps_.end()) return std::nullopt;
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < it->second.size(); ++i)
      if (!it->second[i].used) free.push_back(i);
    if (free.empty()) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
    auto& rec = it->second[free[pick(rng)]];
    mark_locked(id, rec.challenge);
    return rec;
  }

  std::size_t count(const DeviceId& id, bool used) const {
    std::lock_guard lock(mu_);
    auto it = crps_.find(id);
    if (it == crps_.end()) return 0;
    std::size_t n = 0;
    for (const auto& r : it->second) n += r.used == used;
    return n;
  }

  std::vector<CrpRecord> records(const DeviceId& id) const {
    std::lock_guard lock(mu_);
    auto it = crps_.find(id);
    return it == crps_.end() ? std::vector<CrpRecord>{} : it->second;
  }

 private:
  static constexpr std::uint8_t kVersion = 1;
  static constexpr std::uint8_t kDeviceRecord = 1;
  static constexpr std::uint8_t kCrpRecord = 2;
  static constexpr std::uint8_t kUsedRecord = 3;

  void mark_locked(const DeviceId& id, const Challenge& c) {
    for (auto& r : crps_[id])
      if (r.challenge == c) {
        if (r.used) return;
        ByteWriter w;
        w.u8(kUsedRecord);
        w.raw(id);
        w.raw(c.bytes());
        persist(w.bytes());
        r.used = true;
        return;
      }
  }

  void persist(const Bytes& record) {
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(record.size()));
    w.raw(record);
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.size()));
    out.flush();
    if (!out) throw ProtocolError("cannot append to CRP store " + path_);
  }

  void replay(const Bytes& data) {
    ByteReader r(data);
    r.section("crp store header");
    r.expect_magic("PFDB");
    auto version = r.u8();
    if (version != kVersion) r.fail("unsupported CRP store version " + std::to_string(version), r.offset() - 1);
    std::size_t index = 0;
    while (!r.at_end()) {
      r.section("crp store record " + std::to_string(index++));
      const auto len = r.u32();
      ByteReader rec(r.raw(len));
      rec.section(r.section());
      DeviceId id{};
      auto kind = rec.u8();
      auto raw_id = rec.raw(16);
      std::copy(raw_id.begin(), raw_id.end(), id.begin());
      if (kind == kDeviceRecord) {
        devices_[id] = rec.u8() != 0;
      } else if (kind == kCrpRecord) {
        CrpRecord c;
        c.device = id;
        c.challenge = Challenge::from_bytes(rec.raw(16));
        auto nbits = rec.u32();
        c.response = BitVector::from_bytes(rec.raw((nbits + 7) / 8), nbits);
        c.helper = read_helper(rec);
        crps_[id].push_back(std::move(c));
      } else if (kind == kUsedRecord) {
        auto ch = Challenge::from_bytes(rec.raw(16));
        for (auto& c : crps_[id])
          if (c.challenge == ch) c.used = true;
      } else {
        rec.fail("unknown record kind " + std::to_string(kind));
      }
      if (!rec.at_end()) rec.fail("record has trailing bytes");
    }
  }

  std::string path_;
  mutable std::mutex mu_;
  std::map<DeviceId, bool> devices_;
  std::map<DeviceId, std::vector<CrpRecord>> crps_;
};

/// Device-side store: (challenge, helper data) pairs keyed by challenge. Holds
/// no response or key material. Persisted as a "PFDV" file.
class DeviceStore {
 public:
  DeviceStore() = default;
  explicit DeviceStore(const DeviceId& id) : id_(id) {}

  const DeviceId& device() const noexcept { return id_; }
  std::size_t size() const noexcept { return entries_.size(); }

  void put(const Challenge& c, HelperData hd) { entries_[c] = std::move(hd); }
  const HelperData* find(const Challenge& c) const {
    auto it = entries_.find(c);
    return it == entries_.end() ? nullptr : &it->second;
  }
  std::vector<Challenge> challenges() const {
    std::vector<Challenge> out;
    for (const auto& [c, hd] : entries_) out.push_back(c);
    return out;
  }

  Bytes save_bytes() const {
    ByteWriter w;
    w.raw("PFDV");
    w.u8(1);
    w.raw(id_);
    w.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [c, hd] : entries_) {
      w.raw(c.bytes());
      write_helper(w, hd);
    }
    return std::move(w).bytes();
  }

  static DeviceStore load_bytes(std::span<const std::uint8_t> data) {
    ByteReader r(data);
    r.section("device store header");
    r.expect_magic("PFDV");
    auto version = r.u8();
    if (version != 1) r.fail("unsupported device store version " + std::to_string(version), r.offset() - 1);
    DeviceStore s;
    auto id = r.raw(16);
    std::copy(id.begin(), id.end(), s.id_.begin());
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      r.section("device store entry " + std::to_string(i));
      auto c = Challenge::from_bytes(r.raw(16));
      s.entries_[c] = read_helper(r);
    }
    r.section("device store trailer");
    if (!r.at_end()) r.fail("trailing bytes after device store");
    return s;
  }

  void save(const std::string& path) const { write_file(path, save_bytes()); }
  static DeviceStore load(const std::string& path) { return load_bytes(read_file(path)); }

 private:
  DeviceId id_{};
  std::map<Challenge, HelperData> entries_;
};

}  // namespace puflock
