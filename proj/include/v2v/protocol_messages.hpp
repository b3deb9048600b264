#pragma once

// Beacon and coordination message types, their canonical byte encoding, and
// keyed authentication tags. The byte layout is documented in
// docs/wire_format.md; golden vectors live in tests/golden/.

#include <sodium.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "v2v/core.hpp"

namespace v2v {

inline constexpr std::size_t kAuthTagBytes = 16;
inline constexpr std::size_t kAuthKeyBytes = crypto_auth_hmacsha256_KEYBYTES;
inline constexpr std::size_t kMaxIntentWaypoints = 8;
inline constexpr std::uint8_t kWireVersion = 1;

using AuthTag = std::array<std::uint8_t, kAuthTagBytes>;
using AuthKey = std::array<std::uint8_t, kAuthKeyBytes>;
using Bytes = std::vector<std::uint8_t>;

enum class NavIntegrity : std::uint8_t { Nominal = 0, Degraded = 1, Invalid = 2 };

enum class Lifecycle : std::uint8_t { Propose = 0, Commit = 1, Abort = 2, Clear = 3 };

enum class CoordFunction : std::uint8_t {
  YieldPass = 0,
  Admission = 1,
  Sequencing = 2,
  Rejoin = 3,
  Release = 4,
  Priority = 5,
  Contingency = 6,
  HazardClear = 7,
};

enum class MessageKind : std::uint8_t { Beacon = 0x01, Coordination = 0x02 };

struct Waypoint {
  Vec3 position;
  SimTimeMs eta_ms = 0;
  bool operator==(const Waypoint&) const = default;
};

struct ManeuverAuthority {
  double max_lateral_dev_m = 0.0;
  double max_vertical_dev_m = 0.0;
  double max_speed_delta_mps = 0.0;
  bool operator==(const ManeuverAuthority&) const = default;
};

struct BeaconMessage {
  AircraftId sender_id = 0;
  std::uint64_t seq = 0;
  SimTimeMs t_issue_ms = 0;
  std::uint32_t ttl_ms = 1000;
  Vec3 position;
  Vec3 velocity;
  std::vector<Waypoint> intent;
  double observability_quality = 1.0;
  std::uint32_t track_count = 0;
  NavIntegrity nav_integrity = NavIntegrity::Nominal;
  ManeuverAuthority authority;
  AuthTag auth_tag{};

  bool operator==(const BeaconMessage&) const = default;
};

struct CoordinationMessage {
  AircraftId sender_id = 0;
  std::uint64_t seq = 0;
  SimTimeMs t_issue_ms = 0;
  std::uint32_t ttl_ms = 1000;
  std::uint64_t transaction_id = 0;
  Lifecycle lifecycle = Lifecycle::Propose;
  CoordFunction function = CoordFunction::YieldPass;
  std::set<AircraftId> participants;
  std::optional<std::uint32_t> zone_ref;
  std::uint32_t validity_ms = 0;
  std::map<std::string, double> payload;
  AuthTag auth_tag{};

  bool operator==(const CoordinationMessage&) const = default;
};

using Message = std::variant<BeaconMessage, CoordinationMessage>;

class EncodingDomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class MalformedMessage : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Common header accessors so callers need not visit the variant.
inline AircraftId sender_of(const Message& m) {
  return std::visit([](const auto& v) { return v.sender_id; }, m);
}
inline std::uint64_t seq_of(const Message& m) {
  return std::visit([](const auto& v) { return v.seq; }, m);
}
inline SimTimeMs issue_time_of(const Message& m) {
  return std::visit([](const auto& v) { return v.t_issue_ms; }, m);
}
inline std::uint32_t ttl_of(const Message& m) {
  return std::visit([](const auto& v) { return v.ttl_ms; }, m);
}
inline const AuthTag& tag_of(const Message& m) {
  return std::visit([](const auto& v) -> const AuthTag& { return v.auth_tag; }, m);
}
inline void set_tag(Message& m, const AuthTag& tag) {
  std::visit([&](auto& v) { v.auth_tag = tag; }, m);
}

namespace wire {

// Header: kind (u8), version (u8), body length (u32). The body length counts
// every byte after the header, tag included.
inline constexpr std::size_t kHeaderBytes = 6;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void vec3(const Vec3& v) {
    f64(v.x);
    f64(v.y);
    f64(v.z);
  }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  Bytes& bytes() { return out_; }

 private:
  template <typename U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le<std::uint8_t>()); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  std::int64_t i64() { return static_cast<std::int64_t>(get_le<std::uint64_t>()); }
  double f64() {
    double v = std::bit_cast<double>(get_le<std::uint64_t>());
    if (!std::isfinite(v)) throw MalformedMessage("non-finite float field");
    return v;
  }
  Vec3 vec3() {
    Vec3 v;
    v.x = f64();
    v.y = f64();
    v.z = f64();
    return v;
  }
  void raw(std::span<std::uint8_t> dst) {
    need(dst.size());
    std::memcpy(dst.data(), in_.data() + pos_, dst.size());
    pos_ += dst.size();
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw MalformedMessage("truncated message");
  }
  template <typename U>
  U get_le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <typename Error>
void check_beacon(const BeaconMessage& b) {
  auto fail = [](const char* what) { throw Error(std::string("beacon: ") + what); };
  if (b.ttl_ms == 0) fail("ttl_ms must be positive");
  if (!(b.observability_quality >= 0.0 && b.observability_quality <= 1.0)) fail("observability_quality outside [0,1]");
  if (b.intent.size() > kMaxIntentWaypoints) fail("more than 8 intent waypoints");
  for (std::size_t i = 1; i < b.intent.size(); ++i)
    if (b.intent[i].eta_ms <= b.intent[i - 1].eta_ms) fail("intent etas not strictly increasing");
  if (static_cast<std::uint8_t>(b.nav_integrity) > 2) fail("unknown nav_integrity");
  bool finite = b.position.finite() && b.velocity.finite() && std::isfinite(b.authority.max_lateral_dev_m) &&
                std::isfinite(b.authority.max_vertical_dev_m) && std::isfinite(b.authority.max_speed_delta_mps);
  for (const auto& w : b.intent) finite = finite && w.position.finite();
  if (!finite) fail("non-finite numeric field");
}

template <typename Error>
void check_coordination(const CoordinationMessage& c) {
  auto fail = [](const char* what) { throw Error(std::string("coordination: ") + what); };
  if (c.ttl_ms == 0) fail("ttl_ms must be positive");
  if (static_cast<std::uint8_t>(c.lifecycle) > 3) fail("unknown lifecycle");
  if (static_cast<std::uint8_t>(c.function) > 7) fail("unknown function");
  if (c.participants.empty()) fail("participants must be non-empty");
  if (c.participants.size() > 255) fail("too many participants");
  if (c.payload.size() > 255) fail("too many payload entries");
  for (const auto& [k, v] : c.payload) {
    if (k.empty() || k.size() > 255) fail("payload key length outside [1,255]");
    if (!std::isfinite(v)) fail("non-finite payload value");
  }
  if (c.lifecycle == Lifecycle::Commit && c.validity_ms == 0) fail("COMMIT requires validity_ms > 0");
  if (c.lifecycle == Lifecycle::Propose && !c.participants.contains(c.sender_id))
    fail("PROPOSE participants must include the sender");
}

inline void write_body(Writer& w, const BeaconMessage& b) {
  w.u32(b.sender_id);
  w.u64(b.seq);
  w.i64(b.t_issue_ms);
  w.u32(b.ttl_ms);
  w.vec3(b.position);
  w.vec3(b.velocity);
  w.u8(static_cast<std::uint8_t>(b.intent.size()));
  for (const auto& wp : b.intent) {
    w.vec3(wp.position);
    w.i64(wp.eta_ms);
  }
  w.f64(b.observability_quality);
  w.u32(b.track_count);
  w.u8(static_cast<std::uint8_t>(b.nav_integrity));
  w.f64(b.authority.max_lateral_dev_m);
  w.f64(b.authority.max_vertical_dev_m);
  w.f64(b.authority.max_speed_delta_mps);
}

inline void write_body(Writer& w, const CoordinationMessage& c) {
  w.u32(c.sender_id);
  w.u64(c.seq);
  w.i64(c.t_issue_ms);
  w.u32(c.ttl_ms);
  w.u64(c.transaction_id);
  w.u8(static_cast<std::uint8_t>(c.lifecycle));
  w.u8(static_cast<std::uint8_t>(c.function));
  w.u8(static_cast<std::uint8_t>(c.participants.size()));
  for (AircraftId p : c.participants) w.u32(p);
  w.u8(c.zone_ref ? 1 : 0);
  w.u32(c.zone_ref.value_or(0));
  w.u32(c.validity_ms);
  w.u8(static_cast<std::uint8_t>(c.payload.size()));
  for (const auto& [k, v] : c.payload) {
    w.u8(static_cast<std::uint8_t>(k.size()));
    w.raw({reinterpret_cast<const std::uint8_t*>(k.data()), k.size()});
    w.f64(v);
  }
}

inline BeaconMessage read_beacon(Reader& r) {
  BeaconMessage b;
  b.sender_id = r.u32();
  b.seq = r.u64();
  b.t_issue_ms = r.i64();
  b.ttl_ms = r.u32();
  b.position = r.vec3();
  b.velocity = r.vec3();
  std::uint8_t n = r.u8();
  if (n > kMaxIntentWaypoints) throw MalformedMessage("intent list too long");
  b.intent.resize(n);
  for (auto& wp : b.intent) {
    wp.position = r.vec3();
    wp.eta_ms = r.i64();
  }
  b.observability_quality = r.f64();
  b.track_count = r.u32();
  std::uint8_t nav = r.u8();
  if (nav > 2) throw MalformedMessage("unknown nav_integrity discriminant");
  b.nav_integrity = static_cast<NavIntegrity>(nav);
  b.authority.max_lateral_dev_m = r.f64();
  b.authority.max_vertical_dev_m = r.f64();
  b.authority.max_speed_delta_mps = r.f64();
  return b;
}

inline CoordinationMessage read_coordination(Reader& r) {
  CoordinationMessage c;
  c.sender_id = r.u32();
  c.seq = r.u64();
  c.t_issue_ms = r.i64();
  c.ttl_ms = r.u32();
  c.transaction_id = r.u64();
  std::uint8_t lc = r.u8();
  if (lc > 3) throw MalformedMessage("unknown lifecycle discriminant");
  c.lifecycle = static_cast<Lifecycle>(lc);
  std::uint8_t fn = r.u8();
  if (fn > 7) throw MalformedMessage("unknown function discriminant");
  c.function = static_cast<CoordFunction>(fn);
  std::uint8_t np = r.u8();
  AircraftId prev = 0;
  for (std::uint8_t i = 0; i < np; ++i) {
    AircraftId p = r.u32();
    if (i > 0 && p <= prev) throw MalformedMessage("participants not strictly ascending");
    c.participants.insert(p);
    prev = p;
  }
  std::uint8_t has_zone = r.u8();
  std::uint32_t zone = r.u32();
  if (has_zone > 1) throw MalformedMessage("bad zone presence flag");
  if (has_zone == 0 && zone != 0) throw MalformedMessage("absent zone_ref must encode as zero");
  if (has_zone) c.zone_ref = zone;
  c.validity_ms = r.u32();
  std::uint8_t nk = r.u8();
  std::string prev_key;
  for (std::uint8_t i = 0; i < nk; ++i) {
    std::uint8_t len = r.u8();
    std::string key(len, '\0');
    r.raw({reinterpret_cast<std::uint8_t*>(key.data()), key.size()});
    if (i > 0 && key <= prev_key) throw MalformedMessage("payload keys not strictly ascending");
    double v = r.f64();
    c.payload.emplace(key, v);
    prev_key = std::move(key);
  }
  return c;
}

}  // namespace wire

/// Deterministic canonical encoding. The trailing 16 bytes hold the auth tag
/// and are excluded from the region covered by the tag.
inline Bytes encode_canonical(const Message& msg) {
  wire::Writer w;
  const bool beacon = std::holds_alternative<BeaconMessage>(msg);
  w.u8(static_cast<std::uint8_t>(beacon ? MessageKind::Beacon : MessageKind::Coordination));
  w.u8(kWireVersion);
  w.u32(0);  // patched below
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, BeaconMessage>)
          wire::check_beacon<EncodingDomainError>(m);
        else
          wire::check_coordination<EncodingDomainError>(m);
        wire::write_body(w, m);
        w.raw(m.auth_tag);
      },
      msg);
  Bytes out = std::move(w.bytes());
  const auto body = static_cast<std::uint32_t>(out.size() - wire::kHeaderBytes);
  for (int i = 0; i < 4; ++i) out[2 + i] = static_cast<std::uint8_t>(body >> (8 * i));
  return out;
}

/// Structural decode. Accepts exactly the byte strings `encode_canonical` can
/// produce; anything else raises MalformedMessage.
inline Message decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < wire::kHeaderBytes + kAuthTagBytes) throw MalformedMessage("message too short");
  wire::Reader r(bytes);
  const std::uint8_t kind = r.u8();
  const std::uint8_t version = r.u8();
  const std::uint32_t body = r.u32();
  if (version != kWireVersion) throw MalformedMessage("unsupported wire version");
  if (body != bytes.size() - wire::kHeaderBytes) throw MalformedMessage("length prefix mismatch");

  Message out;
  try {
    switch (kind) {
      case static_cast<std::uint8_t>(MessageKind::Beacon): {
        auto b = wire::read_beacon(r);
        wire::check_beacon<MalformedMessage>(b);
        out = std::move(b);
        break;
      }
      case static_cast<std::uint8_t>(MessageKind::Coordination): {
        auto c = wire::read_coordination(r);
        wire::check_coordination<MalformedMessage>(c);
        out = std::move(c);
        break;
      }
      default:
        throw MalformedMessage("unknown message discriminant");
    }
  } catch (const EncodingDomainError& e) {
    throw MalformedMessage(e.what());
  }
  if (r.remaining() != kAuthTagBytes) throw MalformedMessage("body length does not match fields");
  AuthTag tag{};
  r.raw(tag);
  set_tag(out, tag);
  return out;
}

/// The region of a canonical encoding covered by the auth tag.
inline std::span<const std::uint8_t> tag_input(std::span<const std::uint8_t> canonical) {
  if (canonical.size() < kAuthTagBytes) throw MalformedMessage("message too short for tag");
  return canonical.first(canonical.size() - kAuthTagBytes);
}

namespace detail {
inline void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialisation failed");
}
}  // namespace detail

/// HMAC-SHA-256 truncated to 16 bytes.
inline AuthTag compute_auth_tag(const AuthKey& key, std::span<const std::uint8_t> data) {
  detail::ensure_sodium();
  std::array<std::uint8_t, crypto_auth_hmacsha256_BYTES> full{};
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, key.data(), key.size());
  crypto_auth_hmacsha256_update(&st, data.data(), data.size());
  crypto_auth_hmacsha256_final(&st, full.data());
  AuthTag tag{};
  std::copy_n(full.begin(), kAuthTagBytes, tag.begin());
  return tag;
}

/// Constant-time comparison of the tag carried in `canonical` against the
/// tag recomputed over its covered region.
inline bool verify_auth_tag(const AuthKey& key, std::span<const std::uint8_t> canonical) {
  if (canonical.size() < kAuthTagBytes) return false;
  const AuthTag expect = compute_auth_tag(key, tag_input(canonical));
  return sodium_memcmp(expect.data(), canonical.data() + canonical.size() - kAuthTagBytes, kAuthTagBytes) == 0;
}

/// Fills in `msg.auth_tag` and returns the final wire bytes.
inline Bytes seal(Message& msg, const AuthKey& key) {
  set_tag(msg, AuthTag{});
  Bytes bytes = encode_canonical(msg);
  const AuthTag tag = compute_auth_tag(key, tag_input(bytes));
  std::copy(tag.begin(), tag.end(), bytes.end() - kAuthTagBytes);
  set_tag(msg, tag);
  return bytes;
}

inline AuthKey key_from_seed(std::uint64_t seed) {
  AuthKey k{};
  SplitMix64 g(seed);
  for (std::size_t i = 0; i < k.size(); i += 8) {
    std::uint64_t v = g();
    for (std::size_t j = 0; j < 8 && i + j < k.size(); ++j) k[i + j] = static_cast<std::uint8_t>(v >> (8 * j));
  }
  return k;
}

inline const char* to_string(Lifecycle l) {
  switch (l) {
    case Lifecycle::Propose: return "PROPOSE";
    case Lifecycle::Commit: return "COMMIT";
    case Lifecycle::Abort: return "ABORT";
    case Lifecycle::Clear: return "CLEAR";
  }
  return "?";
}

inline const char* to_string(CoordFunction f) {
  switch (f) {
    case CoordFunction::YieldPass: return "YIELD_PASS";
    case CoordFunction::Admission: return "ADMISSION";
    case CoordFunction::Sequencing: return "SEQUENCING";
    case CoordFunction::Rejoin: return "REJOIN";
    case CoordFunction::Release: return "RELEASE";
    case CoordFunction::Priority: return "PRIORITY";
    case CoordFunction::Contingency: return "CONTINGENCY";
    case CoordFunction::HazardClear: return "HAZARD_CLEAR";
  }
  return "?";
}

}  // namespace v2v
