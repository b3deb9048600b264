#pragma once

// Reject-vs-degrade pipeline applied to every received message before it may
// influence control, plus the per-aircraft neighbor belief table.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "v2v/protocol_messages.hpp"

namespace v2v {

enum class VerdictKind : std::uint8_t { Accept, Degrade, Reject };

enum class VerdictReason : std::uint8_t {
  None,
  AuthFail,
  Replay,
  Expired,
  Malformed,
  LowIntegrity,
  StaleBand,
  PartialCoverage,
};

struct ValidationVerdict {
  VerdictKind kind = VerdictKind::Reject;
  VerdictReason reason = VerdictReason::None;
  double trust_weight = 0.0;
  double uncertainty_inflation = 1.0;

  bool usable() const { return kind != VerdictKind::Reject; }

  static ValidationVerdict accept() { return {VerdictKind::Accept, VerdictReason::None, 1.0, 1.0}; }
  static ValidationVerdict reject(VerdictReason r) { return {VerdictKind::Reject, r, 0.0, 1.0}; }
};

inline const char* to_string(VerdictReason r) {
  switch (r) {
    case VerdictReason::None: return "NONE";
    case VerdictReason::AuthFail: return "AUTH_FAIL";
    case VerdictReason::Replay: return "REPLAY";
    case VerdictReason::Expired: return "EXPIRED";
    case VerdictReason::Malformed: return "MALFORMED";
    case VerdictReason::LowIntegrity: return "LOW_INTEGRITY";
    case VerdictReason::StaleBand: return "STALE_BAND";
    case VerdictReason::PartialCoverage: return "PARTIAL_COVERAGE";
  }
  return "?";
}

struct TrustPolicy {
  SimTimeMs beacon_fresh_ms = 300;
  SimTimeMs beacon_expiry_ms = 1000;
  double degrade_floor = 0.2;
  double inflation_beta = 2.0;
  // Applied multiplicatively on top of staleness when the sender reports
  // DEGRADED navigation integrity.
  double integrity_weight = 0.5;
  double integrity_inflation = 2.0;
  double partial_coverage_weight = 0.5;
  double partial_coverage_inflation = 1.5;
  std::size_t min_zone_corroboration = 2;
  double sigma_pos_m = 3.0;
  // Ablation switch: false skips the tag and replay/sequence checks.
  bool authenticate = true;
};

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DegradeFactors {
  double trust_weight = 1.0;
  double uncertainty_inflation = 1.0;
};

/// Staleness down-weighting. Weight is 1 up to `fresh_ms`, then falls
/// linearly to `floor` at `expiry_ms`; inflation rises linearly from 1 to
/// 1 + beta over the same band.
inline DegradeFactors degrade_policy(double age_ms, double fresh_ms, double expiry_ms, double floor = 0.2,
                                     double beta = 2.0) {
  if (!(fresh_ms < expiry_ms)) throw ParameterError("degrade_policy: fresh_ms must be < expiry_ms");
  if (!(age_ms >= 0.0 && age_ms <= expiry_ms)) throw ParameterError("degrade_policy: age outside [0, expiry_ms]");
  if (age_ms <= fresh_ms) return {};
  const double frac = (age_ms - fresh_ms) / (expiry_ms - fresh_ms);
  return {floor + (1.0 - floor) * (1.0 - frac), 1.0 + beta * frac};
}

/// Highest accepted sequence number plus a 64-wide bitmap of recently
/// accepted sequence numbers below it, per sender.
class ReplayState {
 public:
  static constexpr std::uint64_t kWindow = 64;

  bool would_accept(AircraftId sender, std::uint64_t seq) const {
    auto it = senders_.find(sender);
    if (it == senders_.end()) return true;
    const Entry& e = it->second;
    if (seq > e.highest) return true;
    const std::uint64_t back = e.highest - seq;
    if (back >= kWindow) return false;
    return ((e.bitmap >> back) & 1ULL) == 0;
  }

  void commit(AircraftId sender, std::uint64_t seq) {
    auto [it, fresh] = senders_.try_emplace(sender, Entry{seq, 1ULL});
    if (fresh) return;
    Entry& e = it->second;
    if (seq > e.highest) {
      const std::uint64_t shift = seq - e.highest;
      e.bitmap = shift >= kWindow ? 1ULL : (e.bitmap << shift) | 1ULL;
      e.highest = seq;
    } else {
      e.bitmap |= 1ULL << (e.highest - seq);
    }
  }

  std::optional<std::uint64_t> highest(AircraftId sender) const {
    auto it = senders_.find(sender);
    if (it == senders_.end()) return std::nullopt;
    return it->second.highest;
  }

 private:
  struct Entry {
    std::uint64_t highest;
    std::uint64_t bitmap;
  };
  std::unordered_map<AircraftId, Entry> senders_;
};

/// Pre-shared symmetric keys. A single fleet key is the default; individual
/// senders may be given their own.
class KeyRing {
 public:
  KeyRing() = default;
  explicit KeyRing(AuthKey fleet) : fleet_(fleet) {}

  void set_sender_key(AircraftId id, const AuthKey& k) { per_sender_[id] = k; }
  const AuthKey& key_for(AircraftId id) const {
    auto it = per_sender_.find(id);
    return it == per_sender_.end() ? fleet_ : it->second;
  }
  bool verify(const Message& msg, std::span<const std::uint8_t> canonical) const {
    return verify_auth_tag(key_for(sender_of(msg)), canonical);
  }

 private:
  AuthKey fleet_{};
  std::unordered_map<AircraftId, AuthKey> per_sender_;
};

/// Tracks which distinct senders have recently asserted a zone state, used to
/// flag zone-level claims that only a single neighbor supports.
class ZoneCorroboration {
 public:
  std::size_t distinct_supporters(std::uint32_t zone, CoordFunction fn, AircraftId including, SimTimeMs now,
                                  SimTimeMs horizon_ms) const {
    std::set<AircraftId> ids{including};
    auto it = claims_.find(key(zone, fn));
    if (it != claims_.end())
      for (const auto& [sender, t] : it->second)
        if (now - t <= horizon_ms) ids.insert(sender);
    return ids.size();
  }
  void record(std::uint32_t zone, CoordFunction fn, AircraftId sender, SimTimeMs t) {
    auto& slot = claims_[key(zone, fn)][sender];
    slot = std::max(slot, t);
  }

 private:
  static std::uint64_t key(std::uint32_t zone, CoordFunction fn) {
    return (static_cast<std::uint64_t>(zone) << 8) | static_cast<std::uint8_t>(fn);
  }
  std::unordered_map<std::uint64_t, std::map<AircraftId, SimTimeMs>> claims_;
};

/// Receiver-side validation state for one aircraft.
struct ValidatorState {
  ReplayState replay;
  ZoneCorroboration zones;
};

/// Validation given a precomputed authentication result. Checks run in a
/// fixed order: tag, replay window, hard expiry, navigation integrity, then
/// staleness banding. Replay state is only advanced for usable verdicts.
inline ValidationVerdict validate_checked(const Message& msg, bool tag_ok, SimTimeMs now, ValidatorState& state,
                                          const TrustPolicy& policy) {
  const AircraftId sender = sender_of(msg);
  const std::uint64_t seq = seq_of(msg);
  const SimTimeMs t_issue = issue_time_of(msg);
  const SimTimeMs ttl = ttl_of(msg);

  if (policy.authenticate) {
    if (!tag_ok) return ValidationVerdict::reject(VerdictReason::AuthFail);
    if (!state.replay.would_accept(sender, seq)) return ValidationVerdict::reject(VerdictReason::Replay);
  }
  const SimTimeMs age = now - t_issue;
  if (age < 0 || now > t_issue + ttl) return ValidationVerdict::reject(VerdictReason::Expired);

  ValidationVerdict verdict = ValidationVerdict::accept();
  if (const auto* b = std::get_if<BeaconMessage>(&msg)) {
    if (b->nav_integrity == NavIntegrity::Invalid) return ValidationVerdict::reject(VerdictReason::LowIntegrity);
    const SimTimeMs expiry = std::min<SimTimeMs>(ttl, policy.beacon_expiry_ms);
    if (age > expiry) return ValidationVerdict::reject(VerdictReason::Expired);
    if (age > policy.beacon_fresh_ms && policy.beacon_fresh_ms < expiry) {
      const auto f = degrade_policy(static_cast<double>(age), static_cast<double>(policy.beacon_fresh_ms),
                                    static_cast<double>(expiry), policy.degrade_floor, policy.inflation_beta);
      verdict = {VerdictKind::Degrade, VerdictReason::StaleBand, f.trust_weight, f.uncertainty_inflation};
    }
    if (b->nav_integrity == NavIntegrity::Degraded) {
      verdict.kind = VerdictKind::Degrade;
      verdict.reason = VerdictReason::LowIntegrity;
      verdict.trust_weight *= policy.integrity_weight;
      verdict.uncertainty_inflation *= policy.integrity_inflation;
    }
  } else {
    const auto& c = std::get<CoordinationMessage>(msg);
    if (c.function == CoordFunction::HazardClear && c.zone_ref) {
      const auto supporters = state.zones.distinct_supporters(*c.zone_ref, c.function, sender, now, ttl);
      if (supporters < policy.min_zone_corroboration)
        verdict = {VerdictKind::Degrade, VerdictReason::PartialCoverage, policy.partial_coverage_weight,
                   policy.partial_coverage_inflation};
      state.zones.record(*c.zone_ref, c.function, sender, t_issue);
    }
  }
  state.replay.commit(sender, seq);
  return verdict;
}

/// Full validation starting from the canonical bytes as received.
inline ValidationVerdict validate(std::span<const std::uint8_t> bytes, SimTimeMs now, const KeyRing& keys,
                                  ValidatorState& state, const TrustPolicy& policy,
                                  std::optional<Message>* decoded_out = nullptr) {
  Message msg;
  try {
    msg = decode(bytes);
  } catch (const MalformedMessage&) {
    return ValidationVerdict::reject(VerdictReason::Malformed);
  }
  const bool tag_ok = !policy.authenticate || keys.verify(msg, bytes);
  auto v = validate_checked(msg, tag_ok, now, state, policy);
  if (decoded_out) *decoded_out = std::move(msg);
  return v;
}

enum class BeliefSource : std::uint8_t { OwnSensor, V2V, Fused };

struct NeighborBelief {
  AircraftId sender_id = 0;
  BeaconMessage last;
  SimTimeMs age_ms = 0;
  double trust_weight = 1.0;
  double uncertainty_inflation = 1.0;
  double uncertainty_radius_m = 0.0;
  BeliefSource source = BeliefSource::V2V;
  VerdictKind verdict = VerdictKind::Accept;
  bool integrity_degraded = false;
  double extra_radius_m = 0.0;

  /// Position extrapolated to `now` along the reported velocity.
  Vec3 position_at(SimTimeMs now) const {
    return last.position + last.velocity * (static_cast<double>(now - last.t_issue_ms) / 1000.0);
  }
};

/// Per-aircraft table of V2V beliefs, keyed by sender. Age-dependent weight
/// and inflation are recomputed on every query; entries past hard expiry are
/// evicted then.
class NeighborTable {
 public:
  explicit NeighborTable(TrustPolicy policy = {}) : policy_(policy) {}

  void update(const ValidationVerdict& verdict, const BeaconMessage& msg, SimTimeMs now) {
    if (!verdict.usable()) return;
    auto it = beliefs_.find(msg.sender_id);
    if (it != beliefs_.end() && it->second.last.t_issue_ms > msg.t_issue_ms) return;
    NeighborBelief b;
    b.sender_id = msg.sender_id;
    b.last = msg;
    b.verdict = verdict.kind;
    b.integrity_degraded = msg.nav_integrity == NavIntegrity::Degraded;
    refresh(b, now);
    beliefs_[msg.sender_id] = std::move(b);
  }

  /// Beliefs visible at `now`, sorted by sender id.
  std::vector<NeighborBelief> query(SimTimeMs now) {
    std::vector<NeighborBelief> out;
    for (auto it = beliefs_.begin(); it != beliefs_.end();) {
      if (expired(it->second, now)) {
        it = beliefs_.erase(it);
        continue;
      }
      refresh(it->second, now);
      out.push_back(it->second);
      ++it;
    }
    return out;
  }

  const NeighborBelief* find(AircraftId id, SimTimeMs now) {
    auto it = beliefs_.find(id);
    if (it == beliefs_.end()) return nullptr;
    if (expired(it->second, now)) {
      beliefs_.erase(it);
      return nullptr;
    }
    refresh(it->second, now);
    return &it->second;
  }

  std::size_t size() const { return beliefs_.size(); }
  const TrustPolicy& policy() const { return policy_; }

 private:
  SimTimeMs expiry_for(const NeighborBelief& b) const {
    return std::min<SimTimeMs>(b.last.ttl_ms, policy_.beacon_expiry_ms);
  }
  bool expired(const NeighborBelief& b, SimTimeMs now) const { return now - b.last.t_issue_ms > expiry_for(b); }

  void refresh(NeighborBelief& b, SimTimeMs now) const {
    b.age_ms = std::max<SimTimeMs>(0, now - b.last.t_issue_ms);
    const SimTimeMs expiry = expiry_for(b);
    DegradeFactors f;
    if (policy_.beacon_fresh_ms < expiry)
      f = degrade_policy(static_cast<double>(std::min(b.age_ms, expiry)), static_cast<double>(policy_.beacon_fresh_ms),
                         static_cast<double>(expiry), policy_.degrade_floor, policy_.inflation_beta);
    if (b.integrity_degraded) {
      f.trust_weight *= policy_.integrity_weight;
      f.uncertainty_inflation *= policy_.integrity_inflation;
    }
    b.trust_weight = f.trust_weight;
    b.uncertainty_inflation = f.uncertainty_inflation;
    b.uncertainty_radius_m = f.uncertainty_inflation * policy_.sigma_pos_m;
    b.verdict = (f.trust_weight < 1.0) ? VerdictKind::Degrade : VerdictKind::Accept;
  }

  TrustPolicy policy_;
  std::map<AircraftId, NeighborBelief> beliefs_;
};

}  // namespace v2v
