#pragma once

// Per-aircraft decision logic for the strategic-only baseline (A), the
// sensor-only tactical baseline (B1) and the V2V tactical baseline (B2 and its
// unauthenticated ablation). Everything that touches motion goes through
// `decide`; the transaction engine, admission ordering, backstop and mode
// logic are exposed separately so they can be exercised in isolation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "v2v/airspace_world.hpp"
#include "v2v/core.hpp"
#include "v2v/protocol_messages.hpp"
#include "v2v/trust_validation.hpp"

namespace v2v {

inline constexpr double kProtectedRadiusM = 15.0;
inline constexpr double kPredictionHorizonS = 8.0;
inline constexpr SimTimeMs kProposeTimeoutMs = 500;
inline constexpr std::uint32_t kCommitValidityMs = 2000;
inline constexpr SimTimeMs kModeHysteresisMs = 2000;
inline constexpr SimTimeMs kTrackCoastMs = 500;
inline constexpr double kGuardedCapacityScale = 0.5;
inline constexpr double kGuardedInflation = 1.5;

enum class ControllerMode : std::uint8_t { Cooperative, Guarded, Fallback, Backstop };

inline const char* to_string(ControllerMode m) {
  switch (m) {
    case ControllerMode::Cooperative: return "COOPERATIVE";
    case ControllerMode::Guarded: return "GUARDED";
    case ControllerMode::Fallback: return "FALLBACK";
    case ControllerMode::Backstop: return "BACKSTOP";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Conflict prediction
// ---------------------------------------------------------------------------

struct ConflictPrediction {
  AircraftId self = 0;
  AircraftId other = 0;
  double t_cpa_s = 0.0;
  double d_cpa_m = 0.0;
  double effective_radius_m = 0.0;
  double severity = 0.0;
  Vec3 rel_at_cpa;  // other minus self at the closest point
  Vec3 rel_velocity;
};

struct OwnState {
  AircraftId id = 0;
  Vec3 position;
  Vec3 velocity;
};

struct PredictionParams {
  double r0_m = kProtectedRadiusM;
  double sigma_pos_m = 3.0;
  SimTimeMs intent_fresh_ms = 300;
};

inline double effective_radius(const NeighborBelief& b, const PredictionParams& p = {}) {
  return p.r0_m + b.uncertainty_inflation * p.sigma_pos_m + b.extra_radius_m;
}

struct CpaResult {
  double t_s = 0.0;
  double d_m = 0.0;
  Vec3 rel;
  Vec3 rel_velocity;
};

/// Closest approach between an own straight-line track and a neighbor path
/// given as time-stamped points (first point at t = 0); the path continues
/// along its last segment after the final point.
inline CpaResult closest_approach(const OwnState& self, const std::vector<std::pair<double, Vec3>>& path,
                                  const Vec3& tail_velocity, double horizon_s) {
  CpaResult best{0.0, std::numeric_limits<double>::infinity(), {}, {}};
  auto consider = [&](double t0, double t1, const Vec3& p0, const Vec3& w_nb) {
    if (t0 >= horizon_s) return;
    t1 = std::min(t1, horizon_s);
    const Vec3 r0 = p0 - (self.position + self.velocity * t0);
    const Vec3 w = w_nb - self.velocity;
    const double ww = w.dot(w);
    double tau = ww > 1e-12 ? -r0.dot(w) / ww : 0.0;
    tau = std::clamp(tau, 0.0, t1 - t0);
    const Vec3 r = r0 + w * tau;
    const double d = r.norm();
    if (d < best.d_m - 1e-12) best = {t0 + tau, d, r, w};
  };
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const double dt = path[i + 1].first - path[i].first;
    if (dt <= 1e-9) continue;
    consider(path[i].first, path[i + 1].first, path[i].second, (path[i + 1].second - path[i].second) / dt);
  }
  consider(path.back().first, horizon_s, path.back().second, tail_velocity);
  return best;
}

/// Constant-velocity closest-point-of-approach against every belief. Intent
/// waypoints are followed only for fresh, fully accepted V2V beliefs.
/// Returned predictions are sorted by time to closest approach.
inline std::vector<ConflictPrediction> predict_conflicts(const OwnState& self, const std::vector<NeighborBelief>& beliefs,
                                                         double horizon_s, SimTimeMs now,
                                                         const PredictionParams& params = {}) {
  if (!(horizon_s > 0.0)) throw std::invalid_argument("predict_conflicts: horizon must be positive");
  std::vector<ConflictPrediction> out;
  std::vector<std::pair<double, Vec3>> path;
  for (const auto& b : beliefs) {
    if (b.sender_id == self.id) continue;
    const double radius = effective_radius(b, params);
    const Vec3 here = b.position_at(now);
    if (b.last.intent.empty() || b.source == BeliefSource::OwnSensor) {
      // Cheap reject: cannot close the gap within the horizon.
      const double reach = (b.last.velocity - self.velocity).norm() * horizon_s;
      if ((here - self.position).norm() - reach > radius) continue;
    }
    path.clear();
    path.emplace_back(0.0, here);
    Vec3 tail = b.last.velocity;
    const bool use_intent = b.source != BeliefSource::OwnSensor && b.verdict == VerdictKind::Accept &&
                            b.age_ms <= params.intent_fresh_ms && !b.last.intent.empty();
    if (use_intent) {
      for (const auto& wp : b.last.intent) {
        const double t = static_cast<double>(wp.eta_ms - now) / 1000.0;
        if (t <= path.back().first + 1e-6) continue;
        path.emplace_back(t, wp.position);
      }
      if (path.size() >= 2) {
        const auto& a = path[path.size() - 2];
        const auto& z = path.back();
        tail = (z.second - a.second) / (z.first - a.first);
      }
    }
    const CpaResult cpa = closest_approach(self, path, tail, horizon_s);
    if (cpa.t_s <= horizon_s && cpa.d_m < radius) {
      ConflictPrediction c;
      c.self = self.id;
      c.other = b.sender_id;
      c.t_cpa_s = cpa.t_s;
      c.d_cpa_m = cpa.d_m;
      c.effective_radius_m = radius;
      c.severity = std::max(0.0, 1.0 - cpa.d_m / radius);
      c.rel_at_cpa = cpa.rel;
      c.rel_velocity = cpa.rel_velocity;
      out.push_back(c);
    }
  }
  std::sort(out.begin(), out.end(), [](const ConflictPrediction& a, const ConflictPrediction& b) {
    return a.t_cpa_s != b.t_cpa_s ? a.t_cpa_s < b.t_cpa_s : a.other < b.other;
  });
  return out;
}

/// Wraps a sensor detection as a belief so that prediction treats both
/// sources uniformly.
inline NeighborBelief belief_from_track(const SensorTrack& t, SimTimeMs now) {
  NeighborBelief b;
  b.sender_id = t.target;
  b.last.sender_id = t.target;
  b.last.t_issue_ms = t.t_ms;
  b.last.position = t.position;
  b.last.velocity = t.velocity;
  b.age_ms = now - t.t_ms;
  b.source = BeliefSource::OwnSensor;
  b.verdict = VerdictKind::Accept;
  b.trust_weight = 1.0;
  b.uncertainty_inflation = 1.0;
  return b;
}

// ---------------------------------------------------------------------------
// Transaction engine
// ---------------------------------------------------------------------------

enum class TxPhase : std::uint8_t { Idle, Proposed, Committed, Aborted, Cleared };
enum class TxRole : std::uint8_t { None, Proposer, Responder };

inline const char* to_string(TxPhase p) {
  switch (p) {
    case TxPhase::Idle: return "IDLE";
    case TxPhase::Proposed: return "PROPOSED";
    case TxPhase::Committed: return "COMMITTED";
    case TxPhase::Aborted: return "ABORTED";
    case TxPhase::Cleared: return "CLEARED";
  }
  return "?";
}

inline bool is_terminal(TxPhase p) { return p == TxPhase::Aborted || p == TxPhase::Cleared; }

inline bool legal_transition(TxPhase from, TxPhase to) {
  switch (from) {
    case TxPhase::Idle: return to == TxPhase::Proposed;
    case TxPhase::Proposed: return to == TxPhase::Committed || to == TxPhase::Aborted;
    case TxPhase::Committed: return to == TxPhase::Cleared || to == TxPhase::Aborted;
    default: return false;
  }
}

struct TransactionState {
  std::uint64_t transaction_id = 0;
  CoordFunction function = CoordFunction::YieldPass;
  TxPhase phase = TxPhase::Idle;
  TxRole role = TxRole::None;
  SimTimeMs deadline_ms = 0;      // PROPOSE timeout
  SimTimeMs commit_until_ms = 0;  // agreement is live strictly before this time
  SimTimeMs last_change_ms = 0;
  std::set<AircraftId> participants;
  std::vector<AircraftId> granted_ordering;
  bool fallback = false;

  bool live_commitment(SimTimeMs now) const { return phase == TxPhase::Committed && now < commit_until_ms; }
};

enum class TxEventKind : std::uint8_t {
  SendPropose,
  RecvPropose,
  SendCommit,
  RecvCommit,
  SendAbort,
  RecvAbort,
  SendClear,
  RecvClear,
  Tick,
};

struct TxEvent {
  TxEventKind kind = TxEventKind::Tick;
  SimTimeMs msg_issue_ms = 0;  // issue time of a received message
  std::uint32_t validity_ms = kCommitValidityMs;
  std::uint32_t ttl_ms = 1000;
  SimTimeMs timeout_ms = kProposeTimeoutMs;
};

struct TxResult {
  TransactionState state;
  std::optional<Lifecycle> outbound;
  bool violation = false;
  bool transitioned = false;
};

/// One step of the coordination lifecycle. Illegal events leave the state
/// untouched and report a protocol violation.
inline TxResult run_transaction(const TransactionState& s, const TxEvent& e, SimTimeMs now) {
  TxResult r{s, std::nullopt, false, false};
  auto go = [&](TxPhase to) {
    r.state.phase = to;
    r.state.last_change_ms = now;
    r.transitioned = true;
  };
  auto bad = [&] {
    r.state = s;
    r.violation = true;
  };
  switch (e.kind) {
    case TxEventKind::Tick:
      if (s.phase == TxPhase::Proposed && now >= s.deadline_ms) {
        go(TxPhase::Aborted);
        r.state.fallback = true;
      } else if (s.phase == TxPhase::Committed && now >= s.commit_until_ms) {
        go(TxPhase::Aborted);
      }
      return r;
    case TxEventKind::SendPropose:
    case TxEventKind::RecvPropose:
      if (s.phase != TxPhase::Idle) return bad(), r;
      go(TxPhase::Proposed);
      r.state.role = e.kind == TxEventKind::SendPropose ? TxRole::Proposer : TxRole::Responder;
      r.state.deadline_ms = now + e.timeout_ms;
      if (e.kind == TxEventKind::SendPropose) r.outbound = Lifecycle::Propose;
      return r;
    case TxEventKind::SendCommit:
      if (s.phase != TxPhase::Proposed || s.role != TxRole::Responder) return bad(), r;
      go(TxPhase::Committed);
      r.state.commit_until_ms = now + e.validity_ms;
      r.outbound = Lifecycle::Commit;
      return r;
    case TxEventKind::RecvCommit:
      if (s.phase != TxPhase::Proposed || s.role != TxRole::Proposer) return bad(), r;
      go(TxPhase::Committed);
      r.state.commit_until_ms =
          std::min(e.msg_issue_ms + static_cast<SimTimeMs>(e.validity_ms), e.msg_issue_ms + static_cast<SimTimeMs>(e.ttl_ms));
      if (now >= r.state.commit_until_ms) go(TxPhase::Aborted);
      return r;
    case TxEventKind::SendAbort:
    case TxEventKind::RecvAbort:
      if (s.phase != TxPhase::Proposed && s.phase != TxPhase::Committed) return bad(), r;
      go(TxPhase::Aborted);
      if (e.kind == TxEventKind::SendAbort) r.outbound = Lifecycle::Abort;
      return r;
    case TxEventKind::SendClear:
    case TxEventKind::RecvClear:
      if (s.phase != TxPhase::Committed) return bad(), r;
      go(TxPhase::Cleared);
      if (e.kind == TxEventKind::SendClear) r.outbound = Lifecycle::Clear;
      return r;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Hotspot admission
// ---------------------------------------------------------------------------

struct AdmissionRequest {
  AircraftId id = 0;
  int priority = 0;
  SimTimeMs eta_ms = 0;
  bool rejoin = false;
};

struct AdmissionResult {
  std::vector<AircraftId> ordering;
  std::vector<AircraftId> granted;
};

inline std::size_t admission_capacity(const Hotspot& h, double capacity_scale) {
  const auto cap = static_cast<std::size_t>(std::floor(static_cast<double>(h.pad_count) * capacity_scale + 1e-9));
  return std::max<std::size_t>(1, cap);
}

/// Deterministic ordering by (priority desc, eta asc, id asc); the head of
/// the ordering is granted up to the free admission capacity.
inline AdmissionResult hotspot_admission(const Hotspot& h, std::vector<AdmissionRequest> requests,
                                         double capacity_scale, std::size_t outstanding = 0) {
  std::sort(requests.begin(), requests.end(), [](const AdmissionRequest& a, const AdmissionRequest& b) {
    if (a.priority != b.priority) return a.priority > b.priority;
    if (a.eta_ms != b.eta_ms) return a.eta_ms < b.eta_ms;
    return a.id < b.id;
  });
  AdmissionResult r;
  for (const auto& q : requests) r.ordering.push_back(q.id);
  const std::size_t cap = admission_capacity(h, capacity_scale);
  const std::size_t free = cap > outstanding ? cap - outstanding : 0;
  for (std::size_t i = 0; i < std::min(free, r.ordering.size()); ++i) r.granted.push_back(r.ordering[i]);
  return r;
}

/// Replicated view of one hotspot built from ADMISSION, SEQUENCING, RELEASE
/// and REJOIN traffic.
struct HotspotView {
  std::map<AircraftId, std::pair<AdmissionRequest, SimTimeMs>> requests;  // request, last heard
  std::map<AircraftId, std::pair<std::size_t, SimTimeMs>> claims;         // pad, last heard

  std::map<AircraftId, SimTimeMs> release_eta;                            // expected pad release per claimant
  std::map<AircraftId, SimTimeMs> claimed_at;

  void expire(SimTimeMs now, SimTimeMs request_ttl, SimTimeMs claim_ttl) {
    std::erase_if(requests, [&](const auto& kv) { return now - kv.second.second > request_ttl; });
    std::erase_if(claims, [&](const auto& kv) { return now - kv.second.second > claim_ttl; });
    std::erase_if(release_eta, [&](const auto& kv) { return !claims.contains(kv.first); });
    std::erase_if(claimed_at, [&](const auto& kv) { return !claims.contains(kv.first); });
  }
  void drop(AircraftId id) {
    claims.erase(id);
    requests.erase(id);
    release_eta.erase(id);
    claimed_at.erase(id);
  }
  /// True if another aircraft claimed the pad before `since`.
  bool pad_held_before(std::size_t pad, AircraftId self, SimTimeMs since) const {
    for (const auto& [id, c] : claims) {
      if (id == self || c.first != pad) continue;
      auto it = claimed_at.find(id);
      const SimTimeMs t = it != claimed_at.end() ? it->second : std::numeric_limits<SimTimeMs>::min();
      if (t < since || (t == since && id < self)) return true;
    }
    return false;
  }
  std::vector<AdmissionRequest> request_list() const {
    std::vector<AdmissionRequest> out;
    for (const auto& [id, rq] : requests) out.push_back(rq.first);
    return out;
  }
  bool pad_claimed(std::size_t pad, AircraftId except) const {
    return std::any_of(claims.begin(), claims.end(),
                       [&](const auto& kv) { return kv.first != except && kv.second.first == pad; });
  }
  /// Pads a newly admitted aircraft may take: unclaimed pads first, then pads
  /// held by a single aircraft expected to leave within `lead_ms`, soonest
  /// first.
  std::vector<std::size_t> available_pads(std::size_t pad_count, AircraftId except, SimTimeMs now,
                                          SimTimeMs lead_ms) const {
    std::vector<std::size_t> free;
    std::vector<std::pair<SimTimeMs, std::size_t>> soon;
    for (std::size_t p = 0; p < pad_count; ++p) {
      std::size_t holders = 0;
      std::optional<SimTimeMs> eta;
      for (const auto& [id, c] : claims) {
        if (id == except || c.first != p) continue;
        ++holders;
        auto it = release_eta.find(id);
        if (it != release_eta.end()) eta = it->second;
      }
      if (holders == 0) free.push_back(p);
      else if (holders == 1 && eta && *eta - now <= lead_ms) soon.emplace_back(*eta, p);
    }
    std::sort(soon.begin(), soon.end());
    for (const auto& e : soon) free.push_back(e.second);
    return free;
  }
};

// ---------------------------------------------------------------------------
// Backstop
// ---------------------------------------------------------------------------

struct BackstopThresholds {
  double sep_m = 10.0;
  double ttc_s = 3.0;
};

struct BackstopThreat {
  AircraftId other = 0;
  Vec3 rel;  // other minus self, now
  double predicted_sep_m = 0.0;
  double t_s = 0.0;
};

/// Fires when any known neighbor, from any source, is closer than the
/// separation threshold now or is predicted to be within the time threshold.
/// Returns the most urgent threat.
inline std::optional<BackstopThreat> backstop_check(const OwnState& self, const std::vector<NeighborBelief>& neighbors,
                                                    SimTimeMs now, const BackstopThresholds& th) {
  std::optional<BackstopThreat> best;
  for (const auto& b : neighbors) {
    if (b.sender_id == self.id) continue;
    const Vec3 r = b.position_at(now) - self.position;
    const Vec3 w = b.last.velocity - self.velocity;
    const double ww = w.dot(w);
    const double t = ww > 1e-12 ? std::clamp(-r.dot(w) / ww, 0.0, th.ttc_s) : 0.0;
    const double d_now = r.norm();
    const double d_pred = (r + w * t).norm();
    const bool fire = d_now < th.sep_m || d_pred < th.sep_m;
    if (!fire) continue;
    const double urgency = std::min(d_now, d_pred);
    if (!best || urgency < best->predicted_sep_m) best = BackstopThreat{b.sender_id, r, urgency, t};
  }
  return best;
}

/// Maximal-authority evasive command away from a threat. The vertical sense
/// is resolved by relative altitude, then by id, so both parties split.
inline Vec3 backstop_evasion(const OwnState& self, const BackstopThreat& threat) {
  Vec3 away{-threat.rel.x, -threat.rel.y, 0.0};
  const double n = away.norm();
  if (n < 1e-6) away = (self.id % 2 == 0) ? Vec3{1.0, 0.0, 0.0} : Vec3{-1.0, 0.0, 0.0};
  else away = away / n;
  bool climb = threat.rel.z < 0.0 || (threat.rel.z == 0.0 && (self.id % 2 == 1));
  if (std::abs(threat.rel.z) < 1e-9) climb = self.id > threat.other;
  if (self.position.z < 15.0) climb = true;
  if (self.position.z > 115.0) climb = false;
  return away * kAccelMax + Vec3{0.0, 0.0, climb ? kAccelMax : -kAccelMax};
}

struct BackstopState {
  bool active = false;
  SimTimeMs since_ms = 0;
  SimTimeMs clear_since_ms = -1;
  std::optional<BackstopThreat> last_threat;
};

// ---------------------------------------------------------------------------
// Mode logic
// ---------------------------------------------------------------------------

struct QualitySummary {
  double mean_trust_weight = 0.0;
  double degraded_fraction = 0.0;
  double prr_estimate = 0.0;
  NavIntegrity nav = NavIntegrity::Nominal;
};

struct ModeState {
  ControllerMode mode = ControllerMode::Fallback;
  std::optional<ControllerMode> candidate;
  SimTimeMs candidate_since_ms = 0;
  SimTimeMs last_transition_ms = std::numeric_limits<SimTimeMs>::min() / 2;
  std::size_t transitions = 0;
  bool acquired = false;
};

inline ControllerMode target_mode(const QualitySummary& q) {
  ControllerMode m;
  if (q.mean_trust_weight >= 0.8 && q.prr_estimate >= 0.7) m = ControllerMode::Cooperative;
  else if (q.mean_trust_weight >= 0.4 && q.prr_estimate >= 0.4) m = ControllerMode::Guarded;
  else m = ControllerMode::Fallback;
  if (q.nav != NavIntegrity::Nominal && m == ControllerMode::Cooperative) m = ControllerMode::Guarded;
  return m;
}

inline int mode_rank(ControllerMode m) {
  switch (m) {
    case ControllerMode::Cooperative: return 2;
    case ControllerMode::Guarded: return 1;
    default: return 0;
  }
}

/// Downgrades apply at once; upgrades require the better mode to hold for
/// the hysteresis interval.
inline ControllerMode mode_update(ModeState& s, const QualitySummary& q, SimTimeMs now,
                                  SimTimeMs hysteresis_ms = kModeHysteresisMs) {
  const ControllerMode want = target_mode(q);
  if (want == s.mode) {
    s.candidate.reset();
    return s.mode;
  }
  if (mode_rank(want) < mode_rank(s.mode)) {
    s.mode = want;
    s.candidate.reset();
    s.last_transition_ms = now;
    ++s.transitions;
    return s.mode;
  }
  if (s.candidate != want) {
    // A weaker upgrade target than the pending one restarts the clock.
    s.candidate = want;
    s.candidate_since_ms = now;
  }
  if (now - s.candidate_since_ms >= hysteresis_ms && now - s.last_transition_ms >= hysteresis_ms) {
    s.mode = want;
    s.candidate.reset();
    s.last_transition_ms = now;
    ++s.transitions;
  }
  return s.mode;
}

// ---------------------------------------------------------------------------
// Strategic services for baseline A
// ---------------------------------------------------------------------------

struct Reservation {
  std::size_t hotspot = 0;
  std::size_t pad = 0;
  SimTimeMs start_ms = 0;
};

/// Counter-instrumented discovery and synchronization service stub.
struct DssService {
  std::size_t queries = 0;
  std::size_t replans = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<SimTimeMs>> pad_free_ms;  // nominal schedule per hotspot/pad

  SimTimeMs reauthorization_latency_ms(AircraftId id, SimTimeMs now) const {
    SplitMix64 g(hash_values(seed, hash_string("reauth"), id, now));
    return static_cast<SimTimeMs>(std::llround((5.0 + 10.0 * g.uniform()) * 1000.0));
  }

  /// Books the earliest nominal slot; the schedule assumes nominal service.
  Reservation reserve(const Hotspot& h, SimTimeMs now, double approach_s = 8.0) {
    ++queries;
    if (pad_free_ms.size() <= h.id) pad_free_ms.resize(h.id + 1);
    auto& pads = pad_free_ms[h.id];
    if (pads.size() < h.pad_count) pads.resize(h.pad_count, 0);
    std::size_t best = 0;
    for (std::size_t i = 1; i < pads.size(); ++i)
      if (pads[i] < pads[best]) best = i;
    const SimTimeMs start = std::max(now, pads[best]);
    pads[best] = start + static_cast<SimTimeMs>(std::llround((approach_s + h.service_time_s) * 1000.0));
    return {h.id, best, start};
  }
};

// ---------------------------------------------------------------------------
// Controller state and decision
// ---------------------------------------------------------------------------

enum class ActionKind : std::uint8_t { Cruise, Avoid, Yield, StandOn, Hold, Approach, Service, Backstop };

inline const char* to_string(ActionKind a) {
  switch (a) {
    case ActionKind::Cruise: return "CRUISE";
    case ActionKind::Avoid: return "AVOID";
    case ActionKind::Yield: return "YIELD";
    case ActionKind::StandOn: return "STAND_ON";
    case ActionKind::Hold: return "HOLD";
    case ActionKind::Approach: return "APPROACH";
    case ActionKind::Service: return "SERVICE";
    case ActionKind::Backstop: return "BACKSTOP";
  }
  return "?";
}

struct ControllerParams {
  BackstopThresholds backstop;
  PredictionParams prediction;
  double horizon_s = kPredictionHorizonS;
  double avoid_gain = 1.5;
  double avoid_margin_m = 5.0;
  double max_avoid_speed = 8.0;
  double strategic_horizon_s = 20.0;
  double strategic_radius_m = 20.0;
  SimTimeMs strategic_period_ms = 1000;
  SimTimeMs strategic_grace_ms = 10000;
  SimTimeMs contingency_period_ms = 500;
  std::uint32_t contingency_validity_ms = 3000;
  SimTimeMs admission_period_ms = 1000;
  SimTimeMs request_ttl_ms = 3000;
  SimTimeMs claim_ttl_ms = 3000;
  std::size_t coordination_budget = 4;  // coordination messages per step
  SimTimeMs prr_window_ms = 2000;
  SimTimeMs prr_sender_window_ms = 4000;
  SimTimeMs prr_grace_ms = 1000;
  double beacon_rate_hz = 10.0;
  double integrity_degraded_pl_m = 5.0;
  double integrity_invalid_pl_m = 80.0;
};

struct ControllerCounters {
  std::size_t protocol_violations = 0;
  std::size_t yield_steps = 0;
  std::size_t stand_on_steps = 0;
  std::size_t stale_authority_refs = 0;
  std::size_t backstop_activations = 0;
  std::vector<double> backstop_durations_s;
  std::size_t holds = 0;
  std::size_t context_holds = 0;
  std::size_t transactions_started = 0;
  std::vector<std::pair<TxPhase, TxPhase>> observed_transitions;
};

struct ControllerState {
  AircraftId id = 0;
  ModeState mode;
  BackstopState backstop;
  NeighborTable table;
  ValidatorState validator;
  std::map<AircraftId, SensorTrack> tracks;
  std::deque<std::pair<SimTimeMs, AircraftId>> timely_beacons;
  std::map<AircraftId, SimTimeMs> last_heard;
  std::map<AircraftId, SimTimeMs> first_heard;
  std::optional<SimTimeMs> listening_since;
  SimTimeMs pad_claimed_at_ms = 0;
  std::map<AircraftId, TransactionState> tx;  // YIELD_PASS per peer
  std::map<AircraftId, SimTimeMs> conflict_since;
  std::map<AircraftId, SimTimeMs> last_conflict;
  std::map<AircraftId, std::pair<double, SimTimeMs>> contingency;  // protection level, valid until
  std::map<AircraftId, int> peer_priority;
  HotspotView hotspot_view;
  std::vector<CoordinationMessage> pending;

  // Baseline A.
  SimTimeMs hold_until_ms = -1;
  bool strategic_hold = false;
  bool context_hold = false;
  SimTimeMs grace_until_ms = 0;
  std::optional<Reservation> reservation;
  bool rejoin_pending = false;

  // Hotspot and context.
  SimTimeMs hold_arrival_ms = -1;
  SimTimeMs last_admission_tx_ms = std::numeric_limits<SimTimeMs>::min() / 2;
  SimTimeMs last_claim_tx_ms = std::numeric_limits<SimTimeMs>::min() / 2;
  SimTimeMs last_contingency_tx_ms = std::numeric_limits<SimTimeMs>::min() / 2;
  std::vector<ContextEvent> known_constraints;
  std::set<std::uint32_t> handled_constraints;
  std::optional<Vec3> detour;

  std::uint64_t next_seq = 1;
  std::uint64_t tx_counter = 0;
  Vec3 desired_velocity;
  ControllerCounters counters;

  explicit ControllerState(AircraftId id_ = 0, TrustPolicy policy = {}) : id(id_), table(policy) {}

  std::uint64_t take_seq() { return next_seq++; }
};

/// Own integrity monitor: protection level grows with the navigation error.
inline double protection_level_m(const VehicleState& v) {
  const double e = v.true_nav_error.norm();
  return e > 1e-9 ? 1.2 * e + 2.0 : 0.0;
}

inline NavIntegrity nav_integrity_of(const VehicleState& v, const ControllerParams& p) {
  const double pl = protection_level_m(v);
  if (pl > p.integrity_invalid_pl_m) return NavIntegrity::Invalid;
  if (pl > p.integrity_degraded_pl_m) return NavIntegrity::Degraded;
  return NavIntegrity::Nominal;
}

struct BeliefAssessment {
  AircraftId id = 0;
  bool predicted_conflict = false;
  double effective_radius_m = 0.0;
};

struct Decision {
  Vec3 accel;
  Vec3 desired_velocity;
  ControllerMode mode = ControllerMode::Fallback;
  VehicleMode vehicle_mode = VehicleMode::Enroute;
  ActionKind action = ActionKind::Cruise;
  std::vector<CoordinationMessage> outbound;
  std::vector<BeliefAssessment> assessments;
  std::vector<AircraftId> held_neighbors;  // neighbors in the belief set this step
  double info_age_sum_ms = 0.0;
  std::size_t info_age_count = 0;
  bool dss_query = false;
  bool replan = false;
  bool hold_started = false;
  bool backstop_started = false;
  std::optional<std::size_t> approach_pad;
  std::vector<std::string> tx_log;
};

struct DecisionInput {
  Baseline baseline = Baseline::B2;
  const VehicleState* self = nullptr;
  const std::vector<SensorTrack>* sensed = nullptr;
  const std::vector<CoordinationMessage>* inbox = nullptr;
  SimTimeMs now = 0;
};

struct WorldServices {
  const World* world = nullptr;
  DssService* dss = nullptr;
  std::uint64_t seed = 0;
};

namespace detail {

inline Vec3 hold_point(const Hotspot& h, const VehicleState& v) {
  const double a = static_cast<double>(v.id) * 2.39996322972865332;
  return {h.position.x + h.hold_radius_m * std::cos(a), h.position.y + h.hold_radius_m * std::sin(a), v.band_altitude_m};
}

/// Waiting spot beside a pad, clear of the pad row.
inline Vec3 standoff_point(const Hotspot& h, std::size_t pad) {
  const Vec3 p = h.pads[pad].position;
  return {p.x, p.y + 20.0, p.z + 5.0};
}

inline Vec3 nav_velocity(const Vec3& from, const Vec3& target, double target_alt, double speed) {
  Vec3 d = target - from;
  d.z = 0.0;
  const double dist = d.norm();
  Vec3 v;
  if (dist > 1e-6) v = d * (std::min(speed, 0.5 * dist) / dist);
  v.z = std::clamp(0.5 * (target_alt - from.z), -2.0, 2.0);
  return v;
}

/// Detour point for a segment that passes through a circular constraint,
/// or nothing when the segment clears it.
inline std::optional<Vec3> detour_for(const Vec3& from, const Vec3& to, const ContextEvent& c, double margin) {
  Vec3 seg = to - from;
  seg.z = 0.0;
  const double len2 = seg.dot(seg);
  Vec3 rel = c.position - from;
  rel.z = 0.0;
  const double t = len2 > 1e-9 ? std::clamp(rel.dot(seg) / len2, 0.0, 1.0) : 0.0;
  Vec3 closest = from + seg * t;
  closest.z = 0.0;
  Vec3 off = closest - Vec3{c.position.x, c.position.y, 0.0};
  const double d = off.norm();
  if (d >= c.radius_m + margin) return std::nullopt;
  Vec3 dir;
  if (d > 1e-6) dir = off / d;
  else {
    const double l = std::sqrt(len2);
    dir = l > 1e-9 ? Vec3{-seg.y / l, seg.x / l, 0.0} : Vec3{1.0, 0.0, 0.0};
  }
  Vec3 p = Vec3{c.position.x, c.position.y, 0.0} + dir * (c.radius_m + 2.0 * margin);
  p.z = from.z;
  return p;
}

inline std::uint64_t tx_id(AircraftId self, AircraftId peer, std::uint64_t counter) {
  return (static_cast<std::uint64_t>(self) << 32) ^ (static_cast<std::uint64_t>(peer) << 12) ^ counter;
}

inline int send_class(const CoordinationMessage& m) {
  if (m.function == CoordFunction::Contingency || m.function == CoordFunction::HazardClear) return 0;
  if (m.lifecycle == Lifecycle::Abort || m.lifecycle == Lifecycle::Commit) return 1;
  return 2;
}

}  // namespace detail

/// Send-side queue discipline under a per-step budget: contingency and
/// hazard traffic first, then ABORT/COMMIT, then PROPOSE/CLEAR. Beacons are
/// scheduled separately after these.
inline std::vector<CoordinationMessage> schedule_outbound(std::vector<CoordinationMessage> msgs, std::size_t budget,
                                                          std::vector<CoordinationMessage>* deferred = nullptr) {
  std::stable_sort(msgs.begin(), msgs.end(), [](const CoordinationMessage& a, const CoordinationMessage& b) {
    return detail::send_class(a) < detail::send_class(b);
  });
  if (msgs.size() > budget) {
    if (deferred) deferred->assign(msgs.begin() + static_cast<std::ptrdiff_t>(budget), msgs.end());
    msgs.resize(budget);
  }
  return msgs;
}

class Controller {
 public:
  Controller(const ScenarioConfig& cfg, ControllerParams params = {}) : cfg_(cfg), p_(params) {
    p_.backstop.sep_m = cfg.backstop_sep_m;
    p_.backstop.ttc_s = cfg.backstop_ttc_s;
    p_.prediction.sigma_pos_m = cfg.sensor_noise_m;
    if (cfg.effective_params().count("invalid_pl_m")) p_.integrity_invalid_pl_m = cfg.param("invalid_pl_m");
  }

  const ControllerParams& params() const { return p_; }

  /// Records a usable, timely beacon for the window reception estimate.
  void note_beacon(ControllerState& s, AircraftId sender, SimTimeMs now) const {
    s.timely_beacons.emplace_back(now, sender);
    s.last_heard[sender] = now;
    s.first_heard.try_emplace(sender, now);
  }

  /// Window reception estimate: timely beacons over those expected from
  /// every sender heard recently, each sender counted only over the part of
  /// the window it was plausibly in range.
  double prr_estimate(ControllerState& s, SimTimeMs now) const {
    while (!s.timely_beacons.empty() && now - s.timely_beacons.front().first > p_.prr_window_ms)
      s.timely_beacons.pop_front();
    std::erase_if(s.last_heard, [&](const auto& kv) { return now - kv.second > p_.prr_sender_window_ms; });
    std::erase_if(s.first_heard, [&](const auto& kv) { return !s.last_heard.contains(kv.first); });
    if (s.last_heard.empty()) return 0.0;
    const double period_ms = 1000.0 / p_.beacon_rate_hz;
    double expected = 0.0;
    for (const auto& [id, last] : s.last_heard) {
      const SimTimeMs from = std::max(now - p_.prr_window_ms, s.first_heard.at(id));
      const SimTimeMs to = std::min(now, last + p_.prr_grace_ms);
      expected += std::max(1.0, static_cast<double>(to - from) / period_ms + 1.0);
    }
    return std::min(1.0, static_cast<double>(s.timely_beacons.size()) / expected);
  }

  /// Coordination inbox handling. Only called for V2V participants.
  void absorb(ControllerState& s, const CoordinationMessage& m, SimTimeMs now, Decision& d) const {
    const AircraftId peer = m.sender_id;
    switch (m.function) {
      case CoordFunction::YieldPass: {
        if (!m.participants.contains(s.id)) return;
        auto& t = s.tx[peer];
        TxEvent e;
        e.msg_issue_ms = m.t_issue_ms;
        e.validity_ms = m.validity_ms;
        e.ttl_ms = m.ttl_ms;
        if (m.lifecycle == Lifecycle::Propose) {
          if (!is_terminal(t.phase) && t.phase != TxPhase::Idle && t.transaction_id != m.transaction_id) {
            // Crossing proposals: the lower id keeps its own.
            if (s.id < peer) return;
          }
          if (is_terminal(t.phase) || t.transaction_id != m.transaction_id) t = TransactionState{};
          t.transaction_id = m.transaction_id;
          t.participants = m.participants;
          e.kind = TxEventKind::RecvPropose;
          apply(s, t, e, now, d);
          TxEvent c;
          c.kind = TxEventKind::SendCommit;
          c.validity_ms = kCommitValidityMs;
          if (apply(s, t, c, now, d)) d.outbound.push_back(coordination(s, t, Lifecycle::Commit, now));
        } else {
          if (t.transaction_id != m.transaction_id) return;
          e.kind = m.lifecycle == Lifecycle::Commit ? TxEventKind::RecvCommit
                   : m.lifecycle == Lifecycle::Abort ? TxEventKind::RecvAbort
                                                     : TxEventKind::RecvClear;
          apply(s, t, e, now, d);
        }
        return;
      }
      case CoordFunction::Contingency: {
        auto it = m.payload.find("protection_level_m");
        if (it != m.payload.end()) s.contingency[peer] = {it->second, m.t_issue_ms + m.validity_ms};
        return;
      }
      case CoordFunction::Priority: {
        auto it = m.payload.find("priority");
        if (it != m.payload.end()) s.peer_priority[peer] = static_cast<int>(it->second);
        return;
      }
      case CoordFunction::Admission: {
        AdmissionRequest rq;
        rq.id = peer;
        rq.eta_ms = static_cast<SimTimeMs>(std::llround(m.payload.count("eta_ms") ? m.payload.at("eta_ms") : 0.0));
        rq.priority = static_cast<int>(m.payload.count("priority") ? m.payload.at("priority") : 0.0);
        s.hotspot_view.requests[peer] = {rq, now};
        return;
      }
      case CoordFunction::Sequencing: {
        auto it = m.payload.find("pad");
        if (it != m.payload.end()) s.hotspot_view.claims[peer] = {static_cast<std::size_t>(it->second), now};
        auto eta = m.payload.find("release_eta_ms");
        if (eta != m.payload.end()) s.hotspot_view.release_eta[peer] = static_cast<SimTimeMs>(std::llround(eta->second));
        auto since = m.payload.find("claimed_at_ms");
        if (since != m.payload.end()) s.hotspot_view.claimed_at[peer] = static_cast<SimTimeMs>(std::llround(since->second));
        s.hotspot_view.requests.erase(peer);
        return;
      }
      case CoordFunction::Release:
      case CoordFunction::Rejoin:
        s.hotspot_view.drop(peer);
        return;
      case CoordFunction::HazardClear: return;
    }
  }

  Decision decide(ControllerState& s, const DecisionInput& in, const WorldServices& svc) const {
    const VehicleState& self = *in.self;
    const SimTimeMs now = in.now;
    Decision d;
    d.vehicle_mode = self.mode;
    const bool v2v = uses_v2v(in.baseline) && self.v2v();
    const bool tactical = is_tactical(in.baseline);

    for (const auto& t : *in.sensed) s.tracks[t.target] = t;
    std::erase_if(s.tracks, [&](const auto& kv) { return now - kv.second.t_ms > kTrackCoastMs; });

    if (v2v) {
      for (auto& m : s.pending) d.outbound.push_back(std::move(m));
      s.pending.clear();
      if (in.inbox)
        for (const auto& m : *in.inbox) absorb(s, m, now, d);
      for (auto& [peer, t] : s.tx) {
        TxEvent tick;
        apply(s, t, tick, now, d);
      }
      std::erase_if(s.tx, [&](const auto& kv) { return is_terminal(kv.second.phase) && now - kv.second.last_change_ms > 5000; });
      std::erase_if(s.contingency, [&](const auto& kv) { return now >= kv.second.second; });
    }

    // Own state as seen by the onboard navigation.
    const OwnState own{self.id, self.estimated_position(), self.velocity};
    const double own_pl = protection_level_m(self);
    const NavIntegrity own_nav = nav_integrity_of(self, p_);

    // Belief assembly.
    std::vector<NeighborBelief> sensor_beliefs;
    for (const auto& [id, t] : s.tracks) sensor_beliefs.push_back(belief_from_track(t, now));
    std::vector<NeighborBelief> beliefs;
    std::vector<NeighborBelief> v2v_beliefs;
    ControllerMode mode = ControllerMode::Fallback;
    if (v2v) {
      v2v_beliefs = s.table.query(now);
      QualitySummary q;
      q.prr_estimate = prr_estimate(s, now);
      q.nav = own_nav;
      double wsum = 0.0;
      std::size_t degraded = 0;
      for (const auto& b : v2v_beliefs) {
        wsum += b.trust_weight;
        if (b.verdict == VerdictKind::Degrade) ++degraded;
      }
      q.mean_trust_weight = v2v_beliefs.empty() ? 0.0 : wsum / static_cast<double>(v2v_beliefs.size());
      q.degraded_fraction = v2v_beliefs.empty() ? 0.0 : static_cast<double>(degraded) / static_cast<double>(v2v_beliefs.size());
      if (!s.listening_since) s.listening_since = now;
      if (now - *s.listening_since < p_.prr_window_ms) {
        mode = s.mode.mode;
      } else if (!s.mode.acquired) {
        s.mode.mode = target_mode(q);
        s.mode.acquired = true;
        s.mode.last_transition_ms = now;
        mode = s.mode.mode;
      } else {
        mode = mode_update(s.mode, q, now);
      }

      std::map<AircraftId, const NeighborBelief*> fused;
      for (const auto& b : sensor_beliefs) fused[b.sender_id] = &b;
      std::set<AircraftId> from_v2v;
      for (const auto& b : v2v_beliefs) {
        if (b.trust_weight <= 0.0) {
          ++s.counters.stale_authority_refs;
          continue;
        }
        d.info_age_sum_ms += static_cast<double>(b.age_ms);
        ++d.info_age_count;
        if (mode == ControllerMode::Fallback) continue;
        auto [it, fresh] = fused.insert({b.sender_id, &b});
        if (!fresh) it->second = &b;
        from_v2v.insert(b.sender_id);
      }
      beliefs.reserve(fused.size());
      for (const auto& [id, src] : fused) {
        beliefs.push_back(*src);
        auto& b = beliefs.back();
        if (from_v2v.contains(id)) b.source = s.tracks.contains(id) ? BeliefSource::Fused : BeliefSource::V2V;
        if (mode == ControllerMode::Guarded) b.uncertainty_inflation *= kGuardedInflation;
        auto c = s.contingency.find(id);
        if (c != s.contingency.end()) b.extra_radius_m += c->second.first;
        if (mode != ControllerMode::Fallback) b.extra_radius_m += own_pl;
      }
    } else {
      beliefs = sensor_beliefs;
    }
    d.mode = mode;
    for (const auto& b : beliefs) d.held_neighbors.push_back(b.sender_id);

    // Contingency broadcast on degraded own integrity.
    if (v2v && own_nav != NavIntegrity::Nominal && now - s.last_contingency_tx_ms >= p_.contingency_period_ms) {
      auto m = coordination_base(s, CoordFunction::Contingency, Lifecycle::Propose, now);
      m.participants = {s.id};
      m.validity_ms = p_.contingency_validity_ms;
      m.ttl_ms = p_.contingency_validity_ms;
      m.payload["protection_level_m"] = own_pl;
      d.outbound.push_back(std::move(m));
      s.last_contingency_tx_ms = now;
    }

    // Backstop: every source counts, including sensing and V2V in any mode.
    std::vector<NeighborBelief> all = sensor_beliefs;
    for (const auto& b : v2v_beliefs)
      if (!s.tracks.contains(b.sender_id)) all.push_back(b);
    const auto threat = backstop_check(own, all, now, p_.backstop);
    if (threat) {
      if (!s.backstop.active) {
        s.backstop.active = true;
        s.backstop.since_ms = now;
        ++s.counters.backstop_activations;
        d.backstop_started = true;
      }
      s.backstop.clear_since_ms = -1;
      s.backstop.last_threat = threat;
    } else if (s.backstop.active) {
      double min_d = std::numeric_limits<double>::infinity();
      for (const auto& b : all) min_d = std::min(min_d, (b.position_at(now) - own.position).norm());
      if (min_d > 1.5 * p_.backstop.sep_m) {
        if (s.backstop.clear_since_ms < 0) s.backstop.clear_since_ms = now;
        if (now - s.backstop.clear_since_ms >= 2000) {
          s.backstop.active = false;
          s.counters.backstop_durations_s.push_back(static_cast<double>(now - s.backstop.since_ms) / 1000.0);
        }
      } else {
        s.backstop.clear_since_ms = -1;
      }
    }

    // Navigation target and operational phase.
    Vec3 v_des = navigation(s, in, svc, d, tactical, mode, own);

    // Tactical avoidance.
    if (tactical && d.vehicle_mode != VehicleMode::Servicing) {
      v_des += avoidance(s, in, own, beliefs, mode, v2v, d);
    } else if (!tactical) {
      for (const auto& b : beliefs) d.assessments.push_back({b.sender_id, false, effective_radius(b, p_.prediction)});
    }

    if (s.backstop.active) {
      d.mode = ControllerMode::Backstop;
      d.action = ActionKind::Backstop;
      const auto& t = s.backstop.last_threat;
      d.accel = t ? backstop_evasion(own, *t) : Vec3{};
      d.desired_velocity = self.velocity + d.accel;
    } else {
      const double sp = v_des.norm();
      if (sp > kSpeedMax) v_des = v_des * (kSpeedMax / sp);
      d.desired_velocity = v_des;
      d.accel = (v_des - self.velocity) / 1.0;
    }
    s.desired_velocity = d.desired_velocity;

    if (v2v) {
      std::vector<CoordinationMessage> deferred;
      d.outbound = schedule_outbound(std::move(d.outbound), p_.coordination_budget, &deferred);
      for (auto& m : deferred) s.pending.push_back(std::move(m));
      for (auto& m : d.outbound) m.seq = s.take_seq();
    } else {
      d.outbound.clear();
    }
    return d;
  }

  /// Five one-second intent waypoints along the current desired velocity.
  std::vector<Waypoint> intent(const ControllerState& s, const VehicleState& self, SimTimeMs now) const {
    std::vector<Waypoint> out;
    const Vec3 p = self.estimated_position();
    for (int k = 1; k <= 5; ++k)
      out.push_back({p + s.desired_velocity * static_cast<double>(k), now + 1000 * k});
    return out;
  }

  BeaconMessage beacon(ControllerState& s, const VehicleState& self, SimTimeMs now) const {
    BeaconMessage b;
    b.sender_id = self.id;
    b.seq = s.take_seq();
    b.t_issue_ms = now;
    b.ttl_ms = 1000;
    b.position = self.estimated_position();
    b.velocity = self.velocity;
    b.intent = intent(s, self, now);
    b.observability_quality = self.sensing.in_dropout(now) ? 0.0 : self.sensing.detect_prob;
    b.track_count = static_cast<std::uint32_t>(s.tracks.size());
    b.nav_integrity = nav_integrity_of(self, p_);
    b.authority = {50.0, 15.0, p_.max_avoid_speed};
    return b;
  }

  CoordinationMessage release(ControllerState& s, const VehicleState& self, std::size_t pad, SimTimeMs now) const {
    auto m = coordination_base(s, CoordFunction::Release, Lifecycle::Clear, now);
    m.participants = {self.id};
    m.zone_ref = static_cast<std::uint32_t>(self.hotspot.value_or(0));
    m.payload["pad"] = static_cast<double>(pad);
    m.seq = s.take_seq();
    return m;
  }

 private:
  bool apply(ControllerState& s, TransactionState& t, const TxEvent& e, SimTimeMs now, Decision& d) const {
    const TxPhase before = t.phase;
    const auto r = run_transaction(t, e, now);
    if (r.violation) {
      ++s.counters.protocol_violations;
      return false;
    }
    t = r.state;
    if (r.transitioned) {
      s.counters.observed_transitions.emplace_back(before, t.phase);
      d.tx_log.push_back(std::string(to_string(before)) + "->" + to_string(t.phase));
    }
    return r.transitioned;
  }

  CoordinationMessage coordination_base(ControllerState& s, CoordFunction fn, Lifecycle lc, SimTimeMs now) const {
    CoordinationMessage m;
    m.sender_id = s.id;
    m.t_issue_ms = now;
    m.ttl_ms = 1000;
    m.lifecycle = lc;
    m.function = fn;
    return m;
  }

  CoordinationMessage coordination(ControllerState& s, const TransactionState& t, Lifecycle lc, SimTimeMs now) const {
    auto m = coordination_base(s, t.function, lc, now);
    m.transaction_id = t.transaction_id;
    m.participants = t.participants;
    m.validity_ms = kCommitValidityMs;
    return m;
  }

  /// Navigation velocity plus phase bookkeeping (holds, admission, detours).
  Vec3 navigation(ControllerState& s, const DecisionInput& in, const WorldServices& svc, Decision& d, bool tactical,
                  ControllerMode mode, const OwnState& own) const {
    const VehicleState& self = *in.self;
    const SimTimeMs now = in.now;
    const World& w = *svc.world;
    const bool a = in.baseline == Baseline::A;
    const bool cooperative_hotspot = uses_v2v(in.baseline) && self.v2v() && mode != ControllerMode::Fallback;

    // Context constraints on the current route.
    Vec3 goal = self.destination;
    if (self.hotspot && self.hotspot < w.hotspots.size()) goal = detail::hold_point(w.hotspots[*self.hotspot], self);
    for (const auto& c : s.known_constraints) {
      if (!c.active(now) || s.handled_constraints.contains(c.id)) continue;
      const auto dp = detail::detour_for(own.position, s.detour.value_or(goal), c, 15.0);
      if (!dp) continue;
      s.handled_constraints.insert(c.id);
      if (a) {
        if (!s.strategic_hold) {
          s.strategic_hold = true;
          s.context_hold = true;
          s.hold_until_ms = now + svc.dss->reauthorization_latency_ms(self.id, now);
          ++svc.dss->queries;
          d.dss_query = true;
          d.hold_started = true;
          ++s.counters.holds;
          ++s.counters.context_holds;
        }
        s.detour = *dp;
      } else if (tactical) {
        s.detour = *dp;
      }
    }

    // Strategic monitoring for A.
    if (a && !s.strategic_hold && self.mode == VehicleMode::Enroute && now >= s.grace_until_ms &&
        now % p_.strategic_period_ms == 0) {
      for (const auto& o : w.vehicles) {
        if (o.id == self.id || !o.managed() || o.mode != VehicleMode::Enroute) continue;
        if (o.id > self.id) continue;
        NeighborBelief nb;
        nb.sender_id = o.id;
        nb.last.position = o.position;
        nb.last.velocity = o.velocity;
        nb.last.t_issue_ms = now;
        const auto cpa = closest_approach({self.id, self.position, self.velocity}, {{0.0, o.position}}, o.velocity,
                                          p_.strategic_horizon_s);
        if (cpa.d_m < p_.strategic_radius_m) {
          s.strategic_hold = true;
          s.hold_until_ms = now + svc.dss->reauthorization_latency_ms(self.id, now);
          ++svc.dss->queries;
          d.dss_query = true;
          d.hold_started = true;
          ++s.counters.holds;
          break;
        }
      }
    }
    if (a && s.strategic_hold) {
      if (now >= s.hold_until_ms) {
        s.strategic_hold = false;
        s.context_hold = false;
        ++svc.dss->replans;
        d.replan = true;
        s.grace_until_ms = now + p_.strategic_grace_ms;
      } else {
        d.vehicle_mode = VehicleMode::Hold;
        d.action = ActionKind::Hold;
        return detail::nav_velocity(own.position, own.position, self.band_altitude_m, 0.0);
      }
    }

    if (s.detour) {
      if ((*s.detour - own.position).norm_xy() < 10.0) s.detour.reset();
      else {
        if (self.mode == VehicleMode::Hold && !self.hotspot) d.vehicle_mode = VehicleMode::Enroute;
        return detail::nav_velocity(own.position, *s.detour, self.band_altitude_m, kCruiseSpeed);
      }
    }

    if (!self.hotspot || *self.hotspot >= w.hotspots.size()) {
      d.vehicle_mode = VehicleMode::Enroute;
      return detail::nav_velocity(own.position, self.destination, self.band_altitude_m, kCruiseSpeed);
    }

    const Hotspot& h = w.hotspots[*self.hotspot];
    const Vec3 hp = detail::hold_point(h, self);
    if (cooperative_hotspot) {
      s.hotspot_view.expire(now, p_.request_ttl_ms, p_.claim_ttl_ms);
      s.hotspot_view.requests.erase(s.id);
    }

    switch (self.mode) {
      case VehicleMode::Approach:
      case VehicleMode::Servicing: {
        s.hold_arrival_ms = -1;
        if (cooperative_hotspot && self.pad && now - s.last_claim_tx_ms >= p_.admission_period_ms) {
          auto m = coordination_base(s, CoordFunction::Sequencing, Lifecycle::Commit, now);
          m.participants = {s.id};
          m.zone_ref = static_cast<std::uint32_t>(h.id);
          m.payload["pad"] = static_cast<double>(*self.pad);
          const SimTimeMs release = self.mode == VehicleMode::Servicing
                                        ? self.service_until_ms
                                        : now + approach_lead_ms(own, h) +
                                              static_cast<SimTimeMs>(std::llround(h.service_time_s * 1000.0));
          m.payload["release_eta_ms"] = static_cast<double>(release);
          m.payload["claimed_at_ms"] = static_cast<double>(s.pad_claimed_at_ms);
          m.validity_ms = kCommitValidityMs;
          d.outbound.push_back(std::move(m));
          s.last_claim_tx_ms = now;
        }
        d.action = self.mode == VehicleMode::Servicing ? ActionKind::Service : ActionKind::Approach;
        const Vec3 pad = self.pad ? h.pads[*self.pad].position : h.position;
        if (self.mode == VehicleMode::Servicing) return detail::nav_velocity(own.position, pad, pad.z, 2.0);
        if (cooperative_hotspot && self.pad && pad_occupied(s, h, *self.pad)) {
          const Vec3 standoff = detail::standoff_point(h, *self.pad);
          return detail::nav_velocity(own.position, standoff, standoff.z, kCruiseSpeed);
        }
        return detail::nav_velocity(own.position, pad, pad.z, kCruiseSpeed);
      }
      case VehicleMode::Rejoining:
        if (!s.rejoin_pending) {
          s.rejoin_pending = true;
          s.reservation.reset();
          if (uses_v2v(in.baseline) && self.v2v()) {
            auto m = coordination_base(s, CoordFunction::Rejoin, Lifecycle::Propose, now);
            m.participants = {s.id};
            m.zone_ref = static_cast<std::uint32_t>(h.id);
            d.outbound.push_back(std::move(m));
          }
        }
        [[fallthrough]];
      case VehicleMode::Enroute:
      case VehicleMode::Hold:
      default: break;
    }

    const double dist_hold = (hp - own.position).norm_xy();
    if (self.mode != VehicleMode::Hold && dist_hold > 5.0) {
      d.vehicle_mode = self.mode == VehicleMode::Rejoining ? VehicleMode::Rejoining : VehicleMode::Enroute;
      return detail::nav_velocity(own.position, hp, self.band_altitude_m, kCruiseSpeed);
    }

    // At the hold point.
    if (self.mode != VehicleMode::Hold) {
      d.hold_started = true;
      ++s.counters.holds;
      s.hold_arrival_ms = now;
      if (a) {
        s.reservation = svc.dss->reserve(h, now);
        d.dss_query = true;
        if (s.rejoin_pending) {
          ++svc.dss->replans;
          d.replan = true;
        }
      }
      s.rejoin_pending = false;
    }
    d.vehicle_mode = VehicleMode::Hold;
    d.action = ActionKind::Hold;
    const Vec3 hover = detail::nav_velocity(own.position, hp, self.band_altitude_m, 2.0);

    std::optional<std::size_t> pad;
    if (a) {
      if (!s.reservation) {
        s.reservation = svc.dss->reserve(h, now);
        d.dss_query = true;
      }
      if (now >= s.reservation->start_ms) pad = s.reservation->pad;
    } else if (cooperative_hotspot) {
      if (now - s.last_admission_tx_ms >= p_.admission_period_ms) {
        auto m = coordination_base(s, CoordFunction::Admission, Lifecycle::Propose, now);
        m.participants = {s.id};
        m.zone_ref = static_cast<std::uint32_t>(h.id);
        m.payload["eta_ms"] = static_cast<double>(s.hold_arrival_ms);
        m.payload["priority"] = static_cast<double>(self.priority);
        d.outbound.push_back(std::move(m));
        s.last_admission_tx_ms = now;
      }
      auto reqs = s.hotspot_view.request_list();
      reqs.push_back({s.id, self.priority, s.hold_arrival_ms, false});
      const double scale = mode == ControllerMode::Guarded ? kGuardedCapacityScale : 1.0;
      const auto avail = s.hotspot_view.available_pads(h.pad_count, s.id, now, approach_lead_ms(own, h));
      const auto res = hotspot_admission(h, reqs, scale, h.pad_count - avail.size());
      auto it = std::find(res.granted.begin(), res.granted.end(), s.id);
      if (it != res.granted.end()) {
        const auto k = static_cast<std::size_t>(it - res.granted.begin());
        if (k < avail.size()) pad = avail[k];
      }
    } else {
      // Sensor-only: approach a pad that looks empty after a per-vehicle backoff.
      SplitMix64 g(hash_values(svc.seed, hash_string("backoff"), self.id, s.hold_arrival_ms));
      const SimTimeMs backoff = 2000 + static_cast<SimTimeMs>(g.uniform() * 5000.0);
      if (now - s.hold_arrival_ms >= backoff) {
        for (std::size_t p = 0; p < h.pad_count && !pad; ++p) {
          bool busy = false;
          for (const auto& [id, t] : s.tracks)
            if ((t.position - h.pads[p].position).norm_xy() < 12.0) busy = true;
          if (!busy) pad = p;
        }
      }
    }
    if (pad) {
      d.approach_pad = pad;
      d.vehicle_mode = VehicleMode::Approach;
      d.action = ActionKind::Approach;
      s.reservation.reset();
      if (cooperative_hotspot) {
        s.hotspot_view.claims[s.id] = {*pad, now};
        auto m = coordination_base(s, CoordFunction::Sequencing, Lifecycle::Commit, now);
        m.participants = {s.id};
        m.zone_ref = static_cast<std::uint32_t>(h.id);
        m.payload["pad"] = static_cast<double>(*pad);
        m.payload["release_eta_ms"] =
            static_cast<double>(now + approach_lead_ms(own, h) + static_cast<SimTimeMs>(std::llround(h.service_time_s * 1000.0)));
        m.payload["claimed_at_ms"] = static_cast<double>(now);
        s.pad_claimed_at_ms = now;
        m.validity_ms = kCommitValidityMs;
        d.outbound.push_back(std::move(m));
        s.last_claim_tx_ms = now;
      }
      return detail::nav_velocity(own.position, h.pads[*pad].position, h.pads[*pad].position.z, kCruiseSpeed);
    }
    return hover;
  }

  // Someone else still holds or sits on the pad.
  static bool pad_occupied(const ControllerState& s, const Hotspot& h, std::size_t pad) {
    if (s.hotspot_view.pad_held_before(pad, s.id, s.pad_claimed_at_ms)) return true;
    return std::any_of(s.tracks.begin(), s.tracks.end(), [&](const auto& kv) {
      return (kv.second.position - h.pads[pad].position).norm() < 6.0;
    });
  }

  static SimTimeMs approach_lead_ms(const OwnState& own, const Hotspot& h) {
    const double horiz = (h.position - own.position).norm_xy() / kCruiseSpeed;
    const double vert = h.pads.empty() ? 0.0 : std::abs(own.position.z - h.pads[0].position.z) / 2.0;
    return static_cast<SimTimeMs>(std::llround((horiz + vert) * 1000.0));
  }

  Vec3 avoidance(ControllerState& s, const DecisionInput& in, const OwnState& own,
                 std::vector<NeighborBelief>& beliefs, ControllerMode mode, bool v2v, Decision& d) const {
    const SimTimeMs now = in.now;
    const VehicleState& self = *in.self;
    for (auto& b : beliefs) {
      auto lc = s.last_conflict.find(b.sender_id);
      if (lc != s.last_conflict.end() && now - lc->second <= 1000) b.extra_radius_m += p_.avoid_margin_m;
    }
    const auto conflicts = predict_conflicts(own, beliefs, p_.horizon_s, now, p_.prediction);
    std::set<AircraftId> in_conflict;
    for (const auto& c : conflicts) in_conflict.insert(c.other);
    for (const auto& b : beliefs)
      d.assessments.push_back({b.sender_id, in_conflict.contains(b.sender_id), effective_radius(b, p_.prediction)});

    std::erase_if(s.conflict_since, [&](const auto& kv) { return !in_conflict.contains(kv.first); });
    const bool cooperative = v2v && mode != ControllerMode::Fallback;

    Vec3 dv;
    bool yielded = false;
    bool stood = false;
    bool avoided = false;
    for (const auto& c : conflicts) {
      s.last_conflict[c.other] = now;
      auto [since_it, fresh_conflict] = s.conflict_since.emplace(c.other, now);
      double factor = 1.0;
      const NeighborBelief* peer = nullptr;
      for (const auto& b : beliefs)
        if (b.sender_id == c.other) peer = &b;
      const bool peer_v2v = cooperative && peer && peer->source != BeliefSource::OwnSensor;
      if (peer_v2v) {
        // An aircraft with degraded navigation gives way.
        const auto ct = s.contingency.find(c.other);
        const bool peer_degraded = ct != s.contingency.end() && ct->second.second >= now;
        const int my_pri = self.priority - (nav_integrity_of(self, p_) != NavIntegrity::Nominal ? 1000 : 0);
        const int their_pri =
            (s.peer_priority.count(c.other) ? s.peer_priority.at(c.other) : 0) - (peer_degraded ? 1000 : 0);
        const bool i_yield = my_pri != their_pri ? my_pri < their_pri : self.id < c.other;
        auto& t = s.tx[c.other];
        if (i_yield) {
          if (t.phase == TxPhase::Idle || is_terminal(t.phase) ||
              (t.role == TxRole::Responder && !t.live_commitment(now))) {
            t = TransactionState{};
            t.transaction_id = detail::tx_id(s.id, c.other, ++s.tx_counter);
            t.function = CoordFunction::YieldPass;
            t.participants = {s.id, c.other};
            TxEvent e;
            e.kind = TxEventKind::SendPropose;
            if (apply(s, t, e, now, d)) {
              d.outbound.push_back(coordination(s, t, Lifecycle::Propose, now));
              ++s.counters.transactions_started;
            }
          }
          factor = 2.0;
          yielded = true;
        } else {
          const bool live = t.role == TxRole::Responder && t.live_commitment(now);
          const bool awaiting = now - since_it->second < kProposeTimeoutMs && peer->verdict == VerdictKind::Accept;
          if (live || awaiting) {
            factor = mode == ControllerMode::Guarded ? 0.5 : 0.0;
            stood = true;
          }
        }
      }
      (void)fresh_conflict;
      if (factor <= 0.0) continue;
      avoided = true;
      Vec3 m{c.rel_at_cpa.x, c.rel_at_cpa.y, 0.0};
      Vec3 push;
      if (m.norm() > 0.5) push = -m / m.norm();
      else {
        Vec3 w{c.rel_velocity.x, c.rel_velocity.y, 0.0};
        const double wn = w.norm();
        push = wn > 1e-6 ? Vec3{-w.y / wn, w.x / wn, 0.0} : Vec3{1.0, 0.0, 0.0};
      }
      const double depth = c.effective_radius_m + p_.avoid_margin_m - c.d_cpa_m;
      dv += push * (factor * p_.avoid_gain * depth / std::max(c.t_cpa_s, 1.0));
    }

    // Proposer side: clear the agreement once the conflict is gone.
    for (auto& [peer, t] : s.tx) {
      if (t.role != TxRole::Proposer || t.phase != TxPhase::Committed || in_conflict.contains(peer)) continue;
      auto lc = s.last_conflict.find(peer);
      if (lc != s.last_conflict.end() && now - lc->second < 1000) continue;
      TxEvent e;
      e.kind = TxEventKind::SendClear;
      if (apply(s, t, e, now, d)) d.outbound.push_back(coordination(s, t, Lifecycle::Clear, now));
    }
    std::erase_if(s.last_conflict, [&](const auto& kv) { return now - kv.second > 5000; });

    const double n = dv.norm();
    if (n > p_.max_avoid_speed) dv = dv * (p_.max_avoid_speed / n);
    if (yielded) {
      ++s.counters.yield_steps;
      d.action = ActionKind::Yield;
    } else if (avoided) {
      d.action = ActionKind::Avoid;
    } else if (stood) {
      ++s.counters.stand_on_steps;
      d.action = ActionKind::StandOn;
    }
    return dv;
  }

  const ScenarioConfig& cfg_;
  ControllerParams p_;
};

}  // namespace v2v
