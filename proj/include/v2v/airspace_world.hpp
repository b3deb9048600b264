#pragma once

// Vehicle kinematics, traffic generation at a target areal density,
// shared-resource hotspots, onboard sensing, and the per-family disturbance
// injectors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2v/core.hpp"
#include "v2v/link_impairment.hpp"

namespace v2v {

inline constexpr double kAccelMax = 3.0;      // m/s^2, per axis
inline constexpr double kSpeedMax = 15.0;     // m/s
inline constexpr double kCruiseSpeed = 10.0;  // m/s
inline constexpr std::array<double, 3> kAltitudeBands{30.0, 60.0, 90.0};
inline constexpr double kSpawnSeparationM = 30.0;
inline constexpr double kMinTripM = 100.0;

enum class VehicleMode : std::uint8_t { Enroute, Hold, Approach, Servicing, Rejoining, Backstop, Completed };
enum class Equipage : std::uint8_t { V2V, NonV2V, Intruder };

enum class ScenarioFamily : std::uint8_t {
  CommsImpairment,
  ContextUpdate,
  MessageIntegrity,
  GnssCorruption,
  DegradedObservability,
  HotspotPadJitter,
  MultiIntruderBurst,
  MixedEquipage,
};

inline constexpr std::array<ScenarioFamily, 8> kAllFamilies{
    ScenarioFamily::CommsImpairment,       ScenarioFamily::ContextUpdate,    ScenarioFamily::MessageIntegrity,
    ScenarioFamily::GnssCorruption,        ScenarioFamily::DegradedObservability, ScenarioFamily::HotspotPadJitter,
    ScenarioFamily::MultiIntruderBurst,    ScenarioFamily::MixedEquipage};

enum class Baseline : std::uint8_t { A, B1, B2, B2NoAuth };
inline constexpr std::array<Baseline, 4> kAllBaselines{Baseline::A, Baseline::B1, Baseline::B2, Baseline::B2NoAuth};

inline std::string to_string(ScenarioFamily f) {
  switch (f) {
    case ScenarioFamily::CommsImpairment: return "comms_impairment";
    case ScenarioFamily::ContextUpdate: return "context_update";
    case ScenarioFamily::MessageIntegrity: return "message_integrity";
    case ScenarioFamily::GnssCorruption: return "gnss_corruption";
    case ScenarioFamily::DegradedObservability: return "degraded_observability";
    case ScenarioFamily::HotspotPadJitter: return "hotspot_pad_jitter";
    case ScenarioFamily::MultiIntruderBurst: return "multi_intruder_burst";
    case ScenarioFamily::MixedEquipage: return "mixed_equipage";
  }
  return "?";
}

inline std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::A: return "A";
    case Baseline::B1: return "B1";
    case Baseline::B2: return "B2";
    case Baseline::B2NoAuth: return "B2_NOAUTH";
  }
  return "?";
}

inline const char* to_string(VehicleMode m) {
  switch (m) {
    case VehicleMode::Enroute: return "ENROUTE";
    case VehicleMode::Hold: return "HOLD";
    case VehicleMode::Approach: return "APPROACH";
    case VehicleMode::Servicing: return "SERVICING";
    case VehicleMode::Rejoining: return "REJOINING";
    case VehicleMode::Backstop: return "BACKSTOP";
    case VehicleMode::Completed: return "COMPLETED";
  }
  return "?";
}

inline std::optional<ScenarioFamily> parse_family(const std::string& s) {
  for (auto f : kAllFamilies)
    if (to_string(f) == s) return f;
  return std::nullopt;
}
inline std::optional<Baseline> parse_baseline(const std::string& s) {
  for (auto b : kAllBaselines)
    if (to_string(b) == s) return b;
  return std::nullopt;
}

inline bool uses_v2v(Baseline b) { return b == Baseline::B2 || b == Baseline::B2NoAuth; }
inline bool is_tactical(Baseline b) { return b != Baseline::A; }
inline bool has_hotspot(ScenarioFamily f) {
  return f == ScenarioFamily::HotspotPadJitter || f == ScenarioFamily::MultiIntruderBurst;
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

using ParamMap = std::map<std::string, double>;

/// Repo-defined disturbance parameters per family, at "medium" severity.
inline ParamMap family_param_defaults(ScenarioFamily f) {
  ParamMap hotspot{{"hotspot_fraction", 0.2}, {"pad_count", 2},       {"service_time_s", 10.0},
                   {"service_jitter_s", 4.0}, {"waveoff_prob", 0.05}, {"hold_radius_m", 80.0}};
  switch (f) {
    case ScenarioFamily::CommsImpairment: return {};
    case ScenarioFamily::ContextUpdate:
      return {{"event_interval_s", 20.0}, {"constraint_radius_m", 50.0}, {"active_s", 60.0}, {"relay_range_m", 250.0}};
    case ScenarioFamily::MessageIntegrity:
      return {{"spoof_fraction", 0.1}, {"replay_fraction", 0.0}, {"inject_rate_hz", 10.0}, {"replay_lag_s", 2.0}};
    case ScenarioFamily::GnssCorruption:
      return {{"corrupt_fraction", 0.3}, {"ramp_rate_mps", 2.0}, {"max_error_m", 60.0},
              {"onset_max_s", 60.0},     {"invalid_pl_m", 80.0}};
    case ScenarioFamily::DegradedObservability:
      return {{"dropout_rate_hz", 0.1}, {"dropout_burst_s", 3.0}, {"detect_prob", 0.9}};
    case ScenarioFamily::HotspotPadJitter: return hotspot;
    case ScenarioFamily::MultiIntruderBurst: {
      auto p = hotspot;
      p.insert({{"burst_k", 5}, {"burst_window_s", 10.0}, {"burst_interval_s", 60.0}});
      return p;
    }
    case ScenarioFamily::MixedEquipage: return {{"non_v2v_fraction", 0.3}, {"intruder_rate_per_min", 2.0}};
  }
  return {};
}

/// Low/medium/high disturbance presets. Values are repo-defined.
inline ParamMap severity_preset(ScenarioFamily f, const std::string& level) {
  ParamMap p = family_param_defaults(f);
  const int idx = level == "low" ? 0 : level == "medium" ? 1 : level == "high" ? 2 : -1;
  if (idx < 0) throw ConfigError("unknown severity level '" + level + "'");
  auto pick = [&](const char* key, std::array<double, 3> v) { p[key] = v[idx]; };
  switch (f) {
    case ScenarioFamily::CommsImpairment: break;
    case ScenarioFamily::ContextUpdate: pick("event_interval_s", {40.0, 20.0, 10.0}); break;
    case ScenarioFamily::MessageIntegrity:
      pick("spoof_fraction", {0.05, 0.1, 0.2});
      pick("inject_rate_hz", {5.0, 10.0, 20.0});
      break;
    case ScenarioFamily::GnssCorruption:
      pick("corrupt_fraction", {0.1, 0.3, 0.5});
      pick("max_error_m", {20.0, 60.0, 100.0});
      break;
    case ScenarioFamily::DegradedObservability:
      pick("dropout_rate_hz", {0.03, 0.1, 0.2});
      pick("dropout_burst_s", {2.0, 3.0, 5.0});
      pick("detect_prob", {0.95, 0.9, 0.8});
      break;
    case ScenarioFamily::HotspotPadJitter:
    case ScenarioFamily::MultiIntruderBurst:
      pick("service_jitter_s", {2.0, 4.0, 8.0});
      pick("waveoff_prob", {0.02, 0.05, 0.1});
      if (f == ScenarioFamily::MultiIntruderBurst) pick("burst_k", {3, 5, 8});
      break;
    case ScenarioFamily::MixedEquipage:
      pick("non_v2v_fraction", {0.1, 0.3, 0.5});
      pick("intruder_rate_per_min", {1.0, 2.0, 4.0});
      break;
  }
  return p;
}

struct ScenarioConfig {
  ScenarioFamily family = ScenarioFamily::CommsImpairment;
  double density_veh_km2 = 50.0;
  double footprint_area_km2 = 2.0;
  ImpairmentClass impairment = ImpairmentClass::N0;
  ContextClass context = ContextClass::C0;
  ParamMap params;  // overrides on top of family defaults
  Baseline baseline = Baseline::B2;
  std::uint64_t seed = 1;
  double duration_s = 600.0;
  SimTimeMs dt_ms = 100;

  // Safety thresholds and windows.
  double backstop_sep_m = 10.0;
  double backstop_ttc_s = 3.0;
  double window_s = 60.0;
  double qualify_sep_m = 5.0;
  double qualify_sustain_s = 1.0;

  // Channel.
  GeometryModel geometry;
  std::shared_ptr<const CongestionModel> congestion;  // null: default calibrated model
  std::optional<double> loss_override;                // forces per-delivery loss probability

  // Sensing defaults.
  double detect_range_m = 150.0;
  double detect_prob = 0.95;
  double sensor_noise_m = 3.0;

  /// Family defaults merged with overrides.
  ParamMap effective_params() const {
    ParamMap p = family_param_defaults(family);
    for (const auto& [k, v] : params) p[k] = v;
    return p;
  }
  double param(const std::string& key) const {
    auto p = effective_params();
    auto it = p.find(key);
    if (it == p.end()) throw ConfigError("parameter '" + key + "' not defined for family " + to_string(family));
    return it->second;
  }
  std::size_t vehicle_count() const {
    return static_cast<std::size_t>(std::llround(density_veh_km2 * footprint_area_km2));
  }
  std::size_t total_steps() const {
    return static_cast<std::size_t>(std::llround(duration_s * 1000.0 / static_cast<double>(dt_ms)));
  }
  double half_side_m() const { return 0.5 * std::sqrt(footprint_area_km2) * 1000.0; }
};

inline void validate_config(const ScenarioConfig& c) {
  if (!(c.density_veh_km2 > 0.0) || !std::isfinite(c.density_veh_km2)) throw ConfigError("density must be positive");
  if (!(c.footprint_area_km2 > 0.0)) throw ConfigError("footprint_area_km2 must be positive");
  if (!(c.duration_s > 0.0)) throw ConfigError("duration_s must be positive");
  if (c.dt_ms <= 0 || 100 % c.dt_ms != 0) throw ConfigError("dt_ms must be a positive divisor of 100");
  if (c.vehicle_count() < 2) throw ConfigError("scenario needs at least two vehicles");
  const ParamMap defaults = family_param_defaults(c.family);
  for (const auto& [k, v] : c.params) {
    if (!defaults.contains(k)) throw ConfigError("unknown parameter '" + k + "' for family " + to_string(c.family));
    if (!std::isfinite(v)) throw ConfigError("parameter '" + k + "' is not finite");
  }
  if (c.loss_override && !(*c.loss_override >= 0.0 && *c.loss_override <= 1.0))
    throw ConfigError("loss_override outside [0,1]");
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

struct SensingParams {
  double detect_range_m = 150.0;
  double detect_prob = 0.95;
  double noise_sd_m = 3.0;
  SimTimeMs dropout_until_ms = 0;

  bool in_dropout(SimTimeMs now) const { return now < dropout_until_ms; }
};

struct VehicleState {
  AircraftId id = 0;
  std::size_t slot = 0;  // traffic slot; replacements inherit the slot of the vehicle they replace
  Vec3 position;
  Vec3 velocity;
  VehicleMode mode = VehicleMode::Enroute;
  Equipage equipage = Equipage::V2V;
  Vec3 true_nav_error;
  SensingParams sensing;

  Vec3 destination;
  double band_altitude_m = 30.0;
  SimTimeMs op_start_ms = 0;
  std::optional<std::size_t> hotspot;  // bound for this hotspot when set
  std::optional<std::size_t> pad;      // assigned pad while approaching/servicing
  SimTimeMs service_until_ms = 0;
  SimTimeMs approach_start_ms = -1;
  int priority = 0;

  bool managed() const { return equipage != Equipage::Intruder; }
  bool v2v() const { return equipage == Equipage::V2V; }
  /// Where the vehicle's own navigation believes it is.
  Vec3 estimated_position() const { return position + true_nav_error; }
};

struct Pad {
  Vec3 position;
  std::optional<AircraftId> occupant;
  SimTimeMs busy_until_ms = 0;
};

struct Hotspot {
  std::size_t id = 0;
  Vec3 position;
  std::size_t pad_count = 2;
  double service_time_s = 10.0;
  double service_jitter_s = 0.0;
  double waveoff_prob = 0.0;
  double hold_radius_m = 80.0;
  std::vector<Pad> pads;
  std::vector<AircraftId> queue;  // vehicles waiting, in arrival order

  std::size_t servicing_count() const {
    return static_cast<std::size_t>(std::count_if(pads.begin(), pads.end(), [](const Pad& p) { return p.occupant; }));
  }
};

enum class ContextEventKind : std::uint8_t { PopupConstraint, TempObstacle, ValidityChange };

struct ContextEvent {
  std::uint32_t id = 0;
  ContextEventKind kind = ContextEventKind::PopupConstraint;
  Vec3 position;
  double radius_m = 50.0;
  SimTimeMs t_issue_ms = 0;
  SimTimeMs active_from_ms = 0;
  SimTimeMs active_until_ms = 0;

  bool active(SimTimeMs now) const { return now >= active_from_ms && now < active_until_ms; }
};

struct World {
  double half_side_m = 0.0;
  std::vector<VehicleState> vehicles;  // active only, ascending id
  std::vector<Hotspot> hotspots;
  std::vector<ContextEvent> context_events;
  AircraftId next_id = 1;
  std::size_t spawned = 0;
  std::size_t completed = 0;
  std::size_t operations_completed = 0;  // managed vehicles that reached their goal
  std::size_t slot_count = 0;
  std::vector<bool> spoof_slots;
  std::vector<bool> replay_slots;
  std::vector<bool> corrupt_slots;
  std::vector<bool> non_v2v_slots;
  std::vector<double> corrupt_onset_s;
  std::vector<Vec3> corrupt_direction;
  bool corrupt_observed_state = false;

  std::size_t active_count() const { return vehicles.size(); }

  VehicleState* find(AircraftId id) {
    auto it = std::lower_bound(vehicles.begin(), vehicles.end(), id,
                               [](const VehicleState& v, AircraftId x) { return v.id < x; });
    return (it != vehicles.end() && it->id == id) ? &*it : nullptr;
  }
  const VehicleState* find(AircraftId id) const { return const_cast<World*>(this)->find(id); }

  bool inside(const Vec3& p, double margin = 0.0) const {
    return std::abs(p.x) <= half_side_m + margin && std::abs(p.y) <= half_side_m + margin;
  }
};

class SpawnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Vec3 random_point(const World& w, SplitMix64& rng, double alt) {
  return {(rng.uniform() * 2.0 - 1.0) * w.half_side_m, (rng.uniform() * 2.0 - 1.0) * w.half_side_m, alt};
}

/// Deterministic selection of round(fraction * n) slots by seeded shuffle.
inline std::vector<bool> select_slots(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  std::vector<bool> out(n, false);
  const auto k = static_cast<std::size_t>(std::llround(std::clamp(fraction, 0.0, 1.0) * static_cast<double>(n)));
  for (std::size_t i = 0; i < k; ++i) out[idx[i]] = true;
  return out;
}

}  // namespace detail

/// Places a managed vehicle in `slot`. Retries until the seed spacing is met;
/// `strict` turns exhaustion into a SpawnError.
inline VehicleState make_vehicle(World& w, const ScenarioConfig& cfg, std::size_t slot, SimTimeMs now,
                                 SplitMix64& rng, bool strict) {
  VehicleState v;
  v.id = w.next_id++;
  v.slot = slot;
  v.band_altitude_m = kAltitudeBands[slot % kAltitudeBands.size()];
  v.op_start_ms = now;
  v.sensing.detect_range_m = cfg.detect_range_m;
  v.sensing.detect_prob = cfg.detect_prob;
  v.sensing.noise_sd_m = cfg.sensor_noise_m;
  v.equipage = (slot < w.non_v2v_slots.size() && w.non_v2v_slots[slot]) ? Equipage::NonV2V : Equipage::V2V;

  bool placed = false;
  Vec3 best;
  double best_clear = -1.0;
  for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
    Vec3 p = detail::random_point(w, rng, v.band_altitude_m);
    double clear = std::numeric_limits<double>::infinity();
    for (const auto& o : w.vehicles) clear = std::min(clear, distance(p, o.position));
    if (clear >= kSpawnSeparationM) {
      best = p;
      placed = true;
    } else if (clear > best_clear) {
      best_clear = clear;
      best = p;
    }
  }
  if (!placed && strict) throw SpawnError("footprint too small for the requested density at seed spacing");
  v.position = best;

  if (!w.hotspots.empty() && cfg.effective_params().count("hotspot_fraction") &&
      rng.uniform() < cfg.param("hotspot_fraction")) {
    v.hotspot = 0;
    v.destination = w.hotspots[0].position;
  } else {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      v.destination = detail::random_point(w, rng, v.band_altitude_m);
      if ((v.destination - v.position).norm_xy() >= kMinTripM) break;
    }
  }
  Vec3 to = v.destination - v.position;
  to.z = 0.0;
  const double n = to.norm();
  v.velocity = n > 1e-9 ? to * (kCruiseSpeed / n) : Vec3{};
  ++w.spawned;
  return v;
}

/// Initial world: round(density * area) managed vehicles, altitude bands
/// assigned round-robin, equipage and attacker roles per family.
inline World spawn_traffic(const ScenarioConfig& cfg, SplitMix64& rng) {
  validate_config(cfg);
  World w;
  w.half_side_m = cfg.half_side_m();
  const std::size_t n = cfg.vehicle_count();
  w.slot_count = n;
  const auto params = cfg.effective_params();
  auto p = [&](const char* k) { return params.at(k); };

  if (has_hotspot(cfg.family)) {
    Hotspot h;
    h.id = 0;
    h.position = {0.0, 0.0, kAltitudeBands[0]};
    h.pad_count = static_cast<std::size_t>(std::max(1.0, p("pad_count")));
    h.service_time_s = p("service_time_s");
    h.service_jitter_s = p("service_jitter_s");
    h.waveoff_prob = p("waveoff_prob");
    h.hold_radius_m = p("hold_radius_m");
    for (std::size_t i = 0; i < h.pad_count; ++i) {
      const double off = (static_cast<double>(i) - 0.5 * static_cast<double>(h.pad_count - 1)) * 25.0;
      h.pads.push_back({{off, 0.0, kAltitudeBands[0]}, std::nullopt, 0});
    }
    w.hotspots.push_back(std::move(h));
  }
  const std::uint64_t roles = hash_values(cfg.seed, hash_string("roles"));
  switch (cfg.family) {
    case ScenarioFamily::MessageIntegrity:
      w.spoof_slots = detail::select_slots(n, p("spoof_fraction"), hash_combine(roles, 1));
      w.replay_slots = detail::select_slots(n, p("replay_fraction"), hash_combine(roles, 2));
      break;
    case ScenarioFamily::GnssCorruption: {
      w.corrupt_slots = detail::select_slots(n, p("corrupt_fraction"), hash_combine(roles, 3));
      w.corrupt_observed_state = true;
      SplitMix64 g(hash_combine(roles, 4));
      for (std::size_t i = 0; i < n; ++i) {
        w.corrupt_onset_s.push_back(g.uniform() * p("onset_max_s"));
        const double a = g.uniform() * 2.0 * M_PI;
        w.corrupt_direction.push_back({std::cos(a), std::sin(a), 0.0});
      }
      break;
    }
    case ScenarioFamily::MixedEquipage:
      w.non_v2v_slots = detail::select_slots(n, p("non_v2v_fraction"), hash_combine(roles, 5));
      break;
    default: break;
  }
  for (std::size_t slot = 0; slot < n; ++slot) w.vehicles.push_back(make_vehicle(w, cfg, slot, 0, rng, true));
  return w;
}

/// Point-mass step: per-axis acceleration clamp, speed clamp, trapezoidal
/// position update.
inline VehicleState step_kinematics(VehicleState v, const Vec3& accel_cmd, double dt_s) {
  if (!(dt_s > 0.0)) throw std::invalid_argument("step_kinematics: dt must be positive");
  const Vec3 a{std::clamp(accel_cmd.x, -kAccelMax, kAccelMax), std::clamp(accel_cmd.y, -kAccelMax, kAccelMax),
               std::clamp(accel_cmd.z, -kAccelMax, kAccelMax)};
  Vec3 v1 = v.velocity + a * dt_s;
  const double s = v1.norm();
  if (s > kSpeedMax) v1 = v1 * (kSpeedMax / s);
  v.position += (v.velocity + v1) * (0.5 * dt_s);
  v.velocity = v1;
  return v;
}

// ---------------------------------------------------------------------------
// Sensing
// ---------------------------------------------------------------------------

struct SensorTrack {
  AircraftId target = 0;
  Vec3 position;
  Vec3 velocity;
  SimTimeMs t_ms = 0;
};

/// One sensing sweep by `observer`. Each target in range is detected with
/// the observer's detection probability unless occluded or the observer is
/// in a dropout burst. Uses one generator per (observer, time) and a fixed
/// number of draws per candidate so streams stay aligned across runs.
inline std::vector<SensorTrack> sense(const VehicleState& observer, const World& world, const GeometryModel& geometry,
                                      SimTimeMs now, SplitMix64& rng) {
  std::vector<SensorTrack> out;
  if (observer.sensing.in_dropout(now)) return out;
  for (const auto& t : world.vehicles) {
    if (t.id == observer.id) continue;
    if (distance(observer.position, t.position) > observer.sensing.detect_range_m) continue;
    const double u = rng.uniform();
    const Vec3 noise{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    const Vec3 vnoise{rng.gaussian(), rng.gaussian(), 0.0};
    if (u >= observer.sensing.detect_prob) continue;
    if (!geometry.obstructions.empty() && geometry.nlos(observer.position, t.position)) continue;
    SensorTrack tr;
    tr.target = t.id;
    tr.position = t.position + noise * observer.sensing.noise_sd_m;
    if (world.corrupt_observed_state) tr.position += t.true_nav_error;
    tr.velocity = t.velocity + vnoise * 0.3;
    tr.t_ms = now;
    out.push_back(tr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disturbances
// ---------------------------------------------------------------------------

enum class DisturbanceKind : std::uint8_t { ContextIssued, WaveOff, IntruderSpawned, DropoutStarted };

struct DisturbanceEvent {
  DisturbanceKind kind;
  AircraftId vehicle = 0;
  std::uint32_t context_id = 0;
};

inline VehicleState make_intruder(World& w, const Vec3& from, const Vec3& toward, SimTimeMs now) {
  VehicleState v;
  v.id = w.next_id++;
  v.slot = std::numeric_limits<std::size_t>::max();
  v.equipage = Equipage::Intruder;
  v.position = from;
  v.band_altitude_m = from.z;
  v.op_start_ms = now;
  Vec3 d = toward - from;
  d.z = 0.0;
  v.velocity = d * (kCruiseSpeed / std::max(1e-9, d.norm()));
  v.destination = from + d * 4.0;
  ++w.spawned;
  return v;
}

namespace detail {

inline Vec3 edge_point(const World& w, SplitMix64& rng, double alt) {
  const double s = (rng.uniform() * 2.0 - 1.0) * w.half_side_m;
  switch (rng() % 4) {
    case 0: return {-w.half_side_m, s, alt};
    case 1: return {w.half_side_m, s, alt};
    case 2: return {s, -w.half_side_m, alt};
    default: return {s, w.half_side_m, alt};
  }
}

inline void insert_sorted(World& w, VehicleState v) {
  auto it = std::lower_bound(w.vehicles.begin(), w.vehicles.end(), v.id,
                             [](const VehicleState& a, AircraftId x) { return a.id < x; });
  w.vehicles.insert(it, std::move(v));
}

}  // namespace detail

/// Family-specific disturbance injection at time `now` (called once per
/// step). `rng` seeds per-event generators; all randomness is derived by
/// hashing so that the result is a pure function of (config, now, world).
inline std::vector<DisturbanceEvent> inject_disturbance(World& w, SimTimeMs now, const ScenarioConfig& cfg,
                                                        std::uint64_t seed) {
  std::vector<DisturbanceEvent> events;
  const auto params = cfg.effective_params();
  auto p = [&](const char* k) {
    auto it = params.find(k);
    if (it == params.end()) throw ConfigError(std::string("missing parameter ") + k);
    return it->second;
  };
  const double t_s = static_cast<double>(now) / 1000.0;
  const double dt_s = static_cast<double>(cfg.dt_ms) / 1000.0;

  switch (cfg.family) {
    case ScenarioFamily::ContextUpdate: {
      const auto interval = static_cast<SimTimeMs>(std::llround(p("event_interval_s") * 1000.0));
      if (interval > 0 && now > 0 && now % interval == 0) {
        ContextEvent e;
        e.id = static_cast<std::uint32_t>(now / interval);
        SplitMix64 g(hash_values(seed, hash_string("context"), e.id));
        e.kind = ContextEventKind::PopupConstraint;
        e.position = detail::random_point(w, g, kAltitudeBands[1]);
        e.position.x *= 0.7;
        e.position.y *= 0.7;
        e.radius_m = p("constraint_radius_m");
        e.t_issue_ms = now;
        e.active_from_ms = now;
        e.active_until_ms = now + static_cast<SimTimeMs>(std::llround(p("active_s") * 1000.0));
        w.context_events.push_back(e);
        events.push_back({DisturbanceKind::ContextIssued, 0, e.id});
      }
      break;
    }
    case ScenarioFamily::GnssCorruption: {
      const double rate = p("ramp_rate_mps");
      const double cap = p("max_error_m");
      for (auto& v : w.vehicles) {
        if (v.slot >= w.corrupt_slots.size() || !w.corrupt_slots[v.slot]) continue;
        const double mag = std::clamp((t_s - w.corrupt_onset_s[v.slot]) * rate, 0.0, cap);
        v.true_nav_error = w.corrupt_direction[v.slot] * mag;
      }
      break;
    }
    case ScenarioFamily::DegradedObservability: {
      const double rate = p("dropout_rate_hz");
      const auto burst = static_cast<SimTimeMs>(std::llround(p("dropout_burst_s") * 1000.0));
      for (auto& v : w.vehicles) {
        v.sensing.detect_prob = p("detect_prob");
        if (v.sensing.in_dropout(now)) continue;
        SplitMix64 g(hash_values(seed, hash_string("dropout"), v.id, now));
        if (g.uniform() < rate * dt_s) {
          v.sensing.dropout_until_ms = now + burst;
          events.push_back({DisturbanceKind::DropoutStarted, v.id, 0});
        }
      }
      break;
    }
    case ScenarioFamily::MultiIntruderBurst: {
      const auto interval = static_cast<SimTimeMs>(std::llround(p("burst_interval_s") * 1000.0));
      const auto window = static_cast<SimTimeMs>(std::llround(p("burst_window_s") * 1000.0));
      const auto k = static_cast<std::size_t>(std::max(0.0, p("burst_k")));
      if (interval > 0 && now > 0 && k > 0 && !w.hotspots.empty()) {
        const SimTimeMs phase = now % interval;
        const SimTimeMs spacing = std::max<SimTimeMs>(cfg.dt_ms, window / static_cast<SimTimeMs>(k));
        if (phase % spacing == 0 && phase / spacing < static_cast<SimTimeMs>(k)) {
          SplitMix64 g(hash_values(seed, hash_string("burst"), now));
          const double alt = kAltitudeBands[g() % kAltitudeBands.size()];
          const Vec3 from = detail::edge_point(w, g, alt);
          Vec3 aim = w.hotspots[0].position + Vec3{(g.uniform() - 0.5) * 60.0, (g.uniform() - 0.5) * 60.0, 0.0};
          aim.z = alt;
          auto v = make_intruder(w, from, aim, now);
          events.push_back({DisturbanceKind::IntruderSpawned, v.id, 0});
          detail::insert_sorted(w, std::move(v));
        }
      }
      break;
    }
    case ScenarioFamily::MixedEquipage: {
      SplitMix64 g(hash_values(seed, hash_string("intruder"), now));
      if (g.uniform() < p("intruder_rate_per_min") / 60.0 * dt_s) {
        const double alt = kAltitudeBands[g() % kAltitudeBands.size()];
        const Vec3 from = detail::edge_point(w, g, alt);
        Vec3 aim = detail::random_point(w, g, alt);
        auto v = make_intruder(w, from, aim, now);
        events.push_back({DisturbanceKind::IntruderSpawned, v.id, 0});
        detail::insert_sorted(w, std::move(v));
      }
      break;
    }
    default: break;
  }

  // Forced wave-offs act on approaches that start this step.
  for (auto& h : w.hotspots) {
    for (auto& v : w.vehicles) {
      if (v.mode != VehicleMode::Approach || v.approach_start_ms != now || v.hotspot != h.id) continue;
      SplitMix64 g(hash_values(seed, hash_string("waveoff"), v.id, now));
      if (g.uniform() < h.waveoff_prob) {
        v.mode = VehicleMode::Rejoining;
        v.pad.reset();
        events.push_back({DisturbanceKind::WaveOff, v.id, 0});
      }
    }
  }
  return events;
}

}  // namespace v2v
