#pragma once

// Deterministic event loop for one scenario run.

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <set>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "v2v/airspace_world.hpp"
#include "v2v/core.hpp"
#include "v2v/link_impairment.hpp"
#include "v2v/metrics.hpp"
#include "v2v/protocol_messages.hpp"
#include "v2v/tactical_controller.hpp"
#include "v2v/trust_validation.hpp"

namespace v2v {

inline const CongestionModel& default_congestion_model() {
  static const CongestionModel model = calibrate_congestion(default_anchor_table());
  return model;
}

struct RunOptions {
  std::optional<std::filesystem::path> trace_dir;
};

struct RunResult {
  RunMetrics metrics;
  std::size_t steps = 0;
  std::uint64_t decision_digest = 0;
  std::uint64_t messages_lost = 0;
  std::size_t spawned = 0;
  std::size_t active = 0;
  std::size_t completed = 0;
  std::vector<std::pair<TxPhase, TxPhase>> transitions;
  std::size_t yield_vehicles = 0;      // vehicles that performed any yield maneuver
  std::size_t avoiding_vehicles = 0;   // vehicles that performed any avoidance or yield
  std::size_t max_active = 0;
  SafetyTrace safety;
};

namespace detail {

enum Stream : std::uint64_t {
  kSpawn = 0x5350,
  kSense = 0x5345,
  kDeliver = 0x444c,
  kInject = 0x494e,
  kInjectDeliver = 0x4944,
  kService = 0x5356,
  kContext = 0x4358,
};

struct Transmission {
  Message msg;
  bool tag_ok = true;
  bool injected = false;
  SimTimeMs t_send_ms = 0;
};

struct Arrival {
  SimTimeMs at_ms;
  SimTimeMs t_issue_ms;
  AircraftId sender;
  std::uint64_t seq;
  AircraftId receiver;
  bool injected;
  bool deadline_missed;
  std::shared_ptr<const Transmission> tx;

  auto key() const { return std::tie(at_ms, t_issue_ms, sender, seq, receiver, injected); }
  bool operator>(const Arrival& o) const { return key() > o.key(); }
};

inline std::uint64_t pair_key(AircraftId a, AircraftId b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

struct TrackMemory {
  SimTimeMs last_held_ms = 0;
  bool dropped = false;
};

}  // namespace detail

class Simulation {
 public:
  explicit Simulation(ScenarioConfig cfg, RunOptions opts = {})
      : cfg_(std::move(cfg)),
        opts_(std::move(opts)),
        congestion_(cfg_.congestion ? *cfg_.congestion : default_congestion_model()),
        profile_(impairment_profile(cfg_.impairment)),
        context_profile_(context_profile(cfg_.context)),
        keys_(key_from_seed(hash_values(cfg_.seed, hash_string("fleet-key")))),
        controller_(cfg_) {
    validate_config(cfg_);
    policy_.authenticate = cfg_.baseline != Baseline::B2NoAuth;
    policy_.sigma_pos_m = cfg_.sensor_noise_m;
    link_ = link_params(cfg_.density_veh_km2, profile_, congestion_);
    spawn_rng_ = SplitMix64(hash_values(cfg_.seed, detail::kSpawn));
    world_ = spawn_traffic(cfg_, spawn_rng_);
    dss_.seed = hash_values(cfg_.seed, hash_string("dss"));
    for (const auto& v : world_.vehicles) add_controller(v);
    params_ = cfg_.effective_params();
    if (opts_.trace_dir) open_traces();
  }

  RunResult run() {
    while (step_once()) {
    }
    return finish(steps_done_);
  }

  /// Advances one world step. Returns false once the configured duration
  /// has been simulated.
  bool step_once() {
    if (steps_done_ >= cfg_.total_steps()) return false;
    step(static_cast<SimTimeMs>(steps_done_) * cfg_.dt_ms);
    ++steps_done_;
    return true;
  }

  const World& world() const { return world_; }
  std::size_t steps_done() const { return steps_done_; }

 private:
  bool v2v_run() const { return uses_v2v(cfg_.baseline); }

  void add_controller(const VehicleState& v) {
    if (!v.managed()) return;
    ControllerState s(v.id, policy_);
    controllers_.emplace(v.id, std::move(s));
    ++managed_spawned_;
  }

  double param_or(const char* k, double dflt) const {
    auto it = params_.find(k);
    return it == params_.end() ? dflt : it->second;
  }

  // ---------------------------------------------------------------------
  void step(SimTimeMs now) {
    const double dt_s = static_cast<double>(cfg_.dt_ms) / 1000.0;

    // 1. Disturbances.
    const auto events = inject_disturbance(world_, now, cfg_, cfg_.seed);
    for (const auto& e : events) on_disturbance(e, now);

    // 2. Deliveries due by now.
    inbox_.clear();
    while (!arrivals_.empty() && arrivals_.top().at_ms <= now) {
      auto a = arrivals_.top();
      arrivals_.pop();
      receive(a);
    }

    // 3. Context awareness.
    for (auto it = awareness_.begin(); it != awareness_.end();) {
      if (it->first > now) break;
      for (const auto& [vid, cid] : it->second) {
        auto c = controllers_.find(vid);
        if (c == controllers_.end()) continue;
        for (const auto& ev : world_.context_events)
          if (ev.id == cid) c->second.known_constraints.push_back(ev);
      }
      it = awareness_.erase(it);
    }

    // 4. Decisions.
    WorldServices svc{&world_, &dss_, cfg_.seed};
    std::vector<std::pair<std::size_t, Decision>> decisions;
    decisions.reserve(world_.vehicles.size());
    static const std::vector<CoordinationMessage> kEmpty;
    for (std::size_t i = 0; i < world_.vehicles.size(); ++i) {
      const auto& v = world_.vehicles[i];
      if (!v.managed()) continue;
      SplitMix64 srng(hash_values(cfg_.seed, detail::kSense, v.id, now));
      const auto sensed = sense(v, world_, cfg_.geometry, now, srng);
      auto& cs = controllers_.at(v.id);
      DecisionInput in{cfg_.baseline, &v, &sensed, nullptr, now};
      auto ib = inbox_.find(v.id);
      in.inbox = ib != inbox_.end() ? &ib->second : &kEmpty;
      Decision d = controller_.decide(cs, in, svc);
      decisions.emplace_back(i, std::move(d));
    }

    // 5. Transmissions.
    if (v2v_run()) {
      for (auto& [i, d] : decisions) {
        const auto& v = world_.vehicles[i];
        if (!v.v2v()) continue;
        auto& cs = controllers_.at(v.id);
        for (auto& m : d.outbound) transmit(Message{m}, v.position, now, false, true);
        if (now % 100 == 0) transmit(Message{controller_.beacon(cs, v, now)}, v.position, now, false, true);
      }
      for (auto& [msg, pos] : final_messages_) transmit(std::move(msg), pos, now, false, true);
      final_messages_.clear();
      inject_attacks(now);
    }

    // 6. Apply decisions and integrate.
    for (auto& [i, d] : decisions) {
      auto& v = world_.vehicles[i];
      record_decision(v, d, now);
      if (d.vehicle_mode != v.mode && v.mode != VehicleMode::Servicing && v.mode != VehicleMode::Completed) {
        if (!(v.mode == VehicleMode::Rejoining && d.vehicle_mode == VehicleMode::Enroute)) v.mode = d.vehicle_mode;
      }
      if (d.approach_pad) {
        v.pad = d.approach_pad;
        v.approach_start_ms = now + cfg_.dt_ms;
      }
      v = step_kinematics(v, d.accel, dt_s);
    }
    for (auto& v : world_.vehicles)
      if (!v.managed()) v = step_kinematics(v, {}, dt_s);

    const SimTimeMs t1 = now + cfg_.dt_ms;
    advance_world(t1);
    sample(t1, decisions);
  }

  // ---------------------------------------------------------------------
  void on_disturbance(const DisturbanceEvent& e, SimTimeMs now) {
    switch (e.kind) {
      case DisturbanceKind::WaveOff:
        ++wave_offs_;
        trace_event(now, "WAVE_OFF", e.vehicle);
        break;
      case DisturbanceKind::IntruderSpawned: {
        trace_event(now, "INTRUDER", e.vehicle);
        if (const auto* v = world_.find(e.vehicle)) epicenters_.push_back({v->position, now, now + 60000, {}});
        break;
      }
      case DisturbanceKind::ContextIssued: {
        trace_event(now, "CONTEXT", e.context_id);
        const ContextEvent* ev = nullptr;
        for (const auto& c : world_.context_events)
          if (c.id == e.context_id) ev = &c;
        if (!ev) break;
        epicenters_.push_back({ev->position, ev->active_from_ms, ev->active_until_ms, {}});
        std::vector<AircraftSite> sites;
        for (const auto& v : world_.vehicles)
          if (v.managed()) sites.push_back({v.id, v.position, v.v2v() && v2v_run()});
        SplitMix64 g(hash_values(cfg_.seed, detail::kContext, ev->id));
        const bool relay = v2v_run();
        const auto rel = context_propagation({ev->position, ev->t_issue_ms}, sites, context_profile_, g, relay,
                                             param_or("relay_range_m", 250.0));
        for (const auto& [vid, rec] : rel) {
          std::optional<SimTimeMs> t;
          if (cfg_.baseline == Baseline::A) t = rec.relayed ? std::nullopt : rec.t_full_ms;
          else t = rec.t_partial_ms;
          if (!t) continue;
          awareness_[*t].emplace_back(vid, ev->id);
          reaction_sum_s_ += static_cast<double>(*t - ev->t_issue_ms) / 1000.0;
          ++reaction_n_;
        }
        break;
      }
      case DisturbanceKind::DropoutStarted: break;
    }
  }

  void transmit(Message msg, const Vec3& pos, SimTimeMs now, bool injected, bool seal_it,
                std::optional<AuthTag> forced_tag = std::nullopt) {
    auto tx = std::make_shared<detail::Transmission>();
    if (seal_it && !forced_tag) {
      const Bytes bytes = seal(msg, keys_.key_for(sender_of(msg)));
      (void)bytes;
      tx->tag_ok = true;
    } else {
      set_tag(msg, forced_tag.value_or(AuthTag{}));
      const Bytes bytes = encode_canonical(msg);
      tx->tag_ok = keys_.verify(msg, bytes);
    }
    tx->msg = std::move(msg);
    tx->injected = injected;
    tx->t_send_ms = now;
    const AircraftId sender = sender_of(tx->msg);
    const std::uint64_t seq = seq_of(tx->msg);
    const SimTimeMs t_issue = issue_time_of(tx->msg);
    const std::uint64_t stream = injected ? detail::kInjectDeliver : detail::kDeliver;
    const std::uint64_t nonce = injected ? inject_counter_ : 0;
    std::shared_ptr<const detail::Transmission> shared = tx;
    for (const auto& r : world_.vehicles) {
      if (!r.v2v() || r.id == sender) continue;
      if (injected && r.position == pos) continue;
      SplitMix64 g(hash_values(cfg_.seed, stream, sender, seq, r.id, nonce));
      DeliveryOutcome o;
      if (cfg_.loss_override) {
        if (distance(pos, r.position) > cfg_.geometry.max_range_m) o.status = DeliveryStatus::OutOfRange;
        else if (g.uniform() < *cfg_.loss_override) o.status = DeliveryStatus::Lost;
        else o = deliver(pos, r.position, link_, cfg_.geometry, g);
      } else {
        o = deliver(pos, r.position, link_, cfg_.geometry, g);
      }
      if (o.status == DeliveryStatus::OutOfRange) continue;
      if (!injected) {
        ++expected_;
        if (o.delivered()) {
          ++received_;
          latency_.add(o.latency_ms);
          if (o.deadline_missed) ++deadline_missed_;
        } else {
          ++lost_;
        }
      }
      if (!o.delivered()) continue;
      const auto at = now + static_cast<SimTimeMs>(std::ceil(o.latency_ms));
      arrivals_.push({at, t_issue, sender, seq, r.id, injected, o.deadline_missed, shared});
    }
  }

  void receive(const detail::Arrival& a) {
    auto c = controllers_.find(a.receiver);
    if (c == controllers_.end()) return;
    auto& cs = c->second;
    const auto verdict = validate_checked(a.tx->msg, a.tx->tag_ok, a.at_ms, cs.validator, policy_);
    if (!verdict.usable()) {
      ++invalid_rejections_;
      if (a.injected) ++invalid_from_injected_;
      return;
    }
    if (a.injected) ++bad_accepts_;
    if (a.deadline_missed) return;
    if (const auto* b = std::get_if<BeaconMessage>(&a.tx->msg)) {
      cs.table.update(verdict, *b, a.at_ms);
      controller_.note_beacon(cs, b->sender_id, a.at_ms);
    } else {
      inbox_[a.receiver].push_back(std::get<CoordinationMessage>(a.tx->msg));
    }
  }

  void inject_attacks(SimTimeMs now) {
    if (cfg_.family != ScenarioFamily::MessageIntegrity) return;
    const double rate = param_or("inject_rate_hz", 0.0) * static_cast<double>(cfg_.dt_ms) / 1000.0;
    const auto lag = static_cast<SimTimeMs>(std::llround(param_or("replay_lag_s", 2.0) * 1000.0));
    // Capture buffer for replay attackers: recent legitimate beacons.
    if (now % 100 == 0)
      for (const auto& v : world_.vehicles)
        if (v.v2v()) captured_.push_back({now, v.id, v.position, v.velocity});
    while (!captured_.empty() && now - captured_.front().t > lag + 1000) captured_.pop_front();

    for (const auto& v : world_.vehicles) {
      if (!v.managed() || v.slot >= world_.slot_count) continue;
      const bool spoof = v.slot < world_.spoof_slots.size() && world_.spoof_slots[v.slot];
      const bool replay = v.slot < world_.replay_slots.size() && world_.replay_slots[v.slot];
      if (!spoof && !replay) continue;
      SplitMix64 g(hash_values(cfg_.seed, detail::kInject, v.id, now));
      const bool do_spoof = spoof && g.uniform() < rate;
      const bool do_replay = replay && g.uniform() < rate;
      if (do_spoof && world_.vehicles.size() > 1) {
        const auto& victim = world_.vehicles[g() % world_.vehicles.size()];
        BeaconMessage b;
        b.sender_id = victim.id == v.id ? v.id + 1000000 : victim.id;
        b.seq = (1ULL << 40) + (g() >> 24);
        b.t_issue_ms = now;
        b.position = v.position + Vec3{(g.uniform() - 0.5) * 60.0, (g.uniform() - 0.5) * 60.0, 0.0};
        b.velocity = Vec3{(g.uniform() - 0.5) * 20.0, (g.uniform() - 0.5) * 20.0, 0.0};
        AuthTag tag;
        for (auto& byte : tag) byte = static_cast<std::uint8_t>(g());
        ++inject_counter_;
        ++injected_messages_;
        transmit(Message{b}, v.position, now, true, false, tag);
      }
      if (do_replay && !captured_.empty()) {
        // Rebroadcast a captured beacon from about `lag` ago with a fresh timestamp.
        const auto& cap = captured_[g() % captured_.size()];
        BeaconMessage b;
        b.sender_id = cap.id;
        b.seq = 1 + (g() % 1000);
        b.t_issue_ms = now;
        b.position = cap.position;
        b.velocity = cap.velocity;
        AuthTag tag;
        for (auto& byte : tag) byte = static_cast<std::uint8_t>(g());
        ++inject_counter_;
        ++injected_messages_;
        transmit(Message{b}, v.position, now, true, false, tag);
      }
    }
  }

  // ---------------------------------------------------------------------
  void advance_world(SimTimeMs t) {
    std::vector<AircraftId> done;
    for (auto& v : world_.vehicles) {
      if (!v.managed()) {
        if (!world_.inside(v.position, 50.0)) done.push_back(v.id);
        continue;
      }
      if (v.hotspot && *v.hotspot < world_.hotspots.size()) {
        auto& h = world_.hotspots[*v.hotspot];
        if (v.mode == VehicleMode::Approach && v.pad) {
          auto& pad = h.pads[*v.pad];
          if (distance(v.estimated_position(), pad.position) < 3.0) {
            if (pad.occupant && *pad.occupant != v.id) {
              v.mode = VehicleMode::Rejoining;
              v.pad.reset();
              ++wave_offs_;
              trace_event(t, "WAVE_OFF_OCCUPIED", v.id);
            } else {
              SplitMix64 g(hash_values(cfg_.seed, detail::kService, v.id, t));
              const double service = h.service_time_s + g.uniform() * h.service_jitter_s;
              pad.occupant = v.id;
              v.mode = VehicleMode::Servicing;
              v.service_until_ms = t + static_cast<SimTimeMs>(std::llround(service * 1000.0));
            }
          }
        } else if (v.mode == VehicleMode::Servicing && t >= v.service_until_ms) {
          if (v.pad) {
            h.pads[*v.pad].occupant.reset();
            if (v2v_run() && v.v2v()) {
              auto& cs = controllers_.at(v.id);
              final_messages_.emplace_back(Message{controller_.release(cs, v, *v.pad, t)}, v.position);
            }
          }
          done.push_back(v.id);
          ++world_.operations_completed;
          completions_s_.push_back(static_cast<double>(t) / 1000.0);
        }
      } else if ((v.destination - v.estimated_position()).norm_xy() < 5.0) {
        done.push_back(v.id);
        ++world_.operations_completed;
        completions_s_.push_back(static_cast<double>(t) / 1000.0);
      }
    }
    for (AircraftId id : done) {
      const auto* v = world_.find(id);
      const bool managed = v->managed();
      const std::size_t slot = v->slot;
      retire(id, t);
      if (managed) {
        auto nv = make_vehicle(world_, cfg_, slot, t, spawn_rng_, false);
        add_controller(nv);
        detail::insert_sorted(world_, std::move(nv));
      }
    }
  }

  void retire(AircraftId id, SimTimeMs t) {
    auto c = controllers_.find(id);
    if (c != controllers_.end()) {
      finalize_controller(c->second, t);
      controllers_.erase(c);
    }
    track_mem_.erase(id);
    std::erase_if(world_.vehicles, [&](const VehicleState& v) { return v.id == id; });
    ++world_.completed;
  }

  void finalize_controller(const ControllerState& s, SimTimeMs t) {
    for (double d : s.counters.backstop_durations_s) backstop_durations_.push_back(d);
    if (s.backstop.active) backstop_durations_.push_back(static_cast<double>(t - s.backstop.since_ms) / 1000.0);
    if (s.backstop.active) backstop_intervals_.push_back({static_cast<double>(s.backstop.since_ms) / 1000.0,
                                                          static_cast<double>(t) / 1000.0});
    protocol_violations_ += s.counters.protocol_violations;
    transactions_ += s.counters.transactions_started;
    mode_transitions_ += s.mode.transitions;
    stale_refs_ += s.counters.stale_authority_refs;
    if (s.counters.yield_steps > 0) ++yield_vehicles_;
    for (const auto& tr : s.counters.observed_transitions) transitions_.push_back(tr);
  }

  // ---------------------------------------------------------------------
  void record_decision(const VehicleState& v, const Decision& d, SimTimeMs now) {
    std::uint64_t h = hash_values(digest_, v.id, static_cast<std::uint64_t>(now),
                                  std::bit_cast<std::uint64_t>(d.accel.x), std::bit_cast<std::uint64_t>(d.accel.y),
                                  std::bit_cast<std::uint64_t>(d.accel.z), static_cast<std::uint64_t>(d.vehicle_mode),
                                  static_cast<std::uint64_t>(d.action));
    digest_ = h;
    if (d.action == ActionKind::Avoid || d.action == ActionKind::Yield) avoiders_.insert(v.id);
    info_age_sum_ += d.info_age_sum_ms;
    info_age_n_ += d.info_age_count;
    if (d.backstop_started) {
      ++backstop_activations_;
      backstop_open_[v.id] = now;
    } else if (d.mode != ControllerMode::Backstop) {
      auto it = backstop_open_.find(v.id);
      if (it != backstop_open_.end()) {
        backstop_intervals_.push_back({static_cast<double>(it->second) / 1000.0, static_cast<double>(now) / 1000.0});
        backstop_open_.erase(it);
      }
    }
    if (d.hold_started) {
      const bool any_active = std::any_of(world_.context_events.begin(), world_.context_events.end(),
                                          [&](const ContextEvent& c) { return c.active(now); });
      if (any_active) ++window_holds_;
      note_blast(v, now);
    }
    auto pm = last_mode_.find(v.id);
    if (d.mode == ControllerMode::Guarded && (pm == last_mode_.end() || pm->second != ControllerMode::Guarded))
      note_blast(v, now);
    last_mode_[v.id] = d.mode;

    // Track continuity.
    auto& mem = track_mem_[v.id];
    std::vector<AircraftId> held = d.held_neighbors;
    std::sort(held.begin(), held.end());
    held.erase(std::unique(held.begin(), held.end()), held.end());
    for (AircraftId id : held) {
      auto& m = mem[id];
      if (m.dropped) {
        reacq_sum_s_ += static_cast<double>(now - m.last_held_ms) / 1000.0;
        ++reacq_n_;
        m.dropped = false;
      }
      m.last_held_ms = now;
    }
    for (auto it = mem.begin(); it != mem.end();) {
      if (std::binary_search(held.begin(), held.end(), it->first)) {
        ++it;
        continue;
      }
      const auto* t = world_.find(it->first);
      if (!t || distance(t->position, v.position) > v.sensing.detect_range_m) {
        it = mem.erase(it);
        continue;
      }
      if (!it->second.dropped && now - it->second.last_held_ms > 1000) {
        it->second.dropped = true;
        ++track_drops_;
      }
      ++it;
    }

    // False inferences against corrupted state.
    if (cfg_.family == ScenarioFamily::GnssCorruption && is_tactical(cfg_.baseline)) {
      for (const auto& a : d.assessments) {
        const auto* t = world_.find(a.id);
        if (!t) continue;
        const std::uint64_t key = (static_cast<std::uint64_t>(v.id) << 32) | a.id;
        const bool corrupted = v.true_nav_error.norm() > 1.0 || t->true_nav_error.norm() > 1.0;
        bool fc = false;
        bool fcl = false;
        if (corrupted) {
          const auto cpa = closest_approach({v.id, v.position, v.velocity}, {{0.0, t->position}}, t->velocity,
                                            kPredictionHorizonS);
          fc = a.predicted_conflict && cpa.d_m > 2.0 * a.effective_radius_m;
          fcl = !a.predicted_conflict && cpa.d_m < kProtectedRadiusM;
        }
        auto& prev = inference_state_[key];
        if (fc && !prev.first) ++false_conflicts_;
        if (fcl && !prev.second) ++false_clearances_;
        prev = {fc, fcl};
      }
    }

    if (trace_decisions_ && (d.action != ActionKind::Cruise || !d.tx_log.empty())) {
      *trace_decisions_ << now << ',' << v.id << ',' << to_string(d.mode) << ',' << to_string(d.action) << ',';
      for (std::size_t i = 0; i < d.tx_log.size(); ++i) *trace_decisions_ << (i ? ";" : "") << d.tx_log[i];
      *trace_decisions_ << '\n';
    }
  }

  void note_blast(const VehicleState& v, SimTimeMs now) {
    for (auto& e : epicenters_) {
      if (now < e.from || now >= e.until) continue;
      if ((v.position - e.position).norm_xy() > 500.0) continue;
      if (e.counted.insert(v.id).second) ++blast_radius_;
    }
  }

  void sample(SimTimeMs t, const std::vector<std::pair<std::size_t, Decision>>&) {
    const double ts = static_cast<double>(t) / 1000.0;
    const double dt_s = static_cast<double>(cfg_.dt_ms) / 1000.0;
    const auto& vs = world_.vehicles;
    max_active_ = std::max(max_active_, vs.size());
    std::unordered_map<std::uint64_t, bool> now_conflict;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      for (std::size_t j = i + 1; j < vs.size(); ++j) {
        const double dist = distance(vs[i].position, vs[j].position);
        if (dist < min_sep_) min_sep_ = dist;
        if (dist >= kProtectedRadiusM) continue;
        const auto key = detail::pair_key(vs[i].id, vs[j].id);
        ++conflict_steps_;
        auto [it, fresh] = conflict_open_.try_emplace(key, ts);
        if (fresh) ++conflict_events_;
        now_conflict[key] = dist < cfg_.qualify_sep_m;
        if (dist < cfg_.qualify_sep_m) sepviol_open_.try_emplace(key, ts);
      }
    }
    for (auto it = conflict_open_.begin(); it != conflict_open_.end();) {
      if (!now_conflict.contains(it->first)) {
        safety_.conflicts.push_back({it->second, ts});
        it = conflict_open_.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = sepviol_open_.begin(); it != sepviol_open_.end();) {
      auto c = now_conflict.find(it->first);
      if (c == now_conflict.end() || !c->second) {
        safety_.separation_violations.push_back({it->second, ts});
        it = sepviol_open_.erase(it);
      } else {
        ++it;
      }
    }

    std::size_t queue = 0;
    for (const auto& v : vs) {
      if (!v.managed()) continue;
      if (v.mode == VehicleMode::Hold) hold_time_s_ += dt_s;
      if (v.hotspot && *v.hotspot < world_.hotspots.size()) {
        const auto& h = world_.hotspots[*v.hotspot];
        const bool waiting_on_pad = v.mode == VehicleMode::Approach && v.pad && h.pads[*v.pad].occupant &&
                                    *h.pads[*v.pad].occupant != v.id;
        if (v.mode == VehicleMode::Hold || v.mode == VehicleMode::Rejoining || waiting_on_pad) ++queue;
      }
      // Context constraint entries.
      for (const auto& c : world_.context_events) {
        if (!c.active(t)) continue;
        const auto key = (static_cast<std::uint64_t>(v.id) << 32) | c.id;
        const bool inside = (v.position - c.position).norm_xy() < c.radius_m;
        if (inside && !inside_constraint_.contains(key)) {
          inside_constraint_.insert(key);
          ++context_violations_;
        }
      }
      // Progress monitoring.
      const double goal_dist = (v.destination - v.position).norm_xy();
      auto& pr = progress_[v.id];
      if (!pr.init || goal_dist < pr.best - 1.0 || v.mode == VehicleMode::Servicing) {
        if (pr.deadlocked) {
          safety_.deadlocks.push_back({pr.deadlock_start, ts});
          pr.deadlocked = false;
        }
        pr = {true, goal_dist, ts, false, 0.0};
      } else if (!pr.deadlocked && ts - pr.since > 60.0) {
        pr.deadlocked = true;
        pr.deadlock_start = ts;
        ++deadlocks_;
      }
      vehicle_minutes_ += dt_s / 60.0;
    }
    std::erase_if(progress_, [&](const auto& kv) {
      if (world_.find(kv.first)) return false;
      if (kv.second.deadlocked) safety_.deadlocks.push_back({kv.second.deadlock_start, ts});
      return true;
    });
    queue_peak_ = std::max(queue_peak_, queue);

    if (trace_positions_ && t % 1000 == 0)
      for (const auto& v : vs)
        *trace_positions_ << t << ',' << v.id << ',' << v.position.x << ',' << v.position.y << ',' << v.position.z
                          << ',' << to_string(v.mode) << '\n';
  }

  // ---------------------------------------------------------------------
  RunResult finish(std::size_t steps) {
    const SimTimeMs t_end = static_cast<SimTimeMs>(steps) * cfg_.dt_ms;
    const double ts = static_cast<double>(t_end) / 1000.0;
    for (auto& [id, cs] : controllers_) finalize_controller(cs, t_end);
    for (const auto& [id, since] : backstop_open_) backstop_intervals_.push_back({static_cast<double>(since) / 1000.0, ts});
    for (const auto& [k, since] : conflict_open_) safety_.conflicts.push_back({since, ts});
    for (const auto& [k, since] : sepviol_open_) safety_.separation_violations.push_back({since, ts});
    for (const auto& [id, pr] : progress_)
      if (pr.deadlocked) safety_.deadlocks.push_back({pr.deadlock_start, ts});
    safety_.backstops = backstop_intervals_;
    safety_.duration_s = cfg_.duration_s;
    safety_.completions_s = completions_s_;

    QualifyCriteria qc;
    qc.window_s = cfg_.window_s;
    qc.sustain_s = cfg_.qualify_sustain_s;
    const auto q = qualify_windows(safety_, qc);

    RunMetrics m;
    m.prr = prr(received_, expected_);
    m.latency_p95_ms = latency_.count() ? latency_.percentile(95.0) : kNaN;
    m.deadline_miss_rate = received_ ? static_cast<double>(deadline_missed_) / static_cast<double>(received_) : 0.0;
    m.mean_info_age_ms = info_age_n_ ? info_age_sum_ / static_cast<double>(info_age_n_) : kNaN;
    m.invalid_rejections = static_cast<double>(invalid_rejections_);
    m.bad_accepts = static_cast<double>(bad_accepts_);
    m.false_clearance_events = static_cast<double>(false_clearances_);
    m.false_conflict_events = static_cast<double>(false_conflicts_);
    m.throughput_ops_per_hr = q.throughput_per_hr;
    m.safety_qualified_throughput = q.safety_qualified_throughput_per_hr;
    m.qualified_fraction = q.qualified_fraction;
    m.mean_hold_time_s = managed_spawned_ ? hold_time_s_ / static_cast<double>(managed_spawned_) : 0.0;
    m.replans = static_cast<double>(dss_.replans);
    m.dss_queries = static_cast<double>(dss_.queries);
    m.min_separation_m = std::isfinite(min_sep_) ? min_sep_ : kNaN;
    m.conflict_events = static_cast<double>(conflict_events_);
    m.conflict_steps = static_cast<double>(conflict_steps_);
    m.track_drops = static_cast<double>(track_drops_);
    m.mean_reacquisition_s = reacq_n_ ? reacq_sum_s_ / static_cast<double>(reacq_n_) : kNaN;
    m.wave_offs = static_cast<double>(wave_offs_);
    m.queue_peak = static_cast<double>(queue_peak_);
    m.deadlocks = static_cast<double>(deadlocks_);
    m.backstop_activations = static_cast<double>(backstop_activations_);
    m.backstop_duration_p95_s = backstop_durations_.empty() ? kNaN : percentile(backstop_durations_, 95.0);
    m.injected_invalid = static_cast<double>(injected_copies());
    m.context_reaction_s = reaction_n_ ? reaction_sum_s_ / static_cast<double>(reaction_n_) : kNaN;
    m.window_holds = static_cast<double>(window_holds_);
    m.oscillation_per_vmin = vehicle_minutes_ > 0 ? static_cast<double>(mode_transitions_) / vehicle_minutes_ : 0.0;
    m.blast_radius = static_cast<double>(blast_radius_);
    m.protocol_violations = static_cast<double>(protocol_violations_);
    m.transactions = static_cast<double>(transactions_);
    m.context_violations = static_cast<double>(context_violations_);
    m.operations_completed = static_cast<double>(world_.operations_completed);
    m.messages_expected = static_cast<double>(expected_);
    m.messages_received = static_cast<double>(received_);
    m.messages_deadline_missed = static_cast<double>(deadline_missed_);
    m.stale_authority_refs = static_cast<double>(stale_refs_);

    RunResult r;
    r.metrics = m;
    r.steps = steps;
    r.decision_digest = digest_;
    r.messages_lost = lost_;
    r.spawned = world_.spawned;
    r.active = world_.vehicles.size();
    r.completed = world_.completed;
    r.transitions = std::move(transitions_);
    r.yield_vehicles = yield_vehicles_;
    r.avoiding_vehicles = avoiders_.size();
    r.max_active = max_active_;
    r.safety = safety_;
    if (trace_decisions_) trace_decisions_->flush();
    if (trace_positions_) trace_positions_->flush();
    if (trace_events_) trace_events_->flush();
    return r;
  }

  std::uint64_t injected_copies() const { return injected_delivered_count(); }
  std::uint64_t injected_delivered_count() const { return invalid_from_injected_ + bad_accepts_; }

  void open_traces() {
    std::filesystem::create_directories(*opts_.trace_dir);
    trace_decisions_ = std::make_unique<std::ofstream>(*opts_.trace_dir / "decisions.csv");
    *trace_decisions_ << "t_ms,id,mode,action,tx_events\n";
    trace_positions_ = std::make_unique<std::ofstream>(*opts_.trace_dir / "positions.csv");
    *trace_positions_ << "t_ms,id,x,y,z,vehicle_mode\n";
    trace_events_ = std::make_unique<std::ofstream>(*opts_.trace_dir / "events.csv");
    *trace_events_ << "t_ms,kind,ref\n";
  }

  void trace_event(SimTimeMs t, const char* kind, std::uint64_t ref) {
    if (trace_events_) *trace_events_ << t << ',' << kind << ',' << ref << '\n';
  }

  struct Captured {
    SimTimeMs t;
    AircraftId id;
    Vec3 position;
    Vec3 velocity;
  };
  struct Epicenter {
    Vec3 position;
    SimTimeMs from;
    SimTimeMs until;
    std::set<AircraftId> counted;
  };
  struct Progress {
    bool init = false;
    double best = 0.0;
    double since = 0.0;
    bool deadlocked = false;
    double deadlock_start = 0.0;
  };

  ScenarioConfig cfg_;
  RunOptions opts_;
  const CongestionModel& congestion_;
  ImpairmentProfile profile_;
  LinkParams link_;
  ContextProfile context_profile_;
  KeyRing keys_;
  TrustPolicy policy_;
  Controller controller_;
  ParamMap params_;
  SplitMix64 spawn_rng_;
  World world_;
  DssService dss_;
  std::map<AircraftId, ControllerState> controllers_;
  std::priority_queue<detail::Arrival, std::vector<detail::Arrival>, std::greater<>> arrivals_;
  std::map<AircraftId, std::vector<CoordinationMessage>> inbox_;
  std::map<SimTimeMs, std::vector<std::pair<AircraftId, std::uint32_t>>> awareness_;
  std::vector<std::pair<Message, Vec3>> final_messages_;
  std::deque<Captured> captured_;
  std::vector<Epicenter> epicenters_;

  // Accumulators.
  std::uint64_t expected_ = 0, received_ = 0, lost_ = 0, deadline_missed_ = 0;
  LatencyHistogram latency_;
  std::uint64_t invalid_rejections_ = 0, bad_accepts_ = 0, invalid_from_injected_ = 0;
  std::uint64_t inject_counter_ = 0, injected_messages_ = 0;
  std::uint64_t false_conflicts_ = 0, false_clearances_ = 0;
  std::unordered_map<std::uint64_t, std::pair<bool, bool>> inference_state_;
  double info_age_sum_ = 0.0;
  std::uint64_t info_age_n_ = 0;
  double hold_time_s_ = 0.0;
  std::size_t managed_spawned_ = 0;
  double min_sep_ = std::numeric_limits<double>::infinity();
  std::size_t steps_done_ = 0;
  std::uint64_t conflict_events_ = 0, conflict_steps_ = 0;
  std::unordered_map<std::uint64_t, double> conflict_open_, sepviol_open_;
  std::map<AircraftId, std::map<AircraftId, detail::TrackMemory>> track_mem_;
  std::uint64_t track_drops_ = 0;
  double reacq_sum_s_ = 0.0;
  std::uint64_t reacq_n_ = 0;
  std::uint64_t wave_offs_ = 0;
  std::size_t queue_peak_ = 0;
  std::uint64_t deadlocks_ = 0;
  std::map<AircraftId, Progress> progress_;
  std::uint64_t backstop_activations_ = 0;
  std::map<AircraftId, SimTimeMs> backstop_open_;
  std::vector<Interval> backstop_intervals_;
  std::vector<double> backstop_durations_;
  double reaction_sum_s_ = 0.0;
  std::uint64_t reaction_n_ = 0;
  std::uint64_t window_holds_ = 0;
  std::uint64_t blast_radius_ = 0;
  std::map<AircraftId, ControllerMode> last_mode_;
  std::uint64_t mode_transitions_ = 0;
  double vehicle_minutes_ = 0.0;
  std::uint64_t protocol_violations_ = 0, transactions_ = 0, stale_refs_ = 0;
  std::set<std::uint64_t> inside_constraint_;
  std::uint64_t context_violations_ = 0;
  std::vector<double> completions_s_;
  std::vector<std::pair<TxPhase, TxPhase>> transitions_;
  std::size_t yield_vehicles_ = 0;
  std::set<AircraftId> avoiders_;
  std::size_t max_active_ = 0;
  std::uint64_t digest_ = 0x9e3779b97f4a7c15ULL;
  SafetyTrace safety_;
  std::unique_ptr<std::ofstream> trace_decisions_, trace_positions_, trace_events_;
};

inline RunResult run_scenario_full(const ScenarioConfig& cfg, const RunOptions& opts = {}) {
  Simulation sim(cfg, opts);
  return sim.run();
}

/// Runs one scenario and returns its metrics. Identical (config, seed)
/// always yields identical metrics.
inline RunMetrics run_scenario(const ScenarioConfig& cfg, const RunOptions& opts = {}) {
  return run_scenario_full(cfg, opts).metrics;
}

}  // namespace v2v
