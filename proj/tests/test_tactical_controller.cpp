#include <gtest/gtest.h>

#include <random>

#include "v2v/tactical_controller.hpp"

using namespace v2v;

namespace {

NeighborBelief belief(AircraftId id, Vec3 pos, Vec3 vel, SimTimeMs t = 0) {
  NeighborBelief b;
  b.sender_id = id;
  b.last.sender_id = id;
  b.last.t_issue_ms = t;
  b.last.position = pos;
  b.last.velocity = vel;
  return b;
}

Hotspot make_hotspot(std::size_t pads) {
  Hotspot h;
  h.pad_count = pads;
  for (std::size_t i = 0; i < pads; ++i) h.pads.push_back({Vec3{static_cast<double>(i) * 30.0, 0.0, 0.0}, {}, 0});
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Prediction

TEST(Prediction, HeadOnClosestApproach) {
  OwnState self{1, {0, 0, 30}, {10, 0, 0}};
  const auto c = predict_conflicts(self, {belief(2, {100, 0, 30}, {-10, 0, 0})}, 8.0, 0);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c[0].t_cpa_s, 5.0, 1e-9);
  EXPECT_NEAR(c[0].d_cpa_m, 0.0, 1e-9);
  EXPECT_DOUBLE_EQ(c[0].effective_radius_m, 15.0 + 3.0);
  EXPECT_DOUBLE_EQ(c[0].severity, 1.0);
}

TEST(Prediction, ParallelOffsetHasNoConflict) {
  OwnState self{1, {0, 0, 30}, {10, 0, 0}};
  EXPECT_TRUE(predict_conflicts(self, {belief(2, {0, 50, 30}, {10, 0, 0})}, 8.0, 0).empty());
}

TEST(Prediction, InflationWidensRadius) {
  OwnState self{1, {0, 0, 30}, {10, 0, 0}};
  auto b = belief(2, {0, 50, 30}, {10, 0, 0});
  b.uncertainty_inflation = 3.0;
  PredictionParams p;
  p.sigma_pos_m = 12.0;
  EXPECT_DOUBLE_EQ(effective_radius(b, p), 51.0);
  const auto c = predict_conflicts(self, {b}, 8.0, 0, p);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c[0].d_cpa_m, 50.0, 1e-9);
}

TEST(Prediction, OutsideHorizonIsIgnored) {
  OwnState self{1, {0, 0, 30}, {10, 0, 0}};
  EXPECT_TRUE(predict_conflicts(self, {belief(2, {400, 0, 30}, {-10, 0, 0})}, 8.0, 0).empty());
  EXPECT_THROW(predict_conflicts(self, {}, 0.0, 0), std::invalid_argument);
}

TEST(Prediction, SortedByTimeAndNonNegative) {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(-150, 150), v(-12, 12);
  for (int it = 0; it < 500; ++it) {
    OwnState self{0, {0, 0, 30}, {v(g), v(g), 0}};
    std::vector<NeighborBelief> bs;
    for (AircraftId i = 1; i <= 12; ++i) bs.push_back(belief(i, {u(g), u(g), 30 + u(g) / 30}, {v(g), v(g), 0}));
    const auto c = predict_conflicts(self, bs, 8.0, 0);
    for (std::size_t k = 0; k < c.size(); ++k) {
      EXPECT_GE(c[k].t_cpa_s, 0.0);
      EXPECT_LE(c[k].t_cpa_s, 8.0);
      EXPECT_LT(c[k].d_cpa_m, c[k].effective_radius_m);
      if (k) { EXPECT_LE(c[k - 1].t_cpa_s, c[k].t_cpa_s); }
    }
  }
}

TEST(Prediction, BruteForceAgreesOnStraightLines) {
  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> u(-100, 100), v(-12, 12);
  for (int it = 0; it < 2000; ++it) {
    OwnState self{0, {u(g), u(g), 30}, {v(g), v(g), 0}};
    const auto b = belief(1, {u(g), u(g), 30}, {v(g), v(g), 0});
    double best = 1e18, best_t = 0;
    for (int k = 0; k <= 8000; ++k) {
      const double t = k / 1000.0;
      const double d = ((b.last.position + b.last.velocity * t) - (self.position + self.velocity * t)).norm();
      if (d < best) best = d, best_t = t;
    }
    const auto cpa = closest_approach(self, {{0.0, b.last.position}}, b.last.velocity, 8.0);
    EXPECT_NEAR(cpa.d_m, best, 1e-2);
    if (best > 1e-3) { EXPECT_NEAR(cpa.t_s, best_t, 5e-2); }
  }
}

TEST(Prediction, FreshIntentBendsThePath) {
  OwnState self{1, {0, 0, 30}, {0, 0, 0}};
  // Neighbor heading +x far to the side, but its intent turns it toward us.
  auto b = belief(2, {-40, 60, 30}, {10, 0, 0});
  b.last.intent = {{{0, 5, 30}, 3000}, {{40, 5, 30}, 7000}};
  EXPECT_FALSE(predict_conflicts(self, {b}, 8.0, 0).empty());
  b.verdict = VerdictKind::Degrade;
  EXPECT_TRUE(predict_conflicts(self, {b}, 8.0, 0).empty());
  b.verdict = VerdictKind::Accept;
  b.age_ms = 500;
  EXPECT_TRUE(predict_conflicts(self, {b}, 8.0, 0).empty());
}

// ---------------------------------------------------------------------------
// Transactions

TEST(Transaction, HappyPathReachesCleared) {
  TransactionState p, r;
  TxEvent e;
  e.kind = TxEventKind::SendPropose;
  auto a = run_transaction(p, e, 0);
  EXPECT_EQ(a.state.phase, TxPhase::Proposed);
  EXPECT_EQ(a.outbound, Lifecycle::Propose);
  e.kind = TxEventKind::RecvPropose;
  auto b = run_transaction(r, e, 20);
  e.kind = TxEventKind::SendCommit;
  b = run_transaction(b.state, e, 20);
  EXPECT_EQ(b.state.phase, TxPhase::Committed);
  EXPECT_EQ(b.outbound, Lifecycle::Commit);
  e.kind = TxEventKind::RecvCommit;
  e.msg_issue_ms = 20;
  a = run_transaction(a.state, e, 60);
  EXPECT_EQ(a.state.phase, TxPhase::Committed);
  e.kind = TxEventKind::SendClear;
  a = run_transaction(a.state, e, 900);
  EXPECT_EQ(a.state.phase, TxPhase::Cleared);
  EXPECT_FALSE(a.violation);
  EXPECT_TRUE(is_terminal(a.state.phase));
}

TEST(Transaction, UnansweredProposeTimesOut) {
  TxEvent e;
  e.kind = TxEventKind::SendPropose;
  auto s = run_transaction({}, e, 1000).state;
  TxEvent tick;
  EXPECT_EQ(run_transaction(s, tick, 1499).state.phase, TxPhase::Proposed);
  const auto r = run_transaction(s, tick, 1500);
  EXPECT_EQ(r.state.phase, TxPhase::Aborted);
  EXPECT_TRUE(r.state.fallback);
}

TEST(Transaction, CommitmentExpiresWithoutClear) {
  TxEvent e;
  e.kind = TxEventKind::SendPropose;
  auto p = run_transaction({}, e, 0).state;
  e.kind = TxEventKind::RecvPropose;
  auto r = run_transaction({}, e, 10).state;
  e.kind = TxEventKind::SendCommit;
  e.validity_ms = 2000;
  r = run_transaction(r, e, 10).state;
  e.kind = TxEventKind::RecvCommit;
  e.msg_issue_ms = 10;
  e.ttl_ms = 5000;
  p = run_transaction(p, e, 50).state;
  EXPECT_TRUE(p.live_commitment(2009));
  EXPECT_TRUE(r.live_commitment(2009));
  EXPECT_FALSE(p.live_commitment(2010));
  EXPECT_FALSE(r.live_commitment(2010));
  TxEvent tick;
  EXPECT_EQ(run_transaction(p, tick, 2010).state.phase, TxPhase::Aborted);
  EXPECT_EQ(run_transaction(r, tick, 2010).state.phase, TxPhase::Aborted);
}

TEST(Transaction, FreshnessBoundsReceivedCommit) {
  TxEvent e;
  e.kind = TxEventKind::SendPropose;
  auto p = run_transaction({}, e, 0).state;
  e.kind = TxEventKind::RecvCommit;
  e.msg_issue_ms = 100;
  e.validity_ms = 5000;
  e.ttl_ms = 1000;
  p = run_transaction(p, e, 150).state;
  EXPECT_EQ(p.commit_until_ms, 1100);
}

TEST(Transaction, IllegalEventsLeaveStateUntouched) {
  TransactionState s;
  s.transaction_id = 9;
  for (auto k : {TxEventKind::SendCommit, TxEventKind::RecvCommit, TxEventKind::SendClear, TxEventKind::RecvAbort}) {
    TxEvent e;
    e.kind = k;
    const auto r = run_transaction(s, e, 5);
    EXPECT_TRUE(r.violation);
    EXPECT_EQ(r.state.phase, TxPhase::Idle);
    EXPECT_FALSE(r.outbound);
  }
}

TEST(Transaction, RandomEventSequencesStayOnLegalGraph) {
  std::mt19937_64 g(12);
  for (int run = 0; run < 10000; ++run) {
    TransactionState s;
    SimTimeMs now = 0;
    bool terminal_seen = false;
    TxPhase terminal{};
    for (int k = 0; k < 12; ++k) {
      now += static_cast<SimTimeMs>(g() % 800);
      TxEvent e;
      e.kind = static_cast<TxEventKind>(g() % 9);
      e.msg_issue_ms = now - static_cast<SimTimeMs>(g() % 300);
      e.validity_ms = 1 + static_cast<std::uint32_t>(g() % 3000);
      e.ttl_ms = 1 + static_cast<std::uint32_t>(g() % 2000);
      // The controller ticks every transaction before handling new events.
      const auto ticked = run_transaction(s, TxEvent{}, now);
      if (ticked.transitioned) { ASSERT_TRUE(legal_transition(s.phase, ticked.state.phase)); }
      if (terminal_seen) { ASSERT_EQ(ticked.state.phase, terminal); }
      s = ticked.state;
      if (is_terminal(s.phase) && !terminal_seen) terminal_seen = true, terminal = s.phase;
      const auto r = run_transaction(s, e, now);
      if (r.transitioned && r.state.phase != s.phase) {
        ASSERT_TRUE(legal_transition(s.phase, r.state.phase) ||
                    (s.phase == TxPhase::Proposed && r.state.phase == TxPhase::Aborted))
            << to_string(s.phase) << "->" << to_string(r.state.phase);
      }
      if (r.violation) { ASSERT_EQ(r.state.phase, s.phase); }
      if (terminal_seen) { ASSERT_EQ(r.state.phase, terminal); }
      if (r.state.phase == TxPhase::Committed) { ASSERT_TRUE(now < r.state.commit_until_ms); }
      s = r.state;
      if (is_terminal(s.phase) && !terminal_seen) terminal_seen = true, terminal = s.phase;
    }
  }
}

TEST(Transaction, LegalGraphEdges) {
  const TxPhase all[] = {TxPhase::Idle, TxPhase::Proposed, TxPhase::Committed, TxPhase::Aborted, TxPhase::Cleared};
  int edges = 0;
  for (auto a : all)
    for (auto b : all) edges += legal_transition(a, b);
  EXPECT_EQ(edges, 5);
  EXPECT_TRUE(legal_transition(TxPhase::Idle, TxPhase::Proposed));
  EXPECT_TRUE(legal_transition(TxPhase::Proposed, TxPhase::Committed));
  EXPECT_TRUE(legal_transition(TxPhase::Proposed, TxPhase::Aborted));
  EXPECT_TRUE(legal_transition(TxPhase::Committed, TxPhase::Cleared));
  EXPECT_TRUE(legal_transition(TxPhase::Committed, TxPhase::Aborted));
}

// ---------------------------------------------------------------------------
// Hotspot admission

TEST(Admission, EarlierEtaFirst) {
  const auto r = hotspot_admission(make_hotspot(1), {{7, 0, 12000, false}, {9, 0, 10000, false}}, 1.0);
  EXPECT_EQ(r.ordering, (std::vector<AircraftId>{9, 7}));
  EXPECT_EQ(r.granted, (std::vector<AircraftId>{9}));
}

TEST(Admission, PriorityThenEtaThenId) {
  const auto r = hotspot_admission(make_hotspot(4),
                                   {{5, 0, 100, false}, {3, 0, 100, false}, {8, 1, 900, false}, {1, 0, 50, false}}, 1.0);
  EXPECT_EQ(r.ordering, (std::vector<AircraftId>{8, 1, 3, 5}));
}

TEST(Admission, GuardedHalvesCapacity) {
  const Hotspot h = make_hotspot(2);
  EXPECT_EQ(admission_capacity(h, 0.5), 1u);
  const auto r = hotspot_admission(h, {{1, 0, 1, false}, {2, 0, 2, false}, {3, 0, 3, false}}, 0.5);
  EXPECT_EQ(r.granted.size(), 1u);
  EXPECT_EQ(hotspot_admission(h, {{1, 0, 1, false}, {2, 0, 2, false}}, 1.0, 1).granted.size(), 1u);
  EXPECT_TRUE(hotspot_admission(h, {{1, 0, 1, false}}, 1.0, 2).granted.empty());
}

TEST(Admission, WaveOffReentersAtTail) {
  // Hand-simulated queue: 4 is serving; 1, 2, 3 wait in arrival order.
  std::vector<AdmissionRequest> q{{1, 0, 1000, false}, {2, 0, 2000, false}, {3, 0, 3000, false}};
  const auto before = hotspot_admission(make_hotspot(1), q, 1.0, 1).ordering;
  EXPECT_EQ(before, (std::vector<AircraftId>{1, 2, 3}));
  q.push_back({4, 0, 9000, true});  // rejoin stamped with the wave-off time
  const auto after = hotspot_admission(make_hotspot(1), q, 1.0).ordering;
  EXPECT_EQ(after, (std::vector<AircraftId>{1, 2, 3, 4}));
}

TEST(Admission, GrantsNeverExceedFreeCapacity) {
  std::mt19937_64 g(6);
  for (int it = 0; it < 2000; ++it) {
    const Hotspot h = make_hotspot(1 + g() % 4);
    std::vector<AdmissionRequest> rq;
    const std::size_t n = g() % 8;
    for (std::size_t i = 0; i < n; ++i)
      rq.push_back({static_cast<AircraftId>(i + 1), static_cast<int>(g() % 3), static_cast<SimTimeMs>(g() % 5000), false});
    const double scale = g() % 2 ? 1.0 : 0.5;
    const std::size_t outstanding = g() % 3;
    const auto r = hotspot_admission(h, rq, scale, outstanding);
    const std::size_t cap = admission_capacity(h, scale);
    EXPECT_LE(r.granted.size() + std::min(outstanding, cap), std::max(cap, outstanding));
    EXPECT_EQ(r.ordering.size(), n);
    auto shuffled = rq;
    std::shuffle(shuffled.begin(), shuffled.end(), g);
    EXPECT_EQ(hotspot_admission(h, shuffled, scale, outstanding).ordering, r.ordering);
  }
}

TEST(Admission, ViewReleasesAndPipelines) {
  HotspotView v;
  v.claims[5] = {0, 1000};
  v.release_eta[5] = 9000;
  v.claimed_at[5] = 1000;
  EXPECT_TRUE(v.pad_claimed(0, 7));
  EXPECT_EQ(v.available_pads(2, 7, 5000, 1000), (std::vector<std::size_t>{1}));
  EXPECT_EQ(v.available_pads(2, 7, 5000, 5000), (std::vector<std::size_t>{1, 0}));
  EXPECT_TRUE(v.pad_held_before(0, 7, 2000));
  v.drop(5);
  EXPECT_FALSE(v.pad_claimed(0, 7));
  v.claims[6] = {1, 0};
  v.expire(3001, 3000, 3000);
  EXPECT_TRUE(v.claims.empty());
}

// ---------------------------------------------------------------------------
// Backstop

TEST(Backstop, PredictedCloseApproachTriggers) {
  OwnState self{1, {0, 0, 30}, {0, 0, 0}};
  // Passes 8 m abeam two seconds from now.
  const auto t = backstop_check(self, {belief(2, {-20, 8, 30}, {10, 0, 0})}, 0, {});
  ASSERT_TRUE(t);
  EXPECT_NEAR(t->predicted_sep_m, 8.0, 1e-9);
  EXPECT_NEAR(t->t_s, 2.0, 1e-9);
}

TEST(Backstop, CurrentProximityTriggers) {
  OwnState self{1, {0, 0, 30}, {0, 0, 0}};
  EXPECT_TRUE(backstop_check(self, {belief(2, {6, 0, 30}, {0, 0, 0})}, 0, {}));
}

TEST(Backstop, NeverFiresWithNobodyWithinTenTimesThreshold) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> ang(0, 6.283185307179586), r(100.5, 400), sp(0, 15);
  for (int it = 0; it < 10000; ++it) {
    OwnState self{0, {0, 0, 30}, {0, 0, 0}};
    std::vector<NeighborBelief> bs;
    for (AircraftId i = 1; i <= 5; ++i) {
      const double a = ang(g), d = r(g), h = ang(g), s = sp(g);
      bs.push_back(belief(i, {d * std::cos(a), d * std::sin(a), 30}, {s * std::cos(h), s * std::sin(h), 0}));
    }
    // Speeds of at most 15 m/s cannot close 90 m within the 3 s window.
    ASSERT_FALSE(backstop_check(self, bs, 0, {}));
  }
}

TEST(Backstop, EvasionUsesFullAuthorityAndSplitsVertically) {
  OwnState a{1, {0, 0, 60}, {}}, b{2, {5, 0, 60}, {}};
  const BackstopThreat ta{2, {5, 0, 0}, 5, 0}, tb{1, {-5, 0, 0}, 5, 0};
  const Vec3 ea = backstop_evasion(a, ta), eb = backstop_evasion(b, tb);
  EXPECT_LT(ea.x, 0);
  EXPECT_GT(eb.x, 0);
  EXPECT_NE(ea.z > 0, eb.z > 0);
  EXPECT_NEAR(std::hypot(ea.x, ea.y), kAccelMax, 1e-9);
}

// ---------------------------------------------------------------------------
// Modes

TEST(Modes, TargetModeRule) {
  EXPECT_EQ(target_mode({1.0, 0.0, 0.95, NavIntegrity::Nominal}), ControllerMode::Cooperative);
  EXPECT_EQ(target_mode({1.0, 0.0, 0.3, NavIntegrity::Nominal}), ControllerMode::Fallback);
  EXPECT_EQ(target_mode({0.6, 0.5, 0.95, NavIntegrity::Nominal}), ControllerMode::Guarded);
  EXPECT_EQ(target_mode({1.0, 0.0, 0.5, NavIntegrity::Nominal}), ControllerMode::Guarded);
  EXPECT_EQ(target_mode({0.3, 0.0, 0.95, NavIntegrity::Nominal}), ControllerMode::Fallback);
  EXPECT_EQ(target_mode({1.0, 0.0, 0.95, NavIntegrity::Degraded}), ControllerMode::Guarded);
}

TEST(Modes, DowngradeImmediateUpgradeDelayed) {
  ModeState s;
  s.mode = ControllerMode::Cooperative;
  const QualitySummary good{1.0, 0.0, 0.95, NavIntegrity::Nominal}, bad{1.0, 0.0, 0.3, NavIntegrity::Nominal};
  EXPECT_EQ(mode_update(s, bad, 1000), ControllerMode::Fallback);
  EXPECT_EQ(mode_update(s, good, 1100), ControllerMode::Fallback);
  EXPECT_EQ(mode_update(s, good, 3000), ControllerMode::Fallback);
  EXPECT_EQ(mode_update(s, good, 3100), ControllerMode::Cooperative);
}

TEST(Modes, OscillatingPrrDoesNotChatter) {
  ModeState s;
  s.mode = ControllerMode::Cooperative;
  std::vector<SimTimeMs> transitions;
  for (SimTimeMs t = 0; t < 60000; t += 100) {
    // Square wave around 0.7 with a 1.2 s period.
    const double prr = (t / 600) % 2 ? 0.65 : 0.75;
    const std::size_t before = s.transitions;
    mode_update(s, {1.0, 0.0, prr, NavIntegrity::Nominal}, t);
    if (s.transitions != before) transitions.push_back(t);
  }
  EXPECT_GE(transitions.size(), 1u);
  for (std::size_t i = 1; i < transitions.size(); ++i) EXPECT_GE(transitions[i] - transitions[i - 1], 2000);
}

TEST(Modes, RandomTracesRespectHysteresisOnUpgrades) {
  std::mt19937_64 g(15);
  std::uniform_real_distribution<double> u(0, 1);
  for (int run = 0; run < 200; ++run) {
    ModeState s;
    SimTimeMs last_change = -100000;
    ControllerMode prev = s.mode;
    for (SimTimeMs t = 0; t < 30000; t += 100) {
      const auto m = mode_update(s, {u(g), 0.0, u(g), NavIntegrity::Nominal}, t);
      if (mode_rank(m) > mode_rank(prev)) { ASSERT_GE(t - last_change, 2000); }
      if (m != prev) last_change = t;
      prev = m;
    }
  }
}

// ---------------------------------------------------------------------------
// Send scheduling

TEST(Scheduling, PriorityClassesUnderBudget) {
  auto mk = [](CoordFunction f, Lifecycle l, std::uint64_t tx) {
    CoordinationMessage m;
    m.function = f;
    m.lifecycle = l;
    m.transaction_id = tx;
    return m;
  };
  std::vector<CoordinationMessage> in{mk(CoordFunction::YieldPass, Lifecycle::Propose, 1),
                                      mk(CoordFunction::YieldPass, Lifecycle::Commit, 2),
                                      mk(CoordFunction::Contingency, Lifecycle::Propose, 3),
                                      mk(CoordFunction::YieldPass, Lifecycle::Clear, 4),
                                      mk(CoordFunction::YieldPass, Lifecycle::Abort, 5)};
  std::vector<CoordinationMessage> deferred;
  const auto out = schedule_outbound(in, 3, &deferred);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].transaction_id, 3u);
  EXPECT_EQ(out[1].transaction_id, 2u);
  EXPECT_EQ(out[2].transaction_id, 5u);
  ASSERT_EQ(deferred.size(), 2u);
  EXPECT_EQ(deferred[0].transaction_id, 1u);
  EXPECT_EQ(deferred[1].transaction_id, 4u);
}

// ---------------------------------------------------------------------------
// Decision-level scenarios on a hand-built world

namespace {

struct Pair {
  ScenarioConfig cfg;
  World world;
  DssService dss;
  Controller ctl{cfg};
  std::map<AircraftId, ControllerState> states;
  std::map<AircraftId, std::vector<CoordinationMessage>> inbox;

  explicit Pair(Baseline b) {
    cfg.baseline = b;
    world.half_side_m = 1000;
    VehicleState a, c;
    a.id = 1;
    a.position = {-200, 0, 30};
    a.velocity = {10, 0, 0};
    a.destination = {900, 0, 30};
    c.id = 2;
    c.position = {200, 0, 30};
    c.velocity = {-10, 0, 0};
    c.destination = {-900, 0, 30};
    world.vehicles = {a, c};
    for (auto& v : world.vehicles) states.emplace(v.id, ControllerState(v.id));
  }

  std::vector<SensorTrack> perfect_sensing(const VehicleState& self, SimTimeMs now) const {
    std::vector<SensorTrack> out;
    for (const auto& o : world.vehicles)
      if (o.id != self.id && (o.position - self.position).norm() < 150) out.push_back({o.id, o.position, o.velocity, now});
    return out;
  }

  // One step; `v2v_ok` gates whether beacons and coordination get through.
  std::vector<Decision> step(SimTimeMs now, bool sense, bool v2v_ok) {
    std::vector<Decision> ds;
    WorldServices svc{&world, &dss, 1};
    for (auto& v : world.vehicles) {
      const auto tracks = sense ? perfect_sensing(v, now) : std::vector<SensorTrack>{};
      DecisionInput in{cfg.baseline, &v, &tracks, &inbox[v.id], now};
      ds.push_back(ctl.decide(states.at(v.id), in, svc));
    }
    inbox.clear();
    for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
      auto& v = world.vehicles[i];
      if (v2v_ok && uses_v2v(cfg.baseline)) {
        const auto b = ctl.beacon(states.at(v.id), v, now);
        for (auto& o : world.vehicles) {
          if (o.id == v.id) continue;
          auto& cs = states.at(o.id);
          const auto verdict = validate_checked(Message{b}, true, now, cs.validator, TrustPolicy{});
          cs.table.update(verdict, b, now);
          ctl.note_beacon(cs, v.id, now);
          for (const auto& m : ds[i].outbound)
            if (validate_checked(Message{m}, true, now, cs.validator, TrustPolicy{}).usable()) inbox[o.id].push_back(m);
        }
      }
    }
    for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
      auto& v = world.vehicles[i];
      if (ds[i].vehicle_mode != VehicleMode::Completed) v.mode = ds[i].vehicle_mode;
      v = step_kinematics(v, ds[i].accel, 0.1);
    }
    return ds;
  }
};

}  // namespace

TEST(Decision, IsolatedConflictHasExactlyOneYielder) {
  Pair p(Baseline::B2);
  std::map<AircraftId, int> yields;
  double min_sep = 1e9;
  for (SimTimeMs t = 0; t < 40000; t += 100) {
    const auto ds = p.step(t, false, true);
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds[i].action == ActionKind::Yield) ++yields[p.world.vehicles[i].id];
    min_sep = std::min(min_sep, (p.world.vehicles[0].position - p.world.vehicles[1].position).norm());
  }
  EXPECT_EQ(yields.size(), 1u);
  EXPECT_EQ(p.states.at(1).counters.backstop_activations + p.states.at(2).counters.backstop_activations, 0u);
  EXPECT_EQ(p.states.at(1).counters.protocol_violations + p.states.at(2).counters.protocol_violations, 0u);
  EXPECT_GT(min_sep, 15.0);
  EXPECT_GT(p.states.at(2).counters.stand_on_steps, 0u);
}

TEST(Decision, AllRejectedInboxMatchesSensorOnly) {
  Pair b2(Baseline::B2), b1(Baseline::B1);
  for (SimTimeMs t = 0; t < 40000; t += 100) {
    const auto d2 = b2.step(t, true, false);
    const auto d1 = b1.step(t, true, false);
    ASSERT_EQ(d2.size(), d1.size());
    for (std::size_t i = 0; i < d1.size(); ++i) {
      ASSERT_EQ(d2[i].accel, d1[i].accel) << "t=" << t;
      ASSERT_EQ(d2[i].action, d1[i].action);
    }
  }
  EXPECT_EQ(b2.world.vehicles[0].position, b1.world.vehicles[0].position);
}

TEST(Decision, StrategicBaselineHoldsAndReplansOnPopupConstraint) {
  ScenarioConfig cfg;
  cfg.baseline = Baseline::A;
  World w;
  w.half_side_m = 1000;
  VehicleState v;
  v.id = 3;
  v.position = {-300, 0, 30};
  v.velocity = {10, 0, 0};
  v.destination = {600, 0, 30};
  w.vehicles = {v};
  DssService dss;
  dss.seed = 5;
  Controller ctl(cfg);
  ControllerState s(v.id);
  ContextEvent c;
  c.id = 1;
  c.position = {0, 0, 30};
  c.radius_m = 50;
  c.active_from_ms = 0;
  c.active_until_ms = 1'000'000;
  s.known_constraints.push_back(c);
  const std::vector<SensorTrack> none;
  const std::vector<CoordinationMessage> empty;
  int holds = 0, replans = 0, queries = 0;
  SimTimeMs hold_steps = 0;
  for (SimTimeMs t = 0; t < 40000; t += 100) {
    auto& me = w.vehicles[0];
    DecisionInput in{Baseline::A, &me, &none, &empty, t};
    const auto d = ctl.decide(s, in, {&w, &dss, 5});
    holds += d.hold_started;
    replans += d.replan;
    queries += d.dss_query;
    if (d.action == ActionKind::Hold) hold_steps += 100;
    me.mode = d.vehicle_mode;
    me = step_kinematics(me, d.accel, 0.1);
    EXPECT_TRUE(d.outbound.empty());
  }
  EXPECT_EQ(holds, 1);
  EXPECT_EQ(replans, 1);
  EXPECT_EQ(dss.replans, 1u);
  EXPECT_GE(queries, 1);
  EXPECT_GE(hold_steps, 5000);
  EXPECT_LE(hold_steps, 15100);
}
