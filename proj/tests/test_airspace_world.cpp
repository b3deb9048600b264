#include <gtest/gtest.h>

#include <map>

#include "v2v/airspace_world.hpp"
#include "v2v/simulation.hpp"

using namespace v2v;

namespace {

ScenarioConfig cfg_for(ScenarioFamily f, double density, double area) {
  ScenarioConfig c;
  c.family = f;
  c.density_veh_km2 = density;
  c.footprint_area_km2 = area;
  return c;
}

bool same_world(const World& a, const World& b) {
  if (a.vehicles.size() != b.vehicles.size()) return false;
  for (std::size_t i = 0; i < a.vehicles.size(); ++i) {
    const auto &x = a.vehicles[i], &y = b.vehicles[i];
    if (x.id != y.id || !(x.position == y.position) || !(x.velocity == y.velocity) || x.mode != y.mode ||
        !(x.destination == y.destination) || x.equipage != y.equipage || !(x.true_nav_error == y.true_nav_error))
      return false;
  }
  return true;
}

VehicleState observer_at(const Vec3& p, double detect_prob) {
  VehicleState v;
  v.id = 1;
  v.position = p;
  v.sensing.detect_prob = detect_prob;
  v.sensing.detect_range_m = 150.0;
  return v;
}

}  // namespace

TEST(Spawn, CountIsDensityTimesArea) {
  SplitMix64 g(1);
  EXPECT_EQ(spawn_traffic(cfg_for(ScenarioFamily::CommsImpairment, 50, 2.0), g).vehicles.size(), 100u);
  SplitMix64 h(2);
  EXPECT_EQ(spawn_traffic(cfg_for(ScenarioFamily::CommsImpairment, 250, 1.0), h).vehicles.size(), 250u);
}

TEST(Spawn, SameSeedSameWorld) {
  const auto c = cfg_for(ScenarioFamily::HotspotPadJitter, 150, 0.4);
  SplitMix64 a(17), b(17), d(18);
  const World wa = spawn_traffic(c, a), wb = spawn_traffic(c, b), wd = spawn_traffic(c, d);
  EXPECT_TRUE(same_world(wa, wb));
  EXPECT_FALSE(same_world(wa, wd));
}

TEST(Spawn, SpacingBandsAndContainment) {
  SplitMix64 g(3);
  const World w = spawn_traffic(cfg_for(ScenarioFamily::CommsImpairment, 250, 1.0), g);
  for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
    const auto& v = w.vehicles[i];
    EXPECT_EQ(v.position.z, kAltitudeBands[v.slot % 3]);
    EXPECT_TRUE(w.inside(v.position));
    EXPECT_TRUE(w.inside(v.destination));
    for (std::size_t j = 0; j < i; ++j) EXPECT_GE(distance(v.position, w.vehicles[j].position), kSpawnSeparationM);
  }
}

TEST(Spawn, TooSmallFootprintRaises) {
  SplitMix64 g(4);
  EXPECT_THROW(spawn_traffic(cfg_for(ScenarioFamily::CommsImpairment, 5000, 0.01), g), SpawnError);
}

TEST(Spawn, MixedEquipageFraction) {
  auto c = cfg_for(ScenarioFamily::MixedEquipage, 50, 2.0);
  c.params["non_v2v_fraction"] = 0.3;
  SplitMix64 g(5);
  const World w = spawn_traffic(c, g);
  int non = 0;
  for (const auto& v : w.vehicles) non += v.equipage == Equipage::NonV2V;
  EXPECT_EQ(non, 30);
}

TEST(Spawn, InvalidConfigRejected) {
  auto c = cfg_for(ScenarioFamily::CommsImpairment, 50, 2.0);
  c.params["bogus"] = 1.0;
  SplitMix64 g(6);
  EXPECT_THROW(spawn_traffic(c, g), ConfigError);
  c.params.clear();
  c.duration_s = 0;
  EXPECT_THROW(validate_config(c), ConfigError);
}

TEST(Kinematics, ZeroAccelConstantVelocity) {
  VehicleState v;
  v.velocity = {10, 0, 0};
  v = step_kinematics(v, {}, 1.0);
  EXPECT_EQ(v.position, (Vec3{10, 0, 0}));
  EXPECT_EQ(v.velocity, (Vec3{10, 0, 0}));
}

TEST(Kinematics, AccelClampedPerAxis) {
  VehicleState v;
  v = step_kinematics(v, {10, -10, 0.5}, 1.0);
  EXPECT_DOUBLE_EQ(v.velocity.x, 3.0);
  EXPECT_DOUBLE_EQ(v.velocity.y, -3.0);
  EXPECT_DOUBLE_EQ(v.velocity.z, 0.5);
  EXPECT_DOUBLE_EQ(v.position.x, 1.5);  // trapezoid
}

TEST(Kinematics, SpeedClamped) {
  VehicleState v;
  v.velocity = {14, 0, 0};
  for (int i = 0; i < 10; ++i) v = step_kinematics(v, {3, 3, 3}, 1.0);
  EXPECT_NEAR(v.velocity.norm(), kSpeedMax, 1e-9);
}

TEST(Kinematics, OpposingVehiclesCloseAt20) {
  VehicleState a, b;
  a.position = {0, 0, 30};
  a.velocity = {10, 0, 0};
  b.position = {500, 0, 30};
  b.velocity = {-10, 0, 0};
  const double r0 = distance(a.position, b.position);
  a = step_kinematics(a, {}, 0.1);
  b = step_kinematics(b, {}, 0.1);
  EXPECT_NEAR((distance(a.position, b.position) - r0) / 0.1, -20.0, 1e-9);
}

TEST(Sensing, DetectProbOneInRangeIsPresent) {
  World w;
  w.half_side_m = 500;
  w.vehicles.push_back(observer_at({0, 0, 30}, 1.0));
  VehicleState t;
  t.id = 2;
  t.position = {100, 0, 30};
  w.vehicles.push_back(t);
  VehicleState far;
  far.id = 3;
  far.position = {300, 0, 30};
  w.vehicles.push_back(far);
  SplitMix64 g(1);
  auto tr = sense(w.vehicles[0], w, GeometryModel{}, 0, g);
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(tr[0].target, 2u);
}

TEST(Sensing, DropoutSuppressesAllTracks) {
  World w;
  w.vehicles.push_back(observer_at({0, 0, 30}, 1.0));
  w.vehicles[0].sensing.dropout_until_ms = 3000;
  VehicleState t;
  t.id = 2;
  t.position = {10, 0, 30};
  w.vehicles.push_back(t);
  for (SimTimeMs now = 0; now < 3000; now += 100) {
    SplitMix64 g(static_cast<std::uint64_t>(now));
    EXPECT_TRUE(sense(w.vehicles[0], w, GeometryModel{}, now, g).empty());
  }
  SplitMix64 g(9);
  EXPECT_EQ(sense(w.vehicles[0], w, GeometryModel{}, 3000, g).size(), 1u);
}

TEST(Sensing, DetectionRateBinomial) {
  World w;
  w.vehicles.push_back(observer_at({0, 0, 30}, 0.7));
  VehicleState t;
  t.id = 2;
  t.position = {50, 0, 30};
  w.vehicles.push_back(t);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    SplitMix64 g(hash_values(123, i));
    hits += static_cast<int>(sense(w.vehicles[0], w, GeometryModel{}, 0, g).size());
  }
  EXPECT_NEAR(hits, 700, 29);
}

TEST(Sensing, OcclusionHidesTarget) {
  World w;
  w.vehicles.push_back(observer_at({0, 0, 30}, 1.0));
  VehicleState t;
  t.id = 2;
  t.position = {100, 0, 30};
  w.vehicles.push_back(t);
  GeometryModel geo;
  geo.obstructions.push_back({{40, -5, 0}, {60, 5, 100}});
  SplitMix64 g(1);
  EXPECT_TRUE(sense(w.vehicles[0], w, geo, 0, g).empty());
}

TEST(Disturbance, ForcedWaveOffSendsApproachToRejoin) {
  auto c = cfg_for(ScenarioFamily::HotspotPadJitter, 50, 0.4);
  c.params["waveoff_prob"] = 1.0;
  SplitMix64 g(1);
  World w = spawn_traffic(c, g);
  w.hotspots[0].waveoff_prob = 1.0;
  auto& v = w.vehicles[0];
  v.hotspot = 0;
  v.mode = VehicleMode::Approach;
  v.pad = 0;
  v.approach_start_ms = 5000;
  const auto ev = inject_disturbance(w, 5000, c, 7);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].kind, DisturbanceKind::WaveOff);
  EXPECT_EQ(w.vehicles[0].mode, VehicleMode::Rejoining);
  EXPECT_FALSE(w.vehicles[0].pad);
}

TEST(Disturbance, BurstSpawnsKIntrudersWithinWindow) {
  auto c = cfg_for(ScenarioFamily::MultiIntruderBurst, 50, 0.4);
  c.params["burst_k"] = 5;
  c.params["burst_window_s"] = 10;
  c.params["burst_interval_s"] = 60;
  SplitMix64 g(2);
  World w = spawn_traffic(c, g);
  int spawned = 0;
  for (SimTimeMs t = 60000; t < 70000; t += c.dt_ms)
    for (const auto& e : inject_disturbance(w, t, c, 3)) spawned += e.kind == DisturbanceKind::IntruderSpawned;
  EXPECT_EQ(spawned, 5);
  int intruders = 0;
  for (const auto& v : w.vehicles) intruders += v.equipage == Equipage::Intruder;
  EXPECT_EQ(intruders, 5);
}

TEST(Disturbance, SpoofSelectionIsExactAndDeterministic) {
  auto c = cfg_for(ScenarioFamily::MessageIntegrity, 50, 2.0);
  c.params["spoof_fraction"] = 0.1;
  SplitMix64 a(1), b(1);
  const World w1 = spawn_traffic(c, a), w2 = spawn_traffic(c, b);
  EXPECT_EQ(std::count(w1.spoof_slots.begin(), w1.spoof_slots.end(), true), 10);
  EXPECT_EQ(w1.spoof_slots, w2.spoof_slots);
}

TEST(Disturbance, GnssErrorRampsAndCaps) {
  auto c = cfg_for(ScenarioFamily::GnssCorruption, 50, 0.4);
  c.params["corrupt_fraction"] = 1.0;
  c.params["max_error_m"] = 20.0;
  c.params["ramp_rate_mps"] = 2.0;
  SplitMix64 g(3);
  World w = spawn_traffic(c, g);
  inject_disturbance(w, 200000, c, 1);
  for (const auto& v : w.vehicles) EXPECT_NEAR(v.true_nav_error.norm(), 20.0, 1e-9);
  World w0 = spawn_traffic(c, g);
  inject_disturbance(w0, 0, c, 1);
  for (const auto& v : w0.vehicles) EXPECT_EQ(v.true_nav_error.norm(), 0.0);
}

TEST(Disturbance, ContextFamilyEmitsEvents) {
  auto c = cfg_for(ScenarioFamily::ContextUpdate, 50, 0.4);
  c.params["event_interval_s"] = 20;
  SplitMix64 g(4);
  World w = spawn_traffic(c, g);
  int n = 0;
  for (SimTimeMs t = 0; t <= 60000; t += c.dt_ms) n += static_cast<int>(inject_disturbance(w, t, c, 5).size());
  EXPECT_EQ(n, 3);
  for (const auto& e : w.context_events) EXPECT_LT(e.active_from_ms, e.active_until_ms);
}

// World-level invariants checked after every step of a closed-loop run.
class WorldInvariants : public ::testing::TestWithParam<std::tuple<ScenarioFamily, Baseline>> {};

TEST_P(WorldInvariants, ConservationContainmentCapacity) {
  auto [family, baseline] = GetParam();
  ScenarioConfig c = cfg_for(family, 100, 0.2);
  c.baseline = baseline;
  c.duration_s = 120;
  c.seed = 99;
  if (has_hotspot(family)) c.params = severity_preset(family, "high");
  Simulation sim(c);
  std::size_t steps = 0;
  while (sim.step_once()) {
    ++steps;
    const World& w = sim.world();
    ASSERT_EQ(w.spawned, w.active_count() + w.completed) << "step " << steps;
    for (const auto& h : w.hotspots) {
      ASSERT_LE(h.servicing_count(), h.pad_count);
      std::size_t servicing = 0;
      for (const auto& v : w.vehicles) servicing += v.mode == VehicleMode::Servicing && v.hotspot == h.id;
      ASSERT_LE(servicing, h.pad_count);
    }
    for (const auto& v : w.vehicles) {
      ASSERT_LE(v.velocity.norm(), kSpeedMax + 1e-9);
      if (v.managed() && v.mode != VehicleMode::Backstop) {
        ASSERT_TRUE(w.inside(v.position, 100.0)) << "vehicle " << v.id << " left the footprint";
      }
    }
  }
  EXPECT_EQ(steps, 1200u);
}

INSTANTIATE_TEST_SUITE_P(Families, WorldInvariants,
                         ::testing::Combine(::testing::Values(ScenarioFamily::CommsImpairment,
                                                              ScenarioFamily::HotspotPadJitter,
                                                              ScenarioFamily::MultiIntruderBurst,
                                                              ScenarioFamily::MixedEquipage),
                                            ::testing::Values(Baseline::A, Baseline::B2)),
                         [](const auto& info) {
                           return to_string(std::get<0>(info.param)) + "_" + to_string(std::get<1>(info.param));
                         });

TEST(WorldReproducibility, TrajectoryIsPureFunctionOfConfigAndSeed) {
  ScenarioConfig c = cfg_for(ScenarioFamily::HotspotPadJitter, 100, 0.2);
  c.duration_s = 60;
  Simulation a(c), b(c);
  while (a.step_once()) {
    ASSERT_TRUE(b.step_once());
    ASSERT_TRUE(same_world(a.world(), b.world()));
  }
}
