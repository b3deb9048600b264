#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "v2v/config_io.hpp"
#include "v2v/sweep.hpp"

using namespace v2v;
namespace fs = std::filesystem;

namespace {

ScenarioConfig small_base() {
  ScenarioConfig c;
  c.footprint_area_km2 = 0.05;
  c.duration_s = 20.0;
  return c;
}

// Cheap deterministic stand-in for a simulation run.
RunMetrics fake_run(const ScenarioConfig& c, const RunOptions&) {
  RunMetrics m;
  SplitMix64 g(c.seed);
  m.prr = g.uniform();
  m.queue_peak = static_cast<double>(g() % 10);
  m.mean_hold_time_s = c.baseline == Baseline::A ? 5.0 + g.uniform() : g.uniform();
  return m;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("v2v_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(V2V_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_file(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(scenario_from_json(json{{"density", 50}}), ConfigError);
  EXPECT_THROW(scenario_from_json(json{{"geometry", {{"range", 5}}}}), ConfigError);
  EXPECT_THROW(scenario_from_json(json{{"family", "comms_impairment"}, {"params", {{"spoof_fraction", 0.1}}}}),
               ConfigError);
  EXPECT_THROW(plan_from_json(json{{"seed", 3}}), ConfigError);
}

TEST(Config, BadValuesAreRejected) {
  EXPECT_THROW(scenario_from_json(json{{"family", "nope"}}), ConfigError);
  EXPECT_THROW(scenario_from_json(json{{"impairment", "N9"}}), ConfigError);
  EXPECT_THROW(scenario_from_json(json{{"density_veh_km2", "fifty"}}), ConfigError);
  EXPECT_THROW(scenario_from_json(json{{"density_veh_km2", -1}}), ConfigError);
  EXPECT_THROW(scenario_from_json(json{{"dt_ms", 30}}), ConfigError);
  EXPECT_THROW(scenario_from_json(json{{"loss_override", 1.5}}), ConfigError);
  EXPECT_THROW(scenario_from_json(json{{"family", "context_update"}, {"severity", "extreme"}}), ConfigError);
}

TEST(Config, ScenarioRoundTrip) {
  ScenarioConfig c;
  c.family = ScenarioFamily::GnssCorruption;
  c.density_veh_km2 = 150;
  c.impairment = ImpairmentClass::N2;
  c.context = ContextClass::C1;
  c.baseline = Baseline::B2NoAuth;
  c.seed = 99;
  c.duration_s = 42;
  c.dt_ms = 50;
  c.params = {{"corrupt_fraction", 0.4}};
  c.loss_override = 0.25;
  c.geometry.obstructions.push_back({{0, 0, 0}, {10, 10, 50}});
  c.geometry.max_range_m = 400;
  const json j = to_json(c);
  const ScenarioConfig d = scenario_from_json(j);
  EXPECT_EQ(to_json(d), j);
  EXPECT_EQ(d.family, c.family);
  EXPECT_EQ(d.params, c.params);
  EXPECT_EQ(d.loss_override, c.loss_override);
}

TEST(Config, SeverityPresetThenParams) {
  const auto c = scenario_from_json(
      json{{"family", "gnss_corruption"}, {"severity", "high"}, {"params", {{"corrupt_fraction", 0.05}}}});
  EXPECT_DOUBLE_EQ(c.param("corrupt_fraction"), 0.05);
  EXPECT_DOUBLE_EQ(c.param("max_error_m"), 100.0);
}

TEST(Config, AnchorsAndCongestionRoundTrip) {
  const AnchorTable t = default_anchor_table();
  EXPECT_EQ(to_json(anchors_from_json(to_json(t))), to_json(t));
  const CongestionModel m = calibrate_congestion(t);
  EXPECT_EQ(to_json(congestion_from_json(to_json(m))), to_json(m));
}

TEST(Config, ShippedConfigsParse) {
  const fs::path dir = fs::path(V2V_SOURCE_DIR) / "configs";
  ASSERT_TRUE(fs::exists(dir));
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    const json j = read_json_file(e.path().string());
    const std::string name = e.path().filename().string();
    if (name.rfind("sweep", 0) == 0) EXPECT_NO_THROW(expand(plan_from_json(j))) << name;
    else if (name.rfind("anchors", 0) == 0) EXPECT_NO_THROW(calibrate_congestion(anchors_from_json(j))) << name;
    else EXPECT_NO_THROW(scenario_from_json(j)) << name;
    ++n;
  }
  EXPECT_GE(n, 8u);
}

// ---------------------------------------------------------------------------
// Sweeps

TEST(Sweep, Cardinality) {
  SweepPlan p;
  p.base = small_base();
  p.densities = {50, 100};
  p.impairments = {ImpairmentClass::N0, ImpairmentClass::N3};
  p.baselines = {Baseline::A, Baseline::B2};
  p.seeds = 3;
  const auto cells = expand(p);
  EXPECT_EQ(cells.size(), 24u);
  for (std::size_t i = 1; i < cells.size(); ++i) EXPECT_TRUE(cells[i - 1].key < cells[i].key);
  p.seeds = 0;
  EXPECT_THROW(expand(p), ConfigError);
  p.seeds = 1;
  p.densities = {50, 50};
  EXPECT_THROW(expand(p), ConfigError);
}

TEST(Sweep, MatchedBaselinesShareSeeds) {
  SweepPlan p;
  p.base = small_base();
  p.baselines = {Baseline::A, Baseline::B1, Baseline::B2};
  p.seeds = 4;
  std::map<std::uint32_t, std::set<std::uint64_t>> seeds;
  for (const auto& c : expand(p)) seeds[c.key.seed_index].insert(c.config.seed);
  ASSERT_EQ(seeds.size(), 4u);
  std::set<std::uint64_t> all;
  for (const auto& [i, s] : seeds) {
    EXPECT_EQ(s.size(), 1u);
    all.insert(*s.begin());
  }
  EXPECT_EQ(all.size(), 4u);
}

TEST(Sweep, AddingCellsKeepsExistingSeeds) {
  SweepPlan p;
  p.base = small_base();
  p.densities = {50};
  p.seeds = 3;
  std::map<std::string, std::uint64_t> before;
  for (const auto& c : expand(p)) before[c.key.label()] = c.config.seed;
  p.densities = {40, 50, 100};
  p.impairments = {ImpairmentClass::N0, ImpairmentClass::N1};
  p.seeds = 5;
  p.baselines = {Baseline::B1, Baseline::B2};
  std::size_t found = 0;
  for (const auto& c : expand(p)) {
    auto it = before.find(c.key.label());
    if (it == before.end()) continue;
    EXPECT_EQ(it->second, c.config.seed);
    ++found;
  }
  EXPECT_EQ(found, before.size());
  p.master_seed = 2;
  for (const auto& c : expand(p))
    if (before.contains(c.key.label())) { EXPECT_NE(before[c.key.label()], c.config.seed); }
}

TEST(Sweep, ParallelismDoesNotChangeOutput) {
  SweepPlan p;
  p.base = small_base();
  p.densities = {60, 120};
  p.baselines = {Baseline::B1, Baseline::B2};
  p.seeds = 2;
  p.parallel = 1;
  const std::string serial = metrics_csv(run_sweep(p));
  p.parallel = 8;
  EXPECT_EQ(metrics_csv(run_sweep(p)), serial);
}

TEST(Sweep, PairedComparisonsMatchSeeds) {
  SweepPlan p;
  p.base = small_base();
  p.densities = {50, 100};
  p.baselines = {Baseline::A, Baseline::B2};
  p.seeds = 3;
  const auto rows = run_sweep(p, fake_run);
  const auto cs = compare(rows, {{Baseline::A, Baseline::B2}});
  EXPECT_EQ(cs.size(), 2 * metric_columns().size());
  for (const auto& c : cs) {
    if (std::isnan(metric_value(RunMetrics{}, c.metric))) {
      EXPECT_TRUE(c.diffs.empty()) << c.metric;  // undefined in both runs
      continue;
    }
    EXPECT_EQ(c.diffs.size(), 3u) << c.metric;
    EXPECT_EQ(c.seed_indices, (std::vector<std::uint32_t>{0, 1, 2}));
    ASSERT_TRUE(c.ci);
    if (c.metric == "mean_hold_time_s") { EXPECT_GT(c.ci->lo95, 0.0); }
  }
  const json j = comparisons_json(cs);
  EXPECT_EQ(j.size(), cs.size());
}

TEST(Sweep, FailingCellIsIsolated) {
  SweepPlan p;
  p.base = small_base();
  p.densities = {50, 100, 150};
  p.seeds = 2;
  p.parallel = 3;
  const auto runner = [](const ScenarioConfig& c, const RunOptions& o) {
    if (c.density_veh_km2 == 100) throw std::runtime_error("boom, with \"quotes\"\nand newline");
    return fake_run(c, o);
  };
  const auto rows = run_sweep(p, runner);
  ASSERT_EQ(rows.size(), 6u);
  const auto clean = run_sweep(p, fake_run);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].key.density == 100) {
      EXPECT_FALSE(rows[i].metrics);
      EXPECT_FALSE(rows[i].error.empty());
    } else {
      EXPECT_EQ(metrics_csv({rows[i]}), metrics_csv({clean[i]}));
    }
  }
  // The error text must not break the CSV.
  std::istringstream in(metrics_csv(rows));
  const auto back = read_metrics_csv(in);
  ASSERT_EQ(back.size(), rows.size());
  EXPECT_FALSE(back[2].metrics);
}

TEST(Sweep, CsvRoundTrip) {
  SweepPlan p;
  p.base = small_base();
  p.baselines = {Baseline::B1, Baseline::B2};
  p.seeds = 2;
  const auto rows = run_sweep(p, fake_run);
  const std::string csv = metrics_csv(rows);
  std::istringstream in(csv);
  const auto back = read_metrics_csv(in);
  EXPECT_EQ(metrics_csv(back), csv);
}

TEST(Sweep, PlanFromJson) {
  const auto p = plan_from_json(json{{"base", {{"family", "hotspot_pad_jitter"}, {"duration_s", 30}}},
                                     {"densities", {50, 150}},
                                     {"severities", {"high"}},
                                     {"baselines", {"A", "B1", "B2"}},
                                     {"seeds", 2}});
  EXPECT_EQ(p.pairs.size(), 2u);
  const auto cells = expand(p);
  EXPECT_EQ(cells.size(), 12u);
  for (const auto& c : cells) EXPECT_DOUBLE_EQ(c.config.param("waveoff_prob"), severity_preset(ScenarioFamily::HotspotPadJitter, "high").at("waveoff_prob"));
  EXPECT_THROW(plan_from_json(json{{"pairs", {{"A", "Z"}}}}), ConfigError);
}

// ---------------------------------------------------------------------------
// Command line

TEST(Cli, ExitCodes) {
  const fs::path d = temp_dir("cli");
  write_file(d / "bad.json", R"({"family": "comms_impairment", "densty": 50})");
  write_file(d / "ok.json", R"({"footprint_area_km2": 0.05, "duration_s": 5})");
  write_file(d / "plan.json", R"({"base": {"footprint_area_km2": 0.05, "duration_s": 5}, "seeds": 1,
                                   "densities": [50, 5000], "baselines": ["B1", "B2"]})");
  write_file(d / "crowded.json", R"({"footprint_area_km2": 0.01, "density_veh_km2": 5000, "duration_s": 5})");

  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("run --bogus"), 2);
  EXPECT_EQ(run_cli("run --config " + (d / "bad.json").string() + " --out " + (d / "o1").string()), 2);
  EXPECT_EQ(run_cli("run --config " + (d / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("run --config " + (d / "ok.json").string() + " --class N7"), 2);
  EXPECT_EQ(run_cli("run --config " + (d / "ok.json").string() + " --class N2 --baseline B1 --out " + (d / "o2").string()), 0);
  EXPECT_TRUE(fs::exists(d / "o2" / "metrics.csv"));
  EXPECT_EQ(run_cli("run --config " + (d / "crowded.json").string() + " --out " + (d / "o3").string()), 3);
  EXPECT_EQ(run_cli("sweep --config " + (d / "plan.json").string() + " --out " + (d / "o4").string()), 3);
  std::ifstream csv(d / "o4" / "metrics.csv");
  std::string line;
  std::size_t lines = 0, failed = 0;
  while (std::getline(csv, line)) {
    if (lines++ == 0) continue;
    failed += line.find(",error,") != std::string::npos;
  }
  EXPECT_EQ(lines, 5u);
  EXPECT_EQ(failed, 2u);
  EXPECT_TRUE(fs::exists(d / "o4" / "comparisons.json"));
  EXPECT_EQ(run_cli("report --config " + (d / "o4" / "metrics.csv").string() + " --pair B1:B2 --out " + (d / "o5").string()), 0);
  EXPECT_EQ(run_cli("report --config " + (d / "o4" / "metrics.csv").string() + " --pair B1-B2"), 2);
  EXPECT_EQ(run_cli("calibrate --out " + (d / "o6").string()), 0);
  EXPECT_TRUE(fs::exists(d / "o6" / "congestion_model.json"));
  fs::remove_all(d);
}

TEST(Cli, SweepMatchesLibraryAndIsDeterministic) {
  const fs::path d = temp_dir("cli_det");
  write_file(d / "plan.json", R"({"base": {"footprint_area_km2": 0.05, "duration_s": 10}, "seeds": 2,
                                   "densities": [80], "baselines": ["B1", "B2"]})");
  ASSERT_EQ(run_cli("sweep --config " + (d / "plan.json").string() + " --out " + (d / "a").string()), 0);
  ASSERT_EQ(run_cli("sweep --parallel 4 --config " + (d / "plan.json").string() + " --out " + (d / "b").string()), 0);
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  const std::string a = slurp(d / "a" / "metrics.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(d / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(d / "a" / "comparisons.json"), slurp(d / "b" / "comparisons.json"));
  const auto plan = plan_from_json(read_json_file((d / "plan.json").string()));
  EXPECT_EQ(a, metrics_csv(run_sweep(plan)));
  fs::remove_all(d);
}
