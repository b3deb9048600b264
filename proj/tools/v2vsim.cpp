#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "v2v/config_io.hpp"
#include "v2v/sweep.hpp"

namespace fs = std::filesystem;
using namespace v2v;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCellFailures = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  unsigned parallel = 1;
  std::optional<std::string> family, cls, baseline;
  std::optional<double> density;
  bool traces = false;
};

void apply_class(const std::string& s, std::optional<ImpairmentClass>& imp, std::optional<ContextClass>& ctx) {
  if (auto n = parse_impairment_class(s)) imp = n;
  else if (auto c = parse_context_class(s)) ctx = c;
  else throw ConfigError("--class must be N0..N3 or C0..C3, got '" + s + "'");
}

ScenarioFamily need_family(const std::string& s) {
  auto f = parse_family(s);
  if (!f) throw ConfigError("unknown family '" + s + "'");
  return *f;
}

Baseline need_baseline(const std::string& s) {
  auto b = parse_baseline(s);
  if (!b) throw ConfigError("unknown baseline '" + s + "'");
  return *b;
}

int cmd_run(const Common& o) {
  ScenarioConfig c;
  if (!o.config.empty()) apply_scenario_json(c, read_json_file(o.config));
  if (o.family) {
    const auto f = need_family(*o.family);
    if (f != c.family) c.params.clear();
    c.family = f;
  }
  if (o.density) c.density_veh_km2 = *o.density;
  if (o.cls) {
    std::optional<ImpairmentClass> imp;
    std::optional<ContextClass> ctx;
    apply_class(*o.cls, imp, ctx);
    if (imp) c.impairment = *imp;
    if (ctx) c.context = *ctx;
  }
  if (o.baseline) c.baseline = need_baseline(*o.baseline);
  if (o.seed) c.seed = *o.seed;
  validate_config(c);

  RunOptions opts;
  if (o.traces) opts.trace_dir = fs::path(o.out) / "trace";
  SweepRow row;
  row.key = {c.family, c.density_veh_km2, c.impairment, c.context, "", c.baseline, 0};
  row.seed = c.seed;
  try {
    row.metrics = run_scenario(c, opts);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  const auto paths = write_outputs(o.out, {row}, {});
  std::cout << "wrote " << paths.metrics_csv.string() << '\n';
  if (!row.metrics) {
    std::cerr << "run failed: " << row.error << '\n';
    return kExitCellFailures;
  }
  for (const auto& col : metric_columns())
    std::cout << "  " << col.name << " = " << format_metric((*row.metrics).*(col.field)) << '\n';
  return kExitOk;
}

int cmd_sweep(const Common& o) {
  if (o.config.empty()) throw ConfigError("sweep requires --config <plan.json>");
  SweepPlan p = plan_from_json(read_json_file(o.config));
  if (o.seed) p.master_seed = *o.seed;
  if (o.parallel > 0) p.parallel = o.parallel;
  if (o.family) p.families = {need_family(*o.family)};
  if (o.density) p.densities = {*o.density};
  if (o.cls) {
    std::optional<ImpairmentClass> imp;
    std::optional<ContextClass> ctx;
    apply_class(*o.cls, imp, ctx);
    if (imp) p.impairments = {*imp};
    if (ctx) p.contexts = {*ctx};
  }
  if (o.baseline) p.baselines = {need_baseline(*o.baseline)};
  p.out_dir = o.out;
  p.write_traces = p.write_traces || o.traces;

  const auto cells = expand(p);
  std::cerr << "sweep: " << cells.size() << " runs on " << p.parallel << " thread(s)\n";
  const auto rows = run_sweep(p);
  const auto cs = compare(rows, p.pairs);
  const auto paths = write_outputs(o.out, rows, cs);
  std::size_t failed = 0;
  for (const auto& r : rows)
    if (!r.metrics) {
      ++failed;
      std::cerr << "cell " << r.key.label() << " failed: " << r.error << '\n';
    }
  std::cout << "wrote " << paths.metrics_csv.string() << " (" << rows.size() << " rows) and "
            << paths.comparisons_json.string() << " (" << cs.size() << " comparisons)\n";
  return failed ? kExitCellFailures : kExitOk;
}

int cmd_calibrate(const Common& o, bool verify, unsigned verify_seeds, double verify_duration) {
  const AnchorTable anchors = o.config.empty() ? default_anchor_table() : anchors_from_json(read_json_file(o.config));
  const CongestionModel model = calibrate_congestion(anchors);
  fs::create_directories(o.out);
  {
    std::ofstream f(fs::path(o.out) / "congestion_model.json");
    f << to_json(model).dump(2) << '\n';
  }
  std::cout << "wrote " << (fs::path(o.out) / "congestion_model.json").string() << '\n';
  if (!verify) return kExitOk;

  // Measure the calibrated channel at every anchor with the comms family.
  SweepPlan p;
  p.base.family = ScenarioFamily::CommsImpairment;
  p.base.footprint_area_km2 = 0.1;
  p.base.duration_s = verify_duration;
  p.base.baseline = Baseline::B2;
  p.base.congestion = std::make_shared<const CongestionModel>(model);
  p.seeds = verify_seeds;
  p.master_seed = o.seed.value_or(1);
  p.parallel = o.parallel;
  std::cout << "class,density,target_prr,measured_prr,target_p95_ms,measured_p95_ms,target_miss,measured_miss\n";
  int failures = 0;
  for (auto cls : kAllImpairmentClasses)
    for (const auto& a : anchors[cls]) {
      p.impairments = {cls};
      p.densities = {a.density};
      const auto rows = run_sweep(p);
      double prr = 0, p95 = 0, miss = 0;
      std::size_t n = 0;
      for (const auto& r : rows) {
        if (!r.metrics) {
          ++failures;
          continue;
        }
        prr += r.metrics->prr;
        p95 += r.metrics->latency_p95_ms;
        miss += r.metrics->deadline_miss_rate;
        ++n;
      }
      if (n == 0) continue;
      auto opt = [](const std::optional<double>& v) { return v ? format_metric(*v) : std::string("-"); };
      std::cout << to_string(cls) << ',' << a.density << ',' << opt(a.prr) << ',' << format_metric(prr / n) << ','
                << opt(a.p95_ms) << ',' << format_metric(p95 / n) << ',' << opt(a.deadline_miss) << ','
                << format_metric(miss / n) << '\n';
    }
  return failures ? kExitCellFailures : kExitOk;
}

int cmd_report(const Common& o, const std::vector<std::string>& pair_args, const std::vector<std::string>& metrics) {
  if (o.config.empty()) throw ConfigError("report requires --config <metrics.csv>");
  std::ifstream in(o.config);
  if (!in) throw ConfigError("cannot open '" + o.config + "'");
  const auto rows = read_metrics_csv(in);
  std::vector<std::pair<Baseline, Baseline>> pairs;
  for (const auto& s : pair_args) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("--pair expects A:B, got '" + s + "'");
    pairs.emplace_back(need_baseline(s.substr(0, colon)), need_baseline(s.substr(colon + 1)));
  }
  if (pairs.empty()) {
    std::set<Baseline> present;
    for (const auto& r : rows) present.insert(r.key.baseline);
    if (present.contains(Baseline::B2))
      for (auto b : present)
        if (b != Baseline::B2) pairs.emplace_back(b, Baseline::B2);
  }
  const auto cs = compare(rows, pairs);
  fs::create_directories(o.out);
  {
    std::ofstream f(fs::path(o.out) / "comparisons.json");
    f << comparisons_json(cs).dump(2) << '\n';
  }
  std::cout << "family,density,class,context,severity,a,b,metric,n,mean_diff,lo95,hi95\n";
  for (const auto& c : cs) {
    if (!metrics.empty() && std::find(metrics.begin(), metrics.end(), c.metric) == metrics.end()) continue;
    std::cout << to_string(c.family) << ',' << format_metric(c.density) << ',' << to_string(c.impairment) << ','
              << to_string(c.context) << ',' << c.severity << ',' << to_string(c.a) << ',' << to_string(c.b) << ','
              << c.metric << ',' << c.diffs.size() << ',';
    if (c.ci) std::cout << format_metric(c.ci->mean) << ',' << format_metric(c.ci->lo95) << ',' << format_metric(c.ci->hi95);
    else std::cout << ",,";
    std::cout << '\n';
  }
  return kExitOk;
}

void add_common(CLI::App* sub, Common& o, bool filters) {
  sub->add_option("--config", o.config, "Input file");
  sub->add_option("--seed", o.seed, "Seed (run) or master seed (sweep)");
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  sub->add_option("--parallel", o.parallel, "Concurrent runs")->capture_default_str();
  if (!filters) return;
  sub->add_option("--family", o.family, "Scenario family");
  sub->add_option("--density", o.density, "Density in vehicles/km^2");
  sub->add_option("--class", o.cls, "Impairment class N0..N3 or context class C0..C3");
  sub->add_option("--baseline", o.baseline, "A, B1, B2 or B2_NOAUTH");
  sub->add_flag("--trace", o.traces, "Write trace/*.csv");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intent-first V2V airspace simulator"};
  app.require_subcommand(1);
  Common run_o, sweep_o, cal_o, rep_o;
  auto* run = app.add_subcommand("run", "Run a single scenario");
  add_common(run, run_o, true);
  auto* sweep = app.add_subcommand("sweep", "Run a sweep plan");
  add_common(sweep, sweep_o, true);
  auto* cal = app.add_subcommand("calibrate", "Fit the congestion model to anchors");
  add_common(cal, cal_o, false);
  bool verify = false;
  unsigned verify_seeds = 3;
  double verify_duration = 120.0;
  cal->add_flag("--verify", verify, "Measure the fitted channel at each anchor");
  cal->add_option("--verify-seeds", verify_seeds)->capture_default_str();
  cal->add_option("--verify-duration", verify_duration)->capture_default_str();
  auto* rep = app.add_subcommand("report", "Paired comparisons from a metrics.csv");
  add_common(rep, rep_o, false);
  std::vector<std::string> pair_args, metric_filter;
  rep->add_option("--pair", pair_args, "Baseline pair A:B (repeatable)");
  rep->add_option("--metric", metric_filter, "Only print these metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_o);
    if (*sweep) return cmd_sweep(sweep_o);
    if (*cal) return cmd_calibrate(cal_o, verify, verify_seeds, verify_duration);
    if (*rep) return cmd_report(rep_o, pair_args, metric_filter);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
