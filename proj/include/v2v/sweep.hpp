#pragma once

// Sweep orchestration: expands a plan into cells, runs them concurrently,
// and emits the metrics table and paired baseline comparisons.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "v2v/config_io.hpp"
#include "v2v/metrics.hpp"
#include "v2v/simulation.hpp"

namespace v2v {

/// Identity of one run inside a sweep. `severity` is empty when the plan
/// does not apply a severity preset.
struct CellKey {
  ScenarioFamily family{};
  double density = 0.0;
  ImpairmentClass impairment{};
  ContextClass context{};
  std::string severity;
  Baseline baseline{};
  std::uint32_t seed_index = 0;

  auto tie() const {
    return std::tie(family, density, impairment, context, severity, baseline, seed_index);
  }
  bool operator<(const CellKey& o) const { return tie() < o.tie(); }
  bool operator==(const CellKey& o) const { return tie() == o.tie(); }

  /// Pairing key: everything except the baseline.
  std::string pairing_string() const {
    std::ostringstream os;
    os << to_string(family) << '|' << format_metric(density) << '|' << to_string(impairment) << '|'
       << to_string(context) << '|' << severity;
    return os.str();
  }
  std::string label() const {
    std::ostringstream os;
    os << to_string(family) << '_' << format_metric(density) << '_' << to_string(impairment) << '_'
       << to_string(context);
    if (!severity.empty()) os << '_' << severity;
    os << '_' << to_string(baseline) << "_s" << seed_index;
    return os.str();
  }
};

/// Per-run seed. Depends only on the master seed, the pairing key and the
/// seed index, so matched baselines share seeds and adding cells to a plan
/// never changes the seeds of existing cells.
inline std::uint64_t derive_seed(std::uint64_t master, const CellKey& k) {
  return hash_values(master, hash_string(k.pairing_string()), k.seed_index);
}

struct SweepPlan {
  ScenarioConfig base;
  std::vector<ScenarioFamily> families;
  std::vector<double> densities;
  std::vector<ImpairmentClass> impairments;
  std::vector<ContextClass> contexts;
  std::vector<std::string> severities;
  std::vector<Baseline> baselines;
  std::uint32_t seeds = 10;
  std::uint64_t master_seed = 1;
  std::vector<std::pair<Baseline, Baseline>> pairs;
  unsigned parallel = 1;
  std::optional<std::filesystem::path> out_dir;
  bool write_traces = false;
};

struct Cell {
  CellKey key;
  ScenarioConfig config;
};

/// Expands the plan. Empty axes fall back to the corresponding base value.
inline std::vector<Cell> expand(const SweepPlan& p) {
  auto or_base = [](auto v, auto b) {
    if (v.empty()) v.push_back(b);
    return v;
  };
  const auto fams = or_base(p.families, p.base.family);
  const auto dens = or_base(p.densities, p.base.density_veh_km2);
  const auto imps = or_base(p.impairments, p.base.impairment);
  const auto ctxs = or_base(p.contexts, p.base.context);
  const auto sevs = or_base(p.severities, std::string{});
  const auto bls = or_base(p.baselines, p.base.baseline);
  if (p.seeds == 0) throw ConfigError("sweep needs at least one seed");

  std::vector<Cell> cells;
  for (auto f : fams)
    for (double d : dens)
      for (auto n : imps)
        for (auto c : ctxs)
          for (const auto& sv : sevs)
            for (auto b : bls)
              for (std::uint32_t i = 0; i < p.seeds; ++i) {
                Cell cell;
                cell.key = {f, d, n, c, sv, b, i};
                cell.config = p.base;
                if (f != p.base.family && sv.empty()) cell.config.params.clear();
                cell.config.family = f;
                cell.config.density_veh_km2 = d;
                cell.config.impairment = n;
                cell.config.context = c;
                cell.config.baseline = b;
                if (!sv.empty()) {
                  auto extra = p.base.family == f ? p.base.params : ParamMap{};
                  cell.config.params = severity_preset(f, sv);
                  for (const auto& [k, v] : extra) cell.config.params[k] = v;
                }
                cell.config.seed = derive_seed(p.master_seed, cell.key);
                cells.push_back(std::move(cell));
              }
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.key < b.key; });
  for (std::size_t i = 1; i < cells.size(); ++i)
    if (cells[i].key == cells[i - 1].key) throw ConfigError("duplicate sweep cell " + cells[i].key.label());
  for (const auto& c : cells) validate_config(c.config);
  return cells;
}

struct SweepRow {
  CellKey key;
  std::uint64_t seed = 0;
  std::optional<RunMetrics> metrics;
  std::string error;
};

using CellRunner = std::function<RunMetrics(const ScenarioConfig&, const RunOptions&)>;

/// Runs every cell. A throwing cell yields a row with an error message;
/// other rows are unaffected. Output is sorted by cell key regardless of
/// scheduling.
inline std::vector<SweepRow> run_sweep(const SweepPlan& plan, const CellRunner& runner = {}) {
  const auto cells = expand(plan);
  std::vector<SweepRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  const CellRunner run = runner ? runner : CellRunner([](const ScenarioConfig& c, const RunOptions& o) {
    return run_scenario(c, o);
  });

  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepRow& r = rows[i];
      r.key = cells[i].key;
      r.seed = cells[i].config.seed;
      RunOptions opts;
      if (plan.write_traces && plan.out_dir) opts.trace_dir = *plan.out_dir / "trace" / r.key.label();
      try {
        r.metrics = run(cells[i].config, opts);
      } catch (const std::exception& e) {
        r.error = e.what();
        if (r.error.empty()) r.error = "unknown error";
      } catch (...) {
        r.error = "unknown error";
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(plan.parallel, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

// ---------------------------------------------------------------------------
// Paired comparisons
// ---------------------------------------------------------------------------

struct PairedComparison {
  ScenarioFamily family{};
  double density = 0.0;
  ImpairmentClass impairment{};
  ContextClass context{};
  std::string severity;
  Baseline a{}, b{};
  std::string metric;
  std::vector<std::uint32_t> seed_indices;
  std::vector<double> diffs;  // metric(a) - metric(b), one per matched seed
  std::optional<PairedCi> ci;
};

/// Matches rows by (family, density, class, context, severity, seed index)
/// and computes a paired interval per metric. Seeds where either run failed
/// or the metric is undefined are left out of that metric's pairing.
inline std::vector<PairedComparison> compare(const std::vector<SweepRow>& rows,
                                             const std::vector<std::pair<Baseline, Baseline>>& pairs) {
  std::map<std::tuple<std::string, Baseline, std::uint32_t>, const SweepRow*> index;
  std::map<std::string, const CellKey*> groups;
  for (const auto& r : rows) {
    if (!r.metrics) continue;
    index[{r.key.pairing_string(), r.key.baseline, r.key.seed_index}] = &r;
    groups.try_emplace(r.key.pairing_string(), &r.key);
  }
  auto present = [&](const std::string& g, Baseline b) {
    return std::any_of(index.begin(), index.end(), [&](const auto& e) {
      return std::get<0>(e.first) == g && std::get<1>(e.first) == b;
    });
  };
  std::vector<PairedComparison> out;
  for (const auto& [pa, pb] : pairs)
    for (const auto& [g, key] : groups) {
      if (!present(g, pa) || !present(g, pb)) continue;
      for (const auto& col : metric_columns()) {
        PairedComparison pc{key->family, key->density, key->impairment, key->context, key->severity, pa, pb,
                            col.name,    {},           {},              std::nullopt};
        for (const auto& [k, ra] : index) {
          if (std::get<0>(k) != g || std::get<1>(k) != pa) continue;
          auto it = index.find({g, pb, std::get<2>(k)});
          if (it == index.end()) continue;
          const double va = (*ra->metrics).*(col.field);
          const double vb = (*it->second->metrics).*(col.field);
          if (std::isnan(va) || std::isnan(vb)) continue;
          pc.seed_indices.push_back(std::get<2>(k));
          pc.diffs.push_back(va - vb);
        }
        if (pc.diffs.size() >= 2) pc.ci = paired_ci(pc.diffs);
        out.push_back(std::move(pc));
      }
    }
  return out;
}

inline json to_json(const PairedComparison& c) {
  json j{{"family", to_string(c.family)},
         {"density_veh_km2", c.density},
         {"impairment", to_string(c.impairment)},
         {"context", to_string(c.context)},
         {"severity", c.severity},
         {"baseline_a", to_string(c.a)},
         {"baseline_b", to_string(c.b)},
         {"metric", c.metric},
         {"seed_indices", c.seed_indices},
         {"diffs", c.diffs},
         {"n", c.diffs.size()}};
  if (c.ci) {
    j["mean_diff"] = c.ci->mean;
    j["lo95"] = c.ci->lo95;
    j["hi95"] = c.ci->hi95;
  } else {
    j["mean_diff"] = nullptr;
    j["lo95"] = nullptr;
    j["hi95"] = nullptr;
  }
  return j;
}

inline json comparisons_json(const std::vector<PairedComparison>& cs) {
  json arr = json::array();
  for (const auto& c : cs) arr.push_back(to_json(c));
  return arr;
}

// ---------------------------------------------------------------------------
// metrics.csv
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& key_columns() {
  static const std::vector<std::string> k{"family",   "density_veh_km2", "impairment", "context", "severity",
                                          "baseline", "seed_index",      "seed",       "status",  "error"};
  return k;
}

namespace detail {
inline std::string csv_safe(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
  return s;
}
}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  bool first = true;
  for (const auto& k : key_columns()) os << (first ? "" : ",") << k, first = false;
  for (const auto& c : metric_columns()) os << ',' << c.name;
  os << '\n';
  for (const auto& r : rows) {
    os << to_string(r.key.family) << ',' << format_metric(r.key.density) << ',' << to_string(r.key.impairment) << ','
       << to_string(r.key.context) << ',' << r.key.severity << ',' << to_string(r.key.baseline) << ','
       << r.key.seed_index << ',' << r.seed << ',' << (r.metrics ? "ok" : "error") << ','
       << detail::csv_safe(r.error);
    for (const auto& c : metric_columns()) {
      os << ',';
      if (r.metrics) os << format_metric((*r.metrics).*(c.field));
    }
    os << '\n';
  }
}

inline std::string metrics_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  write_metrics_csv(os, rows);
  return os.str();
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}
inline double parse_number(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw ConfigError("bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad number '" + s + "'");
  }
}
}  // namespace detail

/// Reads a metrics table written by write_metrics_csv. Columns are located by
/// header name.
inline std::vector<SweepRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics csv is empty");
  const auto header = detail::split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& k : key_columns())
    if (!col.contains(k)) throw ConfigError("metrics csv lacks column '" + k + "'");
  std::vector<SweepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != header.size()) throw ConfigError("metrics csv line " + std::to_string(lineno) + ": wrong field count");
    auto at = [&](const std::string& k) { return f[col.at(k)]; };
    SweepRow r;
    auto fam = parse_family(at("family"));
    auto imp = parse_impairment_class(at("impairment"));
    auto ctx = parse_context_class(at("context"));
    auto bl = parse_baseline(at("baseline"));
    if (!fam || !imp || !ctx || !bl) throw ConfigError("metrics csv line " + std::to_string(lineno) + ": bad key");
    r.key = {*fam, detail::parse_number(at("density_veh_km2")), *imp, *ctx, at("severity"), *bl,
             static_cast<std::uint32_t>(std::stoul(at("seed_index")))};
    r.seed = std::stoull(at("seed"));
    r.error = at("error");
    if (at("status") == "ok") {
      RunMetrics m;
      for (const auto& c : metric_columns()) {
        auto it = col.find(c.name);
        if (it != col.end()) m.*(c.field) = detail::parse_number(f[it->second]);
      }
      r.metrics = m;
    }
    rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.key < b.key; });
  return rows;
}

// ---------------------------------------------------------------------------
// Plan files
// ---------------------------------------------------------------------------

inline SweepPlan plan_from_json(const json& j) {
  using namespace detail;
  check_keys(j, {"base", "families", "densities", "impairments", "contexts", "severities", "baselines", "seeds",
                 "master_seed", "pairs", "parallel", "write_traces"},
             "plan");
  SweepPlan p;
  if (j.contains("base")) apply_scenario_json(p.base, j["base"], "plan.base");
  auto list = [&](const char* key, auto parse, auto& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_array()) throw ConfigError(std::string("plan.") + key + ": expected an array");
    for (const auto& v : j[key]) {
      auto x = parse(v);
      if (!x) throw ConfigError(std::string("plan.") + key + ": bad value " + v.dump());
      out.push_back(*x);
    }
  };
  list("families", [](const json& v) { return v.is_string() ? parse_family(v.get<std::string>()) : std::nullopt; }, p.families);
  list("impairments", [](const json& v) { return v.is_string() ? parse_impairment_class(v.get<std::string>()) : std::nullopt; },
       p.impairments);
  list("contexts", [](const json& v) { return v.is_string() ? parse_context_class(v.get<std::string>()) : std::nullopt; }, p.contexts);
  list("baselines", [](const json& v) { return v.is_string() ? parse_baseline(v.get<std::string>()) : std::nullopt; }, p.baselines);
  list("densities",
       [](const json& v) { return v.is_number() ? std::optional<double>(v.get<double>()) : std::nullopt; },
       p.densities);
  list("severities",
       [](const json& v) {
         return v.is_string() ? std::optional<std::string>(v.get<std::string>()) : std::nullopt;
       },
       p.severities);
  maybe(j, "seeds", p.seeds, "plan");
  maybe(j, "master_seed", p.master_seed, "plan");
  maybe(j, "parallel", p.parallel, "plan");
  maybe(j, "write_traces", p.write_traces, "plan");
  if (j.contains("pairs")) {
    for (const auto& pr : j["pairs"]) {
      if (!pr.is_array() || pr.size() != 2 || !pr[0].is_string() || !pr[1].is_string())
        throw ConfigError("plan.pairs: expected [\"A\", \"B2\"] style entries");
      auto a = parse_baseline(pr[0].get<std::string>());
      auto b = parse_baseline(pr[1].get<std::string>());
      if (!a || !b) throw ConfigError("plan.pairs: unknown baseline in " + pr.dump());
      p.pairs.emplace_back(*a, *b);
    }
  } else {
    // Default pairings: every other baseline against B2, when present.
    const auto& bls = p.baselines;
    if (std::find(bls.begin(), bls.end(), Baseline::B2) != bls.end())
      for (auto b : bls)
        if (b != Baseline::B2) p.pairs.emplace_back(b, Baseline::B2);
  }
  return p;
}

struct SweepOutputs {
  std::filesystem::path metrics_csv, comparisons_json;
};

inline SweepOutputs write_outputs(const std::filesystem::path& dir, const std::vector<SweepRow>& rows,
                                  const std::vector<PairedComparison>& cs) {
  std::filesystem::create_directories(dir);
  SweepOutputs o{dir / "metrics.csv", dir / "comparisons.json"};
  {
    std::ofstream f(o.metrics_csv);
    write_metrics_csv(f, rows);
  }
  {
    std::ofstream f(o.comparisons_json);
    f << comparisons_json(cs).dump(2) << '\n';
  }
  return o;
}

}  // namespace v2v
