#pragma once

// JSON (de)serialization for scenarios, calibration anchors, calibrated
// congestion models and sweep plans. Unknown keys are rejected so that typos
// in configuration files surface as errors instead of silent defaults.

#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "v2v/airspace_world.hpp"
#include "v2v/link_impairment.hpp"

namespace v2v {

using nlohmann::json;

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

inline Vec3 vec3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

inline json to_json(const CongestionModel& m);
inline CongestionModel congestion_from_json(const json& j);

inline json to_json(const ScenarioConfig& c) {
  json j;
  j["family"] = to_string(c.family);
  j["density_veh_km2"] = c.density_veh_km2;
  j["footprint_area_km2"] = c.footprint_area_km2;
  j["impairment"] = to_string(c.impairment);
  j["context"] = to_string(c.context);
  j["baseline"] = to_string(c.baseline);
  j["seed"] = c.seed;
  j["duration_s"] = c.duration_s;
  j["dt_ms"] = c.dt_ms;
  j["params"] = json::object();
  for (const auto& [k, v] : c.params) j["params"][k] = v;
  j["backstop_sep_m"] = c.backstop_sep_m;
  j["backstop_ttc_s"] = c.backstop_ttc_s;
  j["window_s"] = c.window_s;
  j["qualify_sep_m"] = c.qualify_sep_m;
  j["qualify_sustain_s"] = c.qualify_sustain_s;
  j["detect_range_m"] = c.detect_range_m;
  j["detect_prob"] = c.detect_prob;
  j["sensor_noise_m"] = c.sensor_noise_m;
  if (c.loss_override) j["loss_override"] = *c.loss_override;
  json g;
  g["nlos_extra_loss"] = c.geometry.nlos_extra_loss;
  g["nlos_extra_latency_ms"] = c.geometry.nlos_extra_latency_ms;
  g["max_range_m"] = c.geometry.max_range_m;
  g["obstructions"] = json::array();
  for (const auto& b : c.geometry.obstructions)
    g["obstructions"].push_back({{"min", {b.min.x, b.min.y, b.min.z}}, {"max", {b.max.x, b.max.y, b.max.z}}});
  j["geometry"] = g;
  if (c.congestion) j["congestion_model"] = to_json(*c.congestion);
  return j;
}

inline const std::set<std::string>& scenario_keys() {
  static const std::set<std::string> k{"family",         "density_veh_km2", "footprint_area_km2", "impairment",
                                       "context",        "baseline",        "seed",               "duration_s",
                                       "dt_ms",          "params",          "severity",           "backstop_sep_m",
                                       "backstop_ttc_s", "window_s",        "qualify_sep_m",      "qualify_sustain_s",
                                       "detect_range_m", "detect_prob",     "sensor_noise_m",     "loss_override",
                                       "geometry",       "congestion_model"};
  return k;
}

/// Applies the keys present in `j` on top of `c`. A "severity" preset is
/// applied before explicit "params".
inline void apply_scenario_json(ScenarioConfig& c, const json& j, const std::string& where = "scenario") {
  using namespace detail;
  check_keys(j, scenario_keys(), where);
  if (j.contains("family")) {
    auto f = parse_family(get<std::string>(j, "family", where));
    if (!f) throw ConfigError(where + ": unknown family '" + j["family"].get<std::string>() + "'");
    c.family = *f;
  }
  if (j.contains("impairment")) {
    auto v = parse_impairment_class(get<std::string>(j, "impairment", where));
    if (!v) throw ConfigError(where + ": impairment must be N0..N3");
    c.impairment = *v;
  }
  if (j.contains("context")) {
    auto v = parse_context_class(get<std::string>(j, "context", where));
    if (!v) throw ConfigError(where + ": context must be C0..C3");
    c.context = *v;
  }
  if (j.contains("baseline")) {
    auto v = parse_baseline(get<std::string>(j, "baseline", where));
    if (!v) throw ConfigError(where + ": baseline must be A, B1, B2 or B2_NOAUTH");
    c.baseline = *v;
  }
  maybe(j, "density_veh_km2", c.density_veh_km2, where);
  maybe(j, "footprint_area_km2", c.footprint_area_km2, where);
  maybe(j, "seed", c.seed, where);
  maybe(j, "duration_s", c.duration_s, where);
  maybe(j, "dt_ms", c.dt_ms, where);
  if (j.contains("severity")) c.params = severity_preset(c.family, get<std::string>(j, "severity", where));
  if (j.contains("params")) {
    const auto& p = j["params"];
    if (!p.is_object()) throw ConfigError(where + ".params: expected an object");
    for (const auto& [k, v] : p.items()) {
      if (!v.is_number()) throw ConfigError(where + ".params." + k + ": expected a number");
      c.params[k] = v.get<double>();
    }
  }
  maybe(j, "backstop_sep_m", c.backstop_sep_m, where);
  maybe(j, "backstop_ttc_s", c.backstop_ttc_s, where);
  maybe(j, "window_s", c.window_s, where);
  maybe(j, "qualify_sep_m", c.qualify_sep_m, where);
  maybe(j, "qualify_sustain_s", c.qualify_sustain_s, where);
  maybe(j, "detect_range_m", c.detect_range_m, where);
  maybe(j, "detect_prob", c.detect_prob, where);
  maybe(j, "sensor_noise_m", c.sensor_noise_m, where);
  if (j.contains("loss_override")) {
    if (j["loss_override"].is_null()) c.loss_override.reset();
    else c.loss_override = get<double>(j, "loss_override", where);
  }
  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    const std::string gw = where + ".geometry";
    check_keys(g, {"nlos_extra_loss", "nlos_extra_latency_ms", "max_range_m", "obstructions"}, gw);
    maybe(g, "nlos_extra_loss", c.geometry.nlos_extra_loss, gw);
    maybe(g, "nlos_extra_latency_ms", c.geometry.nlos_extra_latency_ms, gw);
    maybe(g, "max_range_m", c.geometry.max_range_m, gw);
    if (g.contains("obstructions")) {
      c.geometry.obstructions.clear();
      for (const auto& b : g["obstructions"]) {
        check_keys(b, {"min", "max"}, gw + ".obstructions");
        c.geometry.obstructions.push_back(
            {vec3_from(b.at("min"), gw + ".min"), vec3_from(b.at("max"), gw + ".max")});
      }
    }
  }
  if (j.contains("congestion_model")) {
    const auto& m = j["congestion_model"];
    if (m.is_null()) c.congestion.reset();
    else if (m.is_string()) c.congestion = std::make_shared<const CongestionModel>(congestion_from_json(read_json_file(m.get<std::string>())));
    else c.congestion = std::make_shared<const CongestionModel>(congestion_from_json(m));
  }
}

inline ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig c;
  apply_scenario_json(c, j);
  validate_config(c);
  return c;
}

// ---------------------------------------------------------------------------
// Anchors and calibrated congestion
// ---------------------------------------------------------------------------

inline json to_json(const AnchorTable& t) {
  json j = json::object();
  for (auto cls : kAllImpairmentClasses) {
    json arr = json::array();
    for (const auto& a : t[cls]) {
      json p{{"density", a.density}};
      if (a.prr) p["prr"] = *a.prr;
      if (a.p95_ms) p["p95_ms"] = *a.p95_ms;
      if (a.deadline_miss) p["deadline_miss"] = *a.deadline_miss;
      arr.push_back(p);
    }
    j[to_string(cls)] = arr;
  }
  return j;
}

inline AnchorTable anchors_from_json(const json& j) {
  using namespace detail;
  check_keys(j, {"N0", "N1", "N2", "N3"}, "anchors");
  AnchorTable t;
  for (const auto& [k, arr] : j.items()) {
    const auto cls = *parse_impairment_class(k);
    if (!arr.is_array()) throw ConfigError("anchors." + k + ": expected an array");
    for (const auto& p : arr) {
      const std::string w = "anchors." + k;
      check_keys(p, {"density", "prr", "p95_ms", "deadline_miss"}, w);
      AnchorPoint a;
      a.density = get<double>(p, "density", w);
      if (p.contains("prr")) a.prr = get<double>(p, "prr", w);
      if (p.contains("p95_ms")) a.p95_ms = get<double>(p, "p95_ms", w);
      if (p.contains("deadline_miss")) a.deadline_miss = get<double>(p, "deadline_miss", w);
      t[cls].push_back(a);
    }
  }
  return t;
}

inline json to_json(const CongestionModel& m) {
  json j = json::object();
  for (auto cls : kAllImpairmentClasses) {
    json arr = json::array();
    for (const auto& p : m.points(cls))
      arr.push_back({{"density", p.density},
                     {"extra_loss", p.extra_loss},
                     {"queue_delay_ms", p.queue_delay_ms},
                     {"jitter_scale", p.jitter_scale}});
    j[to_string(cls)] = arr;
  }
  return j;
}

inline CongestionModel congestion_from_json(const json& j) {
  using namespace detail;
  check_keys(j, {"N0", "N1", "N2", "N3"}, "congestion");
  CongestionModel m;
  for (const auto& [k, arr] : j.items()) {
    std::vector<CongestionPoint> pts;
    const std::string w = "congestion." + k;
    for (const auto& p : arr) {
      check_keys(p, {"density", "extra_loss", "queue_delay_ms", "jitter_scale"}, w);
      CongestionPoint c;
      c.density = get<double>(p, "density", w);
      c.extra_loss = get<double>(p, "extra_loss", w);
      c.queue_delay_ms = get<double>(p, "queue_delay_ms", w);
      maybe(p, "jitter_scale", c.jitter_scale, w);
      pts.push_back(c);
    }
    m.set_points(*parse_impairment_class(k), std::move(pts));
  }
  return m;
}

}  // namespace v2v
