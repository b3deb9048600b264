#pragma once

// Run-level metrics, the stable CSV schema, window qualification and paired
// confidence intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace v2v {

class MetricUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline double prr(std::uint64_t received, std::uint64_t expected) {
  if (received > expected) throw std::invalid_argument("prr: received exceeds expected");
  return expected == 0 ? 1.0 : static_cast<double>(received) / static_cast<double>(expected);
}

/// Nearest-rank percentile: the value at 1-based rank ceil(p/100 * n).
inline double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) throw MetricUndefined("percentile of an empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p outside (0, 100]");
  const auto n = samples.size();
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(rank - 1), samples.end());
  return samples[rank - 1];
}

/// Fixed-width histogram for large latency samples; percentiles are
/// reported at bin centers.
class LatencyHistogram {
 public:
  explicit LatencyHistogram(double bin_ms = 0.05, double max_ms = 3000.0)
      : bin_(bin_ms), counts_(static_cast<std::size_t>(std::ceil(max_ms / bin_ms)) + 1, 0) {}

  void add(double v) {
    auto i = static_cast<std::size_t>(std::max(0.0, v) / bin_);
    if (i >= counts_.size()) i = counts_.size() - 1;
    ++counts_[i];
    ++n_;
  }
  std::uint64_t count() const { return n_; }

  double percentile(double p) const {
    if (n_ == 0) throw MetricUndefined("percentile of an empty histogram");
    if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p outside (0, 100]");
    auto rank = static_cast<std::uint64_t>(std::ceil(p / 100.0 * static_cast<double>(n_) - 1e-9));
    rank = std::clamp<std::uint64_t>(rank, 1, n_);
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      acc += counts_[i];
      if (acc >= rank) return (static_cast<double>(i) + 0.5) * bin_;
    }
    return static_cast<double>(counts_.size()) * bin_;
  }

  void merge(const LatencyHistogram& o) {
    if (o.bin_ != bin_ || o.counts_.size() != counts_.size()) throw std::invalid_argument("histogram shape mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    n_ += o.n_;
  }

 private:
  double bin_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t n_ = 0;
};

struct PairedCi {
  double mean = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  std::size_t n = 0;
};

/// Student-t interval on paired differences.
inline PairedCi paired_ci(const std::vector<double>& diffs) {
  const std::size_t n = diffs.size();
  if (n < 2) throw MetricUndefined("paired_ci needs at least two differences");
  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  const double h = t * sd / std::sqrt(static_cast<double>(n));
  return {mean, mean - h, mean + h, n};
}

// ---------------------------------------------------------------------------
// Window qualification
// ---------------------------------------------------------------------------

struct Interval {
  double start_s = 0.0;
  double end_s = 0.0;
  double length() const { return end_s - start_s; }
};

struct SafetyTrace {
  double duration_s = 0.0;
  std::vector<Interval> separation_violations;  // true separation below the qualification threshold
  std::vector<Interval> conflicts;              // protected-radius conflicts
  std::vector<Interval> backstops;              // backstop episodes
  std::vector<Interval> deadlocks;
  std::vector<double> completions_s;
};

struct QualifyCriteria {
  double window_s = 60.0;
  double sustain_s = 1.0;               // separation violations at least this long disqualify
  double conflict_persistence_s = 10.0; // conflicts persisting longer disqualify
  double backstop_recovery_s = 30.0;    // backstops not recovered within this disqualify
};

struct QualifyResult {
  std::vector<bool> qualified;
  double qualified_fraction = 1.0;
  double throughput_per_hr = 0.0;
  double safety_qualified_throughput_per_hr = 0.0;
};

/// Windows [k*w, (k+1)*w) are disqualified when they overlap a sustained
/// separation violation, the persisting tail of a conflict, an unrecovered
/// backstop, or a deadlock.
inline QualifyResult qualify_windows(const SafetyTrace& trace, const QualifyCriteria& c) {
  if (!(c.window_s > 0.0)) throw std::invalid_argument("qualify_windows: window must be positive");
  QualifyResult r;
  const auto nw = static_cast<std::size_t>(std::max(1.0, std::ceil(trace.duration_s / c.window_s - 1e-9)));
  r.qualified.assign(nw, true);
  auto mark = [&](double a, double b) {
    if (b <= a) return;
    const auto i0 = static_cast<std::size_t>(std::max(0.0, std::floor(a / c.window_s)));
    auto i1 = static_cast<std::size_t>(std::max(0.0, std::ceil(b / c.window_s - 1e-12)));
    i1 = std::min(i1, nw);
    for (std::size_t i = i0; i < i1; ++i) r.qualified[i] = false;
  };
  for (const auto& v : trace.separation_violations)
    if (v.length() >= c.sustain_s - 1e-9) mark(v.start_s, v.end_s);
  for (const auto& v : trace.conflicts)
    if (v.length() > c.conflict_persistence_s) mark(v.start_s + c.conflict_persistence_s, v.end_s);
  for (const auto& v : trace.backstops)
    if (v.length() > c.backstop_recovery_s) mark(v.start_s + c.backstop_recovery_s, v.end_s);
  for (const auto& v : trace.deadlocks) mark(v.start_s, std::max(v.end_s, v.start_s + 1e-6));

  const double hours = trace.duration_s / 3600.0;
  std::size_t q = 0;
  for (bool b : r.qualified) q += b ? 1 : 0;
  r.qualified_fraction = static_cast<double>(q) / static_cast<double>(nw);
  std::size_t qc = 0;
  for (double t : trace.completions_s) {
    const auto i = std::min(nw - 1, static_cast<std::size_t>(std::max(0.0, t / c.window_s)));
    if (r.qualified[i]) ++qc;
  }
  r.throughput_per_hr = hours > 0 ? static_cast<double>(trace.completions_s.size()) / hours : 0.0;
  r.safety_qualified_throughput_per_hr = hours > 0 ? static_cast<double>(qc) / hours : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Run metrics and CSV schema
// ---------------------------------------------------------------------------

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct RunMetrics {
  double prr = 1.0;
  double latency_p95_ms = kNaN;
  double deadline_miss_rate = 0.0;
  double mean_info_age_ms = kNaN;
  double invalid_rejections = 0;
  double bad_accepts = 0;
  double false_clearance_events = 0;
  double false_conflict_events = 0;
  double throughput_ops_per_hr = 0.0;
  double safety_qualified_throughput = 0.0;
  double qualified_fraction = 1.0;
  double mean_hold_time_s = 0.0;
  double replans = 0;
  double dss_queries = 0;
  double min_separation_m = kNaN;
  double conflict_events = 0;
  double conflict_steps = 0;
  double track_drops = 0;
  double mean_reacquisition_s = kNaN;
  double wave_offs = 0;
  double queue_peak = 0;
  double deadlocks = 0;
  double backstop_activations = 0;
  double backstop_duration_p95_s = kNaN;
  // Repo-defined extras.
  double injected_invalid = 0;
  double context_reaction_s = kNaN;
  double window_holds = 0;
  double oscillation_per_vmin = 0.0;
  double blast_radius = 0;
  double protocol_violations = 0;
  double transactions = 0;
  double context_violations = 0;
  double operations_completed = 0;
  double messages_expected = 0;
  double messages_received = 0;
  double messages_deadline_missed = 0;
  double stale_authority_refs = 0;

  bool operator==(const RunMetrics&) const = default;
};

struct MetricColumn {
  const char* name;
  double RunMetrics::*field;
};

/// Stable column order of the metrics CSV (after the key columns).
inline const std::vector<MetricColumn>& metric_columns() {
  static const std::vector<MetricColumn> cols{
      {"prr", &RunMetrics::prr},
      {"latency_p95_ms", &RunMetrics::latency_p95_ms},
      {"deadline_miss_rate", &RunMetrics::deadline_miss_rate},
      {"mean_info_age_ms", &RunMetrics::mean_info_age_ms},
      {"invalid_rejections", &RunMetrics::invalid_rejections},
      {"bad_accepts", &RunMetrics::bad_accepts},
      {"false_clearance_events", &RunMetrics::false_clearance_events},
      {"false_conflict_events", &RunMetrics::false_conflict_events},
      {"throughput_ops_per_hr", &RunMetrics::throughput_ops_per_hr},
      {"safety_qualified_throughput", &RunMetrics::safety_qualified_throughput},
      {"qualified_fraction", &RunMetrics::qualified_fraction},
      {"mean_hold_time_s", &RunMetrics::mean_hold_time_s},
      {"replans", &RunMetrics::replans},
      {"dss_queries", &RunMetrics::dss_queries},
      {"min_separation_m", &RunMetrics::min_separation_m},
      {"conflict_events", &RunMetrics::conflict_events},
      {"conflict_steps", &RunMetrics::conflict_steps},
      {"track_drops", &RunMetrics::track_drops},
      {"mean_reacquisition_s", &RunMetrics::mean_reacquisition_s},
      {"wave_offs", &RunMetrics::wave_offs},
      {"queue_peak", &RunMetrics::queue_peak},
      {"deadlocks", &RunMetrics::deadlocks},
      {"backstop_activations", &RunMetrics::backstop_activations},
      {"backstop_duration_p95_s", &RunMetrics::backstop_duration_p95_s},
      {"injected_invalid", &RunMetrics::injected_invalid},
      {"context_reaction_s", &RunMetrics::context_reaction_s},
      {"window_holds", &RunMetrics::window_holds},
      {"oscillation_per_vmin", &RunMetrics::oscillation_per_vmin},
      {"blast_radius", &RunMetrics::blast_radius},
      {"protocol_violations", &RunMetrics::protocol_violations},
      {"transactions", &RunMetrics::transactions},
      {"context_violations", &RunMetrics::context_violations},
      {"operations_completed", &RunMetrics::operations_completed},
      {"messages_expected", &RunMetrics::messages_expected},
      {"messages_received", &RunMetrics::messages_received},
      {"messages_deadline_missed", &RunMetrics::messages_deadline_missed},
      {"stale_authority_refs", &RunMetrics::stale_authority_refs},
  };
  return cols;
}

/// Columns describing the integrity/trust layer; these are expected to
/// differ between authenticated and unauthenticated runs.
inline const std::vector<std::string>& integrity_columns() {
  static const std::vector<std::string> c{"invalid_rejections", "bad_accepts", "injected_invalid"};
  return c;
}

inline const std::vector<std::string>& comm_columns() {
  static const std::vector<std::string> c{"prr", "latency_p95_ms", "deadline_miss_rate"};
  return c;
}

inline std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline double metric_value(const RunMetrics& m, const std::string& name) {
  for (const auto& c : metric_columns())
    if (name == c.name) return m.*(c.field);
  throw std::invalid_argument("unknown metric column '" + name + "'");
}

}  // namespace v2v
