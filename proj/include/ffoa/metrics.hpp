#pragma once

// Selective-prediction and latency metrics: conditional accuracy,
// accuracy-rejection curves, AUARC, latency drag, conditional latency
// profiles, savings tables, and per-model baseline statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffoa/calibrate.hpp"
#include "ffoa/cascade_sim.hpp"
#include "ffoa/error.hpp"
#include "ffoa/format.hpp"
#include "ffoa/rng.hpp"
#include "ffoa/trace_store.hpp"

namespace ffoa {

namespace detail {

// Mean computed around the first element; returns that element exactly when
// every value is equal.
template <class Range, class Proj>
double shifted_mean(const Range& items, Proj proj) {
  auto first = std::ranges::begin(items);
  auto last = std::ranges::end(items);
  if (first == last) throw Error(ErrorKind::empty_input, "mean of an empty set");
  const double origin = static_cast<double>(proj(*first));
  double sum = 0.0;
  std::size_t n = 0;
  for (auto it = first; it != last; ++it, ++n) sum += static_cast<double>(proj(*it)) - origin;
  return origin + sum / static_cast<double>(n);
}

}  // namespace detail

struct CascadeSystem {
  enum class Kind { ask, ffoa };
  Kind kind = Kind::ask;
  double utilization = 0.0;

  static CascadeSystem ask() { return {Kind::ask, 0.0}; }
  static CascadeSystem ffoa(double u) { return {Kind::ffoa, u}; }

  std::string name() const {
    return kind == Kind::ask ? std::string("ask") : "ffoa(u=" + format_double(utilization) + ")";
  }
};

struct CurvePoint {
  double rejection_rate = 0.0;
  double realized_rejection = 0.0;
  double conditional_accuracy = 0.0;
  std::size_t n_answered = 0;
  double mean_latency_seconds = 0.0;
  double mean_cost_usd = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

struct AuarcSummary {
  std::vector<double> grid;
  double auarc = 0.0;
  double mean_latency = 0.0;
  double mean_cost = 0.0;
};

inline double conditional_accuracy(std::span<const Outcome> outcomes) {
  std::size_t answered = 0;
  std::size_t correct = 0;
  for (const auto& o : outcomes) {
    if (!o.counted_correct) continue;
    ++answered;
    if (*o.counted_correct) ++correct;
  }
  if (answered == 0) {
    throw Error(ErrorKind::empty_input, "conditional accuracy undefined: no answered queries",
                "outcomes");
  }
  return static_cast<double>(correct) / static_cast<double>(answered);
}

// start, start + step, ... up to stop inclusive (within rounding).
inline std::vector<double> make_grid(double start, double stop, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw Error(ErrorKind::out_of_range, "grid step must be positive", "grid_step");
  }
  if (!(start >= 0.0 && stop < 1.0 && start <= stop)) {
    throw Error(ErrorKind::out_of_range, "grid must satisfy 0 <= start <= stop < 1", "grid_start");
  }
  const auto count =
      static_cast<std::size_t>(std::floor(detail::snap_integral((stop - start) / step))) + 1;
  std::vector<double> grid;
  grid.reserve(count);
  for (std::size_t i = 0; i < count; ++i) grid.push_back(start + static_cast<double>(i) * step);
  return grid;
}

// 41 points 0.000, 0.005, ..., 0.200.
inline std::vector<double> default_grid() { return make_grid(0.0, 0.2, 0.005); }

inline std::vector<Outcome> run_system(const Trace& trace, const CascadeSystem& system, double r) {
  if (system.kind == CascadeSystem::Kind::ask) return simulate_ask(trace, calibrate_ask(trace, r));
  return simulate_ffoa(trace, calibrate_ffoa(trace, system.utilization, r));
}

inline CurvePoint summarize_point(double r, std::span<const Outcome> outcomes) {
  CurvePoint p;
  p.rejection_rate = r;
  p.realized_rejection = realized_rates(outcomes).rejection_rate;
  p.conditional_accuracy = conditional_accuracy(outcomes);
  p.n_answered = static_cast<std::size_t>(
      std::ranges::count_if(outcomes, [](const Outcome& o) { return o.counted_correct.has_value(); }));
  p.mean_latency_seconds = detail::shifted_mean(outcomes, [](const Outcome& o) { return o.latency_seconds; });
  p.mean_cost_usd = detail::shifted_mean(outcomes, [](const Outcome& o) { return o.cost_usd; });
  return p;
}

inline std::vector<CurvePoint> accuracy_rejection_curve(const Trace& trace, const CascadeSystem& system,
                                                        std::span<const double> grid) {
  require_nonempty(trace);
  std::vector<CurvePoint> curve;
  curve.reserve(grid.size());
  for (double r : grid) {
    if (!(r >= 0.0 && r < 1.0)) {
      throw Error(ErrorKind::out_of_range, "grid values must lie in [0, 1)", "grid");
    }
    auto outcomes = run_system(trace, system, r);
    curve.push_back(summarize_point(r, outcomes));
  }
  return curve;
}

inline AuarcSummary auarc(std::span<const CurvePoint> curve) {
  if (curve.empty()) throw Error(ErrorKind::empty_input, "AUARC of an empty curve", "curve");
  AuarcSummary s;
  double acc = 0.0, lat = 0.0, cost = 0.0;
  for (const auto& p : curve) {
    s.grid.push_back(p.rejection_rate);
    acc += p.conditional_accuracy;
    lat += p.mean_latency_seconds;
    cost += p.mean_cost_usd;
  }
  const double n = static_cast<double>(curve.size());
  s.auarc = acc / n;
  s.mean_latency = lat / n;
  s.mean_cost = cost / n;
  return s;
}

// Latency predicted when passing a fraction 1 - u of queries at random:
// E[L_nr] + (1 - u) E[L_r].
inline double ideal_latency(double u, double mean_l_nr, double mean_l_r) {
  detail::require_unit(u, "u");
  if (!(mean_l_nr >= 0.0) || !(mean_l_r >= 0.0)) {
    throw Error(ErrorKind::out_of_range, "latencies must be >= 0", "latency");
  }
  return mean_l_nr + (1.0 - u) * mean_l_r;
}

struct LatencyDrag {
  // 1 - realized pass rate; the ideal latency is evaluated at this value.
  double utilization = 0.0;
  double actual = 0.0;
  double ideal = 0.0;
  double drag = 0.0;
  double mean_l_nr = 0.0;
  double mean_l_r = 0.0;
  double passed_mean_l_r = 0.0;
  std::size_t n_passed = 0;
};

namespace detail {

// Drag from centered sums: (1/n) sum_passed (L - x0) - pass_rate * (1/n) sum_all (L - x0).
// It is exactly zero when everything passes or when every L is equal.
inline double drag_from_mask(std::span<const double> l_r, const std::vector<bool>& passed,
                             std::size_t n_passed) {
  const double n = static_cast<double>(l_r.size());
  const double origin = l_r.front();
  double pass_sum = 0.0, all_sum = 0.0;
  for (std::size_t i = 0; i < l_r.size(); ++i) {
    const double d = l_r[i] - origin;
    all_sum += d;
    if (passed[i]) pass_sum += d;
  }
  const double pass_rate = static_cast<double>(n_passed) / n;
  return pass_sum / n - pass_rate * (all_sum / n);
}

}  // namespace detail

inline LatencyDrag latency_drag(const Trace& trace, const PolicyConfig& config) {
  require_nonempty(trace);
  const auto outcomes = simulate_ffoa(trace, config);
  const RouteCounts counts = count_routes(outcomes);

  std::vector<double> l_r;
  std::vector<bool> passed;
  l_r.reserve(trace.size());
  passed.reserve(trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    l_r.push_back(trace.records[i].r.latency_seconds);
    const Route route = outcomes[i].route;
    passed.push_back(route == Route::r_answer || route == Route::human_via_reasoning);
  }

  LatencyDrag d;
  d.n_passed = counts.passed();
  d.utilization = 1.0 - static_cast<double>(d.n_passed) / static_cast<double>(trace.size());
  d.mean_l_nr = detail::shifted_mean(trace.records, [](const JoinedRecord& r) { return r.nr.latency_seconds; });
  d.mean_l_r = detail::shifted_mean(l_r, [](double v) { return v; });
  d.actual = detail::shifted_mean(outcomes, [](const Outcome& o) { return o.latency_seconds; });
  d.ideal = ideal_latency(d.utilization, d.mean_l_nr, d.mean_l_r);
  d.drag = detail::drag_from_mask(l_r, passed, d.n_passed);
  if (d.n_passed > 0) {
    double s = 0.0;
    for (std::size_t i = 0; i < l_r.size(); ++i) {
      if (passed[i]) s += l_r[i];
    }
    d.passed_mean_l_r = s / static_cast<double>(d.n_passed);
  }
  return d;
}

struct DragPermutationTest {
  double observed = 0.0;
  double null_mean = 0.0;
  double null_sd = 0.0;
  // observed / null_sd; 0 when the null distribution is degenerate.
  double z = 0.0;
  double p_value = 1.0;
  std::size_t permutations = 0;
  std::uint64_t seed = 0;
};

// Null distribution: reasoning latencies shuffled across queries while the
// routing (which depends only on p_true and tokens) stays fixed.
inline DragPermutationTest drag_permutation_test(const Trace& trace, const PolicyConfig& config,
                                                 std::size_t permutations = 1000,
                                                 std::uint64_t seed = 0) {
  if (permutations < 2) {
    throw Error(ErrorKind::out_of_range, "need at least 2 permutations", "permutations");
  }
  const LatencyDrag base = latency_drag(trace, config);
  const auto outcomes = simulate_ffoa(trace, config);
  std::vector<double> l_r;
  std::vector<bool> passed;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    l_r.push_back(trace.records[i].r.latency_seconds);
    passed.push_back(outcomes[i].route == Route::r_answer ||
                     outcomes[i].route == Route::human_via_reasoning);
  }

  DragPermutationTest t;
  t.observed = base.drag;
  t.permutations = permutations;
  t.seed = seed;
  Rng rng(seed);
  std::vector<double> null_drags;
  null_drags.reserve(permutations);
  std::vector<double> shuffled = l_r;
  for (std::size_t k = 0; k < permutations; ++k) {
    rng.shuffle(std::span<double>(shuffled));
    null_drags.push_back(detail::drag_from_mask(shuffled, passed, base.n_passed));
  }
  const double m = std::accumulate(null_drags.begin(), null_drags.end(), 0.0) /
                   static_cast<double>(permutations);
  double ss = 0.0;
  std::size_t extreme = 0;
  for (double v : null_drags) {
    ss += (v - m) * (v - m);
    if (std::abs(v) >= std::abs(t.observed)) ++extreme;
  }
  t.null_mean = m;
  t.null_sd = std::sqrt(ss / static_cast<double>(permutations - 1));
  t.z = t.null_sd > 0.0 ? t.observed / t.null_sd : 0.0;
  t.p_value = static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
  return t;
}

struct ProfileBin {
  std::size_t bin = 0;
  double percentile_lo = 0.0;
  double percentile_hi = 0.0;
  double mean_l_r = 0.0;
  std::size_t count = 0;
};

// Reasoning latency averaged within equal-count bins of non-reasoning
// confidence rank (bin 0 = least confident). Ties in p_true keep trace order.
inline std::vector<ProfileBin> conditional_latency_profile(const Trace& trace, std::size_t n_bins) {
  if (n_bins < 2) throw Error(ErrorKind::out_of_range, "need at least 2 bins", "bins");
  const std::size_t n = trace.size();
  if (n < n_bins) {
    throw Error(ErrorKind::out_of_range, "trace has fewer records than bins", "bins");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, {}, [&](std::size_t i) { return trace.records[i].nr.p_true; });

  std::vector<ProfileBin> bins;
  bins.reserve(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t lo = b * n / n_bins;
    const std::size_t hi = (b + 1) * n / n_bins;
    ProfileBin bin;
    bin.bin = b;
    bin.percentile_lo = 100.0 * static_cast<double>(b) / static_cast<double>(n_bins);
    bin.percentile_hi = 100.0 * static_cast<double>(b + 1) / static_cast<double>(n_bins);
    bin.count = hi - lo;
    std::span<const std::size_t> members(order.data() + lo, hi - lo);
    bin.mean_l_r = detail::shifted_mean(
        members, [&](std::size_t i) { return trace.records[i].r.latency_seconds; });
    bins.push_back(bin);
  }
  return bins;
}

struct SavingsRow {
  double utilization = 0.0;
  double auarc = 0.0;
  double delta_auarc_pct = 0.0;
  double mean_latency = 0.0;
  double mean_cost = 0.0;
  double delta_latency_pct = 0.0;
  double delta_cost_pct = 0.0;
};

namespace detail {

inline double pct_change(double value, double base, const char* what) {
  if (value == base) return 0.0;
  if (base == 0.0) {
    throw Error(ErrorKind::invalid_argument, std::string("zero baseline ") + what, what);
  }
  return 100.0 * (value - base) / base;
}

}  // namespace detail

// One row per utilization; u = 0 is the baseline and is always the first row.
// Latency and cost are averaged over the same grid as AUARC.
inline std::vector<SavingsRow> savings_table(const Trace& trace, std::span<const double> u_values,
                                             std::span<const double> grid) {
  std::vector<double> us{0.0};
  for (double u : u_values) {
    detail::require_unit(u, "u");
    if (u != 0.0) us.push_back(u);
  }
  std::vector<SavingsRow> rows;
  for (double u : us) {
    const CascadeSystem system = CascadeSystem::ffoa(u);
    const auto curve = accuracy_rejection_curve(trace, system, grid);
    const AuarcSummary s = auarc(curve);
    rows.push_back({u, s.auarc, 0.0, s.mean_latency, s.mean_cost, 0.0, 0.0});
  }
  const SavingsRow base = rows.front();
  for (auto& row : rows) {
    row.delta_auarc_pct = detail::pct_change(row.auarc, base.auarc, "auarc");
    row.delta_latency_pct = detail::pct_change(row.mean_latency, base.mean_latency, "latency");
    row.delta_cost_pct = detail::pct_change(row.mean_cost, base.mean_cost, "cost");
  }
  return rows;
}

struct BaselineStats {
  std::string model_id;
  ModelRole role = ModelRole::reasoning;
  std::size_t n = 0;
  double error_rate = 0.0;
  double mean_latency_seconds = 0.0;
  double mean_cost_usd = 0.0;
  double mean_output_tokens = 0.0;
};

namespace detail {

template <class Get>
BaselineStats model_stats(const Trace& trace, ModelRole role, const std::string& model_id, Get get) {
  BaselineStats s;
  s.model_id = model_id;
  s.role = role;
  s.n = trace.size();
  std::size_t wrong = 0;
  for (const auto& rec : trace.records) {
    if (!get(rec).correct) ++wrong;
  }
  s.error_rate = static_cast<double>(wrong) / static_cast<double>(s.n);
  s.mean_latency_seconds = shifted_mean(trace.records, [&](const JoinedRecord& r) { return get(r).latency_seconds; });
  s.mean_cost_usd = shifted_mean(trace.records, [&](const JoinedRecord& r) { return get(r).cost_usd; });
  s.mean_output_tokens = shifted_mean(trace.records, [&](const JoinedRecord& r) { return get(r).output_tokens; });
  return s;
}

}  // namespace detail

// Per-model averages in the shape of a baseline table: reasoning first.
inline std::pair<BaselineStats, BaselineStats> baseline_stats(const Trace& trace) {
  require_nonempty(trace);
  return {
      detail::model_stats(trace, ModelRole::reasoning, trace.metadata.r_model_id,
                          [](const JoinedRecord& r) -> const ModelRun& { return r.r; }),
      detail::model_stats(trace, ModelRole::non_reasoning, trace.metadata.nr_model_id,
                          [](const JoinedRecord& r) -> const ModelRun& { return r.nr; }),
  };
}

// ---- serialization -------------------------------------------------------

inline void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "rejection_rate,realized_rejection,conditional_accuracy,error_rate,n_answered,"
         "mean_latency_seconds,mean_cost_usd\n";
  for (const auto& p : curve) {
    out << format_double(p.rejection_rate) << ',' << format_double(p.realized_rejection) << ','
        << format_double(p.conditional_accuracy) << ',' << format_double(1.0 - p.conditional_accuracy)
        << ',' << p.n_answered << ',' << format_double(p.mean_latency_seconds) << ','
        << format_double(p.mean_cost_usd) << '\n';
  }
}

inline void write_profile_csv(std::ostream& out, std::span<const ProfileBin> bins) {
  out << "bin,percentile_lo,percentile_hi,mean_l_r,count\n";
  for (const auto& b : bins) {
    out << b.bin << ',' << format_double(b.percentile_lo) << ',' << format_double(b.percentile_hi)
        << ',' << format_double(b.mean_l_r) << ',' << b.count << '\n';
  }
}

inline nlohmann::ordered_json to_json(const AuarcSummary& s) {
  nlohmann::ordered_json j;
  j["auarc"] = s.auarc;
  j["mean_latency"] = s.mean_latency;
  j["mean_cost"] = s.mean_cost;
  j["grid"] = s.grid;
  return j;
}

inline nlohmann::ordered_json to_json(const LatencyDrag& d) {
  nlohmann::ordered_json j;
  j["utilization"] = d.utilization;
  j["actual"] = d.actual;
  j["ideal"] = d.ideal;
  j["drag"] = d.drag;
  j["mean_l_nr"] = d.mean_l_nr;
  j["mean_l_r"] = d.mean_l_r;
  j["passed_mean_l_r"] = d.passed_mean_l_r;
  j["n_passed"] = d.n_passed;
  return j;
}

inline nlohmann::ordered_json to_json(const DragPermutationTest& t) {
  nlohmann::ordered_json j;
  j["observed"] = t.observed;
  j["null_mean"] = t.null_mean;
  j["null_sd"] = t.null_sd;
  j["z"] = t.z;
  j["p_value"] = t.p_value;
  j["permutations"] = t.permutations;
  j["seed"] = t.seed;
  return j;
}

inline nlohmann::ordered_json to_json(const SavingsRow& r) {
  nlohmann::ordered_json j;
  j["u"] = r.utilization;
  j["auarc"] = r.auarc;
  j["delta_auarc_pct"] = r.delta_auarc_pct;
  j["mean_latency"] = r.mean_latency;
  j["mean_cost"] = r.mean_cost;
  j["delta_latency_pct"] = r.delta_latency_pct;
  j["delta_cost_pct"] = r.delta_cost_pct;
  return j;
}

inline nlohmann::ordered_json to_json(const BaselineStats& s) {
  nlohmann::ordered_json j;
  j["model_id"] = s.model_id;
  j["role"] = to_string(s.role);
  j["n"] = s.n;
  j["error_rate"] = s.error_rate;
  j["mean_latency_seconds"] = s.mean_latency_seconds;
  j["mean_cost_usd"] = s.mean_cost_usd;
  j["mean_output_tokens"] = s.mean_output_tokens;
  return j;
}

}  // namespace ffoa
