#pragma once

// Threshold calibration for both systems. Quantiles are lower order
// statistics, so every threshold is an observed value.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "ffoa/cascade_sim.hpp"
#include "ffoa/error.hpp"
#include "ffoa/policy.hpp"
#include "ffoa/rng.hpp"
#include "ffoa/trace_store.hpp"

namespace ffoa {

namespace detail {

// Snaps x to the nearest integer when it is within floating-point noise of it,
// so that e.g. 0.9 * 10 counts as exactly 9.
inline double snap_integral(double x) {
  const double r = std::round(x);
  return std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x)) ? r : x;
}

inline std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(snap_integral(x) + 0.5));
}

inline void require_unit(double v, const char* name, bool allow_one = true) {
  const bool ok = v >= 0.0 && (allow_one ? v <= 1.0 : v < 1.0);
  if (!ok) {
    throw Error(ErrorKind::out_of_range,
                std::string(name) + " must lie in " + (allow_one ? "[0, 1]" : "[0, 1)"), name);
  }
}

}  // namespace detail

// x_(ceil(q*n)) of the ascending sample (1-indexed), x_(1) for q = 0: the
// smallest observed v with fraction(values <= v) >= q.
template <std::ranges::forward_range R>
  requires std::is_arithmetic_v<std::ranges::range_value_t<R>>
std::ranges::range_value_t<R> empirical_quantile(const R& values, double q) {
  using T = std::ranges::range_value_t<R>;
  detail::require_unit(q, "level");
  std::vector<T> sorted(std::ranges::begin(values), std::ranges::end(values));
  if (sorted.empty()) throw Error(ErrorKind::empty_input, "quantile of an empty sample", "values");
  if constexpr (std::is_floating_point_v<T>) {
    for (T v : sorted) {
      if (!std::isfinite(v)) throw Error(ErrorKind::out_of_range, "non-finite value", "values");
    }
  }
  std::ranges::sort(sorted);
  const double rank = std::ceil(detail::snap_integral(q * static_cast<double>(sorted.size())));
  const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(rank), 1, sorted.size());
  return sorted[k - 1];
}

// Smallest observed T with fraction(tokens > T) <= r.
inline AskPolicy calibrate_ask_tokens(std::span<const std::int64_t> tokens, double r) {
  detail::require_unit(r, "r", /*allow_one=*/false);
  if (tokens.empty()) throw Error(ErrorKind::empty_input, "no token counts to calibrate on", "trace");
  std::vector<std::int64_t> sorted(tokens.begin(), tokens.end());
  std::ranges::sort(sorted);
  const std::size_t n = sorted.size();
  const std::size_t allowed = static_cast<std::size_t>(
      std::floor(detail::snap_integral(r * static_cast<double>(n))));
  AskPolicy policy;
  policy.target_rejection = r;
  policy.token_threshold = sorted[n - 1 - std::min(allowed, n - 1)];
  const auto above = std::ranges::count_if(sorted, [&](auto t) { return t > policy.token_threshold; });
  policy.realized_rejection = static_cast<double>(above) / static_cast<double>(n);
  return policy;
}

inline AskPolicy calibrate_ask(const Trace& trace, double r) {
  require_nonempty(trace);
  std::vector<std::int64_t> tokens;
  tokens.reserve(trace.size());
  for (const auto& rec : trace.records) tokens.push_back(rec.r.output_tokens);
  return calibrate_ask_tokens(tokens, r);
}

// Fail-fast rate implied by overall rejection r, utilization u, and the
// reasoning model's conditional rejection rate among passed queries.
inline double fail_fast_rate(double u, double r, double r_cond) {
  detail::require_unit(u, "u");
  detail::require_unit(r, "r");
  detail::require_unit(r_cond, "r_cond");
  const double rate = r - (1.0 - u) * r_cond;
  if (rate < 0.0) {
    throw Error(ErrorKind::infeasible,
                "infeasible configuration: r - (1 - u) * r_cond is negative", "r");
  }
  return rate;
}

// Realized rates of the three-way policy on a trace. respond_rate is formed
// as 1 - (fail_fast + pass) so the three rates sum to exactly 1.
inline RealizedRates apply_policy_rates(const Trace& trace, const PolicyConfig& config) {
  RealizedRates rates;
  for (const auto& rec : trace.records) {
    switch (nr_action(rec.nr.p_true, config)) {
      case Action::fail_fast: ++rates.n_fail_fast; break;
      case Action::pass: ++rates.n_pass; break;
      case Action::respond: ++rates.n_respond; break;
    }
  }
  const double n = static_cast<double>(trace.size());
  rates.fail_fast_rate = static_cast<double>(rates.n_fail_fast) / n;
  rates.pass_rate = static_cast<double>(rates.n_pass) / n;
  rates.respond_rate = 1.0 - (rates.fail_fast_rate + rates.pass_rate);
  return rates;
}

inline PolicyConfig calibrate_ffoa(const Trace& trace, double u, double r) {
  detail::require_unit(u, "u");
  detail::require_unit(r, "r", /*allow_one=*/false);
  require_nonempty(trace);

  PolicyConfig config;
  config.utilization = u;
  config.target_rejection = r;
  config.target_fail_fast_rate = fail_fast_rate(u, r, r);
  // r - ff is exact here, which makes ff + passed == r hold bit for bit.
  config.target_passed_rejection = r - config.target_fail_fast_rate;

  const std::size_t n = trace.size();
  const double nd = static_cast<double>(n);
  std::size_t k_pass = std::min(detail::round_half_up((1.0 - u) * nd), n);
  std::size_t k_ff = std::min(detail::round_half_up(config.target_fail_fast_rate * nd), n - k_pass);
  config.k_fail_fast = k_ff;
  config.k_pass = k_pass;

  std::vector<double> p;
  p.reserve(n);
  for (const auto& rec : trace.records) p.push_back(rec.nr.p_true);
  std::ranges::sort(p);
  if (k_ff > 0) config.c_fail_fast = p[k_ff - 1];
  if (k_ff + k_pass > 0) config.c_pass = p[k_ff + k_pass - 1];

  std::vector<std::int64_t> passed_tokens;
  for (const auto& rec : trace.records) {
    if (nr_action(rec.nr.p_true, config) == Action::pass) passed_tokens.push_back(rec.r.output_tokens);
  }
  if (passed_tokens.empty()) {
    if (u < 1.0) {
      throw Error(ErrorKind::empty_input,
                  "no passed queries to calibrate the reasoning-model token threshold on", "u");
    }
  } else {
    config.r_token_threshold = calibrate_ask_tokens(passed_tokens, r).token_threshold;
  }

  config.realized = apply_policy_rates(trace, config);
  return config;
}

struct TraceSplit {
  Trace calibration;
  Trace evaluation;
};

// Deterministic random split for out-of-sample calibration. Each side keeps
// the original record order.
inline TraceSplit split_trace(const Trace& trace, double calibration_fraction, std::uint64_t seed) {
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw Error(ErrorKind::out_of_range, "calibration fraction must lie in (0, 1)",
                "calibration_fraction");
  }
  const std::size_t n = trace.size();
  const std::size_t k = detail::round_half_up(calibration_fraction * static_cast<double>(n));
  if (k == 0 || k >= n) {
    throw Error(ErrorKind::empty_input, "split leaves one side empty", "calibration_fraction");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  std::vector<bool> in_cal(n, false);
  for (std::size_t i = 0; i < k; ++i) in_cal[idx[i]] = true;

  TraceSplit split;
  split.calibration.metadata = split.evaluation.metadata = trace.metadata;
  for (std::size_t i = 0; i < n; ++i) {
    (in_cal[i] ? split.calibration : split.evaluation).records.push_back(trace.records[i]);
  }
  return split;
}

}  // namespace ffoa
