#pragma once

// Per-query routing through the Ask system (reasoning model -> human) and the
// Fail Fast, or Ask system (non-reasoning model -> reasoning model -> human).
// Human routes cost no time or money and carry no counted correctness.

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ffoa/error.hpp"
#include "ffoa/format.hpp"
#include "ffoa/policy.hpp"
#include "ffoa/trace_store.hpp"

namespace ffoa {

enum class Action { fail_fast, pass, respond };

enum class Route { nr_answer, r_answer, human_via_fail_fast, human_via_reasoning };

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::fail_fast: return "fail_fast";
    case Action::pass: return "pass";
    case Action::respond: return "respond";
  }
  return "";
}

inline std::string_view to_string(Route r) {
  switch (r) {
    case Route::nr_answer: return "nr_answer";
    case Route::r_answer: return "r_answer";
    case Route::human_via_fail_fast: return "human_via_fail_fast";
    case Route::human_via_reasoning: return "human_via_reasoning";
  }
  return "";
}

constexpr bool is_human(Route r) {
  return r == Route::human_via_fail_fast || r == Route::human_via_reasoning;
}

struct Outcome {
  std::string query_id;
  Route route = Route::r_answer;
  std::optional<bool> counted_correct;
  double latency_seconds = 0.0;
  double cost_usd = 0.0;

  bool operator==(const Outcome&) const = default;
};

inline Action nr_action(double p_true, const PolicyConfig& config) {
  if (config.c_fail_fast && p_true <= *config.c_fail_fast) return Action::fail_fast;
  if (config.c_pass && p_true <= *config.c_pass) return Action::pass;
  return Action::respond;
}

inline bool reasoning_answers(std::int64_t output_tokens, std::optional<std::int64_t> threshold) {
  return !threshold || output_tokens <= *threshold;
}

inline std::vector<Outcome> simulate_ask(const Trace& trace, const AskPolicy& policy) {
  require_nonempty(trace);
  std::vector<Outcome> out;
  out.reserve(trace.size());
  for (const auto& rec : trace.records) {
    Outcome o{rec.query_id, Route::r_answer, std::nullopt, rec.r.latency_seconds, rec.r.cost_usd};
    if (rec.r.output_tokens <= policy.token_threshold) {
      o.counted_correct = rec.r.correct;
    } else {
      o.route = Route::human_via_reasoning;
    }
    out.push_back(std::move(o));
  }
  return out;
}

// Fail-fast queries are charged the non-reasoning run (it had to answer and be
// probed before deciding). Passed queries pay both runs whether or not the
// reasoning model then defers.
inline std::vector<Outcome> simulate_ffoa(const Trace& trace, const PolicyConfig& config) {
  require_nonempty(trace);
  std::vector<Outcome> out;
  out.reserve(trace.size());
  for (const auto& rec : trace.records) {
    Outcome o{rec.query_id, Route::nr_answer, std::nullopt, rec.nr.latency_seconds, rec.nr.cost_usd};
    switch (nr_action(rec.nr.p_true, config)) {
      case Action::respond:
        o.counted_correct = rec.nr.correct;
        break;
      case Action::fail_fast:
        o.route = Route::human_via_fail_fast;
        break;
      case Action::pass:
        o.latency_seconds += rec.r.latency_seconds;
        o.cost_usd += rec.r.cost_usd;
        if (reasoning_answers(rec.r.output_tokens, config.r_token_threshold)) {
          o.route = Route::r_answer;
          o.counted_correct = rec.r.correct;
        } else {
          o.route = Route::human_via_reasoning;
        }
        break;
    }
    out.push_back(std::move(o));
  }
  return out;
}

struct RouteCounts {
  std::size_t nr_answer = 0;
  std::size_t r_answer = 0;
  std::size_t human_via_fail_fast = 0;
  std::size_t human_via_reasoning = 0;

  std::size_t total() const {
    return nr_answer + r_answer + human_via_fail_fast + human_via_reasoning;
  }
  std::size_t passed() const { return r_answer + human_via_reasoning; }
  std::size_t rejected() const { return human_via_fail_fast + human_via_reasoning; }
};

inline RouteCounts count_routes(std::span<const Outcome> outcomes) {
  RouteCounts c;
  for (const auto& o : outcomes) {
    switch (o.route) {
      case Route::nr_answer: ++c.nr_answer; break;
      case Route::r_answer: ++c.r_answer; break;
      case Route::human_via_fail_fast: ++c.human_via_fail_fast; break;
      case Route::human_via_reasoning: ++c.human_via_reasoning; break;
    }
  }
  return c;
}

struct OutcomeRates {
  double utilization = 0.0;
  double fail_fast_rate = 0.0;
  double pass_rate = 0.0;
  double rejection_rate = 0.0;
  // Deferral rate of the reasoning model among passed queries (0 if none).
  double conditional_deferral_rate = 0.0;

  bool operator==(const OutcomeRates&) const = default;
};

inline OutcomeRates realized_rates(std::span<const Outcome> outcomes) {
  if (outcomes.empty()) throw Error(ErrorKind::empty_input, "no outcomes", "outcomes");
  const RouteCounts c = count_routes(outcomes);
  const double n = static_cast<double>(c.total());
  OutcomeRates rates;
  rates.pass_rate = static_cast<double>(c.passed()) / n;
  rates.utilization = 1.0 - rates.pass_rate;
  rates.fail_fast_rate = static_cast<double>(c.human_via_fail_fast) / n;
  rates.rejection_rate = static_cast<double>(c.rejected()) / n;
  rates.conditional_deferral_rate =
      c.passed() == 0 ? 0.0
                      : static_cast<double>(c.human_via_reasoning) / static_cast<double>(c.passed());
  return rates;
}

inline void write_outcomes_csv(std::ostream& out, std::span<const Outcome> outcomes) {
  out << "query_id,route,counted_correct,latency_seconds,cost_usd\n";
  for (const auto& o : outcomes) {
    out << csv_field(o.query_id) << ',' << to_string(o.route) << ',';
    if (o.counted_correct) out << (*o.counted_correct ? "true" : "false");
    out << ',' << format_double(o.latency_seconds) << ',' << format_double(o.cost_usd) << '\n';
  }
}

}  // namespace ffoa
