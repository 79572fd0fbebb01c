#pragma once

// Synthetic joined traces driven by one latent Gaussian difficulty factor,
// plus a naive reference simulator used to cross-check the router.
//
// Generator: std::mt19937_64 seeded with SynthSpec::seed; uniforms take the
// top 53 bits; normals come from Box-Muller (cos variate first, sin variate
// cached). Per record the draws happen in this fixed order:
//   difficulty, p_true noise, reasoning-token noise, non-reasoning-token
//   noise, reasoning latency noise, non-reasoning latency noise,
//   reasoning correctness uniform, non-reasoning correctness uniform.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffoa/cascade_sim.hpp"
#include "ffoa/error.hpp"
#include "ffoa/policy.hpp"
#include "ffoa/rng.hpp"
#include "ffoa/trace_store.hpp"

namespace ffoa {

struct ArmSpec {
  std::string model_id;
  // output_tokens = round(exp(token_log_mean + token_log_sd * z))
  double token_log_mean = 0.0;
  double token_log_sd = 0.0;
  // latency = max(0, latency_per_token * tokens + latency_base + latency_noise_sd * e)
  double latency_per_token = 0.0;
  double latency_base = 0.0;
  double latency_noise_sd = 0.0;
  // cost = cost_base + cost_per_token * tokens
  double cost_base = 0.0;
  double cost_per_token = 0.0;
  // P(correct) = logistic(correct_intercept - correct_slope * difficulty)
  double correct_intercept = 0.0;
  double correct_slope = 0.0;

  bool operator==(const ArmSpec&) const = default;
};

struct SynthSpec {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  ArmSpec nr;
  ArmSpec r;
  // p_true = logistic(p_true_center + p_true_scale * z_p)
  double p_true_center = 0.0;
  double p_true_scale = 1.0;
  // Target Spearman correlations with the latent difficulty.
  double rho_p_true = 0.0;
  double rho_r_tokens = 0.0;

  bool operator==(const SynthSpec&) const = default;
};

struct SynthResult {
  Trace trace;
  std::vector<double> difficulty;
};

namespace detail {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Pearson correlation of a bivariate normal whose Spearman correlation is rho_s.
inline double spearman_to_pearson(double rho_s) {
  return 2.0 * std::sin(std::numbers::pi * rho_s / 6.0);
}

inline void check_arm(const ArmSpec& arm, const std::string& prefix) {
  auto finite = [&](double v, const char* name) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::out_of_range, prefix + "." + name + " must be finite", prefix + "." + name);
    }
  };
  auto nonneg = [&](double v, const char* name) {
    finite(v, name);
    if (v < 0.0) throw Error(ErrorKind::out_of_range, prefix + "." + name + " must be >= 0", prefix + "." + name);
  };
  finite(arm.token_log_mean, "token_log_mean");
  nonneg(arm.token_log_sd, "token_log_sd");
  nonneg(arm.latency_per_token, "latency_per_token");
  finite(arm.latency_base, "latency_base");
  nonneg(arm.latency_noise_sd, "latency_noise_sd");
  nonneg(arm.cost_base, "cost_base");
  nonneg(arm.cost_per_token, "cost_per_token");
  finite(arm.correct_intercept, "correct_intercept");
  finite(arm.correct_slope, "correct_slope");
}

inline std::int64_t draw_tokens(const ArmSpec& arm, double z) {
  const double t = std::round(std::exp(arm.token_log_mean + arm.token_log_sd * z));
  if (!(t < 1e15)) throw Error(ErrorKind::out_of_range, "token count overflow", "token_log_mean");
  return static_cast<std::int64_t>(t);
}

inline double draw_latency(const ArmSpec& arm, std::int64_t tokens, double e) {
  const double l = arm.latency_per_token * static_cast<double>(tokens) + arm.latency_base +
                   arm.latency_noise_sd * e;
  return l > 0.0 ? l : 0.0;
}

inline double draw_cost(const ArmSpec& arm, std::int64_t tokens) {
  return arm.cost_base + arm.cost_per_token * static_cast<double>(tokens);
}

}  // namespace detail

inline void validate(const SynthSpec& spec) {
  if (spec.n < 1) throw Error(ErrorKind::out_of_range, "n must be >= 1", "n");
  detail::check_arm(spec.nr, "nr");
  detail::check_arm(spec.r, "r");
  if (!std::isfinite(spec.p_true_center)) {
    throw Error(ErrorKind::out_of_range, "p_true_center must be finite", "p_true_center");
  }
  if (!(spec.p_true_scale >= 0.0) || !std::isfinite(spec.p_true_scale)) {
    throw Error(ErrorKind::out_of_range, "p_true_scale must be >= 0", "p_true_scale");
  }
  if (!(std::abs(spec.rho_p_true) <= 1.0)) {
    throw Error(ErrorKind::out_of_range, "rho_p_true must lie in [-1, 1]", "rho_p_true");
  }
  if (!(std::abs(spec.rho_r_tokens) <= 1.0)) {
    throw Error(ErrorKind::out_of_range, "rho_r_tokens must lie in [-1, 1]", "rho_r_tokens");
  }
}

inline SynthResult generate_with_latent(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const double a_p = detail::spearman_to_pearson(spec.rho_p_true);
  const double b_p = std::sqrt(std::max(0.0, 1.0 - a_p * a_p));
  const double a_t = detail::spearman_to_pearson(spec.rho_r_tokens);
  const double b_t = std::sqrt(std::max(0.0, 1.0 - a_t * a_t));

  SynthResult out;
  out.trace.metadata = {spec.nr.model_id, spec.r.model_id,
                        "synthetic(seed=" + std::to_string(spec.seed) + ")"};
  out.trace.records.reserve(spec.n);
  out.difficulty.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double d = rng.normal();
    const double z_p = a_p * d + b_p * rng.normal();
    const double z_rt = a_t * d + b_t * rng.normal();
    const double z_nrt = rng.normal();
    const double e_lr = rng.normal();
    const double e_lnr = rng.normal();
    const double u_r = rng.uniform();
    const double u_nr = rng.uniform();

    JoinedRecord rec;
    rec.query_id = "q" + std::to_string(i);
    rec.r.output_tokens = detail::draw_tokens(spec.r, z_rt);
    rec.r.latency_seconds = detail::draw_latency(spec.r, rec.r.output_tokens, e_lr);
    rec.r.cost_usd = detail::draw_cost(spec.r, rec.r.output_tokens);
    rec.r.correct = u_r < detail::logistic(spec.r.correct_intercept - spec.r.correct_slope * d);

    rec.nr.output_tokens = detail::draw_tokens(spec.nr, z_nrt);
    rec.nr.latency_seconds = detail::draw_latency(spec.nr, rec.nr.output_tokens, e_lnr);
    rec.nr.cost_usd = detail::draw_cost(spec.nr, rec.nr.output_tokens);
    rec.nr.correct = u_nr < detail::logistic(spec.nr.correct_intercept - spec.nr.correct_slope * d);
    // A negative difficulty correlation makes confident queries easy.
    rec.nr.p_true = detail::logistic(spec.p_true_center + spec.p_true_scale * z_p);

    out.trace.records.push_back(std::move(rec));
    out.difficulty.push_back(d);
  }
  return out;
}

inline Trace generate(const SynthSpec& spec) { return generate_with_latent(spec).trace; }

// Marginals tuned against the baseline table for a Qwen3-235B-like reasoning
// model fronted by a Llama-3.1-405B-like non-reasoning model: reasoning error
// 2.8%, 125.9 s, $9.5e-3, 10.8K tokens; non-reasoning error 30.6%, 12.4 s,
// $3.6e-3, 978 tokens. The constants were matched once at n = 10,000 with the
// default seed and frozen.
inline SynthSpec paper_preset() {
  SynthSpec s;
  s.n = 10000;
  s.seed = 20250801;

  s.r.model_id = "qwen3-235b-a22b-synthetic";
  s.r.token_log_mean = 9.169;
  s.r.token_log_sd = 0.5;
  s.r.latency_per_token = 121.9 / 10800.0;
  s.r.latency_base = 4.0;
  s.r.latency_noise_sd = 5.0;
  s.r.cost_base = 2.0e-4;
  s.r.cost_per_token = 9.3e-3 / 10800.0;
  s.r.correct_intercept = 5.0342;
  s.r.correct_slope = 2.0;

  s.nr.model_id = "llama-v3p1-405b-instruct-synthetic";
  s.nr.token_log_mean = 6.8052;
  s.nr.token_log_sd = 0.4;
  s.nr.latency_per_token = 11.4 / 978.0;
  s.nr.latency_base = 1.0;
  s.nr.latency_noise_sd = 1.0;
  s.nr.cost_base = 6.0e-4;
  s.nr.cost_per_token = 3.0e-3 / 978.0;
  s.nr.correct_intercept = 1.1254;
  s.nr.correct_slope = 1.5;

  s.p_true_center = 1.0;
  s.p_true_scale = 1.5;
  s.rho_p_true = -0.7;
  s.rho_r_tokens = 0.6;
  return s;
}

// Same marginals, but p_true carries no information about difficulty, so the
// reasoning latency is independent of the non-reasoning confidence.
inline SynthSpec independent_preset() {
  SynthSpec s = paper_preset();
  s.rho_p_true = 0.0;
  return s;
}

// ---- reference simulator ----------------------------------------------------
// Straight per-record transliteration of the routing rules. Deliberately shares
// no code with the main simulator.

inline std::vector<Outcome> oracle_simulate(const Trace& trace, const PolicyConfig& config) {
  if (trace.records.empty()) throw Error(ErrorKind::empty_input, "trace is empty", "trace");
  std::vector<Outcome> outcomes;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const JoinedRecord& q = trace.records[i];
    const double p = q.nr.p_true;
    const bool has_ff = config.c_fail_fast.has_value();
    const bool has_pass = config.c_pass.has_value();

    bool fail_fast = false;
    bool pass = false;
    if (has_ff && p <= config.c_fail_fast.value()) {
      fail_fast = true;
    } else if ((!has_ff || p > config.c_fail_fast.value()) && has_pass && p <= config.c_pass.value()) {
      pass = true;
    }

    Outcome o;
    o.query_id = q.query_id;
    if (fail_fast) {
      o.route = Route::human_via_fail_fast;
      o.latency_seconds = q.nr.latency_seconds;
      o.cost_usd = q.nr.cost_usd;
    } else if (pass) {
      o.latency_seconds = q.nr.latency_seconds + q.r.latency_seconds;
      o.cost_usd = q.nr.cost_usd + q.r.cost_usd;
      bool answer = true;
      if (config.r_token_threshold.has_value() && q.r.output_tokens > config.r_token_threshold.value()) {
        answer = false;
      }
      if (answer) {
        o.route = Route::r_answer;
        o.counted_correct = q.r.correct;
      } else {
        o.route = Route::human_via_reasoning;
      }
    } else {
      o.route = Route::nr_answer;
      o.counted_correct = q.nr.correct;
      o.latency_seconds = q.nr.latency_seconds;
      o.cost_usd = q.nr.cost_usd;
    }
    outcomes.push_back(o);
  }
  return outcomes;
}

inline std::vector<Outcome> oracle_simulate(const Trace& trace, const AskPolicy& policy) {
  if (trace.records.empty()) throw Error(ErrorKind::empty_input, "trace is empty", "trace");
  std::vector<Outcome> outcomes;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const JoinedRecord& q = trace.records[i];
    Outcome o;
    o.query_id = q.query_id;
    o.latency_seconds = q.r.latency_seconds;
    o.cost_usd = q.r.cost_usd;
    if (q.r.output_tokens > policy.token_threshold) {
      o.route = Route::human_via_reasoning;
    } else {
      o.route = Route::r_answer;
      o.counted_correct = q.r.correct;
    }
    outcomes.push_back(o);
  }
  return outcomes;
}

// ---- spec (de)serialization -------------------------------------------------

inline nlohmann::ordered_json to_json(const ArmSpec& a) {
  nlohmann::ordered_json j;
  j["model_id"] = a.model_id;
  j["token_log_mean"] = a.token_log_mean;
  j["token_log_sd"] = a.token_log_sd;
  j["latency_per_token"] = a.latency_per_token;
  j["latency_base"] = a.latency_base;
  j["latency_noise_sd"] = a.latency_noise_sd;
  j["cost_base"] = a.cost_base;
  j["cost_per_token"] = a.cost_per_token;
  j["correct_intercept"] = a.correct_intercept;
  j["correct_slope"] = a.correct_slope;
  return j;
}

inline nlohmann::ordered_json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["generator"] = "mt19937_64/box-muller";
  j["n"] = s.n;
  j["seed"] = s.seed;
  j["p_true_center"] = s.p_true_center;
  j["p_true_scale"] = s.p_true_scale;
  j["rho_p_true"] = s.rho_p_true;
  j["rho_r_tokens"] = s.rho_r_tokens;
  j["nr"] = to_json(s.nr);
  j["r"] = to_json(s.r);
  return j;
}

inline ArmSpec arm_spec_from_json(const nlohmann::json& j) {
  ArmSpec a;
  a.model_id = j.at("model_id").get<std::string>();
  a.token_log_mean = j.at("token_log_mean").get<double>();
  a.token_log_sd = j.at("token_log_sd").get<double>();
  a.latency_per_token = j.at("latency_per_token").get<double>();
  a.latency_base = j.at("latency_base").get<double>();
  a.latency_noise_sd = j.at("latency_noise_sd").get<double>();
  a.cost_base = j.at("cost_base").get<double>();
  a.cost_per_token = j.at("cost_per_token").get<double>();
  a.correct_intercept = j.at("correct_intercept").get<double>();
  a.correct_slope = j.at("correct_slope").get<double>();
  return a;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  try {
    SynthSpec s;
    s.n = j.at("n").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.p_true_center = j.at("p_true_center").get<double>();
    s.p_true_scale = j.at("p_true_scale").get<double>();
    s.rho_p_true = j.at("rho_p_true").get<double>();
    s.rho_r_tokens = j.at("rho_r_tokens").get<double>();
    s.nr = arm_spec_from_json(j.at("nr"));
    s.r = arm_spec_from_json(j.at("r"));
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("invalid synth spec: ") + e.what(), "spec");
  }
}

}  // namespace ffoa
