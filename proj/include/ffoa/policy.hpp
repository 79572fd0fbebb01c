#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>

#include "json.hpp"

#include "ffoa/error.hpp"

namespace ffoa {

// Reasoning-model deferral rule: answer iff output_tokens <= token_threshold.
struct AskPolicy {
  static constexpr std::int64_t kAnswerAll = std::numeric_limits<std::int64_t>::max();

  std::int64_t token_threshold = kAnswerAll;
  double target_rejection = 0.0;
  // Fraction of the calibration tokens strictly above the threshold.
  double realized_rejection = 0.0;

  bool operator==(const AskPolicy&) const = default;
};

struct RealizedRates {
  double fail_fast_rate = 0.0;
  double pass_rate = 0.0;
  double respond_rate = 0.0;
  std::size_t n_fail_fast = 0;
  std::size_t n_pass = 0;
  std::size_t n_respond = 0;

  bool operator==(const RealizedRates&) const = default;
};

// Thresholds of the non-reasoning model's three-way policy. A p_true value
// fails fast iff p <= c_fail_fast, passes iff c_fail_fast < p <= c_pass, and
// is answered directly otherwise. An absent threshold never matches.
struct PolicyConfig {
  double utilization = 0.0;
  double target_rejection = 0.0;
  std::optional<double> c_fail_fast;
  std::optional<double> c_pass;
  // Calibrated on the passed subset; absent when nothing is passed.
  std::optional<std::int64_t> r_token_threshold;
  // target_fail_fast_rate + target_passed_rejection == target_rejection holds
  // exactly in floating point.
  double target_fail_fast_rate = 0.0;
  double target_passed_rejection = 0.0;
  std::size_t k_fail_fast = 0;
  std::size_t k_pass = 0;
  RealizedRates realized;

  bool operator==(const PolicyConfig&) const = default;
};

namespace detail {

template <class T>
nlohmann::ordered_json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

template <class T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const AskPolicy& p) {
  nlohmann::ordered_json j;
  j["token_threshold"] = p.token_threshold;
  j["target_rejection"] = p.target_rejection;
  j["realized_rejection"] = p.realized_rejection;
  return j;
}

inline nlohmann::ordered_json to_json(const PolicyConfig& c) {
  nlohmann::ordered_json j;
  j["utilization"] = c.utilization;
  j["target_rejection"] = c.target_rejection;
  j["c_fail_fast"] = detail::optional_json(c.c_fail_fast);
  j["c_pass"] = detail::optional_json(c.c_pass);
  j["r_token_threshold"] = detail::optional_json(c.r_token_threshold);
  j["target_fail_fast_rate"] = c.target_fail_fast_rate;
  j["target_passed_rejection"] = c.target_passed_rejection;
  j["k_fail_fast"] = c.k_fail_fast;
  j["k_pass"] = c.k_pass;
  j["realized"] = {
      {"fail_fast_rate", c.realized.fail_fast_rate}, {"pass_rate", c.realized.pass_rate},
      {"respond_rate", c.realized.respond_rate},     {"n_fail_fast", c.realized.n_fail_fast},
      {"n_pass", c.realized.n_pass},                 {"n_respond", c.realized.n_respond},
  };
  return j;
}

inline PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  try {
    PolicyConfig c;
    c.utilization = j.at("utilization").get<double>();
    c.target_rejection = j.at("target_rejection").get<double>();
    c.c_fail_fast = detail::optional_from<double>(j, "c_fail_fast");
    c.c_pass = detail::optional_from<double>(j, "c_pass");
    c.r_token_threshold = detail::optional_from<std::int64_t>(j, "r_token_threshold");
    c.target_fail_fast_rate = j.value("target_fail_fast_rate", 0.0);
    c.target_passed_rejection = j.value("target_passed_rejection", 0.0);
    c.k_fail_fast = j.value("k_fail_fast", std::size_t{0});
    c.k_pass = j.value("k_pass", std::size_t{0});
    if (auto it = j.find("realized"); it != j.end()) {
      const auto& r = *it;
      c.realized.fail_fast_rate = r.value("fail_fast_rate", 0.0);
      c.realized.pass_rate = r.value("pass_rate", 0.0);
      c.realized.respond_rate = r.value("respond_rate", 0.0);
      c.realized.n_fail_fast = r.value("n_fail_fast", std::size_t{0});
      c.realized.n_pass = r.value("n_pass", std::size_t{0});
      c.realized.n_respond = r.value("n_respond", std::size_t{0});
    }
    if (c.c_fail_fast && c.c_pass && *c.c_fail_fast > *c.c_pass) {
      throw Error(ErrorKind::out_of_range, "c_fail_fast must not exceed c_pass", "c_fail_fast");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("invalid policy config: ") + e.what(), "config");
  }
}

}  // namespace ffoa
