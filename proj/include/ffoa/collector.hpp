#pragma once

// Trace collection against OpenAI-compatible chat-completions endpoints:
// one answer call per item, an optional P(True) self-evaluation probe, wall
// clock timing, usage-based cost, and exact numeric grading.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_set>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "ffoa/error.hpp"
#include "ffoa/rng.hpp"
#include "ffoa/trace_store.hpp"

namespace ffoa {

inline constexpr std::string_view kDefaultAnswerTemplate =
    "{question}\n\nSolve the problem. Put your final numeric answer in \\boxed{}.";

// v1 of the self-evaluation prompt: question plus proposed answer, asking for
// a single True/False token.
inline constexpr std::string_view kDefaultProbeTemplate =
    "Question: {question}\n"
    "Proposed Answer: {answer}\n"
    "Is the proposed answer:\n"
    " (A) True\n"
    " (B) False\n"
    "Respond with a single word, True or False.\n"
    "The proposed answer is:";

struct Pricing {
  double usd_per_1m_input_tokens = 0.0;
  double usd_per_1m_output_tokens = 0.0;
};

struct EndpointConfig {
  std::string base_url;
  std::string model_id;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string api_key;
  double timeout_seconds = 600.0;
  std::size_t max_in_flight = 4;
  std::size_t max_retries = 3;
  double backoff_initial_seconds = 1.0;
  double backoff_max_seconds = 30.0;
  Pricing pricing;
  std::optional<std::int64_t> max_tokens;
  double temperature = 0.0;
  std::string answer_template{kDefaultAnswerTemplate};
  std::string probe_template{kDefaultProbeTemplate};
  std::size_t probe_samples = 8;
  std::uint64_t seed = 0;
};

inline void validate(const EndpointConfig& c) {
  if (c.base_url.empty()) throw Error(ErrorKind::missing_field, "base_url is required", "base_url");
  if (c.model_id.empty()) throw Error(ErrorKind::missing_field, "model_id is required", "model_id");
  if (!(c.timeout_seconds > 0.0)) {
    throw Error(ErrorKind::out_of_range, "timeout_seconds must be > 0", "timeout_seconds");
  }
  if (c.max_in_flight < 1) throw Error(ErrorKind::out_of_range, "max_in_flight must be >= 1", "max_in_flight");
  if (!(c.pricing.usd_per_1m_input_tokens >= 0.0) || !(c.pricing.usd_per_1m_output_tokens >= 0.0)) {
    throw Error(ErrorKind::out_of_range, "pricing values must be >= 0", "pricing");
  }
  if (c.probe_samples < 1) throw Error(ErrorKind::out_of_range, "probe_samples must be >= 1", "probe_samples");
  if (!(c.backoff_initial_seconds >= 0.0) || !(c.backoff_max_seconds >= 0.0)) {
    throw Error(ErrorKind::out_of_range, "backoff values must be >= 0", "backoff_initial_seconds");
  }
}

namespace detail {

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'", "path");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

// Reads an endpoint config document. Template paths are resolved relative to
// `base_dir`; the API key is read from the environment variable it names.
inline EndpointConfig endpoint_config_from_json(const nlohmann::json& j,
                                                const std::filesystem::path& base_dir = {}) {
  EndpointConfig c;
  try {
    c.base_url = j.at("base_url").get<std::string>();
    c.model_id = j.at("model_id").get<std::string>();
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff_initial_seconds = j.value("backoff_initial_seconds", c.backoff_initial_seconds);
    c.backoff_max_seconds = j.value("backoff_max_seconds", c.backoff_max_seconds);
    c.temperature = j.value("temperature", c.temperature);
    c.probe_samples = j.value("probe_samples", c.probe_samples);
    c.seed = j.value("seed", c.seed);
    if (auto it = j.find("max_tokens"); it != j.end() && !it->is_null()) c.max_tokens = it->get<std::int64_t>();
    const auto& pricing = j.at("pricing");
    c.pricing.usd_per_1m_input_tokens = pricing.at("usd_per_1M_input_tokens").get<double>();
    c.pricing.usd_per_1m_output_tokens = pricing.at("usd_per_1M_output_tokens").get<double>();
    if (auto it = j.find("answer_template_path"); it != j.end()) {
      c.answer_template = detail::read_text_file(base_dir / it->get<std::string>());
    }
    if (auto it = j.find("probe_template_path"); it != j.end()) {
      c.probe_template = detail::read_text_file(base_dir / it->get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("invalid endpoint config: ") + e.what(), "config");
  }
  if (!c.api_key_env.empty()) {
    if (const char* key = std::getenv(c.api_key_env.c_str())) c.api_key = key;
  }
  validate(c);
  return c;
}

// ---- grading ------------------------------------------------------------

namespace detail {

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Content of the last \boxed{...} (braces balanced), if any.
inline std::optional<std::string> last_boxed(std::string_view text) {
  constexpr std::string_view tag = "\\boxed{";
  const auto pos = text.rfind(tag);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t i = pos + tag.size();
  int depth = 1;
  const std::size_t start = i;
  for (; i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) break;
  }
  if (depth != 0) return std::nullopt;
  auto inner = trim(text.substr(start, i - start));
  if (inner.empty()) return std::nullopt;
  return std::string(inner);
}

// Scans for numbers that are not glued to words: -12, 1,234.5, 3/4.
inline std::optional<std::string> last_standalone_number(std::string_view text) {
  std::optional<std::string> last;
  std::size_t i = 0;
  while (i < text.size()) {
    const bool neg = text[i] == '-' && i + 1 < text.size() && is_digit(text[i + 1]);
    if (!is_digit(text[i]) && !neg) {
      ++i;
      continue;
    }
    if (i > 0 && (is_word_char(text[i - 1]) || text[i - 1] == '.')) {
      ++i;
      continue;
    }
    std::size_t j = i + (neg ? 1 : 0);
    auto digits = [&] {
      while (j < text.size() && is_digit(text[j])) ++j;
    };
    digits();
    while (j + 3 < text.size() + 0 && text[j] == ',' && is_digit(text[j + 1]) && is_digit(text[j + 2]) &&
           is_digit(text[j + 3]) && (j + 4 >= text.size() || !is_digit(text[j + 4]))) {
      j += 4;
    }
    if (j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1])) {
      ++j;
      digits();
    }
    if (j + 1 < text.size() && text[j] == '/' && is_digit(text[j + 1])) {
      ++j;
      digits();
    }
    if (j < text.size() && is_word_char(text[j])) {
      i = j;
      while (i < text.size() && is_word_char(text[i])) ++i;
      continue;
    }
    last = std::string(text.substr(i, j - i));
    i = j;
  }
  return last;
}

inline std::optional<double> to_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline void erase_all(std::string& s, std::string_view what) {
  for (auto pos = s.find(what); pos != std::string::npos; pos = s.find(what)) s.erase(pos, what.size());
}

}  // namespace detail

// The final \boxed{} content, else the last standalone numeric expression.
inline std::optional<std::string> extract_answer(std::string_view completion_text) {
  if (auto boxed = detail::last_boxed(completion_text)) return boxed;
  return detail::last_standalone_number(completion_text);
}

// Parses plain, comma-grouped, fractional (a/b, \frac{a}{b}) and lightly
// LaTeX-decorated numbers.
inline std::optional<double> parse_numeric(std::string_view text) {
  std::string s(detail::trim(text));
  for (std::string_view junk : {"\\left", "\\right", "\\!", "\\,", "\\$", "$", " ", "\\%", "%"}) {
    detail::erase_all(s, junk);
  }
  detail::erase_all(s, "{,}");
  // Thousands separators.
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (s[i] == ',' && detail::is_digit(s[i - 1]) && detail::is_digit(s[i + 1])) s.erase(i--, 1);
  }
  while (!s.empty() && s.back() == '.') s.pop_back();
  if (s.empty()) return std::nullopt;

  bool negative = false;
  std::string_view body = s;
  if (body.front() == '-') {
    negative = true;
    body.remove_prefix(1);
  }
  for (std::string_view frac : {"\\dfrac{", "\\tfrac{", "\\frac{"}) {
    if (body.starts_with(frac)) {
      auto rest = body.substr(frac.size());
      const auto close = rest.find('}');
      if (close == std::string_view::npos || close + 1 >= rest.size() || rest[close + 1] != '{' ||
          rest.back() != '}') {
        return std::nullopt;
      }
      auto num = detail::to_double(rest.substr(0, close));
      auto den = detail::to_double(rest.substr(close + 2, rest.size() - close - 3));
      if (!num || !den || *den == 0.0) return std::nullopt;
      const double v = *num / *den;
      return negative ? -v : v;
    }
  }
  if (const auto slash = body.find('/'); slash != std::string_view::npos) {
    auto num = detail::to_double(body.substr(0, slash));
    auto den = detail::to_double(body.substr(slash + 1));
    if (!num || !den || *den == 0.0) return std::nullopt;
    const double v = *num / *den;
    return negative ? -v : v;
  }
  auto v = detail::to_double(body);
  if (!v) return std::nullopt;
  return negative ? -*v : *v;
}

// Relative tolerance 1e-9.
inline bool numeric_match(double a, double b) {
  if (a == b) return true;
  return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b));
}

inline double usage_cost(std::int64_t prompt_tokens, std::int64_t completion_tokens, const Pricing& p) {
  // Dividing (rather than multiplying by 1e-6) rounds each term once.
  return static_cast<double>(prompt_tokens) * p.usd_per_1m_input_tokens / 1e6 +
         static_cast<double>(completion_tokens) * p.usd_per_1m_output_tokens / 1e6;
}

// ---- dataset --------------------------------------------------------------

struct DatasetItem {
  std::string query_id;
  std::string question;
  std::string gold_answer;
};

inline std::vector<DatasetItem> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open dataset '" + path.string() + "'", "dataset");
  std::vector<DatasetItem> items;
  std::unordered_set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (detail::trim(text).empty()) continue;
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorKind::parse, "dataset line " + std::to_string(line) + ": malformed JSON", {}, line);
    }
    DatasetItem item;
    for (const char* key : {"query_id", "question", "gold_answer"}) {
      if (!j.contains(key)) {
        throw Error(ErrorKind::missing_field,
                    "dataset line " + std::to_string(line) + ": missing '" + key + "'", key, line);
      }
    }
    item.query_id = j["query_id"].get<std::string>();
    item.question = j["question"].get<std::string>();
    const auto& gold = j["gold_answer"];
    item.gold_answer = gold.is_string() ? gold.get<std::string>() : gold.dump();
    if (!parse_numeric(item.gold_answer)) {
      throw Error(ErrorKind::out_of_range,
                  "dataset line " + std::to_string(line) + ": gold_answer is not numeric", "gold_answer",
                  line);
    }
    if (!seen.insert(item.query_id).second) {
      throw Error(ErrorKind::duplicate, "dataset line " + std::to_string(line) + ": duplicate query_id",
                  "query_id", line);
    }
    items.push_back(std::move(item));
  }
  return items;
}

// ---- HTTP client ----------------------------------------------------------

struct ChatCompletion {
  nlohmann::json body;
  double latency_seconds = 0.0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

// Transport failure that survived every retry.
class TransportFailure : public Error {
 public:
  TransportFailure(const std::string& message, std::size_t attempts)
      : Error(ErrorKind::transport, message), attempts_(attempts) {}
  std::size_t attempts() const noexcept { return attempts_; }

 private:
  std::size_t attempts_;
};

struct BaseUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash
};

inline BaseUrl split_base_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(ErrorKind::invalid_argument, "base_url must include a scheme", "base_url");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  BaseUrl out;
  out.origin = std::string(url.substr(0, path_start));
  if (path_start != std::string_view::npos) out.path = std::string(url.substr(path_start));
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace detail

// One client per worker thread; not shareable across threads.
class ChatClient {
 public:
  explicit ChatClient(const EndpointConfig& config)
      : config_(config), url_(split_base_url(config.base_url)), http_(url_.origin) {
    const auto secs = static_cast<time_t>(config.timeout_seconds);
    const auto usecs = static_cast<time_t>((config.timeout_seconds - static_cast<double>(secs)) * 1e6);
    http_.set_connection_timeout(secs, usecs);
    http_.set_read_timeout(secs, usecs);
    http_.set_write_timeout(secs, usecs);
    if (!config.api_key.empty()) http_.set_bearer_token_auth(config.api_key);
  }

  // POSTs to {base_url}/chat/completions with retries. Latency covers the
  // successful attempt only. Missing usage data is a hard error.
  ChatCompletion complete(const nlohmann::json& request, Rng& jitter) {
    const std::string path = url_.path + "/chat/completions";
    const std::string payload = request.dump();
    std::string last_error;
    const std::size_t attempts = config_.max_retries + 1;
    for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
      if (attempt > 0) {
        const double base = std::min(config_.backoff_max_seconds,
                                     config_.backoff_initial_seconds * std::pow(2.0, double(attempt - 1)));
        const double delay = base * (0.5 + 0.5 * jitter.uniform());
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
      }
      const auto t0 = std::chrono::steady_clock::now();
      auto res = http_.Post(path, payload, "application/json");
      const auto t1 = std::chrono::steady_clock::now();
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP " + std::to_string(res->status);
        if (detail::retryable_status(res->status)) continue;
        throw TransportFailure(last_error, attempt + 1);
      }
      ChatCompletion out;
      out.body = nlohmann::json::parse(res->body, nullptr, false);
      if (out.body.is_discarded() || !out.body.is_object()) {
        last_error = "malformed response body";
        continue;
      }
      out.latency_seconds = std::chrono::duration<double>(t1 - t0).count();
      const auto usage = out.body.find("usage");
      if (usage == out.body.end() || !usage->is_object() || !usage->contains("prompt_tokens") ||
          !usage->contains("completion_tokens")) {
        throw Error(ErrorKind::protocol, "response has no usage data; cost cannot be computed", "usage");
      }
      out.prompt_tokens = (*usage)["prompt_tokens"].get<std::int64_t>();
      out.completion_tokens = (*usage)["completion_tokens"].get<std::int64_t>();
      return out;
    }
    throw TransportFailure(last_error.empty() ? "request failed" : last_error, attempts);
  }

  const EndpointConfig& config() const { return config_; }

 private:
  const EndpointConfig& config_;
  BaseUrl url_;
  httplib::Client http_;
};

// ---- probe ----------------------------------------------------------------

inline std::string fill_template(std::string_view tmpl, std::string_view question,
                                 std::string_view answer = {}) {
  std::string out(tmpl);
  auto replace = [&](std::string_view key, std::string_view value) {
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size())) {
      out.replace(pos, key.size(), value);
    }
  };
  replace("{question}", question);
  replace("{answer}", answer);
  return out;
}

namespace detail {

inline bool is_true_token(std::string_view token) {
  auto t = trim(token);
  if (t.size() != 4) return false;
  std::string lower;
  for (char c : t) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "true";
}

inline std::string message_text(const nlohmann::json& choice) {
  const auto msg = choice.find("message");
  if (msg == choice.end() || !msg->is_object()) return {};
  const auto content = msg->find("content");
  if (content == msg->end() || !content->is_string()) return {};
  return content->get<std::string>();
}

// Probability mass on "True" in the first generated token, if log-probabilities
// were returned.
inline std::optional<double> true_probability(const nlohmann::json& body) {
  const auto& choices = body.value("choices", nlohmann::json::array());
  if (choices.empty()) return std::nullopt;
  const auto lp = choices[0].find("logprobs");
  if (lp == choices[0].end() || !lp->is_object()) return std::nullopt;
  const auto content = lp->find("content");
  if (content == lp->end() || !content->is_array() || content->empty()) return std::nullopt;
  const auto& first = (*content)[0];
  double p = 0.0;
  bool seen = false;
  if (auto top = first.find("top_logprobs"); top != first.end() && top->is_array() && !top->empty()) {
    for (const auto& cand : *top) {
      if (!is_true_token(cand.value("token", ""))) continue;
      p += std::exp(cand.value("logprob", -std::numeric_limits<double>::infinity()));
    }
    seen = true;
  } else if (first.contains("token") && first.contains("logprob")) {
    if (is_true_token(first["token"].get<std::string>())) p = std::exp(first["logprob"].get<double>());
    seen = true;
  }
  if (!seen) return std::nullopt;
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace detail

struct ProbeResult {
  double p_true = 0.0;
  double latency_seconds = 0.0;
  double cost_usd = 0.0;
  bool sampled = false;
};

inline ProbeResult run_probe(ChatClient& client, std::string_view question, std::string_view answer,
                             Rng& jitter) {
  const auto& cfg = client.config();
  const std::string prompt = fill_template(cfg.probe_template, question, answer);
  nlohmann::json req = {
      {"model", cfg.model_id},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
      {"max_tokens", 1},
      {"temperature", 0.0},
      {"logprobs", true},
      {"top_logprobs", 5},
  };
  ProbeResult result;
  auto first = client.complete(req, jitter);
  result.latency_seconds += first.latency_seconds;
  result.cost_usd += usage_cost(first.prompt_tokens, first.completion_tokens, cfg.pricing);
  if (auto p = detail::true_probability(first.body)) {
    result.p_true = *p;
    return result;
  }

  // No log-probabilities: fraction of "True" among temperature-1 samples.
  result.sampled = true;
  std::size_t collected = 0, trues = 0;
  while (collected < cfg.probe_samples) {
    nlohmann::json sreq = {
        {"model", cfg.model_id},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
        {"max_tokens", 2},
        {"temperature", 1.0},
        {"n", cfg.probe_samples - collected},
    };
    auto resp = client.complete(sreq, jitter);
    result.latency_seconds += resp.latency_seconds;
    result.cost_usd += usage_cost(resp.prompt_tokens, resp.completion_tokens, cfg.pricing);
    const auto& choices = resp.body.value("choices", nlohmann::json::array());
    if (choices.empty()) throw Error(ErrorKind::protocol, "probe response has no choices", "choices");
    for (const auto& c : choices) {
      if (collected == cfg.probe_samples) break;
      ++collected;
      const std::string text = detail::message_text(c);
      auto t = detail::trim(text);
      if (t.size() >= 4 && detail::is_true_token(t.substr(0, 4))) ++trues;
    }
  }
  result.p_true = static_cast<double>(trues) / static_cast<double>(cfg.probe_samples);
  return result;
}

// ---- collect ---------------------------------------------------------------

struct CollectSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::size_t unparsed = 0;
};

inline TraceRecord collect_one(ChatClient& client, const DatasetItem& item, ModelRole role, bool probe,
                               Rng& jitter) {
  const auto& cfg = client.config();
  nlohmann::json req = {
      {"model", cfg.model_id},
      {"messages", nlohmann::json::array(
                       {{{"role", "user"}, {"content", fill_template(cfg.answer_template, item.question)}}})},
      {"temperature", cfg.temperature},
  };
  if (cfg.max_tokens) req["max_tokens"] = *cfg.max_tokens;
  auto answer = client.complete(req, jitter);
  const auto& choices = answer.body.value("choices", nlohmann::json::array());
  if (choices.empty()) throw Error(ErrorKind::protocol, "answer response has no choices", "choices");
  const std::string text = detail::message_text(choices[0]);

  TraceRecord rec;
  rec.query_id = item.query_id;
  rec.model_id = cfg.model_id;
  rec.role = role;
  rec.output_tokens = answer.completion_tokens;
  const double answer_cost = usage_cost(answer.prompt_tokens, answer.completion_tokens, cfg.pricing);

  const auto extracted = extract_answer(text);
  const auto value = extracted ? parse_numeric(*extracted) : std::nullopt;
  const auto gold = parse_numeric(item.gold_answer);
  rec.answer_unparsed = !value.has_value();
  rec.correct = value && gold && numeric_match(*value, *gold);

  if (probe) {
    const auto p = run_probe(client, item.question, extracted.value_or(std::string(detail::trim(text))), jitter);
    rec.p_true = p.p_true;
    rec.components = CallComponents{answer.latency_seconds, p.latency_seconds, answer_cost, p.cost_usd};
    rec.latency_seconds = answer.latency_seconds + p.latency_seconds;
    rec.cost_usd = answer_cost + p.cost_usd;
  } else {
    rec.latency_seconds = answer.latency_seconds;
    rec.cost_usd = answer_cost;
  }
  validate(rec);
  return rec;
}

// Appends one JSONL record per completed item to `out_path`; items already
// present there are skipped. Items whose requests keep failing go to
// `failures_path` and the run continues. Protocol errors abort the run after
// in-flight items finish.
inline CollectSummary collect(std::span<const DatasetItem> items, const EndpointConfig& endpoint,
                              ModelRole role, bool probe, const std::filesystem::path& out_path,
                              const std::filesystem::path& failures_path) {
  validate(endpoint);
  if (probe && role != ModelRole::non_reasoning) {
    throw Error(ErrorKind::invalid_argument, "the P(True) probe is only for the non_reasoning role", "probe");
  }

  std::unordered_set<std::string> done;
  if (std::filesystem::exists(out_path)) {
    for (const auto& rec : ingest(out_path, role)) {
      if (rec.model_id == endpoint.model_id) done.insert(rec.query_id);
    }
  }

  std::vector<const DatasetItem*> todo;
  CollectSummary summary;
  for (const auto& item : items) {
    if (done.contains(item.query_id)) {
      ++summary.skipped;
    } else {
      todo.push_back(&item);
    }
  }
  if (todo.empty()) return summary;

  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream out(out_path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorKind::io, "cannot append to '" + out_path.string() + "'", "out");
  std::ofstream failures;

  std::mutex write_mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;

  auto worker = [&] {
    ChatClient client(endpoint);
    for (;;) {
      if (abort.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const DatasetItem& item = *todo[i];
      Rng jitter(endpoint.seed ^ detail::fnv1a(item.query_id));
      try {
        TraceRecord rec = collect_one(client, item, role, probe, jitter);
        std::lock_guard lock(write_mutex);
        out << to_jsonl_line(rec) << '\n';
        out.flush();
        ++summary.written;
        if (rec.answer_unparsed) ++summary.unparsed;
      } catch (const TransportFailure& e) {
        std::lock_guard lock(write_mutex);
        if (!failures.is_open()) {
          failures.open(failures_path, std::ios::binary | std::ios::app);
          if (!failures) {
            fatal = std::make_exception_ptr(
                Error(ErrorKind::io, "cannot write failures file '" + failures_path.string() + "'", "failures"));
            abort = true;
            return;
          }
        }
        nlohmann::ordered_json f;
        f["query_id"] = item.query_id;
        f["model_id"] = endpoint.model_id;
        f["error"] = e.what();
        f["attempts"] = e.attempts();
        failures << f.dump() << '\n';
        failures.flush();
        ++summary.failed;
      } catch (...) {
        std::lock_guard lock(write_mutex);
        if (!fatal) fatal = std::current_exception();
        abort = true;
        return;
      }
    }
  };

  const std::size_t n_workers = std::min(endpoint.max_in_flight, todo.size());
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (fatal) std::rethrow_exception(fatal);
  return summary;
}

}  // namespace ffoa
