#pragma once

// Trace data model plus JSONL ingestion, validation, and per-query joining of
// non-reasoning / reasoning model runs.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "ffoa/error.hpp"

namespace ffoa {

enum class ModelRole { reasoning, non_reasoning };

inline std::string_view to_string(ModelRole role) {
  return role == ModelRole::reasoning ? "reasoning" : "non_reasoning";
}

inline std::optional<ModelRole> parse_role(std::string_view text) {
  if (text == "reasoning") return ModelRole::reasoning;
  if (text == "non_reasoning") return ModelRole::non_reasoning;
  return std::nullopt;
}

// Latency/cost split between the answer call and the P(True) probe. The
// headline latency_seconds/cost_usd of a record already include both.
struct CallComponents {
  double answer_latency_seconds = 0.0;
  double probe_latency_seconds = 0.0;
  double answer_cost_usd = 0.0;
  double probe_cost_usd = 0.0;

  bool operator==(const CallComponents&) const = default;
};

struct TraceRecord {
  std::string query_id;
  std::string model_id;
  ModelRole role = ModelRole::reasoning;
  bool correct = false;
  double latency_seconds = 0.0;
  double cost_usd = 0.0;
  std::int64_t output_tokens = 0;
  std::optional<double> p_true;
  // Auxiliary fields written by the collector.
  std::optional<CallComponents> components;
  bool answer_unparsed = false;

  bool operator==(const TraceRecord&) const = default;
};

struct ModelRun {
  bool correct = false;
  double latency_seconds = 0.0;
  double cost_usd = 0.0;
  std::int64_t output_tokens = 0;

  bool operator==(const ModelRun&) const = default;
};

struct NonReasoningRun : ModelRun {
  double p_true = 0.0;

  bool operator==(const NonReasoningRun&) const = default;
};

struct JoinedRecord {
  std::string query_id;
  NonReasoningRun nr;
  ModelRun r;

  bool operator==(const JoinedRecord&) const = default;
};

struct TraceMetadata {
  std::string nr_model_id;
  std::string r_model_id;
  std::string source;

  bool operator==(const TraceMetadata&) const = default;
};

struct Trace {
  std::vector<JoinedRecord> records;
  TraceMetadata metadata;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
};

struct JoinResult {
  Trace trace;
  std::size_t unmatched_nr = 0;
  std::size_t unmatched_r = 0;
};

namespace detail {

inline bool valid_nonnegative(double v) { return std::isfinite(v) && v >= 0.0; }

inline const nlohmann::json& required_field(const nlohmann::json& obj, const char* name,
                                            std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) {
    throw Error(ErrorKind::missing_field,
                "line " + std::to_string(line) + ": missing required field '" + name + "'",
                name, line);
  }
  return *it;
}

[[noreturn]] inline void bad_value(const char* name, std::size_t line, const std::string& why) {
  throw Error(ErrorKind::out_of_range,
              "line " + std::to_string(line) + ": field '" + name + "' " + why, name, line);
}

[[noreturn]] inline void bad_type(const char* name, std::size_t line, const char* expected) {
  throw Error(ErrorKind::parse,
              "line " + std::to_string(line) + ": field '" + name + "' must be " + expected,
              name, line);
}

inline double number_field(const nlohmann::json& obj, const char* name, std::size_t line) {
  const auto& v = required_field(obj, name, line);
  if (!v.is_number()) bad_type(name, line, "a number");
  const double d = v.get<double>();
  if (!valid_nonnegative(d)) bad_value(name, line, "must be finite and >= 0");
  return d;
}

inline std::optional<double> optional_number(const nlohmann::json& obj, const char* name,
                                             std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) bad_type(name, line, "a number");
  const double d = it->get<double>();
  if (!valid_nonnegative(d)) bad_value(name, line, "must be finite and >= 0");
  return d;
}

}  // namespace detail

// Checks the TraceRecord invariants; `line` is only used for error context.
inline void validate(const TraceRecord& rec, std::size_t line = 0) {
  if (rec.query_id.empty()) detail::bad_value("query_id", line, "must be nonempty");
  if (!detail::valid_nonnegative(rec.latency_seconds))
    detail::bad_value("latency_seconds", line, "must be finite and >= 0");
  if (!detail::valid_nonnegative(rec.cost_usd))
    detail::bad_value("cost_usd", line, "must be finite and >= 0");
  if (rec.output_tokens < 0) detail::bad_value("output_tokens", line, "must be >= 0");
  if (rec.p_true && !(*rec.p_true >= 0.0 && *rec.p_true <= 1.0))
    detail::bad_value("p_true", line, "must lie in [0, 1]");
}

// Parses one JSONL line. Unknown fields are ignored. When the line omits
// "role", `default_role` is used.
inline TraceRecord parse_record(std::string_view text, std::size_t line,
                                std::optional<ModelRole> default_role = std::nullopt) {
  auto obj = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded()) {
    throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": malformed JSON", {}, line);
  }
  if (!obj.is_object()) {
    throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": expected a JSON object", {},
                line);
  }

  TraceRecord rec;
  const auto& qid = detail::required_field(obj, "query_id", line);
  if (!qid.is_string()) detail::bad_type("query_id", line, "a string");
  rec.query_id = qid.get<std::string>();

  const auto& mid = detail::required_field(obj, "model_id", line);
  if (!mid.is_string()) detail::bad_type("model_id", line, "a string");
  rec.model_id = mid.get<std::string>();

  if (auto it = obj.find("role"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) detail::bad_type("role", line, "a string");
    auto role = parse_role(it->get<std::string>());
    if (!role) detail::bad_value("role", line, "must be 'reasoning' or 'non_reasoning'");
    rec.role = *role;
  } else if (default_role) {
    rec.role = *default_role;
  } else {
    detail::required_field(obj, "role", line);
  }

  const auto& correct = detail::required_field(obj, "correct", line);
  if (!correct.is_boolean()) detail::bad_type("correct", line, "a boolean");
  rec.correct = correct.get<bool>();

  rec.latency_seconds = detail::number_field(obj, "latency_seconds", line);
  rec.cost_usd = detail::number_field(obj, "cost_usd", line);

  const auto& tokens = detail::required_field(obj, "output_tokens", line);
  if (tokens.is_number_unsigned()) {
    const auto v = tokens.get<std::uint64_t>();
    if (v > static_cast<std::uint64_t>(INT64_MAX)) detail::bad_value("output_tokens", line, "is too large");
    rec.output_tokens = static_cast<std::int64_t>(v);
  } else if (tokens.is_number_integer()) {
    rec.output_tokens = tokens.get<std::int64_t>();
  } else {
    detail::bad_type("output_tokens", line, "an integer");
  }

  if (auto it = obj.find("p_true"); it != obj.end() && !it->is_null()) {
    if (!it->is_number()) detail::bad_type("p_true", line, "a number");
    rec.p_true = it->get<double>();
  }

  auto al = detail::optional_number(obj, "answer_latency_seconds", line);
  auto pl = detail::optional_number(obj, "probe_latency_seconds", line);
  auto ac = detail::optional_number(obj, "answer_cost_usd", line);
  auto pc = detail::optional_number(obj, "probe_cost_usd", line);
  if (al || pl || ac || pc) {
    rec.components = CallComponents{al.value_or(0.0), pl.value_or(0.0), ac.value_or(0.0),
                                    pc.value_or(0.0)};
  }
  if (auto it = obj.find("answer_unparsed"); it != obj.end() && !it->is_null()) {
    if (!it->is_boolean()) detail::bad_type("answer_unparsed", line, "a boolean");
    rec.answer_unparsed = it->get<bool>();
  }

  validate(rec, line);
  return rec;
}

inline nlohmann::ordered_json to_json(const TraceRecord& rec) {
  nlohmann::ordered_json j;
  j["query_id"] = rec.query_id;
  j["model_id"] = rec.model_id;
  j["role"] = to_string(rec.role);
  j["correct"] = rec.correct;
  j["latency_seconds"] = rec.latency_seconds;
  j["cost_usd"] = rec.cost_usd;
  j["output_tokens"] = rec.output_tokens;
  if (rec.p_true) j["p_true"] = *rec.p_true;
  if (rec.components) {
    j["answer_latency_seconds"] = rec.components->answer_latency_seconds;
    j["probe_latency_seconds"] = rec.components->probe_latency_seconds;
    j["answer_cost_usd"] = rec.components->answer_cost_usd;
    j["probe_cost_usd"] = rec.components->probe_cost_usd;
  }
  if (rec.answer_unparsed) j["answer_unparsed"] = true;
  return j;
}

inline std::string to_jsonl_line(const TraceRecord& rec) { return to_json(rec).dump(); }

// Parses a whole JSONL stream. Blank lines are skipped; line numbers in errors
// count every physical line.
inline std::vector<TraceRecord> ingest_stream(std::istream& in, ModelRole role) {
  std::vector<TraceRecord> out;
  std::unordered_set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    TraceRecord rec = parse_record(text, line, role);
    if (rec.role != role) {
      detail::bad_value("role", line,
                        "is '" + std::string(to_string(rec.role)) + "', expected '" +
                            std::string(to_string(role)) + "'");
    }
    std::string key = rec.query_id;
    key.push_back('\0');
    key += rec.model_id;
    if (!seen.insert(std::move(key)).second) {
      throw Error(ErrorKind::duplicate,
                  "line " + std::to_string(line) + ": duplicate (query_id, model_id) pair ('" +
                      rec.query_id + "', '" + rec.model_id + "')",
                  "query_id", line);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<TraceRecord> ingest(const std::filesystem::path& path, ModelRole role) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open trace file '" + path.string() + "'", "path");
  return ingest_stream(in, role);
}

inline JoinResult join(std::span<const TraceRecord> nr_records,
                       std::span<const TraceRecord> r_records) {
  std::unordered_map<std::string_view, const TraceRecord*> r_by_id;
  r_by_id.reserve(r_records.size());
  for (const auto& rec : r_records) {
    if (rec.role != ModelRole::reasoning) {
      throw Error(ErrorKind::invalid_argument,
                  "reasoning-side record '" + rec.query_id + "' has role non_reasoning", "role");
    }
    if (!r_by_id.emplace(rec.query_id, &rec).second) {
      throw Error(ErrorKind::duplicate, "duplicate query_id '" + rec.query_id + "' in reasoning records",
                  "query_id");
    }
  }

  std::unordered_set<std::string_view> nr_ids;
  nr_ids.reserve(nr_records.size());
  JoinResult result;
  for (const auto& rec : nr_records) {
    if (rec.role != ModelRole::non_reasoning) {
      throw Error(ErrorKind::invalid_argument,
                  "non-reasoning-side record '" + rec.query_id + "' has role reasoning", "role");
    }
    if (!nr_ids.insert(rec.query_id).second) {
      throw Error(ErrorKind::duplicate,
                  "duplicate query_id '" + rec.query_id + "' in non-reasoning records", "query_id");
    }
    if (!rec.p_true) {
      throw Error(ErrorKind::missing_field,
                  "non-reasoning record '" + rec.query_id + "' has no p_true", "p_true");
    }
    validate(rec);
  }

  for (const auto& rec : nr_records) {
    auto it = r_by_id.find(rec.query_id);
    if (it == r_by_id.end()) {
      ++result.unmatched_nr;
      continue;
    }
    const TraceRecord& r = *it->second;
    JoinedRecord joined;
    joined.query_id = rec.query_id;
    joined.nr.correct = rec.correct;
    joined.nr.latency_seconds = rec.latency_seconds;
    joined.nr.cost_usd = rec.cost_usd;
    joined.nr.output_tokens = rec.output_tokens;
    joined.nr.p_true = *rec.p_true;
    joined.r = ModelRun{r.correct, r.latency_seconds, r.cost_usd, r.output_tokens};
    result.trace.records.push_back(std::move(joined));
    if (result.trace.metadata.nr_model_id.empty()) {
      result.trace.metadata.nr_model_id = rec.model_id;
      result.trace.metadata.r_model_id = r.model_id;
    }
  }
  for (const auto& rec : r_records) {
    if (!nr_ids.contains(rec.query_id)) ++result.unmatched_r;
  }
  if (result.trace.empty()) {
    throw Error(ErrorKind::empty_input, "join produced no records (no shared query_id)");
  }
  return result;
}

// Splits a joined trace back into per-model records (inverse of join on the
// matched subset).
inline std::pair<std::vector<TraceRecord>, std::vector<TraceRecord>> split_records(const Trace& trace) {
  std::pair<std::vector<TraceRecord>, std::vector<TraceRecord>> out;
  out.first.reserve(trace.size());
  out.second.reserve(trace.size());
  for (const auto& rec : trace.records) {
    TraceRecord nr;
    nr.query_id = rec.query_id;
    nr.model_id = trace.metadata.nr_model_id;
    nr.role = ModelRole::non_reasoning;
    nr.correct = rec.nr.correct;
    nr.latency_seconds = rec.nr.latency_seconds;
    nr.cost_usd = rec.nr.cost_usd;
    nr.output_tokens = rec.nr.output_tokens;
    nr.p_true = rec.nr.p_true;
    out.first.push_back(std::move(nr));

    TraceRecord r;
    r.query_id = rec.query_id;
    r.model_id = trace.metadata.r_model_id;
    r.role = ModelRole::reasoning;
    r.correct = rec.r.correct;
    r.latency_seconds = rec.r.latency_seconds;
    r.cost_usd = rec.r.cost_usd;
    r.output_tokens = rec.r.output_tokens;
    out.second.push_back(std::move(r));
  }
  return out;
}

inline void write_jsonl(const std::filesystem::path& path, std::span<const TraceRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'", "path");
  for (const auto& rec : records) out << to_jsonl_line(rec) << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed for '" + path.string() + "'", "path");
}

// A trace directory holds nr.jsonl (non-reasoning) and r.jsonl (reasoning).
inline constexpr std::string_view kNrFile = "nr.jsonl";
inline constexpr std::string_view kRFile = "r.jsonl";

inline void write_trace_dir(const Trace& trace, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto [nr, r] = split_records(trace);
  write_jsonl(dir / kNrFile, nr);
  write_jsonl(dir / kRFile, r);
}

inline JoinResult load_trace(const std::filesystem::path& nr_path,
                             const std::filesystem::path& r_path) {
  auto nr = ingest(nr_path, ModelRole::non_reasoning);
  auto r = ingest(r_path, ModelRole::reasoning);
  JoinResult result = join(nr, r);
  result.trace.metadata.source = nr_path.parent_path() == r_path.parent_path()
                                     ? nr_path.parent_path().generic_string()
                                     : nr_path.generic_string() + "+" + r_path.generic_string();
  return result;
}

inline JoinResult load_trace_dir(const std::filesystem::path& dir) {
  return load_trace(dir / kNrFile, dir / kRFile);
}

inline void require_nonempty(const Trace& trace) {
  if (trace.empty()) throw Error(ErrorKind::empty_input, "trace is empty", "trace");
}

}  // namespace ffoa
