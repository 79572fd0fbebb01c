#pragma once

// Command-line front end. `run` is the whole program; tools/ffoa_main.cpp only
// forwards argv. Exit codes: 0 success, 1 failure (one-line JSON error on the
// error stream), 2 unknown or missing subcommand (usage printed).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ffoa/calibrate.hpp"
#include "ffoa/cascade_sim.hpp"
#include "ffoa/collector.hpp"
#include "ffoa/error.hpp"
#include "ffoa/metrics.hpp"
#include "ffoa/smooth.hpp"
#include "ffoa/synth.hpp"
#include "ffoa/trace_store.hpp"

namespace ffoa::cli {

namespace fs = std::filesystem;

struct TraceArgs {
  std::string dir;
  std::string nr;
  std::string r;
};

struct GridArgs {
  double start = 0.0;
  double stop = 0.2;
  double step = 0.005;
};

struct Options {
  TraceArgs trace;
  GridArgs grid;
  std::string system = "ffoa";
  double u = 0.5;
  double r = 0.1;
  std::string out;
  std::string config;
  std::optional<double> calibration_fraction;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t permutations = 1000;
  std::size_t bins = 10;
  double span = kDefaultSpan;
  std::size_t points = 100;
  bool clamp = false;
  std::string model = "r";
  std::vector<double> u_values{0.3, 0.5, 0.6, 0.75};
  std::string preset = "paper";
  std::string spec_file;
  std::optional<std::size_t> n;
  std::string file;
  std::string role;
  std::string dataset;
  std::string failures;
  bool probe = false;
};

namespace detail {

inline void add_trace_flags(CLI::App* cmd, TraceArgs& t) {
  cmd->add_option("--trace", t.dir, "Trace directory holding nr.jsonl and r.jsonl");
  cmd->add_option("--nr", t.nr, "Non-reasoning model JSONL");
  cmd->add_option("--r", t.r, "Reasoning model JSONL");
}

inline void add_grid_flags(CLI::App* cmd, GridArgs& g) {
  cmd->add_option("--grid-start", g.start, "First rejection rate")->capture_default_str();
  cmd->add_option("--grid-stop", g.stop, "Last rejection rate (inclusive)")->capture_default_str();
  cmd->add_option("--grid-step", g.step, "Rejection-rate spacing")->capture_default_str();
}

inline JoinResult load(const TraceArgs& t) {
  if (!t.dir.empty()) return load_trace_dir(t.dir);
  if (t.nr.empty() || t.r.empty()) {
    throw Error(ErrorKind::invalid_argument, "give --trace DIR or both --nr and --r", "trace");
  }
  return load_trace(t.nr, t.r);
}

inline void check_unit(double v, const char* name, bool allow_one = true) {
  if (!(v >= 0.0 && (allow_one ? v <= 1.0 : v < 1.0))) {
    throw Error(ErrorKind::out_of_range,
                std::string("--") + name + " must lie in " + (allow_one ? "[0, 1]" : "[0, 1)"), name);
  }
}

inline CascadeSystem parse_system(const Options& o) {
  if (o.system == "ask") return CascadeSystem::ask();
  if (o.system == "ffoa") {
    check_unit(o.u, "u");
    return CascadeSystem::ffoa(o.u);
  }
  throw Error(ErrorKind::invalid_argument, "--system must be 'ask' or 'ffoa'", "system");
}

inline std::vector<double> grid_of(const GridArgs& g) {
  try {
    return make_grid(g.start, g.stop, g.step);
  } catch (const Error& e) {
    throw Error(e.kind(), e.what(), e.field() == "grid_step" ? "grid-step" : "grid-start");
  }
}

// Writes to `path`, or to `fallback` when the path is empty or "-".
inline void emit(const std::string& path, std::ostream& fallback, const std::string& content) {
  if (path.empty() || path == "-") {
    fallback << content;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::io, "cannot write '" + path + "'", "out");
  f << content;
}

inline std::string json_text(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

inline std::string u_tag(double u) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << u;
  return s.str();
}

inline nlohmann::ordered_json system_json(const CascadeSystem& s) {
  nlohmann::ordered_json j;
  j["kind"] = s.kind == CascadeSystem::Kind::ask ? "ask" : "ffoa";
  j["u"] = s.kind == CascadeSystem::Kind::ask ? nlohmann::ordered_json(nullptr)
                                              : nlohmann::ordered_json(s.utilization);
  return j;
}

inline nlohmann::ordered_json join_report(const JoinResult& jr) {
  nlohmann::ordered_json j;
  j["records"] = jr.trace.size();
  j["unmatched_nr"] = jr.unmatched_nr;
  j["unmatched_r"] = jr.unmatched_r;
  j["nr_model_id"] = jr.trace.metadata.nr_model_id;
  j["r_model_id"] = jr.trace.metadata.r_model_id;
  j["source"] = jr.trace.metadata.source;
  return j;
}

struct CalibratedTraces {
  Trace calibration;
  Trace evaluation;
};

inline CalibratedTraces maybe_split(const Trace& trace, const Options& o) {
  if (!o.calibration_fraction) return {trace, trace};
  auto split = split_trace(trace, *o.calibration_fraction, o.seed);
  return {std::move(split.calibration), std::move(split.evaluation)};
}

// ---- subcommands -----------------------------------------------------------

inline int cmd_validate(const Options& o, std::ostream& out) {
  auto role = parse_role(o.role);
  if (!role) throw Error(ErrorKind::invalid_argument, "--role must be reasoning or non_reasoning", "role");
  const auto records = ingest(o.file, *role);
  nlohmann::ordered_json j;
  j["file"] = o.file;
  j["role"] = o.role;
  j["records"] = records.size();
  j["with_p_true"] = std::ranges::count_if(records, [](const TraceRecord& r) { return r.p_true.has_value(); });
  j["valid"] = true;
  emit(o.out, out, json_text(j));
  return 0;
}

inline int cmd_join(const Options& o, std::ostream& out) {
  emit(o.out, out, json_text(join_report(load(o.trace))));
  return 0;
}

inline int cmd_calibrate(const Options& o, std::ostream& out) {
  check_unit(o.r, "r", false);
  const auto system = parse_system(o);
  const auto jr = load(o.trace);
  const auto traces = maybe_split(jr.trace, o);
  if (system.kind == CascadeSystem::Kind::ask) {
    emit(o.out, out, json_text(to_json(calibrate_ask(traces.calibration, o.r))));
  } else {
    emit(o.out, out, json_text(to_json(calibrate_ffoa(traces.calibration, system.utilization, o.r))));
  }
  return 0;
}

inline int cmd_simulate(const Options& o, std::ostream& out) {
  const auto system = parse_system(o);
  const auto jr = load(o.trace);
  const auto traces = maybe_split(jr.trace, o);
  std::vector<Outcome> outcomes;
  if (!o.config.empty()) {
    std::ifstream f(o.config);
    if (!f) throw Error(ErrorKind::io, "cannot open '" + o.config + "'", "config");
    auto j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::parse, "config is not valid JSON", "config");
    if (system.kind == CascadeSystem::Kind::ask) {
      AskPolicy p;
      p.token_threshold = j.at("token_threshold").get<std::int64_t>();
      p.target_rejection = j.value("target_rejection", 0.0);
      outcomes = simulate_ask(traces.evaluation, p);
    } else {
      outcomes = simulate_ffoa(traces.evaluation, policy_config_from_json(j));
    }
  } else {
    check_unit(o.r, "r", false);
    if (system.kind == CascadeSystem::Kind::ask) {
      outcomes = simulate_ask(traces.evaluation, calibrate_ask(traces.calibration, o.r));
    } else {
      outcomes = simulate_ffoa(traces.evaluation, calibrate_ffoa(traces.calibration, system.utilization, o.r));
    }
  }
  std::ostringstream csv;
  write_outcomes_csv(csv, outcomes);
  emit(o.out, out, csv.str());
  return 0;
}

inline int cmd_curve(const Options& o, std::ostream& out) {
  const auto system = parse_system(o);
  const auto grid = grid_of(o.grid);
  const auto jr = load(o.trace);
  const auto curve = accuracy_rejection_curve(jr.trace, system, grid);
  std::ostringstream csv;
  write_curve_csv(csv, curve);
  emit(o.out, out, csv.str());
  return 0;
}

inline int cmd_auarc(const Options& o, std::ostream& out) {
  const auto system = parse_system(o);
  const auto grid = grid_of(o.grid);
  const auto jr = load(o.trace);
  const auto summary = auarc(accuracy_rejection_curve(jr.trace, system, grid));
  nlohmann::ordered_json j;
  j["system"] = system_json(system);
  auto body = to_json(summary);
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = it.value();
  emit(o.out, out, json_text(j));
  return 0;
}

inline int cmd_drag(const Options& o, std::ostream& out) {
  check_unit(o.u, "u");
  check_unit(o.r, "r", false);
  if (o.permutations < 2) throw Error(ErrorKind::out_of_range, "--permutations must be >= 2", "permutations");
  const auto jr = load(o.trace);
  const auto config = calibrate_ffoa(jr.trace, o.u, o.r);
  nlohmann::ordered_json j;
  j["u"] = o.u;
  j["r"] = o.r;
  j["latency_drag"] = to_json(latency_drag(jr.trace, config));
  j["permutation_test"] = to_json(drag_permutation_test(jr.trace, config, o.permutations, o.seed));
  emit(o.out, out, json_text(j));
  return 0;
}

inline int cmd_profile(const Options& o, std::ostream& out) {
  const auto jr = load(o.trace);
  std::ostringstream csv;
  write_profile_csv(csv, conditional_latency_profile(jr.trace, o.bins));
  emit(o.out, out, csv.str());
  return 0;
}

inline LoessFit loess_for(const Trace& trace, const std::string& model, double span, std::size_t points) {
  if (model != "r" && model != "nr") throw Error(ErrorKind::invalid_argument, "--model must be r or nr", "model");
  if (!(span > 0.0 && span <= 1.0)) throw Error(ErrorKind::out_of_range, "--span must lie in (0, 1]", "span");
  std::vector<double> x, y;
  for (const auto& rec : trace.records) {
    const ModelRun& run = model == "r" ? rec.r : static_cast<const ModelRun&>(rec.nr);
    x.push_back(static_cast<double>(run.output_tokens));
    y.push_back(run.correct ? 1.0 : 0.0);
  }
  const auto eval = linspace_eval_points(x, points);
  return loess_fit(x, y, span, eval);
}

inline int cmd_loess(const Options& o, std::ostream& out) {
  if (o.points < 2) throw Error(ErrorKind::out_of_range, "--points must be >= 2", "points");
  const auto jr = load(o.trace);
  std::ostringstream csv;
  write_loess_csv(csv, loess_for(jr.trace, o.model, o.span, o.points), o.clamp);
  emit(o.out, out, csv.str());
  return 0;
}

inline int cmd_report(const Options& o, std::ostream& out) {
  if (o.out.empty() || o.out == "-") throw Error(ErrorKind::invalid_argument, "--out DIR is required", "out");
  for (double u : o.u_values) check_unit(u, "u-values");
  check_unit(o.r, "r", false);
  if (o.permutations < 2) throw Error(ErrorKind::out_of_range, "--permutations must be >= 2", "permutations");
  const auto grid = grid_of(o.grid);
  const auto jr = load(o.trace);
  const Trace& trace = jr.trace;
  const fs::path dir(o.out);
  fs::create_directories(dir);

  nlohmann::ordered_json report;
  report["source"] = trace.metadata.source;
  report["records"] = trace.size();
  report["grid"] = grid;
  const auto [rs, nrs] = baseline_stats(trace);
  report["baseline"] = nlohmann::ordered_json::array({to_json(rs), to_json(nrs)});

  nlohmann::ordered_json curves = nlohmann::ordered_json::array();
  auto add_curve = [&](const CascadeSystem& sys, const std::string& file) {
    const auto curve = accuracy_rejection_curve(trace, sys, grid);
    std::ostringstream csv;
    write_curve_csv(csv, curve);
    emit((dir / file).string(), out, csv.str());
    nlohmann::ordered_json c;
    c["system"] = system_json(sys);
    c["file"] = file;
    const auto s = auarc(curve);
    c["auarc"] = s.auarc;
    c["mean_latency"] = s.mean_latency;
    c["mean_cost"] = s.mean_cost;
    curves.push_back(c);
  };
  add_curve(CascadeSystem::ask(), "curve_ask.csv");
  std::vector<double> us{0.0};
  for (double u : o.u_values) {
    if (u != 0.0) us.push_back(u);
  }
  for (double u : us) add_curve(CascadeSystem::ffoa(u), "curve_ffoa_u" + u_tag(u) + ".csv");
  report["curves"] = curves;

  nlohmann::ordered_json savings = nlohmann::ordered_json::array();
  for (const auto& row : savings_table(trace, o.u_values, grid)) savings.push_back(to_json(row));
  report["savings_table"] = savings;

  nlohmann::ordered_json drags = nlohmann::ordered_json::array();
  for (double u : us) {
    const auto config = calibrate_ffoa(trace, u, o.r);
    nlohmann::ordered_json d;
    d["u"] = u;
    d["r"] = o.r;
    d["latency_drag"] = to_json(latency_drag(trace, config));
    d["permutation_test"] = to_json(drag_permutation_test(trace, config, o.permutations, o.seed));
    drags.push_back(d);
  }
  report["drag"] = drags;

  std::ostringstream profile;
  write_profile_csv(profile, conditional_latency_profile(trace, std::min(o.bins, trace.size())));
  emit((dir / "profile.csv").string(), out, profile.str());

  std::ostringstream loess;
  write_loess_csv(loess, loess_for(trace, "r", o.span, o.points));
  emit((dir / "loess_r.csv").string(), out, loess.str());

  report["files"] = {"report.json", "curve_ask.csv", "profile.csv", "loess_r.csv"};
  for (double u : us) report["files"].push_back("curve_ffoa_u" + u_tag(u) + ".csv");
  emit((dir / "report.json").string(), out, json_text(report));
  return 0;
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  if (o.out.empty() || o.out == "-") throw Error(ErrorKind::invalid_argument, "--out DIR is required", "out");
  SynthSpec spec;
  if (!o.spec_file.empty()) {
    std::ifstream f(o.spec_file);
    if (!f) throw Error(ErrorKind::io, "cannot open '" + o.spec_file + "'", "spec");
    auto j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::parse, "spec is not valid JSON", "spec");
    spec = synth_spec_from_json(j);
  } else if (o.preset == "paper") {
    spec = paper_preset();
  } else if (o.preset == "independent") {
    spec = independent_preset();
  } else {
    throw Error(ErrorKind::invalid_argument, "--preset must be 'paper' or 'independent'", "preset");
  }
  if (o.seed_given) spec.seed = o.seed;
  if (o.n) {
    if (*o.n < 1) throw Error(ErrorKind::out_of_range, "--n must be >= 1", "n");
    spec.n = *o.n;
  }
  const Trace trace = generate(spec);
  const fs::path dir(o.out);
  write_trace_dir(trace, dir);
  emit((dir / "spec.json").string(), out, json_text(to_json(spec)));
  nlohmann::ordered_json j;
  j["records"] = trace.size();
  j["files"] = {std::string(kNrFile), std::string(kRFile), "spec.json"};
  out << j.dump() << '\n';
  return 0;
}

inline int cmd_collect(const Options& o, std::ostream& out) {
  auto role = parse_role(o.role);
  if (!role) throw Error(ErrorKind::invalid_argument, "--role must be reasoning or non_reasoning", "role");
  if (o.out.empty() || o.out == "-") throw Error(ErrorKind::invalid_argument, "--out FILE is required", "out");
  std::ifstream f(o.config);
  if (!f) throw Error(ErrorKind::io, "cannot open '" + o.config + "'", "config");
  auto cj = nlohmann::json::parse(f, nullptr, false);
  if (cj.is_discarded()) throw Error(ErrorKind::parse, "config is not valid JSON", "config");
  auto endpoint = endpoint_config_from_json(cj, fs::path(o.config).parent_path());
  if (o.seed_given) endpoint.seed = o.seed;
  const auto items = load_dataset(o.dataset);
  const std::string failures = o.failures.empty() ? o.out + ".failures.jsonl" : o.failures;
  const auto s = collect(items, endpoint, *role, o.probe, o.out, failures);
  nlohmann::ordered_json j;
  j["written"] = s.written;
  j["skipped"] = s.skipped;
  j["failed"] = s.failed;
  j["unparsed"] = s.unparsed;
  out << j.dump() << '\n';
  return 0;
}

inline std::string error_json(const std::string& kind, const std::string& message, const std::string& param,
                              std::optional<std::size_t> line = std::nullopt) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  if (!param.empty()) j["parameter"] = param;
  if (line) j["line"] = *line;
  return j.dump();
}

// CLI11 messages look like "--u: Value abc not a number"; pull out the flag.
inline std::string flag_from_message(const std::string& msg) {
  const auto start = msg.find("--");
  if (start == std::string::npos) return {};
  auto end = start + 2;
  while (end < msg.size() && (std::isalnum(static_cast<unsigned char>(msg[end])) || msg[end] == '-')) ++end;
  return msg.substr(start + 2, end - start - 2);
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fail Fast, or Ask: calibrate, simulate, and evaluate human-in-the-loop LLM cascades", "ffoa"};
  app.require_subcommand(1);
  Options o;

  auto* validate_cmd = app.add_subcommand("validate", "Validate a per-model trace JSONL file");
  validate_cmd->add_option("--file", o.file, "Trace JSONL")->required();
  validate_cmd->add_option("--role", o.role, "reasoning | non_reasoning")->required();
  validate_cmd->add_option("--out", o.out, "Output JSON (default stdout)");

  auto* join_cmd = app.add_subcommand("join", "Join the two model traces and report match counts");
  detail::add_trace_flags(join_cmd, o.trace);
  join_cmd->add_option("--out", o.out, "Output JSON (default stdout)");

  auto* calibrate_cmd = app.add_subcommand("calibrate", "Calibrate thresholds for a target (u, r)");
  calibrate_cmd->add_option("--trace", o.trace.dir, "Trace directory")->required();
  calibrate_cmd->add_option("--system", o.system, "ask | ffoa")->capture_default_str();
  calibrate_cmd->add_option("--u", o.u, "Non-reasoning utilization rate")->capture_default_str();
  calibrate_cmd->add_option("--r", o.r, "Target rejection rate")->capture_default_str();
  calibrate_cmd->add_option("--calibration-fraction", o.calibration_fraction, "Calibration subset fraction");
  calibrate_cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  calibrate_cmd->add_option("--out", o.out, "Output JSON (default stdout)");

  auto* simulate_cmd = app.add_subcommand("simulate", "Route every query and write per-query outcomes CSV");
  simulate_cmd->add_option("--trace", o.trace.dir, "Trace directory")->required();
  simulate_cmd->add_option("--system", o.system, "ask | ffoa")->capture_default_str();
  simulate_cmd->add_option("--u", o.u, "Non-reasoning utilization rate")->capture_default_str();
  simulate_cmd->add_option("--r", o.r, "Target rejection rate")->capture_default_str();
  simulate_cmd->add_option("--config", o.config, "Use a saved calibration JSON instead of calibrating");
  simulate_cmd->add_option("--calibration-fraction", o.calibration_fraction, "Calibration subset fraction");
  simulate_cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  simulate_cmd->add_option("--out", o.out, "Output CSV (default stdout)");

  auto* curve_cmd = app.add_subcommand("curve", "Accuracy-rejection curve CSV");
  curve_cmd->add_option("--trace", o.trace.dir, "Trace directory")->required();
  curve_cmd->add_option("--system", o.system, "ask | ffoa")->capture_default_str();
  curve_cmd->add_option("--u", o.u, "Non-reasoning utilization rate")->capture_default_str();
  detail::add_grid_flags(curve_cmd, o.grid);
  curve_cmd->add_option("--out", o.out, "Output CSV (default stdout)");

  auto* auarc_cmd = app.add_subcommand("auarc", "Area under the accuracy-rejection curve");
  auarc_cmd->add_option("--trace", o.trace.dir, "Trace directory")->required();
  auarc_cmd->add_option("--system", o.system, "ask | ffoa")->capture_default_str();
  auarc_cmd->add_option("--u", o.u, "Non-reasoning utilization rate")->capture_default_str();
  detail::add_grid_flags(auarc_cmd, o.grid);
  auarc_cmd->add_option("--out", o.out, "Output JSON (default stdout)");

  auto* drag_cmd = app.add_subcommand("drag", "Latency drag with a permutation test");
  drag_cmd->add_option("--trace", o.trace.dir, "Trace directory")->required();
  drag_cmd->add_option("--u", o.u, "Non-reasoning utilization rate")->capture_default_str();
  drag_cmd->add_option("--r", o.r, "Target rejection rate")->capture_default_str();
  drag_cmd->add_option("--permutations", o.permutations, "Permutation count")->capture_default_str();
  drag_cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  drag_cmd->add_option("--out", o.out, "Output JSON (default stdout)");

  auto* profile_cmd = app.add_subcommand("profile", "Reasoning latency by non-reasoning confidence bin");
  profile_cmd->add_option("--trace", o.trace.dir, "Trace directory")->required();
  profile_cmd->add_option("--bins", o.bins, "Number of equal-count bins")->capture_default_str();
  profile_cmd->add_option("--out", o.out, "Output CSV (default stdout)");

  auto* loess_cmd = app.add_subcommand("loess", "Local linear regression of correctness on output tokens");
  loess_cmd->add_option("--trace", o.trace.dir, "Trace directory")->required();
  loess_cmd->add_option("--model", o.model, "r | nr")->capture_default_str();
  loess_cmd->add_option("--span", o.span, "Neighbourhood fraction in (0, 1]")->capture_default_str();
  loess_cmd->add_option("--points", o.points, "Evaluation points")->capture_default_str();
  loess_cmd->add_flag("--clamp", o.clamp, "Clamp fitted values and band to [0, 1]");
  loess_cmd->add_option("--out", o.out, "Output CSV (default stdout)");

  auto* report_cmd = app.add_subcommand("report", "Full pipeline: curves, AUARC, savings, drag, profile");
  report_cmd->add_option("--trace", o.trace.dir, "Trace directory")->required();
  report_cmd->add_option("--out", o.out, "Output directory")->required();
  report_cmd->add_option("--u-values", o.u_values, "Utilizations to compare against u = 0")
      ->delimiter(',')
      ->capture_default_str();
  report_cmd->add_option("--r", o.r, "Rejection rate for the drag analysis")->capture_default_str();
  detail::add_grid_flags(report_cmd, o.grid);
  report_cmd->add_option("--bins", o.bins, "Profile bins")->capture_default_str();
  report_cmd->add_option("--span", o.span, "LOESS span")->capture_default_str();
  report_cmd->add_option("--points", o.points, "LOESS evaluation points")->capture_default_str();
  report_cmd->add_option("--permutations", o.permutations, "Permutation count")->capture_default_str();
  report_cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic joined trace");
  synth_cmd->add_option("--preset", o.preset, "paper | independent")->capture_default_str();
  synth_cmd->add_option("--spec", o.spec_file, "Custom generator spec JSON");
  auto* synth_seed = synth_cmd->add_option("--seed", o.seed, "Random seed (default: preset seed)");
  synth_cmd->add_option("--n", o.n, "Number of records");
  synth_cmd->add_option("--out", o.out, "Output directory")->required();

  auto* collect_cmd = app.add_subcommand("collect", "Query an OpenAI-compatible endpoint and append trace JSONL");
  collect_cmd->add_option("--config", o.config, "Endpoint config JSON")->required();
  collect_cmd->add_option("--dataset", o.dataset, "Dataset JSONL (query_id, question, gold_answer)")->required();
  collect_cmd->add_option("--role", o.role, "reasoning | non_reasoning")->required();
  collect_cmd->add_flag("--probe", o.probe, "Run the P(True) probe (non_reasoning only)");
  collect_cmd->add_option("--out", o.out, "Trace JSONL to append to")->required();
  collect_cmd->add_option("--failures", o.failures, "Failures JSONL (default <out>.failures.jsonl)");
  auto* collect_seed = collect_cmd->add_option("--seed", o.seed, "Seed for retry jitter");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (app.get_subcommands().empty()) {
      err << e.what() << "\n" << app.help();
      return 2;
    }
    const std::string msg = e.what();
    err << detail::error_json("invalid_argument", msg, detail::flag_from_message(msg)) << '\n';
    return 1;
  }
  o.seed_given = synth_seed->count() > 0 || collect_seed->count() > 0;

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "validate") return detail::cmd_validate(o, out);
    if (name == "join") return detail::cmd_join(o, out);
    if (name == "calibrate") return detail::cmd_calibrate(o, out);
    if (name == "simulate") return detail::cmd_simulate(o, out);
    if (name == "curve") return detail::cmd_curve(o, out);
    if (name == "auarc") return detail::cmd_auarc(o, out);
    if (name == "drag") return detail::cmd_drag(o, out);
    if (name == "profile") return detail::cmd_profile(o, out);
    if (name == "loess") return detail::cmd_loess(o, out);
    if (name == "report") return detail::cmd_report(o, out);
    if (name == "synth") return detail::cmd_synth(o, out);
    if (name == "collect") return detail::cmd_collect(o, out);
    err << app.help();
    return 2;
  } catch (const Error& e) {
    err << detail::error_json(std::string(to_string(e.kind())), e.what(), e.field(), e.line()) << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << detail::error_json("parse_error", e.what(), "config") << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << detail::error_json("internal", e.what(), {}) << '\n';
    return 1;
  }
}

}  // namespace ffoa::cli
