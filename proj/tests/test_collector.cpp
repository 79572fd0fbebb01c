#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "ffoa/collector.hpp"
#include "stub_server.hpp"
#include "test_util.hpp"

using namespace ffoa;
using ffoa::testutil::StubServer;

namespace {

EndpointConfig stub_config(const StubServer& s, const std::string& model = "stub-nr") {
  EndpointConfig c;
  c.base_url = s.base_url();
  c.model_id = model;
  c.pricing = {1.0, 2.0};
  c.max_in_flight = 1;
  c.max_retries = 1;
  c.backoff_initial_seconds = 0.0;
  c.backoff_max_seconds = 0.0;
  c.timeout_seconds = 10.0;
  return c;
}

std::vector<DatasetItem> items(std::size_t n, const std::string& question = "What is 6*7?") {
  std::vector<DatasetItem> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"item" + std::to_string(i), question, "42"});
  return out;
}

std::size_t line_count(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.empty() ? 0 : 1;
  return n;
}

}  // namespace

TEST(ExtractAnswer, Examples) {
  EXPECT_EQ(extract_answer("so the answer is \\boxed{17}."), std::optional<std::string>("17"));
  EXPECT_EQ(extract_answer("it equals 3.5 so the result is 7"), std::optional<std::string>("7"));
  EXPECT_EQ(extract_answer("no number here"), std::nullopt);
  EXPECT_EQ(extract_answer("first \\boxed{1} then \\boxed{\\frac{3}{4}}"), std::optional<std::string>("\\frac{3}{4}"));
  EXPECT_EQ(extract_answer("total: 1,234.5 dollars"), std::optional<std::string>("1,234.5"));
  EXPECT_EQ(extract_answer("x2 and -8"), std::optional<std::string>("-8"));
  EXPECT_EQ(extract_answer("ratio 3/4."), std::optional<std::string>("3/4"));
}

TEST(ParseNumeric, Forms) {
  EXPECT_EQ(parse_numeric("42"), 42.0);
  EXPECT_EQ(parse_numeric("42.0"), 42.0);
  EXPECT_EQ(parse_numeric("1,234"), 1234.0);
  EXPECT_EQ(parse_numeric("\\frac{3}{4}"), 0.75);
  EXPECT_EQ(parse_numeric("-\\dfrac{1}{2}"), -0.5);
  EXPECT_EQ(parse_numeric("3/4"), 0.75);
  EXPECT_EQ(parse_numeric("$12$"), 12.0);
  EXPECT_EQ(parse_numeric("50\\%"), 50.0);
  EXPECT_EQ(parse_numeric("abc"), std::nullopt);
  EXPECT_EQ(parse_numeric("1/0"), std::nullopt);
}

TEST(NumericMatch, RelativeTolerance) {
  EXPECT_TRUE(numeric_match(*parse_numeric("42.0"), *parse_numeric("42")));
  EXPECT_TRUE(numeric_match(1e6, 1e6 * (1 + 5e-10)));
  EXPECT_FALSE(numeric_match(1e6, 1e6 * (1 + 5e-9)));
  EXPECT_TRUE(numeric_match(0.0, 0.0));
}

TEST(UsageCost, PricingArithmetic) {
  EXPECT_EQ(usage_cost(100, 50, {1.0, 2.0}), 2.0e-4);
  EXPECT_EQ(usage_cost(0, 0, {3.0, 4.0}), 0.0);
}

TEST(EndpointConfig, FromJson) {
  ::setenv("FFOA_TEST_KEY", "secret", 1);
  const auto j = nlohmann::json::parse(R"({
    "base_url": "http://127.0.0.1:1/v1", "model_id": "m", "api_key_env": "FFOA_TEST_KEY",
    "max_in_flight": 7, "pricing": {"usd_per_1M_input_tokens": 1.5, "usd_per_1M_output_tokens": 2.5}})");
  const auto c = endpoint_config_from_json(j);
  EXPECT_EQ(c.api_key, "secret");
  EXPECT_EQ(c.max_in_flight, 7u);
  EXPECT_EQ(c.pricing.usd_per_1m_output_tokens, 2.5);
  EXPECT_EQ(c.probe_samples, 8u);
  EXPECT_THROW(endpoint_config_from_json(nlohmann::json::parse(R"({"model_id":"m"})")), Error);
}

TEST(Dataset, LoadAndErrors) {
  const auto dir = ffoa::testutil::temp_dir("dataset");
  {
    std::ofstream f(dir / "ok.jsonl");
    f << R"({"query_id":"a","question":"q","gold_answer":"42"})" << "\n\n"
      << R"({"query_id":"b","question":"q","gold_answer":7})" << "\n";
  }
  const auto ok = load_dataset(dir / "ok.jsonl");
  ASSERT_EQ(ok.size(), 2u);
  EXPECT_EQ(ok[1].gold_answer, "7");
  {
    std::ofstream f(dir / "bad.jsonl");
    f << R"({"query_id":"a","question":"q","gold_answer":"x"})" << "\n";
  }
  EXPECT_THROW(load_dataset(dir / "bad.jsonl"), Error);
  std::filesystem::remove_all(dir);
}

TEST(Collect, CostProbeAndGrading) {
  StubServer stub;
  const auto dir = ffoa::testutil::temp_dir("collect_cost");
  const auto cfg = stub_config(stub);
  std::vector<DatasetItem> its{{"right", "ANSWER=42.0 what?", "42"}, {"wrong", "ANSWER=41 what?", "42"},
                               {"junk", "ANSWER=none what?", "42"}};
  const auto s = collect(its, cfg, ModelRole::non_reasoning, true, dir / "nr.jsonl", dir / "fail.jsonl");
  EXPECT_EQ(s.written, 3u);
  EXPECT_EQ(s.unparsed, 1u);
  const auto recs = ingest(dir / "nr.jsonl", ModelRole::non_reasoning);
  ASSERT_EQ(recs.size(), 3u);
  std::map<std::string, TraceRecord> by_id;
  for (const auto& r : recs) by_id[r.query_id] = r;

  const auto& r = by_id.at("right");
  EXPECT_TRUE(r.correct);
  ASSERT_TRUE(r.components.has_value());
  EXPECT_EQ(r.components->answer_cost_usd, 2.0e-4);
  EXPECT_EQ(r.components->probe_cost_usd, 30 * 1.0 / 1e6 + 1 * 2.0 / 1e6);
  EXPECT_EQ(r.cost_usd, r.components->answer_cost_usd + r.components->probe_cost_usd);
  EXPECT_EQ(r.latency_seconds, r.components->answer_latency_seconds + r.components->probe_latency_seconds);
  EXPECT_EQ(r.output_tokens, 50);
  ASSERT_TRUE(r.p_true.has_value());
  EXPECT_EQ(*r.p_true, std::exp(std::log(0.9)));
  EXPECT_NEAR(*r.p_true, 0.9, 1e-15);

  EXPECT_FALSE(by_id.at("wrong").correct);
  EXPECT_FALSE(by_id.at("junk").correct);
  EXPECT_TRUE(by_id.at("junk").answer_unparsed);
  std::filesystem::remove_all(dir);
}

TEST(Collect, ReasoningRoleWithoutProbe) {
  StubServer stub;
  const auto dir = ffoa::testutil::temp_dir("collect_r");
  const auto cfg = stub_config(stub, "stub-r");
  const auto s = collect(items(2), cfg, ModelRole::reasoning, false, dir / "r.jsonl", dir / "f.jsonl");
  EXPECT_EQ(s.written, 2u);
  const auto recs = ingest(dir / "r.jsonl", ModelRole::reasoning);
  EXPECT_EQ(recs[0].cost_usd, 2.0e-4);
  EXPECT_FALSE(recs[0].p_true.has_value());
  EXPECT_THROW(collect(items(1), cfg, ModelRole::reasoning, true, dir / "r.jsonl", dir / "f.jsonl"), Error);
  std::filesystem::remove_all(dir);
}

TEST(Collect, SamplingFallbackWithoutLogprobs) {
  StubServer stub;
  const auto dir = ffoa::testutil::temp_dir("collect_sample");
  const auto cfg = stub_config(stub, "no-logprobs");
  collect(items(1), cfg, ModelRole::non_reasoning, true, dir / "nr.jsonl", dir / "f.jsonl");
  const auto recs = ingest(dir / "nr.jsonl", ModelRole::non_reasoning);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].p_true, std::optional<double>(0.5));
  std::filesystem::remove_all(dir);
}

TEST(Collect, ResumeAddsNothing) {
  StubServer stub;
  const auto dir = ffoa::testutil::temp_dir("collect_resume");
  auto cfg = stub_config(stub);
  cfg.max_in_flight = 3;
  const auto first = collect(items(6), cfg, ModelRole::non_reasoning, true, dir / "nr.jsonl", dir / "f.jsonl");
  EXPECT_EQ(first.written, 6u);
  const int requests_before = stub.requests();
  const auto second = collect(items(6), cfg, ModelRole::non_reasoning, true, dir / "nr.jsonl", dir / "f.jsonl");
  EXPECT_EQ(second.written, 0u);
  EXPECT_EQ(second.skipped, 6u);
  EXPECT_EQ(stub.requests(), requests_before);
  EXPECT_EQ(line_count(dir / "nr.jsonl"), 6u);
  const auto third = collect(items(8), cfg, ModelRole::non_reasoning, true, dir / "nr.jsonl", dir / "f.jsonl");
  EXPECT_EQ(third.written, 2u);
  EXPECT_EQ(line_count(dir / "nr.jsonl"), 8u);
  std::filesystem::remove_all(dir);
}

TEST(Collect, MaxInFlightRespected) {
  StubServer stub;
  stub.delay = std::chrono::milliseconds(40);
  const auto dir = ffoa::testutil::temp_dir("collect_flight");
  auto cfg = stub_config(stub);
  cfg.max_in_flight = 3;
  collect(items(15), cfg, ModelRole::reasoning, false, dir / "r.jsonl", dir / "f.jsonl");
  EXPECT_LE(stub.max_in_flight_seen(), 3);
  EXPECT_GE(stub.max_in_flight_seen(), 2);
  std::filesystem::remove_all(dir);
}

TEST(Collect, TransportFailuresGoToSidecar) {
  StubServer stub;
  const auto dir = ffoa::testutil::temp_dir("collect_fail");
  auto cfg = stub_config(stub);
  cfg.max_retries = 2;
  std::vector<DatasetItem> its{{"ok", "fine", "42"}, {"bad", "please FAIL", "42"}};
  const auto s = collect(its, cfg, ModelRole::reasoning, false, dir / "r.jsonl", dir / "f.jsonl");
  EXPECT_EQ(s.written, 1u);
  EXPECT_EQ(s.failed, 1u);
  std::ifstream f(dir / "f.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(f, line));
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["query_id"], "bad");
  EXPECT_EQ(j["attempts"], 3);
  EXPECT_NE(j["error"].get<std::string>().find("500"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Collect, MissingUsageIsHardError) {
  StubServer stub;
  const auto dir = ffoa::testutil::temp_dir("collect_usage");
  const auto cfg = stub_config(stub);
  try {
    collect(items(1, "NOUSAGE please"), cfg, ModelRole::reasoning, false, dir / "r.jsonl", dir / "f.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::protocol);
  }
  EXPECT_EQ(line_count(dir / "r.jsonl"), 0u);
  std::filesystem::remove_all(dir);
}

TEST(Collect, UnreachableEndpointFailsPerItem) {
  EndpointConfig c;
  c.base_url = "http://127.0.0.1:1/v1";
  c.model_id = "m";
  c.max_retries = 0;
  c.timeout_seconds = 2.0;
  const auto dir = ffoa::testutil::temp_dir("collect_down");
  const auto s = collect(items(2), c, ModelRole::reasoning, false, dir / "r.jsonl", dir / "f.jsonl");
  EXPECT_EQ(s.failed, 2u);
  EXPECT_EQ(line_count(dir / "f.jsonl"), 2u);
  std::filesystem::remove_all(dir);
}
