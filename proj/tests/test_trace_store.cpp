#include <gtest/gtest.h>

#include <sstream>

#include "ffoa/trace_store.hpp"
#include "test_util.hpp"

using namespace ffoa;

namespace {

std::vector<TraceRecord> ingest_text(const std::string& text, ModelRole role) {
  std::istringstream in(text);
  return ingest_stream(in, role);
}

TraceRecord make(const std::string& id, ModelRole role, std::optional<double> p = std::nullopt) {
  TraceRecord r;
  r.query_id = id;
  r.model_id = role == ModelRole::reasoning ? "r" : "nr";
  r.role = role;
  r.correct = true;
  r.latency_seconds = 1.0;
  r.cost_usd = 0.001;
  r.output_tokens = 10;
  r.p_true = p;
  return r;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::io;
}

}  // namespace

TEST(Ingest, ParsesExampleLine) {
  const auto recs = ingest_text(
      R"({"query_id":"q1","model_id":"m","role":"reasoning","correct":true,"latency_seconds":1.5,"cost_usd":0.001,"output_tokens":100})",
      ModelRole::reasoning);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].query_id, "q1");
  EXPECT_EQ(recs[0].model_id, "m");
  EXPECT_EQ(recs[0].role, ModelRole::reasoning);
  EXPECT_TRUE(recs[0].correct);
  EXPECT_EQ(recs[0].latency_seconds, 1.5);
  EXPECT_EQ(recs[0].cost_usd, 0.001);
  EXPECT_EQ(recs[0].output_tokens, 100);
  EXPECT_FALSE(recs[0].p_true.has_value());
}

TEST(Ingest, PTrueOutOfRangeNamesFieldAndLine) {
  const std::string text =
      "\n"
      R"({"query_id":"q1","model_id":"m","role":"non_reasoning","correct":true,"latency_seconds":1,"cost_usd":0,"output_tokens":1,"p_true":1.2})";
  try {
    ingest_text(text, ModelRole::non_reasoning);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::out_of_range);
    EXPECT_EQ(e.field(), "p_true");
    ASSERT_TRUE(e.line().has_value());
    EXPECT_EQ(*e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Ingest, EmptyFileGivesEmptyList) {
  EXPECT_TRUE(ingest_text("", ModelRole::reasoning).empty());
  EXPECT_TRUE(ingest_text("\n  \n", ModelRole::reasoning).empty());
}

TEST(Ingest, MalformedJsonReportsLine) {
  try {
    ingest_text("{\"query_id\":\"a\"\n{not json", ModelRole::reasoning);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_EQ(e.line().value_or(0), 1u);
  }
}

TEST(Ingest, MissingFieldAndDuplicate) {
  EXPECT_EQ(kind_of([] {
              ingest_text(R"({"query_id":"a","model_id":"m","correct":true,"cost_usd":0,"output_tokens":1})",
                          ModelRole::reasoning);
            }),
            ErrorKind::missing_field);
  const std::string line =
      R"({"query_id":"a","model_id":"m","correct":true,"latency_seconds":1,"cost_usd":0,"output_tokens":1})";
  EXPECT_EQ(kind_of([&] { ingest_text(line + "\n" + line, ModelRole::reasoning); }), ErrorKind::duplicate);
}

TEST(Ingest, NegativeValuesRejected) {
  for (const char* field : {"latency_seconds", "cost_usd", "output_tokens"}) {
    nlohmann::json j = {{"query_id", "a"}, {"model_id", "m"},  {"correct", true},
                        {"latency_seconds", 1}, {"cost_usd", 0}, {"output_tokens", 1}};
    j[field] = -1;
    try {
      ingest_text(j.dump(), ModelRole::reasoning);
      FAIL() << field;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::out_of_range);
      EXPECT_EQ(e.field(), field);
    }
  }
}

TEST(Ingest, RoleMismatchRejected) {
  EXPECT_EQ(kind_of([] {
              ingest_text(
                  R"({"query_id":"a","model_id":"m","role":"reasoning","correct":true,"latency_seconds":1,"cost_usd":0,"output_tokens":1})",
                  ModelRole::non_reasoning);
            }),
            ErrorKind::out_of_range);
}

TEST(Ingest, UnknownFieldsIgnoredRoleDefaults) {
  const auto recs = ingest_text(
      R"({"query_id":"a","model_id":"m","correct":false,"latency_seconds":1,"cost_usd":0,"output_tokens":1,"extra":[1,2]})",
      ModelRole::non_reasoning);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].role, ModelRole::non_reasoning);
}

TEST(TraceRecord, RoundTripProperty) {
  Rng rng(11);
  for (int iter = 0; iter < 200; ++iter) {
    TraceRecord r;
    r.query_id = "id-" + std::to_string(rng.below(1000000)) + "\"quoted\"";
    r.model_id = "model/" + std::to_string(iter);
    r.role = rng.uniform() < 0.5 ? ModelRole::reasoning : ModelRole::non_reasoning;
    r.correct = rng.uniform() < 0.5;
    r.latency_seconds = rng.uniform() * 1000.0;
    r.cost_usd = rng.uniform() * 1e-2;
    r.output_tokens = static_cast<std::int64_t>(rng.below(100000));
    if (rng.uniform() < 0.5) r.p_true = rng.uniform();
    if (rng.uniform() < 0.3) r.components = CallComponents{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    r.answer_unparsed = rng.uniform() < 0.2;
    const auto back = parse_record(to_jsonl_line(r), 1);
    EXPECT_EQ(back, r);
  }
}

TEST(Join, IntersectionAndUnmatchedCounts) {
  std::vector<TraceRecord> nr{make("a", ModelRole::non_reasoning, 0.1), make("b", ModelRole::non_reasoning, 0.2),
                              make("c", ModelRole::non_reasoning, 0.3)};
  std::vector<TraceRecord> r{make("d", ModelRole::reasoning), make("c", ModelRole::reasoning),
                             make("b", ModelRole::reasoning)};
  const auto res = join(nr, r);
  ASSERT_EQ(res.trace.size(), 2u);
  EXPECT_EQ(res.trace.records[0].query_id, "b");
  EXPECT_EQ(res.trace.records[1].query_id, "c");
  EXPECT_EQ(res.trace.records[0].nr.p_true, 0.2);
  EXPECT_EQ(res.unmatched_nr, 1u);
  EXPECT_EQ(res.unmatched_r, 1u);
  EXPECT_EQ(res.trace.metadata.nr_model_id, "nr");
  EXPECT_EQ(res.trace.metadata.r_model_id, "r");
}

TEST(Join, DuplicateIdsRejected) {
  std::vector<TraceRecord> nr{make("a", ModelRole::non_reasoning, 0.1), make("a", ModelRole::non_reasoning, 0.2)};
  std::vector<TraceRecord> r{make("a", ModelRole::reasoning)};
  EXPECT_EQ(kind_of([&] { join(nr, r); }), ErrorKind::duplicate);
  std::vector<TraceRecord> nr1{make("a", ModelRole::non_reasoning, 0.1)};
  std::vector<TraceRecord> r2{make("a", ModelRole::reasoning), make("a", ModelRole::reasoning)};
  EXPECT_EQ(kind_of([&] { join(nr1, r2); }), ErrorKind::duplicate);
}

TEST(Join, IdenticalIdSetsKeepSize) {
  std::vector<TraceRecord> nr, r;
  for (int i = 0; i < 25; ++i) {
    nr.push_back(make("q" + std::to_string(i), ModelRole::non_reasoning, 0.5));
    r.push_back(make("q" + std::to_string(24 - i), ModelRole::reasoning));
  }
  const auto res = join(nr, r);
  EXPECT_EQ(res.trace.size(), 25u);
  EXPECT_EQ(res.unmatched_nr, 0u);
  EXPECT_EQ(res.unmatched_r, 0u);
}

TEST(Join, ErrorPaths) {
  std::vector<TraceRecord> nr{make("a", ModelRole::non_reasoning)};
  std::vector<TraceRecord> r{make("a", ModelRole::reasoning)};
  EXPECT_EQ(kind_of([&] { join(nr, r); }), ErrorKind::missing_field);
  std::vector<TraceRecord> nr2{make("x", ModelRole::non_reasoning, 0.4)};
  EXPECT_EQ(kind_of([&] { join(nr2, r); }), ErrorKind::empty_input);
  EXPECT_EQ(kind_of([&] { join(r, r); }), ErrorKind::invalid_argument);
}

TEST(TraceDir, WriteAndReloadIsIdentity) {
  Rng rng(3);
  const Trace t = testutil::random_trace(rng, 40);
  const auto dir = testutil::temp_dir("tracedir");
  write_trace_dir(t, dir);
  const auto back = load_trace_dir(dir);
  EXPECT_EQ(back.trace.records, t.records);
  EXPECT_EQ(back.trace.metadata.nr_model_id, t.metadata.nr_model_id);
  EXPECT_EQ(back.trace.metadata.r_model_id, t.metadata.r_model_id);
  std::filesystem::remove_all(dir);
}
