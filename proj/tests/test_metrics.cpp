#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ffoa/calibrate.hpp"
#include "ffoa/metrics.hpp"
#include "ffoa/synth.hpp"
#include "test_util.hpp"

using namespace ffoa;
using ffoa::testutil::make_trace;
using ffoa::testutil::random_trace;
using ffoa::testutil::RecSpec;

namespace {

Outcome answered(bool correct) {
  Outcome o;
  o.route = Route::r_answer;
  o.counted_correct = correct;
  return o;
}

Outcome human() {
  Outcome o;
  o.route = Route::human_via_reasoning;
  return o;
}

CurvePoint point(double r, double acc) {
  CurvePoint p;
  p.rejection_rate = r;
  p.conditional_accuracy = acc;
  return p;
}

}  // namespace

TEST(ConditionalAccuracy, Examples) {
  std::vector<Outcome> out{answered(true), answered(true), answered(true), answered(false)};
  for (int i = 0; i < 6; ++i) out.push_back(human());
  EXPECT_EQ(conditional_accuracy(out), 0.75);
  EXPECT_EQ(conditional_accuracy(std::vector<Outcome>{answered(true), answered(true)}), 1.0);
  EXPECT_THROW(conditional_accuracy(std::vector<Outcome>{human(), human()}), Error);
}

TEST(Grid, DefaultHas41Points) {
  const auto g = default_grid();
  ASSERT_EQ(g.size(), 41u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_NEAR(g.back(), 0.2, 1e-15);
  EXPECT_EQ(make_grid(0.1, 0.1, 0.01).size(), 1u);
  EXPECT_THROW(make_grid(0.0, 0.2, 0.0), Error);
  EXPECT_THROW(make_grid(0.0, 1.0, 0.1), Error);
  EXPECT_THROW(make_grid(0.2, 0.1, 0.01), Error);
}

TEST(Curve, AllCorrectTraceIsPerfect) {
  Rng rng(1);
  Trace t = random_trace(rng, 40);
  for (auto& r : t.records) r.nr.correct = r.r.correct = true;
  for (const auto& sys : {CascadeSystem::ask(), CascadeSystem::ffoa(0.5), CascadeSystem::ffoa(0.0)}) {
    const auto curve = accuracy_rejection_curve(t, sys, default_grid());
    for (const auto& p : curve) EXPECT_EQ(p.conditional_accuracy, 1.0);
    EXPECT_EQ(auarc(curve).auarc, 1.0);
  }
}

TEST(Curve, ZeroRejectionIsUnconditionalAccuracy) {
  Rng rng(2);
  for (int iter = 0; iter < 50; ++iter) {
    const Trace t = random_trace(rng, 1 + rng.below(64));
    std::size_t correct = 0;
    for (const auto& r : t.records) correct += r.r.correct ? 1 : 0;
    if (correct == 0) continue;
    const std::vector<double> grid{0.0};
    const auto curve = accuracy_rejection_curve(t, CascadeSystem::ask(), grid);
    ASSERT_EQ(curve.size(), 1u);
    EXPECT_EQ(curve[0].conditional_accuracy, static_cast<double>(correct) / static_cast<double>(t.size()));
    EXPECT_EQ(curve[0].realized_rejection, 0.0);
  }
}

TEST(Curve, MonotoneWhenCorrectnessFallsWithTokens) {
  std::vector<RecSpec> specs(32);
  for (int i = 0; i < 32; ++i) {
    specs[i].r_tokens = 100 + 37 * ((i * 13) % 32);
    specs[i].r_correct = (i * 13) % 32 < 24;
  }
  const Trace t = make_trace(specs);
  const auto grid = make_grid(0.0, 0.5, 0.01);
  const auto curve = accuracy_rejection_curve(t, CascadeSystem::ask(), grid);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    // Oracle: keep the records whose rank from the top is beyond floor(r*n).
    const std::size_t rejected = static_cast<std::size_t>(std::floor(grid[i] * 32 + 1e-9));
    const double expect = static_cast<double>(std::min<std::size_t>(24, 32 - rejected)) /
                          static_cast<double>(32 - rejected);
    EXPECT_DOUBLE_EQ(curve[i].conditional_accuracy, expect) << grid[i];
    if (i > 0) EXPECT_GE(curve[i].conditional_accuracy, curve[i - 1].conditional_accuracy);
  }
}

TEST(Auarc, Examples) {
  std::vector<CurvePoint> flat{point(0.0, 0.96), point(0.1, 0.96), point(0.2, 0.96)};
  EXPECT_DOUBLE_EQ(auarc(flat).auarc, 0.96);
  std::vector<CurvePoint> two{point(0.0, 0.90), point(0.1, 1.00)};
  EXPECT_DOUBLE_EQ(auarc(two).auarc, 0.95);
  EXPECT_EQ(auarc(two).grid, (std::vector<double>{0.0, 0.1}));
  EXPECT_THROW(auarc(std::vector<CurvePoint>{}), Error);
}

TEST(IdealLatency, TableInputs) {
  const double got = ideal_latency(0.5, 12.4, 125.9);
  // Reference: the same sum in extended precision, rounded once.
  const long double exact = static_cast<long double>(12.4) + 0.5L * static_cast<long double>(125.9);
  EXPECT_EQ(got, static_cast<double>(exact));
  EXPECT_LE(std::abs(got - 75.35), std::nextafter(75.35, 100.0) - 75.35);
  EXPECT_EQ(ideal_latency(1.0, 12.4, 125.9), 12.4);
  EXPECT_EQ(ideal_latency(0.0, 12.4, 125.9), 12.4 + 125.9);
  EXPECT_THROW(ideal_latency(1.5, 1, 1), Error);
  EXPECT_THROW(ideal_latency(0.5, -1, 1), Error);
}

TEST(LatencyDrag, ZeroUtilizationIsExactlyZero) {
  Rng rng(3);
  for (int iter = 0; iter < 200; ++iter) {
    const Trace t = random_trace(rng, 1 + rng.below(64));
    const double r = static_cast<double>(rng.below(30)) / 100.0;
    const auto d = latency_drag(t, calibrate_ffoa(t, 0.0, r));
    EXPECT_EQ(d.drag, 0.0);
    EXPECT_EQ(d.utilization, 0.0);
  }
}

TEST(LatencyDrag, ConstantReasoningLatencyIsExactlyZero) {
  Rng rng(4);
  for (int iter = 0; iter < 100; ++iter) {
    Trace t = random_trace(rng, 4 + rng.below(60));
    for (auto& r : t.records) r.r.latency_seconds = 37.3;
    try {
      const auto d = latency_drag(t, calibrate_ffoa(t, 0.5, 0.1));
      EXPECT_EQ(d.drag, 0.0);
    } catch (const Error&) {
    }
  }
}

TEST(LatencyDrag, NegativeRankCorrelationGivesPositiveDrag) {
  Rng rng(5);
  std::vector<RecSpec> specs(4000);
  std::vector<double> p, lr;
  for (auto& s : specs) {
    s.p_true = rng.uniform();
    s.l_r = 100.0 * (1.0 - s.p_true) + 45.0 * rng.normal() + 200.0;
    s.l_nr = 1.0 + rng.uniform();
    p.push_back(s.p_true);
    lr.push_back(s.l_r);
  }
  const double rho = ffoa::testutil::spearman(p, lr);
  ASSERT_NEAR(rho, -0.5, 0.05);
  const Trace t = make_trace(specs);
  const auto config = calibrate_ffoa(t, 0.5, 0.1);
  const auto d = latency_drag(t, config);
  EXPECT_GT(d.drag, 0.0);

  // Brute force: plain means of the simulated latencies.
  const auto out = oracle_simulate(t, config);
  double actual = 0, mean_nr = 0, mean_r = 0;
  std::size_t passed = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    actual += out[i].latency_seconds;
    mean_nr += t.records[i].nr.latency_seconds;
    mean_r += t.records[i].r.latency_seconds;
    if (out[i].route == Route::r_answer || out[i].route == Route::human_via_reasoning) ++passed;
  }
  const double n = static_cast<double>(out.size());
  const double u = 1.0 - static_cast<double>(passed) / n;
  const double brute = actual / n - (mean_nr / n + (1.0 - u) * mean_r / n);
  EXPECT_NEAR(d.drag, brute, 1e-9);
  EXPECT_NEAR(d.actual - d.ideal, d.drag, 1e-9);

  const auto test = drag_permutation_test(t, config, 200, 1);
  EXPECT_EQ(test.observed, d.drag);
  EXPECT_GT(test.z, 3.0);
  EXPECT_LT(test.p_value, 0.01);
  const auto again = drag_permutation_test(t, config, 200, 1);
  EXPECT_EQ(again.null_sd, test.null_sd);
}

TEST(Profile, Examples) {
  std::vector<RecSpec> specs;
  for (double p : {0.3, 0.9, 0.1, 0.7, 0.5, 0.2, 0.8, 0.6}) specs.push_back({.p_true = p, .l_r = 1.0 - p});
  const auto bins = conditional_latency_profile(make_trace(specs), 4);
  ASSERT_EQ(bins.size(), 4u);
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_EQ(bins[b].count, 2u);
    if (b > 0) EXPECT_LT(bins[b].mean_l_r, bins[b - 1].mean_l_r);
  }
  EXPECT_DOUBLE_EQ(bins[0].mean_l_r, 1.0 - 0.15);

  std::vector<RecSpec> flat(10, RecSpec{.l_r = 4.2});
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i].p_true = 0.1 * static_cast<double>(i);
  for (const auto& b : conditional_latency_profile(make_trace(flat), 5)) EXPECT_EQ(b.mean_l_r, 4.2);

  EXPECT_THROW(conditional_latency_profile(make_trace(flat), 11), Error);
  EXPECT_THROW(conditional_latency_profile(make_trace(flat), 1), Error);
}

TEST(Profile, IndependentLatencyIsFlatWithinNoise) {
  Rng rng(6);
  std::vector<RecSpec> specs(10000);
  double sum = 0, sumsq = 0;
  for (auto& s : specs) {
    s.p_true = rng.uniform();
    s.l_r = 100.0 + 30.0 * rng.normal();
    sum += s.l_r;
    sumsq += s.l_r * s.l_r;
  }
  const double mean = sum / 10000.0;
  const double sd = std::sqrt(sumsq / 10000.0 - mean * mean);
  for (const auto& b : conditional_latency_profile(make_trace(specs), 10)) {
    EXPECT_LT(std::abs(b.mean_l_r - mean), 4.0 * sd / std::sqrt(static_cast<double>(b.count)));
  }
}

TEST(Savings, BaseRowZeroAndClosedForm) {
  std::vector<RecSpec> specs(200);
  Rng rng(7);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    specs[i].p_true = static_cast<double>(i + 1) / 201.0;
    specs[i].l_nr = 1.0;
    specs[i].l_r = 100.0;
    specs[i].c_nr = 0.001;
    specs[i].c_r = 0.01;
    specs[i].r_tokens = static_cast<std::int64_t>(1 + rng.below(10000));
    specs[i].nr_correct = rng.uniform() < 0.7;
  }
  const Trace t = make_trace(specs);
  const std::vector<double> us{0.5};
  const auto rows = savings_table(t, us, default_grid());
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].utilization, 0.0);
  EXPECT_EQ(rows[0].delta_auarc_pct, 0.0);
  EXPECT_EQ(rows[0].delta_latency_pct, 0.0);
  EXPECT_EQ(rows[0].delta_cost_pct, 0.0);
  // Exactly half pass at every grid point, so latency is 1 + 0.5 * 100.
  const double predicted = 100.0 * (ideal_latency(0.5, 1.0, 100.0) - 101.0) / 101.0;
  EXPECT_NEAR(rows[1].delta_latency_pct, predicted, 1e-9);
  EXPECT_NEAR(rows[1].delta_latency_pct, -100.0 * 0.5 * 100.0 / 101.0, 1e-9);
  EXPECT_NEAR(rows[1].delta_cost_pct, 100.0 * (0.001 + 0.005 - 0.011) / 0.011, 1e-9);
}

TEST(Baseline, StatsPerModel) {
  const Trace t = make_trace({{.nr_correct = false, .r_correct = true, .r_tokens = 10, .l_nr = 1, .l_r = 3},
                              {.nr_correct = true, .r_correct = false, .r_tokens = 30, .l_nr = 2, .l_r = 5}});
  const auto [r, nr] = baseline_stats(t);
  EXPECT_EQ(r.role, ModelRole::reasoning);
  EXPECT_EQ(r.error_rate, 0.5);
  EXPECT_EQ(r.mean_latency_seconds, 4.0);
  EXPECT_EQ(r.mean_output_tokens, 20.0);
  EXPECT_EQ(nr.mean_latency_seconds, 1.5);
  EXPECT_EQ(nr.model_id, "nr-model");
}

TEST(Csv, CurveAndProfileHeaders) {
  Rng rng(8);
  const Trace t = random_trace(rng, 30);
  std::ostringstream c, p;
  write_curve_csv(c, accuracy_rejection_curve(t, CascadeSystem::ask(), default_grid()));
  write_profile_csv(p, conditional_latency_profile(t, 3));
  const std::string curve = c.str(), profile = p.str();
  EXPECT_EQ(curve.substr(0, curve.find('\n')),
            "rejection_rate,realized_rejection,conditional_accuracy,error_rate,n_answered,mean_latency_seconds,"
            "mean_cost_usd");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 42);
  EXPECT_EQ(profile.substr(0, profile.find('\n')), "bin,percentile_lo,percentile_hi,mean_l_r,count");
}
