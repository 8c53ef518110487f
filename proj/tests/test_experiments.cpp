#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "invcode/error.hpp"
#include "invcode/experiments.hpp"

using namespace invcode;
using namespace invcode::experiments;

namespace {

double metric(const ExperimentReport& r, const nlohmann::json& key, const std::string& name) {
  const auto* cell = r.find(key);
  if (cell == nullptr) throw std::runtime_error("missing cell " + key.dump());
  return cell->metrics.at(name).value;
}

}  // namespace

TEST(Synth, QuickErrorsAreFloatingPointNoise) {
  SynthConfig cfg;
  cfg.k_values = {2, 10, 50, 100};
  cfg.trials_per_k = kQuickTrials;
  cfg.seed = 2024;
  const auto r = synth_reconstruction(cfg);
  ASSERT_EQ(r.cells.size(), 4u);
  for (int k : cfg.k_values) {
    const double mean = metric(r, {{"k", k}}, "mean_error");
    EXPECT_GE(mean, 1e-16) << k;
    EXPECT_LE(mean, 1e-13) << k;
    EXPECT_EQ(r.find({{"k", k}})->metrics.at("mean_error").count, 5000u);
  }
}

TEST(Synth, ParallelismDoesNotChangeResults) {
  SynthConfig cfg;
  cfg.k_values = {2, 7, 30};
  cfg.trials_per_k = 500;
  cfg.seed = 5;
  const auto a = synth_reconstruction(cfg);
  cfg.parallel = false;
  const auto b = synth_reconstruction(cfg);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Synth, IdentityRotationSmallK) {
  SynthConfig cfg;
  cfg.theta = 0.0;
  cfg.k_values = {2, 3, 4};
  cfg.trials_per_k = 2000;
  cfg.seed = 1;
  const auto r = synth_reconstruction(cfg);
  for (int k : cfg.k_values) EXPECT_LE(metric(r, {{"k", k}}, "mean_error"), 1e-15) << k;
}

TEST(Synth, Validation) {
  SynthConfig cfg;
  cfg.k_values = {1};
  EXPECT_THROW(synth_reconstruction(cfg), Error);
  cfg.k_values = {101};
  EXPECT_THROW(synth_reconstruction(cfg), Error);
  cfg.k_values = {2};
  cfg.trials_per_k = 0;
  EXPECT_THROW(synth_reconstruction(cfg), Error);
}

TEST(Synth, MixtureMoments) {
  Rng rng(3);
  Vec sum = Vec::Zero(2);
  const int n = 200000;
  for (int i = 0; i < n; ++i) sum += synth_mixture_sample(rng);
  EXPECT_NEAR(sum[0] / n, 0.5, 0.01);
  EXPECT_NEAR(sum[1] / n, 0.5, 0.01);
}

TEST(MultiFailure, FourTwoLinear) {
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  const auto r = multi_failure_check(4, 2, f, 50, 7);
  ASSERT_EQ(r.cells.size(), 6u);
  EXPECT_TRUE(r.ok());
  EXPECT_LE(metric(r, {{"subset", {3, 4}}}, "max_error"), 1e-9);
  for (const auto& c : r.cells) EXPECT_EQ(c.metrics.at("decodable").value, 1.0);
}

TEST(MultiFailure, SixFourCoupling) {
  const auto f = InvertibleFunction::random_coupling(2, 4, 8, 13);
  const auto r = multi_failure_check(6, 4, f, 20, 8);
  ASSERT_EQ(r.cells.size(), 15u);
  EXPECT_TRUE(r.ok());
  const double tol = 10 * kFixedPointResidualTol;
  EXPECT_LE(metric(r, {{"subset", {3, 4, 5, 6}}}, "max_error"), tol);
  EXPECT_LE(metric(r, {{"subset", {1, 2, 5, 6}}}, "max_error"), tol);
}

TEST(MultiFailure, GeneralVandermonde) {
  const auto f = InvertibleFunction::rotation(0.4);
  const auto r = multi_failure_check(7, 4, f, 5, 1);
  EXPECT_EQ(r.cells.size(), 35u);
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.parameters["scheme"], "vandermonde");
}

TEST(Amplification, LinearRatioIsK) {
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  const auto head = ClassMixture{}.head_for(f);
  const auto r = amplification_sweep({2, 4, 10}, {0.0, 0.05, 0.5}, f, head, 300, 17);
  ASSERT_EQ(r.cells.size(), 9u);
  for (int k : {2, 4, 10}) {
    for (double s : {0.05, 0.5}) {
      EXPECT_NEAR(metric(r, {{"k", k}, {"sigma", s}}, "ratio_min"), k, 1e-6);
      EXPECT_NEAR(metric(r, {{"k", k}, {"sigma", s}}, "ratio_max"), k, 1e-6);
    }
    const nlohmann::json zero{{"k", k}, {"sigma", 0.0}};
    EXPECT_TRUE(std::isnan(metric(r, zero, "ratio_mean")));
    EXPECT_EQ(metric(r, zero, "degraded_acc"), metric(r, zero, "normal_acc"));
  }
}

TEST(Amplification, DegradedAccuracyFallsWithK) {
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  const auto head = ClassMixture{}.head_for(f);
  const auto r = amplification_sweep({2, 4, 10}, {0.2, 0.4}, f, head, 4000, 99);
  for (double s : {0.2, 0.4}) {
    const double a2 = metric(r, {{"k", 2}, {"sigma", s}}, "degraded_acc");
    const double a4 = metric(r, {{"k", 4}, {"sigma", s}}, "degraded_acc");
    const double a10 = metric(r, {{"k", 10}, {"sigma", s}}, "degraded_acc");
    EXPECT_GE(a2, a4);
    EXPECT_GE(a4, a10);
  }
}

TEST(Overhead, ParityEventCostIndependentOfK) {
  const auto f = InvertibleFunction::rotation(0.3);
  const auto r = overhead_scaling({4, 10, 40}, f, 9);
  const double c4 = metric(r, {{"k", 4}}, "online_parity_event_s");
  const double c40 = metric(r, {{"k", 40}}, "online_parity_event_s");
  EXPECT_LE(c40 / c4, 2.0);
  EXPECT_LT(metric(r, {{"k", 10}}, "encode_s"), 1e-3);
  EXPECT_THROW(overhead_scaling({4}, f, 2), Error);
}

TEST(Latency, CodedBeatsUncodedTail) {
  LatencyConfig cfg;
  cfg.queries = 1000;
  cfg.straggler.seed = 3;
  cfg.seed = 4;
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  const auto r = latency_comparison(cfg, f);
  ASSERT_EQ(r.cells.size(), 3u);
  const double coded = metric(r, {{"arm", "coded"}}, "p99_s");
  const double overhead = metric(r, {{"arm", "coded"}}, "overhead_p99_s");
  EXPECT_LE(coded, 0.02 + overhead);
  EXPECT_GE(metric(r, {{"arm", "uncoded"}}, "p99_s"), 0.11);
  EXPECT_LE(metric(r, {{"arm", "baseline"}}, "p99_s"), 0.02);
  EXPECT_EQ(metric(r, {{"arm", "coded"}}, "degraded_fraction"), 1.0);
}

TEST(Latency, DeterministicWithoutComputeCharge) {
  LatencyConfig cfg;
  cfg.queries = 300;
  cfg.straggler.seed = 5;
  cfg.straggler.jitter_rate = 200.0;
  cfg.charge = ComputeCharge::None;
  const auto f = InvertibleFunction::random_coupling(2, 2, 4, 1);
  const auto a = latency_comparison(cfg, f);
  const auto b = latency_comparison(cfg, f);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Latency, NoStragglersArmsAgree) {
  LatencyConfig cfg;
  cfg.queries = 200;
  cfg.straggler.straggle_prob = 0.0;
  cfg.charge = ComputeCharge::None;
  const auto r = latency_comparison(cfg, InvertibleFunction::rotation(1.0));
  EXPECT_EQ(metric(r, {{"arm", "coded"}}, "p99_s"), metric(r, {{"arm", "baseline"}}, "p99_s"));
  EXPECT_EQ(metric(r, {{"arm", "uncoded"}}, "p99_s"), metric(r, {{"arm", "baseline"}}, "p99_s"));
}

TEST(Latency, FailuresMakeUncodedArmFail) {
  LatencyConfig cfg;
  cfg.queries = 10;
  cfg.straggler.fail_policy = {3};
  const auto r = latency_comparison(cfg, InvertibleFunction::rotation(1.0));
  EXPECT_TRUE(r.find({{"arm", "coded"}})->ok);
  EXPECT_FALSE(r.find({{"arm", "uncoded"}})->ok);
  EXPECT_TRUE(r.find({{"arm", "baseline"}})->ok);
}
