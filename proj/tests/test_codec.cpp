#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include <gtest/gtest.h>

#include "invcode/codec.hpp"
#include "invcode/error.hpp"
#include "invcode/rng.hpp"

using namespace invcode;

namespace {

double inf_norm(const Vec& v) { return v.cwiseAbs().maxCoeff(); }

VecList random_inputs(Rng& rng, int k, int dim) {
  VecList xs;
  for (int j = 0; j < k; ++j) xs.push_back(standard_normal(rng, dim));
  return xs;
}

std::map<TaskId, Vec> all_results(const InvertibleFunction& f, const EncodedBatch& batch) {
  std::map<TaskId, Vec> out;
  for (TaskId t = 1; t <= batch.n(); ++t) out.emplace(t, f.forward(batch.task_input(t)));
  return out;
}

// Decode oracle for the single-parity uniform code written out by hand: a
// missing data embedding is k * parity minus the others.
VecList drop_one_oracle(const std::map<TaskId, Vec>& r, int k, const std::vector<TaskId>& subset) {
  VecList out;
  TaskId missing = 0;
  for (TaskId t = 1; t <= k; ++t)
    if (std::find(subset.begin(), subset.end(), t) == subset.end()) missing = t;
  for (TaskId t = 1; t <= k; ++t) {
    if (t != missing) {
      out.push_back(r.at(t));
      continue;
    }
    Vec v = static_cast<double>(k) * r.at(k + 1);
    for (TaskId o = 1; o <= k; ++o)
      if (o != missing) v -= r.at(o);
    out.push_back(v);
  }
  return out;
}

ResidualBlock softplus_identity_block(int dim, double scale) {
  ResidualBlock b;
  b.w1 = Mat::Identity(dim, dim);
  b.w2 = scale * Mat::Identity(dim, dim);
  b.scale = scale;
  b.activation = Activation::Softplus;
  return b;
}

}  // namespace

TEST(IdealEncode, RotationGivesPlainAverage) {
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  const auto g = build_generator(3, 2, Scheme::Uniform);
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto xs = random_inputs(rng, 2, 2);
    const auto batch = ideal_encode(f, xs, g);
    ASSERT_EQ(batch.parity_inputs.size(), 1u);
    EXPECT_LE(inf_norm(batch.parity_inputs[0] - (xs[0] + xs[1]) / 2), 1e-15);
    EXPECT_EQ(batch.mode, EncodeMode::Ideal);
    EXPECT_TRUE(batch.noise.empty());
  }
}

TEST(IdealEncode, CouplingDefiningProperty) {
  const auto f = InvertibleFunction::random_coupling(2, 4, 8, 3);
  const auto g = build_generator(3, 2, Scheme::Uniform);
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto xs = random_inputs(rng, 2, 2);
    const auto batch = ideal_encode(f, xs, g);
    const Vec target = (f.forward(xs[0]) + f.forward(xs[1])) / 2;
    EXPECT_LE(inf_norm(f.forward(batch.task_input(3)) - target), 1e-7);
  }
}

TEST(IdealEncode, EveryParityRowOnWideCodes) {
  const auto f = InvertibleFunction::random_residual(3, 2, 6, 0.6, 8);
  const auto g = build_generator(7, 4, Scheme::Vandermonde);
  Rng rng(3);
  const auto xs = random_inputs(rng, 4, 3);
  const auto batch = ideal_encode(f, xs, g);
  VecList fx;
  for (const auto& x : xs) fx.push_back(f.forward(x));
  const auto targets = parity_targets(fx, g);
  ASSERT_EQ(targets.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    Vec want = Vec::Zero(3);
    for (int j = 0; j < 4; ++j) want += g.coeff(5 + i, j + 1) * fx[static_cast<std::size_t>(j)];
    EXPECT_LE(inf_norm(targets[static_cast<std::size_t>(i)] - want), 1e-15);
    EXPECT_LE(inf_norm(f.forward(batch.task_input(5 + i)) - want), 1e-7);
  }
}

TEST(IdealEncode, RepetitionCode) {
  const auto f = InvertibleFunction::random_coupling(2, 2, 4, 1);
  const auto g = build_generator(2, 1, Scheme::Uniform);
  const VecList xs{Vec::Constant(2, 0.75)};
  const auto batch = ideal_encode(f, xs, g);
  EXPECT_LE(inf_norm(batch.task_input(2) - xs[0]), 1e-12);
}

TEST(IdealEncode, RejectsWrongShapes) {
  const auto f = InvertibleFunction::rotation(0.5);
  const auto g = build_generator(3, 2, Scheme::Uniform);
  EXPECT_THROW(ideal_encode(f, {Vec::Zero(2)}, g), Error);
  EXPECT_THROW(ideal_encode(f, {Vec::Zero(2), Vec::Zero(3)}, g), Error);
}

TEST(PerturbedEncode, SigmaZeroIsBitwiseIdeal) {
  const auto f = InvertibleFunction::random_coupling(2, 3, 8, 9);
  const auto g = build_generator(5, 3, Scheme::Vandermonde);
  Rng rng(4);
  const auto xs = random_inputs(rng, 3, 2);
  const auto ideal = ideal_encode(f, xs, g);
  const auto pert = perturbed_encode(f, xs, g, {0.0, 99});
  ASSERT_EQ(ideal.parity_inputs.size(), pert.parity_inputs.size());
  for (std::size_t i = 0; i < ideal.parity_inputs.size(); ++i)
    EXPECT_EQ(0, std::memcmp(ideal.parity_inputs[i].data(), pert.parity_inputs[i].data(),
                             sizeof(double) * 2));
}

TEST(PerturbedEncode, AmplificationIsExactlyK) {
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  for (int k : {2, 4, 10}) {
    const auto g = build_generator(k + 1, k, Scheme::Uniform);
    std::vector<TaskId> subset;
    for (TaskId t = 2; t <= k + 1; ++t) subset.push_back(t);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(derive_seed(500, seed));
      const auto xs = random_inputs(rng, k, 2);
      const auto batch = perturbed_encode(f, xs, g, {0.1, seed});
      ASSERT_EQ(batch.noise.size(), 1u);
      const auto est = decode_batch(all_results(f, batch), g, subset);
      const Vec err = est[0] - f.forward(xs[0]);
      EXPECT_LE(inf_norm(err - k * batch.noise[0]), 1e-9) << k << " seed " << seed;
    }
  }
}

TEST(PerturbedEncode, NoiseIsSeededGaussian) {
  const auto f = InvertibleFunction::rotation(0.0);
  const auto g = build_generator(3, 2, Scheme::Uniform);
  const VecList xs{Vec::Zero(2), Vec::Zero(2)};
  const auto a = perturbed_encode(f, xs, g, {2.0, 7});
  const auto b = perturbed_encode(f, xs, g, {2.0, 7});
  EXPECT_EQ(a.noise[0], b.noise[0]);
  Rng rng(7);
  EXPECT_EQ(a.noise[0], 2.0 * standard_normal(rng, 2));
  EXPECT_EQ(a.mode, EncodeMode::Perturbed);
}

TEST(PerturbedEncode, HugeSigmaLeavesResidualBasin) {
  const auto f = InvertibleFunction::contractive_residual(2, {softplus_identity_block(2, 0.9)});
  const auto g = build_generator(3, 2, Scheme::Uniform);
  const VecList xs{Vec::Zero(2), Vec::Ones(2)};
  // seed 0: positive first coordinate, linear softplus branch
  Rng probe(0);
  ASSERT_GT(standard_normal(probe, 2)(0), 0.0);
  try {
    perturbed_encode(f, xs, g, {1e6, 0});
    FAIL() << "expected NoConvergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConvergence);
  }
  EXPECT_NO_THROW(perturbed_encode(f, xs, g, {0.1, 1}));
}

TEST(PerturbedEncode, NegativeSigmaRejected) {
  const auto f = InvertibleFunction::rotation(0.0);
  const auto g = build_generator(3, 2, Scheme::Uniform);
  EXPECT_THROW(perturbed_encode(f, {Vec::Zero(2), Vec::Zero(2)}, g, {-1.0, 0}), Error);
}

TEST(DecodeBatch, SingleParityRecipe) {
  const auto g = build_generator(3, 2, Scheme::Uniform);
  Vec r1(2), r3(2);
  r1 << 1.0, -2.0;
  r3 << 0.25, 4.0;
  const auto est = decode_batch({{1, r1}, {3, r3}}, g, {1, 3});
  EXPECT_EQ(est[0], r1);
  EXPECT_LE(inf_norm(est[1] - (2 * r3 - r1)), 1e-15);
}

TEST(DecodeBatch, SystematicSubsetIsVerbatim) {
  const auto g = build_generator(5, 3, Scheme::Vandermonde);
  Rng rng(5);
  std::map<TaskId, Vec> r;
  for (TaskId t = 1; t <= 5; ++t) r.emplace(t, standard_normal(rng, 4));
  const auto est = decode_batch(r, g, {1, 2, 3});
  for (int i = 0; i < 3; ++i) EXPECT_EQ(est[static_cast<std::size_t>(i)], r.at(i + 1));
}

TEST(DecodeBatch, Multi42FromBackupsOnly) {
  const auto g = build_generator(4, 2, Scheme::Multi42);
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  Rng rng(6);
  const auto xs = random_inputs(rng, 2, 2);
  const auto r = all_results(f, ideal_encode(f, xs, g));
  const auto est = decode_batch(r, g, {3, 4});
  // hand-applied inverse [[4,-3],[-2,3]]
  EXPECT_LE(inf_norm(est[0] - (4 * r.at(3) - 3 * r.at(4))), 1e-12);
  EXPECT_LE(inf_norm(est[1] - (-2 * r.at(3) + 3 * r.at(4))), 1e-12);
  EXPECT_LE(inf_norm(est[0] - f.forward(xs[0])), 1e-9);
  EXPECT_LE(inf_norm(est[1] - f.forward(xs[1])), 1e-9);
}

TEST(DecodeBatch, LinearExactAnySubsetUpToK100) {
  const auto f = InvertibleFunction::rotation(0.7);
  for (int k : {1, 2, 5, 20, 50, 100}) {
    const auto g = build_generator(k + 1, k, Scheme::Uniform);
    Rng rng(derive_seed(9, static_cast<std::uint64_t>(k)));
    const auto xs = random_inputs(rng, k, 2);
    const auto r = all_results(f, ideal_encode(f, xs, g));
    for (TaskId lost = 1; lost <= k + 1; lost += std::max(1, k / 7)) {
      std::vector<TaskId> subset;
      for (TaskId t = 1; t <= k + 1; ++t)
        if (t != lost) subset.push_back(t);
      const auto est = decode_batch(r, g, subset);
      for (int i = 0; i < k; ++i)
        EXPECT_LE(inf_norm(est[static_cast<std::size_t>(i)] - f.forward(xs[static_cast<std::size_t>(i)])),
                  1e-10)
            << "k=" << k << " lost=" << lost;
    }
  }
}

TEST(DecodeBatch, Errors) {
  const auto g = build_generator(3, 2, Scheme::Uniform);
  const std::map<TaskId, Vec> r{{1, Vec::Zero(2)}, {2, Vec::Zero(2)}};
  EXPECT_THROW(decode_batch(r, g, {1, 3}), Error);
  EXPECT_THROW(decode_batch(r, g, {1}), Error);
  Mat rows(3, 2);
  rows << 1, 0, 0, 1, 0, 1;
  const std::map<TaskId, Vec> r3{{2, Vec::Zero(2)}, {3, Vec::Zero(2)}};
  try {
    decode_batch(r3, GeneratorMatrix::from_rows(rows), {2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularSubset);
  }
}

TEST(OnlineUpdate, ParityThenData) {
  const auto g = build_generator(3, 2, Scheme::Uniform);
  Vec v1(2), v3(2);
  v1 << 1.5, -1;
  v3 << 0.5, 2;
  DecoderState s(g);
  s = online_update(s, 3, v3);
  EXPECT_FALSE(s.finalized(1));
  s = online_update(s, 1, v1);
  EXPECT_TRUE(s.complete());
  EXPECT_TRUE(s.finalized(2));
  EXPECT_EQ(s.estimate(1), v1);
  EXPECT_LE(inf_norm(s.estimate(2) - (2 * v3 - v1)), 1e-15);
  EXPECT_EQ(s.decode_subset(), (std::vector<TaskId>{1, 3}));
}

TEST(OnlineUpdate, DataOnlyNeverTouchesParity) {
  const auto g = build_generator(3, 2, Scheme::Uniform);
  Vec v1 = Vec::Constant(2, 1.0), v2 = Vec::Constant(2, 2.0);
  DecoderState s(g);
  s.update(1, v1);
  s.update(2, v2);
  EXPECT_EQ(s.estimates(), (VecList{v1, v2}));
  EXPECT_EQ(s.ops().scalar_multiplies, 0u);
  // late parity is recorded but changes nothing
  s.update(3, Vec::Constant(2, 100.0));
  EXPECT_EQ(s.estimates(), (VecList{v1, v2}));
  EXPECT_TRUE(s.received(3));
}

TEST(OnlineUpdate, FinalizedEstimatesNeverChange) {
  const auto g = build_generator(5, 4, Scheme::Uniform);
  Rng rng(10);
  DecoderState s(g);
  std::map<int, Vec> frozen;
  for (TaskId t : {2, 5, 4, 1, 3}) {
    s.update(t, standard_normal(rng, 3));
    for (const auto& [i, v] : frozen) EXPECT_EQ(s.estimate(i), v);
    for (int i = 1; i <= 4; ++i)
      if (s.finalized(i) && !frozen.count(i)) frozen.emplace(i, s.estimate(i));
  }
  EXPECT_EQ(frozen.size(), 4u);
}

TEST(OnlineUpdate, DuplicateTask) {
  DecoderState s(build_generator(3, 2, Scheme::Uniform));
  s.update(1, Vec::Zero(2));
  try {
    s.update(1, Vec::Zero(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateTask);
  }
}

TEST(OnlineUpdate, RequiresSingleParityUniform) {
  EXPECT_THROW(DecoderState(build_generator(4, 2, Scheme::Multi42)), Error);
  EXPECT_THROW(DecoderState(build_generator(4, 3, Scheme::Vandermonde)), Error);
  EXPECT_NO_THROW(DecoderState(build_generator(2, 1, Scheme::Uniform)));
}

TEST(OnlineUpdate, ExhaustiveEquivalenceWithBatch) {
  for (int k = 2; k <= 6; ++k) {
    const auto g = build_generator(k + 1, k, Scheme::Uniform);
    Rng rng(derive_seed(11, static_cast<std::uint64_t>(k)));
    std::map<TaskId, Vec> r;
    for (TaskId t = 1; t <= k + 1; ++t) r.emplace(t, standard_normal(rng, 3));
    for_each_subset(k + 1, k, [&](const std::vector<TaskId>& subset) {
      const auto batch = decode_batch(r, g, subset);
      const auto oracle = drop_one_oracle(r, k, subset);
      const bool uses_parity = subset.back() == k + 1;
      std::vector<TaskId> order = subset;
      do {
        DecoderState s(g);
        for (TaskId t : order) s.update(t, r.at(t));
        EXPECT_TRUE(s.complete());
        for (int i = 0; i < k; ++i) {
          const auto idx = static_cast<std::size_t>(i);
          EXPECT_LE(inf_norm(s.estimate(i + 1) - batch[idx]), 1e-10);
          EXPECT_LE(inf_norm(s.estimate(i + 1) - oracle[idx]), 1e-10);
        }
        if (uses_parity) {
          EXPECT_EQ(s.ops().scalar_multiplies, 1u);
          EXPECT_EQ(s.ops().subtractions, static_cast<std::size_t>(k - 1));
          EXPECT_LE(s.ops().additions, 1u);
        }
      } while (std::next_permutation(order.begin(), order.end()));
      return true;
    });
  }
}

TEST(StreamingDecoder, UsesOnlineRuleWhenPossible) {
  StreamingDecoder d(build_generator(4, 3, Scheme::Uniform));
  EXPECT_TRUE(d.online());
  EXPECT_FALSE(d.offer(4, Vec::Ones(2)));
  EXPECT_FALSE(d.offer(1, Vec::Ones(2)));
  EXPECT_TRUE(d.offer(2, Vec::Ones(2)));
  EXPECT_TRUE(d.used_parity());
  EXPECT_EQ(d.decode_subset(), (std::vector<TaskId>{1, 2, 4}));
  EXPECT_LE(inf_norm(d.estimates()[2] - Vec::Ones(2)), 1e-15);
}

TEST(StreamingDecoder, GeneralCodeTakesEarliestDecodableSet) {
  Mat rows(4, 2);
  rows << 1, 0, 0, 1, 0, 1, 0.5, 0.5;  // {2,3} is singular
  const auto g = GeneratorMatrix::from_rows(rows);
  StreamingDecoder d(g);
  EXPECT_FALSE(d.online());
  Vec a(2), b(2), c(2);
  a << 0, 1;
  b << 0, 1;
  c << 0.5, 1;
  EXPECT_FALSE(d.offer(2, a));
  EXPECT_FALSE(d.offer(3, b));
  EXPECT_TRUE(d.offer(4, c));
  EXPECT_EQ(d.decode_subset(), (std::vector<TaskId>{2, 4}));
  EXPECT_LE(inf_norm(d.estimates()[0] - Vec::Constant(2, 1.0)), 1e-12);
  EXPECT_LE(inf_norm(d.estimates()[1] - a), 1e-12);
  EXPECT_TRUE(d.offer(1, a));  // ignored after completion
}

TEST(StreamingDecoder, NotDoneThrowsOnAccess) {
  StreamingDecoder d(build_generator(4, 2, Scheme::Multi42));
  d.offer(3, Vec::Ones(2));
  EXPECT_FALSE(d.done());
  EXPECT_THROW(d.estimates(), Error);
}

TEST(DegradedInference, MarginGeometry) {
  VecList means{Vec::Zero(2), Vec::Constant(2, 0.0)};
  means[0] << -1, 0;
  means[1] << 1, 0;
  const auto head = DownstreamHead::nearest_mean(means);
  const Vec fx = means[0];
  EXPECT_EQ(degraded_inference(head, fx), head.predict(fx));
  const double margin = head.margin(fx);
  EXPECT_NEAR(margin, 1.0, 1e-15);
  const int k = 4;
  Vec eps(2);
  eps << 0.9 * margin / k, 0.3;
  EXPECT_EQ(degraded_inference(head, fx + k * eps), 0);
  eps << 1.1 * margin / k, 0.0;
  EXPECT_EQ(degraded_inference(head, fx + k * eps), 1);
  EXPECT_THROW(degraded_inference(head, Vec::Constant(2, std::nan(""))), Error);
}
