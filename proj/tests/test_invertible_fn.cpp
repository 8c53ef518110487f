#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "invcode/error.hpp"
#include "invcode/invertible_fn.hpp"
#include "invcode/rng.hpp"

using namespace invcode;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double inf_norm(const Vec& v) { return v.cwiseAbs().maxCoeff(); }

Vec uniform_box(Rng& rng, int dim, double half_width) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = u(rng);
  return v;
}

std::vector<InvertibleFunction> families(int dim) {
  Rng rng(42);
  Mat a = Mat::Identity(dim, dim) + 0.3 * standard_normal(rng, dim, dim);
  return {InvertibleFunction::rotation(std::numbers::pi / 3, dim),
          InvertibleFunction::affine(a, standard_normal(rng, dim)),
          InvertibleFunction::random_coupling(dim, 4, 8, 5),
          InvertibleFunction::random_residual(dim, 2, 8, 0.7, 9)};
}

ResidualBlock linear_block(double scale) {
  ResidualBlock b;
  b.w1 = Mat::Identity(1, 1);
  b.w2 = Mat::Identity(1, 1) * scale;
  b.scale = scale;
  b.activation = Activation::Identity;
  return b;
}

}  // namespace

TEST(Forward, RotationPiOverThree) {
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  const Vec y = f.forward(v2(1, 0));
  EXPECT_NEAR(y[0], 0.5, 1e-15);
  EXPECT_NEAR(y[1], std::sqrt(3.0) / 2, 1e-15);
  EXPECT_NEAR(y[1], 0.8660254, 1e-7);
}

TEST(Forward, RotationActsOnFirstPlaneOnly) {
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 2, 3);
  Vec x(3);
  x << 1, 2, 3;
  const Vec y = f.forward(x);
  EXPECT_NEAR(y[0], -2, 1e-15);
  EXPECT_NEAR(y[1], 1, 1e-15);
  EXPECT_EQ(y[2], 3);
}

TEST(Forward, AffineIdentity) {
  const auto f = InvertibleFunction::affine(Mat::Identity(2, 2), Vec::Zero(2));
  const Vec x = v2(-3.25, 7.5);
  EXPECT_EQ(f.forward(x), x);
  EXPECT_TRUE(f.is_linear());
}

TEST(Forward, CouplingZeroShift) {
  CouplingLayer layer;
  layer.split = 1;
  layer.w1 = Mat::Zero(3, 1);
  layer.b1 = Vec::Zero(3);
  layer.w2 = Mat::Zero(1, 3);
  layer.b2 = Vec::Zero(1);
  layer.activation = Activation::Identity;
  const auto f = InvertibleFunction::coupling(2, {layer});
  const Vec x = v2(0.25, -4);
  EXPECT_EQ(f.forward(x), x);
}

TEST(Forward, CouplingShiftIsAdditive) {
  CouplingLayer layer;
  layer.split = 1;
  layer.orientation = Orientation::ShiftB;
  layer.w1 = Mat::Constant(1, 1, 2.0);
  layer.b1 = Vec::Constant(1, 1.0);
  layer.w2 = Mat::Constant(1, 1, 3.0);
  layer.b2 = Vec::Constant(1, 0.5);
  layer.activation = Activation::Identity;
  const auto f = InvertibleFunction::coupling(2, {layer});
  // y_b = x_b + 3 * (2 x_a + 1) + 0.5
  const Vec y = f.forward(v2(1, 10));
  EXPECT_EQ(y[0], 1);
  EXPECT_EQ(y[1], 10 + 9 + 0.5);
  layer.orientation = Orientation::ShiftA;
  const Vec z = InvertibleFunction::coupling(2, {layer}).forward(v2(1, 10));
  EXPECT_EQ(z[0], 1 + 63 + 0.5);
  EXPECT_EQ(z[1], 10);
}

TEST(Forward, DimensionMismatch) {
  const auto f = InvertibleFunction::rotation(0.1);
  try {
    f.forward(Vec::Zero(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  EXPECT_THROW(f.inverse(Vec::Zero(1)), Error);
}

TEST(Inverse, RotationRoundTrip) {
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  const Vec x = v2(0.3, -1.2);
  const auto r = f.inverse(f.forward(x));
  EXPECT_LE(inf_norm(r.x - x), 1e-15);
  EXPECT_EQ(r.iterations, 0);
}

TEST(Inverse, LinearResidualBlock) {
  const auto f = InvertibleFunction::contractive_residual(1, {linear_block(0.5)});
  const auto r = f.inverse(Vec::Constant(1, 3.0));
  EXPECT_NEAR(r.x[0], 2.0, 1e-12);
  EXPECT_EQ(f.forward(Vec::Constant(1, 2.0))[0], 3.0);
  // x0 = y, error halves every step: ceil(log(tol / |x0 - x*|) / log L) + 2
  const double bound =
      std::ceil(std::log(kFixedPointStepTol / 1.0) / std::log(0.5)) + 2;
  EXPECT_LE(r.iterations, bound);
  EXPECT_GE(r.iterations, bound - 4);
}

TEST(Inverse, LinearBlockRateIsGeometric) {
  const auto block = linear_block(0.5);
  // error after t steps is 0.5^t * |x0 - x*|, observed through max_iters
  for (int t = 1; t <= 20; ++t) {
    Vec x = Vec::Constant(1, 3.0);
    for (int s = 0; s < t; ++s) x = Vec::Constant(1, 3.0) - block.nonlinear(x);
    EXPECT_NEAR(std::abs(x[0] - 2.0), std::pow(0.5, t), 1e-15);
  }
}

TEST(Inverse, AffineClosedForm) {
  Mat a(2, 2);
  a << 2, 0, 0, 4;
  const auto f = InvertibleFunction::affine(a, v2(1, 1));
  const auto r = f.inverse(v2(5, 9));
  EXPECT_NEAR(r.x[0], 2, 1e-15);
  EXPECT_NEAR(r.x[1], 2, 1e-15);
  EXPECT_FALSE(f.is_linear());
}

TEST(Inverse, AffineSingularRejected) {
  Mat a(2, 2);
  a << 1, 2, 2, 4;
  EXPECT_THROW(InvertibleFunction::affine(a, Vec::Zero(2)), Error);
}

TEST(Inverse, CouplingReportsLayerCount) {
  const auto f = InvertibleFunction::random_coupling(4, 3, 6, 1);
  EXPECT_EQ(f.inverse(Vec::Ones(4)).iterations, 3);
}

TEST(Inverse, NoConvergenceWhenBudgetTooSmall) {
  const ResidualBlock block = linear_block(0.9);
  try {
    invert_block(block, Vec::Constant(1, 1e3), 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConvergence);
  }
}

TEST(RoundTrip, EveryFamilyThousandPoints) {
  for (int dim : {2, 5}) {
    for (const auto& f : families(dim)) {
      Rng rng(derive_seed(77, static_cast<std::uint64_t>(dim)));
      for (int i = 0; i < 1000; ++i) {
        const Vec x = uniform_box(rng, dim, 1e3);
        EXPECT_LE(inf_norm(f.inverse(f.forward(x)).x - x), 1e-8) << f.kind_name();
        const Vec y = uniform_box(rng, dim, 1e3);
        EXPECT_LE(inf_norm(f.forward(f.inverse(y).x) - y), 1e-8) << f.kind_name();
      }
    }
  }
}

TEST(Linearity, RotationAndAffineWithoutOffset) {
  Rng rng(3);
  const std::vector<InvertibleFunction> fs{
      InvertibleFunction::rotation(std::numbers::pi / 3),
      InvertibleFunction::affine(Mat::Identity(2, 2) + 0.3 * standard_normal(rng, 2, 2),
                                 Vec::Zero(2))};
  for (const auto& f : fs) {
    EXPECT_TRUE(f.is_linear());
    for (int i = 0; i < 100; ++i) {
      const Vec x1 = standard_normal(rng, 2);
      const Vec x2 = standard_normal(rng, 2);
      const double a = standard_normal(rng, 1)[0];
      const double b = standard_normal(rng, 1)[0];
      EXPECT_LE(inf_norm(f.forward(a * x1 + b * x2) - (a * f.forward(x1) + b * f.forward(x2))),
                1e-12);
    }
  }
}

TEST(Nonlinearity, CouplingHasWitness) {
  const auto f = InvertibleFunction::random_coupling(2, 2, 8, 5);
  EXPECT_FALSE(f.is_linear());
  Rng rng(8);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec x1 = 2.0 * standard_normal(rng, 2);
    const Vec x2 = 2.0 * standard_normal(rng, 2);
    worst = std::max(worst, (f.forward((x1 + x2) / 2) - (f.forward(x1) + f.forward(x2)) / 2).norm());
  }
  EXPECT_GT(worst, 1e-3);
}

TEST(Lipschitz, ScaledIdentity) {
  const auto b = ResidualBlock::normalized(Mat::Identity(3, 3), Mat::Identity(3, 3), 0.7);
  EXPECT_NEAR(estimate_lipschitz(b, 50), 0.7, 1e-6);
}

TEST(Lipschitz, NormalizedDiagonal) {
  Mat w1 = Mat::Identity(2, 2);
  w1(0, 0) = 3;
  const auto b = ResidualBlock::normalized(w1, Mat::Identity(2, 2), 0.9);
  const double est = estimate_lipschitz(b, 100);
  EXPECT_LE(est, 0.9 + 1e-6);
  EXPECT_NEAR(est, 0.9, 1e-6);
  EXPECT_NEAR(b.w1(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(b.w1(1, 1), 1.0 / 3, 1e-15);
}

TEST(Lipschitz, ZeroWeights) {
  ResidualBlock b;
  b.w1 = Mat::Zero(3, 2);
  b.w2 = Mat::Zero(2, 3);
  EXPECT_EQ(estimate_lipschitz(b, 10), 0.0);
  const auto n = ResidualBlock::normalized(Mat::Zero(3, 2), Mat::Zero(2, 3), 0.5);
  EXPECT_EQ(estimate_lipschitz(n, 10), 0.0);
}

TEST(Lipschitz, MonotoneAndBounded) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto b = ResidualBlock::normalized(standard_normal(rng, 6, 4), standard_normal(rng, 4, 6),
                                             0.8);
    double prev = 0.0;
    for (int it = 1; it <= 40; ++it) {
      const double est = estimate_lipschitz(b, it);
      EXPECT_GE(est, prev);
      EXPECT_LE(est, b.lipschitz_bound() + 1e-6);
      prev = est;
    }
  }
}

TEST(Lipschitz, ScaleOutsideUnitIntervalRejected) {
  EXPECT_THROW(ResidualBlock::normalized(Mat::Identity(2, 2), Mat::Identity(2, 2), 1.0), Error);
  EXPECT_THROW(ResidualBlock::normalized(Mat::Identity(2, 2), Mat::Identity(2, 2), 0.0), Error);
}

TEST(Activation, SoftplusIsStable) {
  EXPECT_NEAR(activate(Activation::Softplus, 0.0), std::log(2.0), 1e-15);
  EXPECT_EQ(activate(Activation::Softplus, 800.0), 800.0);
  EXPECT_GE(activate(Activation::Softplus, -800.0), 0.0);
  EXPECT_EQ(activate(Activation::Identity, -2.5), -2.5);
}

TEST(FunctionJson, FullParameterRoundTripIsExact) {
  Rng rng(5);
  for (const auto& f : families(3)) {
    nlohmann::json j = f;
    const auto g = function_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(g.kind_name(), f.kind_name());
    EXPECT_EQ(g.dim(), f.dim());
    for (int i = 0; i < 20; ++i) {
      const Vec x = standard_normal(rng, 3);
      EXPECT_EQ(g.forward(x), f.forward(x));
    }
  }
}

TEST(FunctionJson, GeneratorFormsMatchFactories) {
  const auto c = function_from_json(
      {{"kind", "coupling"}, {"dim", 4}, {"layers", 3}, {"hidden", 6}, {"seed", 21}});
  const auto want = InvertibleFunction::random_coupling(4, 3, 6, 21);
  const auto r = function_from_json(
      {{"kind", "residual"}, {"dim", 2}, {"blocks", 2}, {"hidden", 5}, {"lipschitz", 0.6}, {"seed", 4}});
  const auto want_r = InvertibleFunction::random_residual(2, 2, 5, 0.6, 4);
  const auto rot = function_from_json({{"kind", "rotation"}, {"dim", 2}, {"theta", 0.25}});
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const Vec x4 = standard_normal(rng, 4);
    const Vec x2 = standard_normal(rng, 2);
    EXPECT_EQ(c.forward(x4), want.forward(x4));
    EXPECT_EQ(r.forward(x2), want_r.forward(x2));
    EXPECT_EQ(rot.forward(x2), InvertibleFunction::rotation(0.25).forward(x2));
  }
}

TEST(FunctionJson, RejectsUnknownKeysAndMissingSeeds) {
  EXPECT_THROW(function_from_json({{"kind", "rotation"}, {"dim", 2}, {"theta", 1}, {"bogus", 1}}),
               Error);
  EXPECT_THROW(function_from_json({{"kind", "coupling"}, {"dim", 2}, {"layers", 2}}), Error);
  EXPECT_THROW(function_from_json({{"kind", "spline"}, {"dim", 2}}), Error);
}
