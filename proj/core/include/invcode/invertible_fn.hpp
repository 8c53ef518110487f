#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "invcode/types.hpp"

namespace invcode {

/// Smooth 1-Lipschitz activations. Identity lets a residual block express a
/// purely linear contraction.
enum class Activation { Identity, Softplus };

std::string_view to_string(Activation a) noexcept;
Activation activation_from_string(std::string_view name);

double activate(Activation a, double v) noexcept;

inline constexpr int kFixedPointMaxIters = 200;
inline constexpr double kFixedPointStepTol = 1e-12;
inline constexpr double kFixedPointResidualTol = 1e-8;

struct Rotation {
  double theta = 0.0;
};

struct Affine {
  Mat a;
  Vec b;
};

enum class Orientation { ShiftB, ShiftA };

/// Additive coupling: coordinates split into a = [0, split) and b = [split, d).
/// ShiftB: y_b = x_b + t(x_a); ShiftA: y_a = x_a + t(x_b). The shift network is
/// t(u) = w2 * act(w1 * u + b1) + b2 with frozen weights.
struct CouplingLayer {
  int split = 1;
  Orientation orientation = Orientation::ShiftB;
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;
  Activation activation = Activation::Softplus;

  Vec shift(const Vec& u) const;
};

/// Residual block x + g(x) with g(x) = w2 * act(w1 * x). The weights are
/// stored already normalized: ||w1||_2 = 1 and ||w2||_2 = scale, so scale is
/// an exact Lipschitz bound of g.
struct ResidualBlock {
  Mat w1;
  Mat w2;
  double scale = 0.5;
  Activation activation = Activation::Softplus;

  /// Normalizes raw weights so that the block's Lipschitz bound equals `scale`.
  static ResidualBlock normalized(const Mat& raw_w1, const Mat& raw_w2, double scale,
                                  Activation activation = Activation::Softplus);

  double lipschitz_bound() const noexcept { return scale; }
  Vec nonlinear(const Vec& x) const;
  Vec apply(const Vec& x) const { return x + nonlinear(x); }
};

struct InverseResult {
  Vec x;
  int iterations = 0;
};

/// Fixed-point inversion of one residual block: iterate x <- y - g(x) from
/// x0 = y. Throws NoConvergence when the residual stays above tolerance.
InverseResult invert_block(const ResidualBlock& block, const Vec& y,
                           int max_iters = kFixedPointMaxIters);

/// Power-iteration estimate of ||w2 * w1||_2 (times the activation's
/// Lipschitz constant, which is 1). Nondecreasing in `iters`.
double estimate_lipschitz(const ResidualBlock& block, int iters);

class InvertibleFunction {
 public:
  using Kind = std::variant<Rotation, Affine, std::vector<CouplingLayer>, std::vector<ResidualBlock>>;

  /// Planar rotation of coordinates (0, 1); remaining coordinates pass through.
  static InvertibleFunction rotation(double theta, int dim = 2);
  static InvertibleFunction affine(Mat a, Vec b);
  static InvertibleFunction coupling(int dim, std::vector<CouplingLayer> layers);
  static InvertibleFunction contractive_residual(int dim, std::vector<ResidualBlock> blocks);

  /// Seeded random families with frozen weights.
  static InvertibleFunction random_coupling(int dim, int layers, int hidden, std::uint64_t seed);
  static InvertibleFunction random_residual(int dim, int blocks, int hidden, double lipschitz,
                                            std::uint64_t seed);

  int dim() const noexcept { return dim_; }
  const Kind& kind() const noexcept { return kind_; }
  std::string_view kind_name() const noexcept;
  std::optional<std::uint64_t> seed() const noexcept { return seed_; }
  /// True for Rotation and for Affine with b = 0.
  bool is_linear() const noexcept;

  Vec forward(const Vec& x) const;
  InverseResult inverse(const Vec& y) const;

 private:
  InvertibleFunction(int dim, Kind kind, std::optional<std::uint64_t> seed);
  void check_dim(const Vec& v) const;
  friend InvertibleFunction function_from_json(const nlohmann::json& j);

  int dim_;
  Kind kind_;
  std::optional<std::uint64_t> seed_;
  // Cached factorization for Affine inverses.
  std::optional<Eigen::PartialPivLU<Mat>> affine_lu_;
};

void to_json(nlohmann::json& j, const InvertibleFunction& f);
/// Accepts both the full-parameter form written by to_json and the generator
/// form {kind, dim, seed, ...} used in configs.
InvertibleFunction function_from_json(const nlohmann::json& j);

nlohmann::json vec_to_json(const Vec& v);
Vec vec_from_json(const nlohmann::json& j);
nlohmann::json mat_to_json(const Mat& m);
Mat mat_from_json(const nlohmann::json& j);

}  // namespace invcode
