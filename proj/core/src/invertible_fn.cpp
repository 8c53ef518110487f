#include "invcode/invertible_fn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "invcode/error.hpp"
#include "invcode/rng.hpp"

namespace invcode {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

Vec activate_all(Activation a, const Vec& v) {
  if (a == Activation::Identity) return v;
  return v.unaryExpr([a](double e) { return activate(a, e); });
}

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

std::string_view to_string(Activation a) noexcept {
  return a == Activation::Identity ? "identity" : "softplus";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "softplus") return Activation::Softplus;
  throw Error(ErrorCode::InvalidConfig, "unknown activation '" + std::string(name) + "'");
}

double activate(Activation a, double v) noexcept {
  if (a == Activation::Identity) return v;
  // Numerically stable softplus: log(1 + e^v).
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

Vec CouplingLayer::shift(const Vec& u) const {
  return w2 * activate_all(activation, (w1 * u + b1)) + b2;
}

ResidualBlock ResidualBlock::normalized(const Mat& raw_w1, const Mat& raw_w2, double scale,
                                        Activation activation) {
  if (!(scale > 0.0 && scale < 1.0))
    throw Error(ErrorCode::InvalidConfig, "residual block scale must lie in (0, 1)");
  if (raw_w2.cols() != raw_w1.rows() || raw_w2.rows() != raw_w1.cols())
    throw Error(ErrorCode::DimensionMismatch, "residual block weights do not compose");
  ResidualBlock block;
  block.scale = scale;
  block.activation = activation;
  const double n1 = spectral_norm(raw_w1);
  const double n2 = spectral_norm(raw_w2);
  block.w1 = n1 > 0.0 ? Mat(raw_w1 / n1) : raw_w1;
  block.w2 = n2 > 0.0 ? Mat(raw_w2 * (scale / n2)) : raw_w2;
  return block;
}

Vec ResidualBlock::nonlinear(const Vec& x) const {
  return w2 * activate_all(activation, (w1 * x));
}

InverseResult invert_block(const ResidualBlock& block, const Vec& y, int max_iters) {
  InverseResult out{y, 0};
  for (int it = 1; it <= max_iters; ++it) {
    Vec next = y - block.nonlinear(out.x);
    const double step = inf_norm(next - out.x);
    out.x = std::move(next);
    out.iterations = it;
    if (!std::isfinite(step)) break;
    if (step <= kFixedPointStepTol) break;
  }
  const double residual = inf_norm(block.apply(out.x) - y);
  if (!(residual <= kFixedPointResidualTol))
    throw Error(ErrorCode::NoConvergence,
                "fixed-point inversion stopped after " + std::to_string(out.iterations) +
                    " iterations with residual " + std::to_string(residual));
  return out;
}

double estimate_lipschitz(const ResidualBlock& block, int iters) {
  const Mat m = block.w2 * block.w1;
  if (m.size() == 0 || iters < 1) return 0.0;
  Rng rng(0x5eedULL);
  Vec v = standard_normal(rng, static_cast<int>(m.cols())).cwiseAbs();
  v.normalize();
  double best = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Vec mv = m * v;
    best = std::max(best, mv.norm());
    Vec next = m.transpose() * mv;
    const double len = next.norm();
    if (len == 0.0) break;
    v = next / len;
  }
  return best;
}

InvertibleFunction::InvertibleFunction(int dim, Kind kind, std::optional<std::uint64_t> seed)
    : dim_(dim), kind_(std::move(kind)), seed_(seed) {
  if (dim_ < 1) throw Error(ErrorCode::InvalidShape, "dimension must be positive");
  if (const auto* aff = std::get_if<Affine>(&kind_)) {
    if (aff->a.rows() != dim_ || aff->a.cols() != dim_ || aff->b.size() != dim_)
      throw Error(ErrorCode::DimensionMismatch, "affine parameters do not match dimension");
    affine_lu_.emplace(aff->a);
    if (!(std::abs(affine_lu_->determinant()) > 1e-9))
      throw Error(ErrorCode::InvalidShape, "affine matrix is singular");
  }
}

InvertibleFunction InvertibleFunction::rotation(double theta, int dim) {
  if (dim < 2) throw Error(ErrorCode::InvalidShape, "rotation needs dim >= 2");
  return InvertibleFunction(dim, Rotation{theta}, std::nullopt);
}

InvertibleFunction InvertibleFunction::affine(Mat a, Vec b) {
  const auto dim = static_cast<int>(a.rows());
  return InvertibleFunction(dim, Affine{std::move(a), std::move(b)}, std::nullopt);
}

InvertibleFunction InvertibleFunction::coupling(int dim, std::vector<CouplingLayer> layers) {
  if (dim < 2) throw Error(ErrorCode::InvalidShape, "coupling needs dim >= 2");
  for (const auto& l : layers) {
    const int na = l.split;
    const int nb = dim - l.split;
    const int in = l.orientation == Orientation::ShiftB ? na : nb;
    const int out = l.orientation == Orientation::ShiftB ? nb : na;
    if (na < 1 || nb < 1 || l.w1.cols() != in || l.w1.rows() != l.b1.size() ||
        l.w2.cols() != l.w1.rows() || l.w2.rows() != out || l.b2.size() != out)
      throw Error(ErrorCode::DimensionMismatch, "coupling layer shapes do not match dimension");
  }
  return InvertibleFunction(dim, std::move(layers), std::nullopt);
}

InvertibleFunction InvertibleFunction::contractive_residual(int dim,
                                                            std::vector<ResidualBlock> blocks) {
  for (const auto& b : blocks) {
    if (b.w1.cols() != dim || b.w2.rows() != dim || b.w2.cols() != b.w1.rows())
      throw Error(ErrorCode::DimensionMismatch, "residual block shapes do not match dimension");
    if (!(b.scale > 0.0 && b.scale < 1.0))
      throw Error(ErrorCode::InvalidConfig, "residual block Lipschitz bound must be < 1");
  }
  return InvertibleFunction(dim, std::move(blocks), std::nullopt);
}

InvertibleFunction InvertibleFunction::random_coupling(int dim, int layers, int hidden,
                                                       std::uint64_t seed) {
  if (dim < 2 || layers < 1 || hidden < 1)
    throw Error(ErrorCode::InvalidConfig, "coupling needs dim >= 2, layers >= 1, hidden >= 1");
  Rng rng(seed);
  std::vector<CouplingLayer> out;
  const int split = dim / 2;
  for (int l = 0; l < layers; ++l) {
    CouplingLayer layer;
    layer.split = split;
    layer.orientation = l % 2 == 0 ? Orientation::ShiftB : Orientation::ShiftA;
    const int in = layer.orientation == Orientation::ShiftB ? split : dim - split;
    const int outd = dim - in;
    layer.w1 = standard_normal(rng, hidden, in);
    layer.b1 = standard_normal(rng, hidden) * 0.5;
    layer.w2 = standard_normal(rng, outd, hidden) / std::sqrt(static_cast<double>(hidden));
    layer.b2 = standard_normal(rng, outd) * 0.1;
    out.push_back(std::move(layer));
  }
  auto f = coupling(dim, std::move(out));
  f.seed_ = seed;
  return f;
}

InvertibleFunction InvertibleFunction::random_residual(int dim, int blocks, int hidden,
                                                       double lipschitz, std::uint64_t seed) {
  if (blocks < 1 || hidden < 1)
    throw Error(ErrorCode::InvalidConfig, "residual needs blocks >= 1, hidden >= 1");
  Rng rng(seed);
  std::vector<ResidualBlock> out;
  for (int b = 0; b < blocks; ++b) {
    const Mat w1 = standard_normal(rng, hidden, dim);
    const Mat w2 = standard_normal(rng, dim, hidden);
    out.push_back(ResidualBlock::normalized(w1, w2, lipschitz));
  }
  auto f = contractive_residual(dim, std::move(out));
  f.seed_ = seed;
  return f;
}

std::string_view InvertibleFunction::kind_name() const noexcept {
  switch (kind_.index()) {
    case 0: return "rotation";
    case 1: return "affine";
    case 2: return "coupling";
    default: return "residual";
  }
}

bool InvertibleFunction::is_linear() const noexcept {
  if (std::holds_alternative<Rotation>(kind_)) return true;
  if (const auto* aff = std::get_if<Affine>(&kind_)) return aff->b.isZero(0.0);
  return false;
}

void InvertibleFunction::check_dim(const Vec& v) const {
  if (v.size() != dim_)
    throw Error(ErrorCode::DimensionMismatch, "expected dim " + std::to_string(dim_) + ", got " +
                                                  std::to_string(v.size()));
}

Vec InvertibleFunction::forward(const Vec& x) const {
  check_dim(x);
  return std::visit(
      overloaded{
          [&](const Rotation& r) {
            Vec y = x;
            const double c = std::cos(r.theta);
            const double s = std::sin(r.theta);
            y[0] = c * x[0] - s * x[1];
            y[1] = s * x[0] + c * x[1];
            return y;
          },
          [&](const Affine& a) { return Vec(a.a * x + a.b); },
          [&](const std::vector<CouplingLayer>& layers) {
            Vec y = x;
            for (const auto& l : layers) {
              const int nb = dim_ - l.split;
              if (l.orientation == Orientation::ShiftB)
                y.tail(nb) += l.shift(y.head(l.split));
              else
                y.head(l.split) += l.shift(y.tail(nb));
            }
            return y;
          },
          [&](const std::vector<ResidualBlock>& blocks) {
            Vec y = x;
            for (const auto& b : blocks) y = b.apply(y);
            return y;
          },
      },
      kind_);
}

InverseResult InvertibleFunction::inverse(const Vec& y) const {
  check_dim(y);
  return std::visit(
      overloaded{
          [&](const Rotation& r) {
            Vec x = y;
            const double c = std::cos(r.theta);
            const double s = std::sin(r.theta);
            x[0] = c * y[0] + s * y[1];
            x[1] = -s * y[0] + c * y[1];
            return InverseResult{std::move(x), 0};
          },
          [&](const Affine& a) { return InverseResult{affine_lu_->solve(y - a.b), 0}; },
          [&](const std::vector<CouplingLayer>& layers) {
            Vec x = y;
            for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
              const int nb = dim_ - it->split;
              if (it->orientation == Orientation::ShiftB)
                x.tail(nb) -= it->shift(x.head(it->split));
              else
                x.head(it->split) -= it->shift(x.tail(nb));
            }
            return InverseResult{std::move(x), static_cast<int>(layers.size())};
          },
          [&](const std::vector<ResidualBlock>& blocks) {
            InverseResult out{y, 0};
            for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
              auto step = invert_block(*it, out.x);
              out.x = std::move(step.x);
              out.iterations += step.iterations;
            }
            return out;
          },
      },
      kind_);
}

// ---- serialization ---------------------------------------------------------

nlohmann::json vec_to_json(const Vec& v) {
  auto out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vec vec_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::InvalidConfig, "expected a numeric array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::InvalidConfig, "expected a numeric array");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

nlohmann::json mat_to_json(const Mat& m) {
  auto out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec_to_json(m.row(r).transpose()));
  return out;
}

Mat mat_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::InvalidConfig, "expected an array of rows");
  if (j.empty()) return Mat(0, 0);
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vec row = vec_from_json(j[r]);
    if (row.size() != cols) throw Error(ErrorCode::InvalidConfig, "ragged matrix rows");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

void to_json(nlohmann::json& j, const InvertibleFunction& f) {
  j = nlohmann::json::object();
  j["kind"] = std::string(f.kind_name());
  j["dim"] = f.dim();
  if (f.seed()) j["seed"] = *f.seed();
  std::visit(overloaded{
                 [&](const Rotation& r) { j["theta"] = r.theta; },
                 [&](const Affine& a) {
                   j["a"] = mat_to_json(a.a);
                   j["b"] = vec_to_json(a.b);
                 },
                 [&](const std::vector<CouplingLayer>& layers) {
                   auto arr = nlohmann::json::array();
                   for (const auto& l : layers) {
                     arr.push_back({{"split", l.split},
                                    {"orientation",
                                     l.orientation == Orientation::ShiftB ? "shift_b" : "shift_a"},
                                    {"activation", std::string(to_string(l.activation))},
                                    {"w1", mat_to_json(l.w1)},
                                    {"b1", vec_to_json(l.b1)},
                                    {"w2", mat_to_json(l.w2)},
                                    {"b2", vec_to_json(l.b2)}});
                   }
                   j["layers"] = std::move(arr);
                 },
                 [&](const std::vector<ResidualBlock>& blocks) {
                   auto arr = nlohmann::json::array();
                   for (const auto& b : blocks) {
                     arr.push_back({{"scale", b.scale},
                                    {"activation", std::string(to_string(b.activation))},
                                    {"w1", mat_to_json(b.w1)},
                                    {"w2", mat_to_json(b.w2)}});
                   }
                   j["blocks"] = std::move(arr);
                 },
             },
             f.kind());
}

namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error(ErrorCode::InvalidConfig, "unknown function key '" + key + "'");
  }
}

}  // namespace

InvertibleFunction function_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    const int dim = j.value("dim", 2);
    std::optional<std::uint64_t> seed;
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();

    if (kind == "rotation") {
      reject_unknown_keys(j, {"kind", "dim", "theta", "seed"});
      return InvertibleFunction::rotation(j.at("theta").get<double>(), dim);
    }
    if (kind == "affine") {
      reject_unknown_keys(j, {"kind", "dim", "a", "b", "seed"});
      if (!j.contains("a")) {
        if (!seed) throw Error(ErrorCode::InvalidConfig, "affine needs parameters or a seed");
        Rng rng(*seed);
        Mat a = Mat::Identity(dim, dim) + 0.3 * standard_normal(rng, dim, dim);
        auto f = InvertibleFunction::affine(std::move(a), Vec::Zero(dim));
        f.seed_ = seed;
        return f;
      }
      return InvertibleFunction::affine(mat_from_json(j.at("a")), vec_from_json(j.at("b")));
    }
    if (kind == "coupling") {
      reject_unknown_keys(j, {"kind", "dim", "seed", "layers", "hidden"});
      const auto& layers = j.value("layers", nlohmann::json(2));
      if (layers.is_number_integer()) {
        if (!seed) throw Error(ErrorCode::InvalidConfig, "generated coupling needs a seed");
        return InvertibleFunction::random_coupling(dim, layers.get<int>(), j.value("hidden", 8),
                                                   *seed);
      }
      std::vector<CouplingLayer> parsed;
      for (const auto& l : layers) {
        reject_unknown_keys(l, {"split", "orientation", "activation", "w1", "b1", "w2", "b2"});
        CouplingLayer layer;
        layer.split = l.at("split").get<int>();
        const auto orient = l.at("orientation").get<std::string>();
        if (orient != "shift_a" && orient != "shift_b")
          throw Error(ErrorCode::InvalidConfig, "unknown orientation '" + orient + "'");
        layer.orientation = orient == "shift_b" ? Orientation::ShiftB : Orientation::ShiftA;
        layer.activation = activation_from_string(l.value("activation", "softplus"));
        layer.w1 = mat_from_json(l.at("w1"));
        layer.b1 = vec_from_json(l.at("b1"));
        layer.w2 = mat_from_json(l.at("w2"));
        layer.b2 = vec_from_json(l.at("b2"));
        parsed.push_back(std::move(layer));
      }
      auto f = InvertibleFunction::coupling(dim, std::move(parsed));
      if (seed) f.seed_ = seed;
      return f;
    }
    if (kind == "residual") {
      reject_unknown_keys(j, {"kind", "dim", "seed", "blocks", "hidden", "lipschitz"});
      const auto& blocks = j.value("blocks", nlohmann::json(1));
      if (blocks.is_number_integer()) {
        if (!seed) throw Error(ErrorCode::InvalidConfig, "generated residual needs a seed");
        return InvertibleFunction::random_residual(dim, blocks.get<int>(), j.value("hidden", 8),
                                                   j.value("lipschitz", 0.9), *seed);
      }
      std::vector<ResidualBlock> parsed;
      for (const auto& b : blocks) {
        reject_unknown_keys(b, {"scale", "activation", "w1", "w2"});
        ResidualBlock block;
        block.scale = b.at("scale").get<double>();
        block.activation = activation_from_string(b.value("activation", "softplus"));
        block.w1 = mat_from_json(b.at("w1"));
        block.w2 = mat_from_json(b.at("w2"));
        parsed.push_back(std::move(block));
      }
      auto f = InvertibleFunction::contractive_residual(dim, std::move(parsed));
      if (seed) f.seed_ = seed;
      return f;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown function kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("function json: ") + e.what());
  }
}

}  // namespace invcode
