#include "invcode/code_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "invcode/error.hpp"
#include "invcode/rng.hpp"

namespace invcode {

namespace {

void require_shape(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorCode::InvalidShape, what);
}

Mat systematic_prefix(int n, int k) {
  Mat rows = Mat::Zero(n, k);
  rows.topRows(k).setIdentity();
  return rows;
}

}  // namespace

std::string_view to_string(Scheme scheme) noexcept {
  switch (scheme) {
    case Scheme::Uniform: return "uniform";
    case Scheme::Multi42: return "multi42";
    case Scheme::Vandermonde: return "vandermonde";
    case Scheme::GaussianRandom: return "gaussian";
    case Scheme::Custom: return "custom";
  }
  return "custom";
}

Scheme scheme_from_string(std::string_view name) {
  for (Scheme s : {Scheme::Uniform, Scheme::Multi42, Scheme::Vandermonde,
                   Scheme::GaussianRandom, Scheme::Custom}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown scheme '" + std::string(name) + "'");
}

GeneratorMatrix GeneratorMatrix::from_rows(Mat rows, Scheme scheme,
                                           std::optional<std::uint64_t> seed) {
  const auto n = rows.rows();
  const auto k = rows.cols();
  require_shape(k >= 1 && n >= k, "generator needs 1 <= k <= n, got n=" +
                                      std::to_string(n) + " k=" + std::to_string(k));
  if (!rows.allFinite()) throw Error(ErrorCode::InvalidShape, "non-finite coefficient");
  if (rows.topRows(k) != Mat::Identity(k, k))
    throw Error(ErrorCode::InvalidShape, "first k rows must be the identity");
  return GeneratorMatrix(std::move(rows), scheme, seed);
}

Mat GeneratorMatrix::submatrix(const std::vector<TaskId>& subset) const {
  Mat out(static_cast<Eigen::Index>(subset.size()), rows_.cols());
  for (std::size_t r = 0; r < subset.size(); ++r) {
    const TaskId t = subset[r];
    if (t < 1 || t > n())
      throw Error(ErrorCode::InvalidShape, "task id " + std::to_string(t) + " out of range");
    out.row(static_cast<Eigen::Index>(r)) = rows_.row(t - 1);
  }
  return out;
}

bool GeneratorMatrix::operator==(const GeneratorMatrix& other) const {
  return scheme_ == other.scheme_ && seed_ == other.seed_ &&
         rows_.rows() == other.rows_.rows() && rows_.cols() == other.rows_.cols() &&
         rows_ == other.rows_;
}

GeneratorMatrix build_generator(int n, int k, Scheme scheme, std::optional<std::uint64_t> seed) {
  require_shape(k >= 1 && k <= n, "need 1 <= k <= n, got n=" + std::to_string(n) +
                                      " k=" + std::to_string(k));
  Mat rows = systematic_prefix(n, k);
  const int parity = n - k;

  switch (scheme) {
    case Scheme::Uniform:
      require_shape(n == k + 1, "uniform scheme requires n = k + 1");
      rows.row(k).setConstant(1.0 / k);
      break;
    case Scheme::Multi42:
      require_shape(n == 4 && k == 2, "multi42 scheme requires (n, k) = (4, 2)");
      rows.row(2) << 1.0 / 2.0, 1.0 / 2.0;
      rows.row(3) << 1.0 / 3.0, 2.0 / 3.0;
      break;
    case Scheme::Vandermonde:
      for (int i = 1; i <= parity; ++i) {
        const double node = 1.0 + static_cast<double>(i) / (parity + 1);
        double power = 1.0;
        for (int j = 0; j < k; ++j) {
          rows(k + i - 1, j) = power;
          power *= node;
        }
        rows.row(k + i - 1) /= rows.row(k + i - 1).sum();
      }
      break;
    case Scheme::GaussianRandom: {
      if (!seed) throw Error(ErrorCode::InvalidConfig, "gaussian scheme requires a seed");
      Rng rng(*seed);
      for (int attempt = 0; attempt <= kGaussianRetryBudget; ++attempt) {
        if (parity > 0) rows.bottomRows(parity) = standard_normal(rng, parity, k);
        auto g = GeneratorMatrix::from_rows(rows, scheme, seed);
        if (verify_any_k_rows(g).ok) return g;
      }
      throw Error(ErrorCode::ValidationFailed,
                  "gaussian generator failed validation after " +
                      std::to_string(kGaussianRetryBudget) + " redraws");
    }
    case Scheme::Custom:
      throw Error(ErrorCode::InvalidShape, "custom generators are built with from_rows");
  }

  auto g = GeneratorMatrix::from_rows(std::move(rows), scheme, std::nullopt);
  const auto report = verify_any_k_rows(g);
  if (!report.ok)
    throw Error(ErrorCode::ValidationFailed,
                std::string(to_string(scheme)) + " generator has a near-singular subset (margin " +
                    std::to_string(report.worst_margin) + ")");
  return g;
}

double scaled_determinant(const Mat& square) {
  Mat scaled = square;
  for (Eigen::Index r = 0; r < scaled.rows(); ++r) {
    const double norm = scaled.row(r).norm();
    if (norm == 0.0) return 0.0;
    scaled.row(r) /= norm;
  }
  return std::abs(scaled.partialPivLu().determinant());
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  __extension__ typedef unsigned __int128 u128;
  u128 acc = 1;
  for (int i = 1; i <= k; ++i) {
    acc = acc * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
    if (acc > std::numeric_limits<std::uint64_t>::max())
      return std::numeric_limits<std::uint64_t>::max();
  }
  return static_cast<std::uint64_t>(acc);
}

VerifyReport verify_any_k_rows(const GeneratorMatrix& g) {
  VerifyReport report;
  report.worst_margin = std::numeric_limits<double>::infinity();

  auto check = [&](const std::vector<TaskId>& subset) {
    const double margin = scaled_determinant(g.submatrix(subset));
    ++report.subsets_checked;
    if (margin < report.worst_margin) {
      report.worst_margin = margin;
      report.worst_subset = subset;
    }
  };

  const int n = g.n();
  const int k = g.k();
  if (binomial(n, k) <= kSubsetEnumerationCutoff) {
    for_each_subset(n, k, [&](const std::vector<TaskId>& s) {
      check(s);
      return true;
    });
  } else {
    report.sampled = true;
    Rng rng(derive_seed(g.seed().value_or(0), static_cast<std::uint64_t>(n) * 1'000'003ULL + k));
    std::vector<TaskId> all(n);
    std::iota(all.begin(), all.end(), 1);
    std::vector<TaskId> subset(k);
    for (std::uint64_t s = 0; s < kSubsetEnumerationCutoff; ++s) {
      subset.clear();
      std::sample(all.begin(), all.end(), std::back_inserter(subset), k, rng);
      check(subset);
    }
  }
  report.ok = report.worst_margin > kSingularityTolerance;
  return report;
}

SubsetInverse subset_inverse(const GeneratorMatrix& g, std::vector<TaskId> subset) {
  const int k = g.k();
  std::sort(subset.begin(), subset.end());
  if (static_cast<int>(subset.size()) != k)
    throw Error(ErrorCode::InvalidShape, "subset must have exactly k = " + std::to_string(k) +
                                             " task ids");
  if (std::adjacent_find(subset.begin(), subset.end()) != subset.end())
    throw Error(ErrorCode::InvalidShape, "subset task ids must be distinct");

  const Mat sub = g.submatrix(subset);
  if (scaled_determinant(sub) <= kSingularityTolerance)
    throw Error(ErrorCode::SingularSubset, "selected rows are not invertible");

  SubsetInverse out;
  out.inverse = sub.partialPivLu().inverse();
  // 1-norm condition number, exact for the computed inverse.
  const auto one_norm = [](const Mat& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); };
  out.condition_estimate = one_norm(sub) * one_norm(out.inverse);
  out.subset = std::move(subset);
  return out;
}

void to_json(nlohmann::json& j, const GeneratorMatrix& g) {
  j = nlohmann::json::object();
  j["n"] = g.n();
  j["k"] = g.k();
  j["scheme"] = std::string(to_string(g.scheme()));
  if (g.seed()) j["seed"] = *g.seed();
  auto rows = nlohmann::json::array();
  for (int r = 0; r < g.n(); ++r) {
    auto row = nlohmann::json::array();
    for (int c = 0; c < g.k(); ++c) row.push_back(g.rows()(r, c));
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
}

GeneratorMatrix generator_from_json(const nlohmann::json& j) {
  try {
    const int n = j.at("n").get<int>();
    const int k = j.at("k").get<int>();
    const auto& rows_json = j.at("rows");
    if (static_cast<int>(rows_json.size()) != n)
      throw Error(ErrorCode::InvalidShape, "rows length does not match n");
    Mat rows(n, k);
    for (int r = 0; r < n; ++r) {
      if (static_cast<int>(rows_json[r].size()) != k)
        throw Error(ErrorCode::InvalidShape, "row length does not match k");
      for (int c = 0; c < k; ++c) rows(r, c) = rows_json[r][c].get<double>();
    }
    std::optional<std::uint64_t> seed;
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    return GeneratorMatrix::from_rows(std::move(rows),
                                      scheme_from_string(j.at("scheme").get<std::string>()), seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("generator json: ") + e.what());
  }
}

}  // namespace invcode
