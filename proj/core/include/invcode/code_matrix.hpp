#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "invcode/types.hpp"

namespace invcode {

enum class Scheme {
  Uniform,
  Multi42,
  Vandermonde,
  GaussianRandom,
  /// Hand-supplied rows (deserialized or built in tests). Not MDS-checked on
  /// construction; run verify_any_k_rows before decoding with it.
  Custom,
};

std::string_view to_string(Scheme scheme) noexcept;
Scheme scheme_from_string(std::string_view name);

/// A submatrix counts as invertible iff |det| of its row-normalized form
/// exceeds this.
inline constexpr double kSingularityTolerance = 1e-9;
/// Exhaustive subset enumeration up to this many subsets, seeded sampling
/// beyond it.
inline constexpr std::uint64_t kSubsetEnumerationCutoff = 1'000'000;
inline constexpr int kGaussianRetryBudget = 16;

/// The n x k coefficient matrix of a systematic real-valued code. Row i holds
/// the coefficients task i applies to the k embeddings; rows 1..k are the
/// identity.
class GeneratorMatrix {
 public:
  /// Wraps explicit rows. Checks shape and the systematic identity prefix only.
  static GeneratorMatrix from_rows(Mat rows, Scheme scheme = Scheme::Custom,
                                   std::optional<std::uint64_t> seed = std::nullopt);

  int n() const noexcept { return static_cast<int>(rows_.rows()); }
  int k() const noexcept { return static_cast<int>(rows_.cols()); }
  Scheme scheme() const noexcept { return scheme_; }
  std::optional<std::uint64_t> seed() const noexcept { return seed_; }
  const Mat& rows() const noexcept { return rows_; }
  /// Coefficient of embedding j in task `task` (both 1-based).
  double coeff(TaskId task, int j) const { return rows_(task - 1, j - 1); }

  /// Rows at the given 1-based task ids, stacked in order.
  Mat submatrix(const std::vector<TaskId>& subset) const;

  bool operator==(const GeneratorMatrix& other) const;

 private:
  GeneratorMatrix(Mat rows, Scheme scheme, std::optional<std::uint64_t> seed)
      : rows_(std::move(rows)), scheme_(scheme), seed_(seed) {}

  Mat rows_;
  Scheme scheme_;
  std::optional<std::uint64_t> seed_;
};

/// Builds and validates a generator. `seed` is required for GaussianRandom and
/// ignored otherwise.
GeneratorMatrix build_generator(int n, int k, Scheme scheme,
                                std::optional<std::uint64_t> seed = std::nullopt);

struct VerifyReport {
  bool ok = false;
  std::vector<TaskId> worst_subset;
  double worst_margin = 0.0;
  std::uint64_t subsets_checked = 0;
  bool sampled = false;
};

/// Scale-invariant invertibility margin of a square matrix: |det| after each
/// row is divided by its Euclidean norm. Zero rows give 0.
double scaled_determinant(const Mat& square);

VerifyReport verify_any_k_rows(const GeneratorMatrix& g);

struct SubsetInverse {
  std::vector<TaskId> subset;  // sorted
  Mat inverse;
  double condition_estimate = 0.0;
};

/// Inverse of the k x k submatrix at `subset` (any order; stored sorted).
SubsetInverse subset_inverse(const GeneratorMatrix& g, std::vector<TaskId> subset);

/// Number of k-subsets of n items, saturating at UINT64_MAX.
std::uint64_t binomial(int n, int k);

/// Calls `visit(subset)` for every sorted k-subset of {1..n} in lexicographic
/// order; stops early if `visit` returns false.
template <typename Visit>
void for_each_subset(int n, int k, Visit&& visit) {
  std::vector<TaskId> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i + 1;
  while (true) {
    if (!visit(static_cast<const std::vector<TaskId>&>(idx))) return;
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i + 1) --i;
    if (i < 0) return;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

void to_json(nlohmann::json& j, const GeneratorMatrix& g);
GeneratorMatrix generator_from_json(const nlohmann::json& j);

}  // namespace invcode
