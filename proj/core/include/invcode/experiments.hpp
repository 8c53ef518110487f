#pragma once

#include <cstdint>
#include <numbers>
#include <vector>

#include "invcode/harness.hpp"
#include "invcode/invertible_fn.hpp"
#include "invcode/report.hpp"
#include "invcode/tcp.hpp"

namespace invcode::experiments {

/// Rotation-recovery experiment over a two-component Gaussian mixture
/// (means (1,0) and (0,1), identity covariance, equal weights).
struct SynthConfig {
  double theta = std::numbers::pi / 3.0;
  std::vector<int> k_values;
  int trials_per_k = 50000;
  std::uint64_t seed = 0;
  /// Run cells on separate threads. Results do not depend on it.
  bool parallel = true;
};

inline constexpr int kQuickTrials = 5000;
/// A synth cell passes when its mean error stays below this.
inline constexpr double kSynthErrorBound = 1e-13;

/// Draws one input from the two-component mixture.
Vec synth_mixture_sample(Rng& rng);

/// Per k: draw k inputs, lose a uniformly chosen one, recover it as
/// f^-1(k f(mean of inputs) - sum of the others' f), report the mean and max
/// l2 reconstruction error.
ExperimentReport synth_reconstruction(const SynthConfig& cfg);

/// Generator used for multi-failure checks: the two-parity (4, 2) code for
/// (4, 2), Vandermonde otherwise.
GeneratorMatrix multi_failure_generator(int n, int k);

/// Decodes every k-subset of tasks and reports the max embedding error per
/// subset. The tolerance is 1e-9 for linear f and 10x the inversion
/// tolerance otherwise. Singular subsets become failed cells.
ExperimentReport multi_failure_check(int n, int k, const InvertibleFunction& f, int trials,
                                     std::uint64_t seed);

/// Per (k, sigma): ratio ||f_hat(x1) - f(x1)|| / ||eps|| when decoding x1
/// from tasks 2..k+1 of the uniform single-parity code, plus normal and
/// degraded accuracy of `head`.
ExperimentReport amplification_sweep(const std::vector<int>& k_values,
                                     const std::vector<double>& sigma_values,
                                     const InvertibleFunction& f, const DownstreamHead& head,
                                     int trials, std::uint64_t seed,
                                     const ClassMixture& mixture = {});

/// Median wall times per k of ideal_encode, decode_batch, a whole online
/// decode stream and a single online parity event.
ExperimentReport overhead_scaling(const std::vector<int>& k_values, const InvertibleFunction& f,
                                  int repeats);

struct LatencyConfig {
  int n = 11;
  int k = 10;
  Scheme scheme = Scheme::Uniform;
  std::uint64_t code_seed = 0;
  int queries = 5000;
  StragglerModel straggler;
  ComputeCharge charge = ComputeCharge::Measured;
  ClassMixture mixture;
  std::uint64_t seed = 0;
};

/// Three arms over the same query stream: uncoded without stragglers
/// ("baseline"), coded with stragglers ("coded"), uncoded with stragglers
/// ("uncoded"). Reports latency percentiles per arm.
ExperimentReport latency_comparison(const LatencyConfig& cfg, const InvertibleFunction& f);

struct TcpLatencyConfig {
  int queries = 200;
  double timeout_seconds = 2.0;
  ClassMixture mixture;
  std::uint64_t seed = 0;
};

/// Wall-clock latency over real workers (one endpoint per task) through one
/// persistent front end. Single cell keyed {"arm": "tcp"}.
ExperimentReport latency_tcp(const std::vector<Endpoint>& endpoints, const GeneratorMatrix& g,
                             const InvertibleFunction& f, const TcpLatencyConfig& cfg);

}  // namespace invcode::experiments
