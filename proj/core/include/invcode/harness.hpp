#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "invcode/codec.hpp"
#include "invcode/code_matrix.hpp"
#include "invcode/head.hpp"
#include "invcode/invertible_fn.hpp"
#include "invcode/rng.hpp"

namespace invcode {

enum class VictimPolicy { None, UniformOneOfK, Fixed };

/// Per-query service-time model: base latency, optional exponential jitter, a
/// deterministic extra delay on at most one straggler, and workers that never
/// respond.
struct StragglerModel {
  double base_latency = 0.01;
  double straggle_delay = 0.1;
  double straggle_prob = 1.0;
  VictimPolicy victim_policy = VictimPolicy::UniformOneOfK;
  TaskId fixed_victim = 1;
  /// Rate of the exponential jitter added to every worker; 0 disables it.
  double jitter_rate = 0.0;
  std::set<TaskId> fail_policy;
  std::uint64_t seed = 0;

  /// Service time of every worker for one query; +inf for failed workers.
  std::vector<double> sample_service_times(int n, int k, std::uint64_t query_id) const;
};

void to_json(nlohmann::json& j, const StragglerModel& m);
StragglerModel straggler_from_json(const nlohmann::json& j);

/// How decode and head compute time is charged to a simulated query.
enum class ComputeCharge {
  /// Measured wall time is added to virtual time.
  Measured,
  /// Compute is free; records are then bit-reproducible.
  None,
};

/// Min-heap of completion events in virtual time; simultaneous completions
/// pop in worker-id order.
class VirtualClock {
 public:
  struct Event {
    double time;
    TaskId task;
    bool operator>(const Event& o) const {
      return time != o.time ? time > o.time : task > o.task;
    }
  };

  void schedule(double time, TaskId task) { queue_.push(Event{time, task}); }
  bool empty() const noexcept { return queue_.empty(); }
  Event pop();
  double now() const noexcept { return now_; }

 private:
  double now_ = 0.0;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
};

/// Everything a query produces once a decodable set of results is in.
struct DecodeOutcome {
  VecList estimates;
  std::vector<TaskId> decode_subset;
  /// Tasks consumed by the decoder, in arrival order.
  std::vector<TaskId> consumed;
  bool degraded = false;
  /// labels[h][i]: head h applied to recovered embedding i.
  std::vector<std::vector<int>> labels;
  double decode_seconds = 0.0;
  double head_seconds = 0.0;
};

/// First-k gating shared by the simulated and the TCP front ends: results are
/// fed in arrival order; once decodable, every head runs on every recovered
/// embedding.
class QueryAssembler {
 public:
  QueryAssembler(const GeneratorMatrix& g, const std::vector<DownstreamHead>& heads);

  /// Returns true once the results received so far are decodable.
  bool on_result(TaskId task, const Vec& value);
  bool done() const noexcept { return decoder_.done(); }
  DecodeOutcome finish();

 private:
  StreamingDecoder decoder_;
  const std::vector<DownstreamHead>& heads_;
  std::vector<TaskId> consumed_;
  double decode_seconds_ = 0.0;
};

/// Decodes a fixed completion order (task, f(task input)) pairs.
DecodeOutcome assemble_in_order(const GeneratorMatrix& g, const std::vector<DownstreamHead>& heads,
                                const std::vector<std::pair<TaskId, Vec>>& order);

struct QueryRecord {
  std::uint64_t query_id = 0;
  /// Per-task completion time in seconds since query arrival; +inf for tasks
  /// that never complete (TCP: not received before decoding finished).
  std::vector<double> completion_times;
  std::vector<TaskId> decode_subset;
  std::vector<TaskId> arrival_order;
  double encode_seconds = 0.0;
  double wait_seconds = 0.0;
  double decode_seconds = 0.0;
  double head_seconds = 0.0;
  double end_to_end_latency = 0.0;
  bool degraded = false;
  std::vector<std::vector<int>> labels;
  VecList estimates;

  bool operator==(const QueryRecord&) const = default;
};

void to_json(nlohmann::json& j, const QueryRecord& r);

struct SimOptions {
  ComputeCharge charge = ComputeCharge::Measured;
};

/// Simulates one coded query in virtual time. Throws Undecodable when more
/// than n - k workers are set to fail.
QueryRecord run_query_sim(const EncodedBatch& batch, const InvertibleFunction& f,
                          const std::vector<DownstreamHead>& heads, const StragglerModel& model,
                          std::uint64_t query_id, SimOptions options = {});

/// Encodes `inputs` (timed once, independent of the number of heads) and
/// simulates the query.
QueryRecord serve_query_sim(const VecList& inputs, const InvertibleFunction& f,
                            const GeneratorMatrix& g, const std::vector<DownstreamHead>& heads,
                            const StragglerModel& model, std::uint64_t query_id,
                            SimOptions options = {});

struct LatencyStats {
  std::size_t count = 0;
  double mean = 0.0;
  double p50 = 0.0;
  double p99 = 0.0;
  double p999 = 0.0;

  bool operator==(const LatencyStats&) const = default;
};

void to_json(nlohmann::json& j, const LatencyStats& s);

/// Nearest-rank value at `per_mille` / 1000 of a sorted sample.
double nearest_rank(const std::vector<double>& sorted, int per_mille);

LatencyStats summarize(std::vector<double> latencies);
LatencyStats summarize(const std::vector<QueryRecord>& records);

/// Labeled synthetic data: `classes` means equally spaced on a circle of
/// radius 3 in the first two coordinates, isotropic Gaussian noise 0.5.
struct ClassMixture {
  int classes = 4;
  int dim = 2;
  double radius = 3.0;
  double sigma = 0.5;

  Vec mean(int label) const;
  std::pair<Vec, int> sample(Rng& rng) const;
  /// Nearest-mean head over the embedded class means f(mean_c).
  DownstreamHead head_for(const InvertibleFunction& f) const;
};

struct AccuracyResult {
  double normal_acc = 0.0;
  double degraded_acc = 0.0;
  std::size_t trials = 0;
};

/// Per trial: draw k labeled inputs, encode with perturbation sigma, drop one
/// uniformly chosen data task, decode and classify the lost input. Normal
/// accuracy is measured on the same victims without coding.
AccuracyResult degraded_accuracy_experiment(const InvertibleFunction& f, const GeneratorMatrix& g,
                                            const DownstreamHead& head, double sigma, int trials,
                                            std::uint64_t seed, const ClassMixture& mixture = {});

}  // namespace invcode
