#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "invcode/code_matrix.hpp"
#include "invcode/head.hpp"
#include "invcode/invertible_fn.hpp"
#include "invcode/types.hpp"

namespace invcode {

enum class EncodeMode { Ideal, Perturbed };

/// Additive Gaussian error in embedding space standing in for a learned
/// encoder's approximation error.
struct PerturbationModel {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// The n task inputs of one coded query: the k raw inputs followed by the
/// n - k encoded parity inputs.
struct EncodedBatch {
  VecList inputs;
  VecList parity_inputs;
  GeneratorMatrix generator;
  EncodeMode mode = EncodeMode::Ideal;
  PerturbationModel perturbation;
  /// Realized embedding-space error per parity row (empty in Ideal mode).
  VecList noise;

  int k() const noexcept { return generator.k(); }
  int n() const noexcept { return generator.n(); }
  const Vec& task_input(TaskId task) const;
};

/// Embedding targets sum_j c_{i,j} f(x_j) for every parity row.
VecList parity_targets(const VecList& embeddings, const GeneratorMatrix& g);

EncodedBatch ideal_encode(const InvertibleFunction& f, const VecList& inputs,
                          const GeneratorMatrix& g);

EncodedBatch perturbed_encode(const InvertibleFunction& f, const VecList& inputs,
                              const GeneratorMatrix& g, const PerturbationModel& model);

/// Recovers (f(x_1), ..., f(x_k)) from the task results at `subset`.
VecList decode_batch(const std::map<TaskId, Vec>& results, const GeneratorMatrix& g,
                     const std::vector<TaskId>& subset);

/// Counts of vector operations performed by the online decoder.
struct DecodeOps {
  std::size_t scalar_multiplies = 0;
  std::size_t subtractions = 0;
  std::size_t additions = 0;
};

/// Best-effort estimates of the k embeddings for the single-parity uniform
/// code, updated one completion at a time:
///   data task j     -> estimate j = value (final); other unfinalized -= value
///   parity task     -> unfinalized estimates += k * value
/// All unfinalized estimates always hold the same vector, so it is kept once.
class DecoderState {
 public:
  /// Requires n = k + 1 with every parity coefficient equal to 1/k.
  explicit DecoderState(const GeneratorMatrix& g);

  static bool supports(const GeneratorMatrix& g);

  /// Throws DuplicateTask if `task` was already received.
  void update(TaskId task, const Vec& value);

  int k() const noexcept { return k_; }
  /// True once any k distinct tasks have been received.
  bool complete() const noexcept { return received_count_ >= k_; }
  bool finalized(int i) const;
  bool received(TaskId task) const;
  /// Current estimate of f(x_i), 1-based. Empty before the first event.
  const Vec& estimate(int i) const;
  VecList estimates() const;
  /// The first k tasks received (the set the final estimates derive from).
  std::vector<TaskId> decode_subset() const;
  const DecodeOps& ops() const noexcept { return ops_; }

 private:
  int k_;
  int received_count_ = 0;
  int data_received_ = 0;
  std::vector<bool> received_;  // n entries
  VecList values_;              // data task values, k entries
  std::vector<bool> has_value_;  // k entries; values_ stored before completion
  Vec pending_;                 // shared estimate of every unfinalized index
  bool pending_set_ = false;
  std::vector<TaskId> arrivals_;
  DecodeOps ops_;
};

/// Functional form of DecoderState::update.
DecoderState online_update(DecoderState state, TaskId task, const Vec& value);

/// First-k gating for any generator: uses DecoderState when the code is the
/// single-parity uniform one, otherwise waits until the received set holds a
/// decodable k-subset (earliest arrivals preferred) and batch-decodes it.
class StreamingDecoder {
 public:
  explicit StreamingDecoder(GeneratorMatrix g);

  /// Feeds one completion. Returns true once decoding has finished. Results
  /// offered after that are ignored.
  bool offer(TaskId task, const Vec& value);

  bool done() const noexcept { return done_; }
  const VecList& estimates() const;
  const std::vector<TaskId>& decode_subset() const;
  /// True when some recovered embedding came from parity tasks.
  bool used_parity() const noexcept;
  bool online() const noexcept { return online_.has_value(); }
  const GeneratorMatrix& generator() const noexcept { return g_; }

 private:
  GeneratorMatrix g_;
  std::optional<DecoderState> online_;
  std::map<TaskId, Vec> received_;
  std::vector<TaskId> arrivals_;
  bool done_ = false;
  VecList estimates_;
  std::vector<TaskId> subset_;
};

/// Degraded-mode prediction: the downstream head applied to a recovered
/// embedding.
int degraded_inference(const DownstreamHead& head, const Vec& estimate);

}  // namespace invcode
