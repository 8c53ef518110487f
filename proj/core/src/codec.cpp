#include "invcode/codec.hpp"

#include <algorithm>
#include <string>

#include "invcode/error.hpp"
#include "invcode/rng.hpp"

namespace invcode {

namespace {

void check_inputs(const InvertibleFunction& f, const VecList& inputs, const GeneratorMatrix& g) {
  if (static_cast<int>(inputs.size()) != g.k())
    throw Error(ErrorCode::InvalidShape, "expected k = " + std::to_string(g.k()) + " inputs, got " +
                                             std::to_string(inputs.size()));
  for (const auto& x : inputs) {
    if (x.size() != f.dim())
      throw Error(ErrorCode::DimensionMismatch, "input does not match function dimension");
  }
}

VecList embed(const InvertibleFunction& f, const VecList& inputs) {
  VecList out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(f.forward(x));
  return out;
}

}  // namespace

const Vec& EncodedBatch::task_input(TaskId task) const {
  if (task < 1 || task > n())
    throw Error(ErrorCode::InvalidShape, "task id " + std::to_string(task) + " out of range");
  return task <= k() ? inputs[static_cast<std::size_t>(task - 1)]
                     : parity_inputs[static_cast<std::size_t>(task - k() - 1)];
}

VecList parity_targets(const VecList& embeddings, const GeneratorMatrix& g) {
  VecList out;
  for (TaskId t = g.k() + 1; t <= g.n(); ++t) {
    Vec acc = g.coeff(t, 1) * embeddings[0];
    for (int j = 2; j <= g.k(); ++j) acc += g.coeff(t, j) * embeddings[static_cast<std::size_t>(j - 1)];
    out.push_back(std::move(acc));
  }
  return out;
}

EncodedBatch ideal_encode(const InvertibleFunction& f, const VecList& inputs,
                          const GeneratorMatrix& g) {
  check_inputs(f, inputs, g);
  EncodedBatch batch{inputs, {}, g, EncodeMode::Ideal, {}, {}};
  for (const auto& target : parity_targets(embed(f, inputs), g))
    batch.parity_inputs.push_back(f.inverse(target).x);
  return batch;
}

EncodedBatch perturbed_encode(const InvertibleFunction& f, const VecList& inputs,
                              const GeneratorMatrix& g, const PerturbationModel& model) {
  if (!(model.sigma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "sigma must be >= 0");
  if (model.sigma == 0.0) {
    auto batch = ideal_encode(f, inputs, g);
    batch.mode = EncodeMode::Perturbed;
    batch.perturbation = model;
    return batch;
  }
  check_inputs(f, inputs, g);
  EncodedBatch batch{inputs, {}, g, EncodeMode::Perturbed, model, {}};
  Rng rng(model.seed);
  for (auto& target : parity_targets(embed(f, inputs), g)) {
    Vec eps = model.sigma * standard_normal(rng, f.dim());
    target += eps;
    batch.parity_inputs.push_back(f.inverse(target).x);
    batch.noise.push_back(std::move(eps));
  }
  return batch;
}

VecList decode_batch(const std::map<TaskId, Vec>& results, const GeneratorMatrix& g,
                     const std::vector<TaskId>& subset) {
  for (TaskId t : subset) {
    if (!results.contains(t))
      throw Error(ErrorCode::InvalidShape, "no result for task " + std::to_string(t));
  }
  const auto inv = subset_inverse(g, subset);
  const int k = g.k();

  // The systematic block decodes to the received values verbatim.
  std::vector<TaskId> identity(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) identity[static_cast<std::size_t>(i)] = i + 1;
  if (inv.subset == identity) {
    VecList out;
    for (TaskId t : identity) out.push_back(results.at(t));
    return out;
  }

  VecList out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Vec acc = inv.inverse(i, 0) * results.at(inv.subset[0]);
    for (int s = 1; s < k; ++s)
      acc += inv.inverse(i, s) * results.at(inv.subset[static_cast<std::size_t>(s)]);
    out.push_back(std::move(acc));
  }
  return out;
}

// ---- online decoding -------------------------------------------------------

bool DecoderState::supports(const GeneratorMatrix& g) {
  if (g.n() != g.k() + 1) return false;
  const double c = 1.0 / g.k();
  for (int j = 1; j <= g.k(); ++j) {
    if (g.coeff(g.n(), j) != c) return false;
  }
  return true;
}

DecoderState::DecoderState(const GeneratorMatrix& g)
    : k_(g.k()), received_(static_cast<std::size_t>(g.n()), false),
      values_(static_cast<std::size_t>(g.k())),
      has_value_(static_cast<std::size_t>(g.k()), false) {
  if (!supports(g))
    throw Error(ErrorCode::InvalidShape,
                "online decoding needs n = k + 1 with uniform 1/k parity coefficients");
}

void DecoderState::update(TaskId task, const Vec& value) {
  if (task < 1 || task > k_ + 1)
    throw Error(ErrorCode::InvalidShape, "task id " + std::to_string(task) + " out of range");
  const auto slot = static_cast<std::size_t>(task - 1);
  if (received_[slot]) throw Error(ErrorCode::DuplicateTask, "task " + std::to_string(task) + " already received");
  if (pending_.size() == 0) {
    pending_ = Vec::Zero(value.size());
  } else if (value.size() != pending_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "result dimension changed between events");
  }

  received_[slot] = true;
  arrivals_.push_back(task);
  if (complete()) return;  // estimates are frozen once decodable
  ++received_count_;

  if (task <= k_) {
    values_[static_cast<std::size_t>(task - 1)] = value;
    has_value_[static_cast<std::size_t>(task - 1)] = true;
    if (++data_received_ < k_) {
      pending_ -= value;
      ++ops_.subtractions;
      pending_set_ = true;
    }
    return;
  }

  // Parity task: every unfinalized estimate gains k * value.
  Vec scaled = static_cast<double>(k_) * value;
  ++ops_.scalar_multiplies;
  if (pending_set_) {
    pending_ += scaled;
    ++ops_.additions;
  } else {
    pending_ = std::move(scaled);
    pending_set_ = true;
  }
}

bool DecoderState::received(TaskId task) const {
  if (task < 1 || task > k_ + 1) return false;
  return received_[static_cast<std::size_t>(task - 1)];
}

bool DecoderState::finalized(int i) const {
  if (i < 1 || i > k_) return false;
  return has_value_[static_cast<std::size_t>(i - 1)] || complete();
}

const Vec& DecoderState::estimate(int i) const {
  if (i < 1 || i > k_) throw Error(ErrorCode::InvalidShape, "estimate index out of range");
  const auto idx = static_cast<std::size_t>(i - 1);
  return has_value_[idx] ? values_[idx] : pending_;
}

VecList DecoderState::estimates() const {
  VecList out;
  out.reserve(static_cast<std::size_t>(k_));
  for (int i = 1; i <= k_; ++i) out.push_back(estimate(i));
  return out;
}

std::vector<TaskId> DecoderState::decode_subset() const {
  const auto take = std::min<std::size_t>(arrivals_.size(), static_cast<std::size_t>(k_));
  std::vector<TaskId> out(arrivals_.begin(), arrivals_.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(out.begin(), out.end());
  return out;
}

DecoderState online_update(DecoderState state, TaskId task, const Vec& value) {
  state.update(task, value);
  return state;
}

// ---- streaming (first-k) decoding -----------------------------------------

StreamingDecoder::StreamingDecoder(GeneratorMatrix g) : g_(std::move(g)) {
  if (DecoderState::supports(g_)) online_.emplace(g_);
}

bool StreamingDecoder::offer(TaskId task, const Vec& value) {
  if (done_) return true;
  if (online_) {
    online_->update(task, value);
    if (online_->complete()) {
      estimates_ = online_->estimates();
      subset_ = online_->decode_subset();
      done_ = true;
    }
    return done_;
  }

  if (task < 1 || task > g_.n())
    throw Error(ErrorCode::InvalidShape, "task id " + std::to_string(task) + " out of range");
  if (!received_.emplace(task, value).second)
    throw Error(ErrorCode::DuplicateTask, "task " + std::to_string(task) + " already received");
  arrivals_.push_back(task);
  const int k = g_.k();
  if (static_cast<int>(arrivals_.size()) < k) return false;

  std::vector<TaskId> chosen;
  for_each_subset(static_cast<int>(arrivals_.size()), k, [&](const std::vector<TaskId>& pos) {
    std::vector<TaskId> tasks;
    tasks.reserve(pos.size());
    for (TaskId p : pos) tasks.push_back(arrivals_[static_cast<std::size_t>(p - 1)]);
    if (scaled_determinant(g_.submatrix(tasks)) > kSingularityTolerance) {
      chosen = std::move(tasks);
      return false;
    }
    return true;
  });
  if (chosen.empty()) return false;

  std::sort(chosen.begin(), chosen.end());
  estimates_ = decode_batch(received_, g_, chosen);
  subset_ = std::move(chosen);
  done_ = true;
  return true;
}

const VecList& StreamingDecoder::estimates() const {
  if (!done_) throw Error(ErrorCode::Undecodable, "decoding has not finished");
  return estimates_;
}

const std::vector<TaskId>& StreamingDecoder::decode_subset() const {
  if (!done_) throw Error(ErrorCode::Undecodable, "decoding has not finished");
  return subset_;
}

bool StreamingDecoder::used_parity() const noexcept {
  return std::any_of(subset_.begin(), subset_.end(), [&](TaskId t) { return t > g_.k(); });
}

int degraded_inference(const DownstreamHead& head, const Vec& estimate) {
  if (!estimate.allFinite()) throw Error(ErrorCode::InvalidShape, "estimate is not finite");
  return head.predict(estimate);
}

}  // namespace invcode
