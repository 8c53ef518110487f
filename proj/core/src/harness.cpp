#include "invcode/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "invcode/error.hpp"

namespace invcode {

namespace {

using SteadyClock = std::chrono::steady_clock;

double seconds_since(SteadyClock::time_point start) {
  return std::chrono::duration<double>(SteadyClock::now() - start).count();
}

nlohmann::json time_to_json(double t) {
  return std::isfinite(t) ? nlohmann::json(t) : nlohmann::json(nullptr);
}

}  // namespace

// ---- straggler model -------------------------------------------------------

std::vector<double> StragglerModel::sample_service_times(int n, int k,
                                                         std::uint64_t query_id) const {
  Rng rng(derive_seed(seed, query_id));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick(1, k);
  // Draw every variate unconditionally so the stream layout is config-independent.
  const bool straggles = unit(rng) < straggle_prob;
  const int uniform_victim = pick(rng);
  std::vector<double> times(static_cast<std::size_t>(n), base_latency);
  if (jitter_rate > 0.0) {
    std::exponential_distribution<double> jitter(jitter_rate);
    for (auto& t : times) t += jitter(rng);
  }
  TaskId victim = 0;
  if (straggles) {
    if (victim_policy == VictimPolicy::UniformOneOfK) victim = uniform_victim;
    if (victim_policy == VictimPolicy::Fixed) victim = fixed_victim;
  }
  if (victim >= 1 && victim <= n) times[static_cast<std::size_t>(victim - 1)] += straggle_delay;
  for (TaskId failed : fail_policy) {
    if (failed >= 1 && failed <= n)
      times[static_cast<std::size_t>(failed - 1)] = std::numeric_limits<double>::infinity();
  }
  return times;
}

void to_json(nlohmann::json& j, const StragglerModel& m) {
  std::string policy = "none";
  if (m.victim_policy == VictimPolicy::UniformOneOfK) policy = "uniform_one_of_k";
  if (m.victim_policy == VictimPolicy::Fixed) policy = "fixed";
  j = {{"base_latency", m.base_latency},
       {"straggle_delay", m.straggle_delay},
       {"straggle_prob", m.straggle_prob},
       {"victim_policy", policy},
       {"jitter_rate", m.jitter_rate},
       {"fail_policy", std::vector<TaskId>(m.fail_policy.begin(), m.fail_policy.end())},
       {"seed", m.seed}};
  if (m.victim_policy == VictimPolicy::Fixed) j["fixed_victim"] = m.fixed_victim;
}

StragglerModel straggler_from_json(const nlohmann::json& j) {
  static const std::set<std::string> allowed{"base_latency", "straggle_delay", "straggle_prob",
                                             "victim_policy", "fixed_victim",  "jitter_rate",
                                             "fail_policy",  "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key))
      throw Error(ErrorCode::InvalidConfig, "unknown straggler key '" + key + "'");
  }
  if (!j.contains("seed")) throw Error(ErrorCode::InvalidConfig, "straggler.seed is required");
  try {
    StragglerModel m;
    m.base_latency = j.value("base_latency", m.base_latency);
    m.straggle_delay = j.value("straggle_delay", m.straggle_delay);
    m.straggle_prob = j.value("straggle_prob", m.straggle_prob);
    m.jitter_rate = j.value("jitter_rate", m.jitter_rate);
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto policy = j.value("victim_policy", std::string("uniform_one_of_k"));
    if (policy == "none") {
      m.victim_policy = VictimPolicy::None;
    } else if (policy == "uniform_one_of_k") {
      m.victim_policy = VictimPolicy::UniformOneOfK;
    } else if (policy == "fixed") {
      m.victim_policy = VictimPolicy::Fixed;
      m.fixed_victim = j.at("fixed_victim").get<TaskId>();
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown victim_policy '" + policy + "'");
    }
    if (j.contains("fail_policy"))
      for (const auto& id : j.at("fail_policy")) m.fail_policy.insert(id.get<TaskId>());
    if (m.base_latency < 0.0 || m.straggle_delay < 0.0 || m.straggle_prob < 0.0 ||
        m.straggle_prob > 1.0 || m.jitter_rate < 0.0)
      throw Error(ErrorCode::InvalidConfig, "straggler parameters out of range");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("straggler json: ") + e.what());
  }
}

VirtualClock::Event VirtualClock::pop() {
  Event e = queue_.top();
  queue_.pop();
  now_ = e.time;
  return e;
}

// ---- first-k assembly ------------------------------------------------------

QueryAssembler::QueryAssembler(const GeneratorMatrix& g, const std::vector<DownstreamHead>& heads)
    : decoder_(g), heads_(heads) {}

bool QueryAssembler::on_result(TaskId task, const Vec& value) {
  if (decoder_.done()) return true;
  const auto start = SteadyClock::now();
  consumed_.push_back(task);
  const bool finished = decoder_.offer(task, value);
  decode_seconds_ += seconds_since(start);
  return finished;
}

DecodeOutcome QueryAssembler::finish() {
  if (!decoder_.done()) throw Error(ErrorCode::Undecodable, "not enough results to decode");
  DecodeOutcome out;
  out.estimates = decoder_.estimates();
  out.decode_subset = decoder_.decode_subset();
  out.consumed = consumed_;
  out.degraded = decoder_.used_parity();
  out.decode_seconds = decode_seconds_;
  const auto start = SteadyClock::now();
  for (const auto& head : heads_) {
    std::vector<int> labels;
    labels.reserve(out.estimates.size());
    for (const auto& e : out.estimates) labels.push_back(degraded_inference(head, e));
    out.labels.push_back(std::move(labels));
  }
  out.head_seconds = seconds_since(start);
  return out;
}

DecodeOutcome assemble_in_order(const GeneratorMatrix& g, const std::vector<DownstreamHead>& heads,
                                const std::vector<std::pair<TaskId, Vec>>& order) {
  QueryAssembler assembler(g, heads);
  for (const auto& [task, value] : order) {
    if (assembler.on_result(task, value)) break;
  }
  return assembler.finish();
}

void to_json(nlohmann::json& j, const QueryRecord& r) {
  auto times = nlohmann::json::array();
  for (double t : r.completion_times) times.push_back(time_to_json(t));
  j = {{"query_id", r.query_id},
       {"completion_times", std::move(times)},
       {"decode_subset", r.decode_subset},
       {"arrival_order", r.arrival_order},
       {"encode_seconds", r.encode_seconds},
       {"wait_seconds", r.wait_seconds},
       {"decode_seconds", r.decode_seconds},
       {"head_seconds", r.head_seconds},
       {"end_to_end_latency", r.end_to_end_latency},
       {"degraded", r.degraded},
       {"labels", r.labels}};
}

// ---- simulation ------------------------------------------------------------

QueryRecord run_query_sim(const EncodedBatch& batch, const InvertibleFunction& f,
                          const std::vector<DownstreamHead>& heads, const StragglerModel& model,
                          std::uint64_t query_id, SimOptions options) {
  const GeneratorMatrix& g = batch.generator;
  const int n = g.n();
  const int k = g.k();
  const auto failing = std::count_if(model.fail_policy.begin(), model.fail_policy.end(),
                                     [n](TaskId t) { return t >= 1 && t <= n; });
  if (failing > n - k)
    throw Error(ErrorCode::Undecodable, std::to_string(failing) + " failed workers exceed n - k = " +
                                            std::to_string(n - k));

  QueryRecord record;
  record.query_id = query_id;
  record.completion_times = model.sample_service_times(n, k, query_id);

  VirtualClock clock;
  for (TaskId t = 1; t <= n; ++t) {
    const double when = record.completion_times[static_cast<std::size_t>(t - 1)];
    if (std::isfinite(when)) clock.schedule(when, t);
  }

  QueryAssembler assembler(g, heads);
  while (!clock.empty()) {
    const auto event = clock.pop();
    record.arrival_order.push_back(event.task);
    const Vec result = f.forward(batch.task_input(event.task));
    if (assembler.on_result(event.task, result)) break;
  }
  if (!assembler.done()) throw Error(ErrorCode::Undecodable, "completed tasks are not decodable");

  auto outcome = assembler.finish();
  record.wait_seconds = clock.now();
  if (options.charge == ComputeCharge::Measured) {
    record.decode_seconds = outcome.decode_seconds;
    record.head_seconds = outcome.head_seconds;
  }
  record.end_to_end_latency = record.wait_seconds + record.decode_seconds + record.head_seconds;
  record.decode_subset = std::move(outcome.decode_subset);
  record.degraded = outcome.degraded;
  record.labels = std::move(outcome.labels);
  record.estimates = std::move(outcome.estimates);
  return record;
}

QueryRecord serve_query_sim(const VecList& inputs, const InvertibleFunction& f,
                            const GeneratorMatrix& g, const std::vector<DownstreamHead>& heads,
                            const StragglerModel& model, std::uint64_t query_id,
                            SimOptions options) {
  const auto start = SteadyClock::now();
  const auto batch = ideal_encode(f, inputs, g);
  const double encode_seconds = seconds_since(start);
  auto record = run_query_sim(batch, f, heads, model, query_id, options);
  if (options.charge == ComputeCharge::Measured) record.encode_seconds = encode_seconds;
  return record;
}

// ---- latency statistics ----------------------------------------------------

void to_json(nlohmann::json& j, const LatencyStats& s) {
  j = {{"count", s.count}, {"mean", s.mean}, {"p50", s.p50}, {"p99", s.p99}, {"p999", s.p999}};
}

double nearest_rank(const std::vector<double>& sorted, int per_mille) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "no samples");
  const std::size_t n = sorted.size();
  // rank = ceil(p * n), computed exactly in integers.
  std::size_t rank = (static_cast<std::size_t>(per_mille) * n + 999) / 1000;
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

LatencyStats summarize(std::vector<double> latencies) {
  if (latencies.empty()) throw Error(ErrorCode::EmptyInput, "cannot summarize zero records");
  std::sort(latencies.begin(), latencies.end());
  LatencyStats s;
  s.count = latencies.size();
  s.mean = std::accumulate(latencies.begin(), latencies.end(), 0.0) / static_cast<double>(s.count);
  s.p50 = nearest_rank(latencies, 500);
  s.p99 = nearest_rank(latencies, 990);
  s.p999 = nearest_rank(latencies, 999);
  return s;
}

LatencyStats summarize(const std::vector<QueryRecord>& records) {
  std::vector<double> latencies;
  latencies.reserve(records.size());
  for (const auto& r : records) latencies.push_back(r.end_to_end_latency);
  return summarize(std::move(latencies));
}

// ---- synthetic accuracy ----------------------------------------------------

Vec ClassMixture::mean(int label) const {
  Vec m = Vec::Zero(dim);
  const double angle = 2.0 * std::numbers::pi * label / classes;
  m[0] = radius * std::cos(angle);
  if (dim > 1) m[1] = radius * std::sin(angle);
  return m;
}

std::pair<Vec, int> ClassMixture::sample(Rng& rng) const {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  const int label = pick(rng);
  return {mean(label) + sigma * standard_normal(rng, dim), label};
}

DownstreamHead ClassMixture::head_for(const InvertibleFunction& f) const {
  VecList means;
  for (int c = 0; c < classes; ++c) means.push_back(f.forward(mean(c)));
  return DownstreamHead::nearest_mean(std::move(means));
}

AccuracyResult degraded_accuracy_experiment(const InvertibleFunction& f, const GeneratorMatrix& g,
                                            const DownstreamHead& head, double sigma, int trials,
                                            std::uint64_t seed, const ClassMixture& mixture) {
  if (trials < 1) throw Error(ErrorCode::InvalidConfig, "trials must be >= 1");
  if (head.dim() != f.dim() || mixture.dim != f.dim())
    throw Error(ErrorCode::DimensionMismatch, "head, mixture and function must share dimension");
  if (g.n() == g.k()) throw Error(ErrorCode::InvalidShape, "degraded mode needs a parity task");
  const int k = g.k();
  std::size_t normal_correct = 0;
  std::size_t degraded_correct = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    VecList inputs;
    std::vector<int> labels;
    for (int j = 0; j < k; ++j) {
      auto [x, y] = mixture.sample(rng);
      inputs.push_back(std::move(x));
      labels.push_back(y);
    }
    std::uniform_int_distribution<int> pick(1, k);
    const TaskId victim = pick(rng);
    const auto batch =
        perturbed_encode(f, inputs, g, PerturbationModel{sigma, rng()});

    std::map<TaskId, Vec> results;
    std::vector<TaskId> subset;
    for (TaskId task = 1; task <= g.n() && static_cast<int>(subset.size()) < k; ++task) {
      if (task == victim) continue;
      results.emplace(task, f.forward(batch.task_input(task)));
      subset.push_back(task);
    }
    const auto estimates = decode_batch(results, g, subset);
    const auto vi = static_cast<std::size_t>(victim - 1);
    const int truth = labels[vi];
    if (head.predict(f.forward(inputs[vi])) == truth) ++normal_correct;
    if (degraded_inference(head, estimates[vi]) == truth) ++degraded_correct;
  }
  return AccuracyResult{static_cast<double>(normal_correct) / trials,
                        static_cast<double>(degraded_correct) / trials,
                        static_cast<std::size_t>(trials)};
}

}  // namespace invcode
