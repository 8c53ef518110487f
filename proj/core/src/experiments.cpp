#include "invcode/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>

#include "invcode/codec.hpp"
#include "invcode/error.hpp"

namespace invcode::experiments {

namespace {

using SteadyClock = std::chrono::steady_clock;

double seconds_since(SteadyClock::time_point start) {
  return std::chrono::duration<double>(SteadyClock::now() - start).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double inf_norm(const Vec& v) { return v.cwiseAbs().maxCoeff(); }

ReportCell synth_cell(const SynthConfig& cfg, const InvertibleFunction& f, int k,
                      std::size_t cell_index) {
  Rng rng(derive_seed(cfg.seed, cell_index));
  std::uniform_int_distribution<int> pick(0, k - 1);
  double total = 0.0;
  double worst = 0.0;
  VecList xs(static_cast<std::size_t>(k));
  VecList fx(static_cast<std::size_t>(k));
  for (int t = 0; t < cfg.trials_per_k; ++t) {
    Vec sum = Vec::Zero(2);
    for (int j = 0; j < k; ++j) {
      auto& x = xs[static_cast<std::size_t>(j)];
      x = synth_mixture_sample(rng);
      sum += x;
      fx[static_cast<std::size_t>(j)] = f.forward(x);
    }
    const int victim = pick(rng);
    // The parity worker's result for the plain-average encoded input.
    Vec recovered = static_cast<double>(k) * f.forward(sum / static_cast<double>(k));
    for (int j = 0; j < k; ++j)
      if (j != victim) recovered -= fx[static_cast<std::size_t>(j)];
    const Vec x_hat = f.inverse(recovered).x;
    const double err = (xs[static_cast<std::size_t>(victim)] - x_hat).norm();
    total += err;
    worst = std::max(worst, err);
  }
  ReportCell cell;
  cell.key = {{"k", k}};
  const auto trials = static_cast<std::size_t>(cfg.trials_per_k);
  cell.metrics["mean_error"] = Metric{total / cfg.trials_per_k, trials};
  cell.metrics["max_error"] = Metric{worst, trials};
  cell.ok = total / cfg.trials_per_k <= kSynthErrorBound;
  return cell;
}

void add_latency_metrics(ReportCell& cell, const std::vector<QueryRecord>& records) {
  const auto stats = summarize(records);
  std::vector<double> overhead, waits, encodes;
  std::size_t degraded = 0;
  for (const auto& r : records) {
    overhead.push_back(r.decode_seconds + r.head_seconds);
    waits.push_back(r.wait_seconds);
    encodes.push_back(r.encode_seconds);
    if (r.degraded) ++degraded;
  }
  const auto n = stats.count;
  cell.metrics["mean_s"] = Metric{stats.mean, n};
  cell.metrics["p50_s"] = Metric{stats.p50, n};
  cell.metrics["p99_s"] = Metric{stats.p99, n};
  cell.metrics["p999_s"] = Metric{stats.p999, n};
  cell.metrics["wait_p99_s"] = Metric{summarize(waits).p99, n};
  cell.metrics["overhead_p99_s"] = Metric{summarize(overhead).p99, n};
  cell.metrics["encode_p99_s"] = Metric{summarize(encodes).p99, n};
  cell.metrics["degraded_fraction"] = Metric{static_cast<double>(degraded) / n, n};
}

}  // namespace

Vec synth_mixture_sample(Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  Vec mean = Vec::Zero(2);
  mean[coin(rng) ? 1 : 0] = 1.0;
  return mean + standard_normal(rng, 2);
}

ExperimentReport synth_reconstruction(const SynthConfig& cfg) {
  if (cfg.trials_per_k < 1) throw Error(ErrorCode::InvalidConfig, "trials_per_k must be >= 1");
  if (cfg.k_values.empty()) throw Error(ErrorCode::InvalidConfig, "k_values is empty");
  for (int k : cfg.k_values)
    if (k < 2 || k > 100) throw Error(ErrorCode::InvalidConfig, "k values must lie in [2, 100]");

  const auto f = InvertibleFunction::rotation(cfg.theta);
  ExperimentReport report;
  report.name = "synth";
  report.parameters = {{"theta", cfg.theta},
                       {"k_values", cfg.k_values},
                       {"trials_per_k", cfg.trials_per_k},
                       {"seed", cfg.seed}};

  std::vector<std::future<ReportCell>> pending;
  for (std::size_t i = 0; i < cfg.k_values.size(); ++i) {
    const auto policy = cfg.parallel ? std::launch::async : std::launch::deferred;
    pending.push_back(std::async(policy, synth_cell, std::cref(cfg), std::cref(f),
                                 cfg.k_values[i], i));
  }
  for (auto& p : pending) report.cells.push_back(p.get());
  return report;
}

GeneratorMatrix multi_failure_generator(int n, int k) {
  if (n == 4 && k == 2) return build_generator(4, 2, Scheme::Multi42);
  return build_generator(n, k, Scheme::Vandermonde);
}

ExperimentReport multi_failure_check(int n, int k, const InvertibleFunction& f, int trials,
                                     std::uint64_t seed) {
  if (trials < 1) throw Error(ErrorCode::InvalidConfig, "trials must be >= 1");
  const auto g = multi_failure_generator(n, k);
  const double tolerance = f.is_linear() ? 1e-9 : 10.0 * kFixedPointResidualTol;

  ExperimentReport report;
  report.name = "multi_failure";
  report.parameters = {{"n", n},         {"k", k},       {"scheme", std::string(to_string(g.scheme()))},
                       {"function", f.kind_name()},      {"trials", trials},
                       {"seed", seed},   {"tolerance", tolerance}};

  std::vector<std::vector<TaskId>> subsets;
  for_each_subset(n, k, [&](const std::vector<TaskId>& s) {
    subsets.push_back(s);
    return true;
  });
  std::vector<double> worst(subsets.size(), 0.0);
  std::vector<std::string> failure(subsets.size());

  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    VecList inputs;
    for (int j = 0; j < k; ++j) inputs.push_back(standard_normal(rng, f.dim()));
    const auto batch = ideal_encode(f, inputs, g);
    std::map<TaskId, Vec> results;
    for (TaskId task = 1; task <= n; ++task) results.emplace(task, f.forward(batch.task_input(task)));

    for (std::size_t s = 0; s < subsets.size(); ++s) {
      if (!failure[s].empty()) continue;
      try {
        const auto decoded = decode_batch(results, g, subsets[s]);
        for (int j = 0; j < k; ++j) {
          const auto idx = static_cast<std::size_t>(j);
          worst[s] = std::max(worst[s], inf_norm(decoded[idx] - results.at(j + 1)));
        }
      } catch (const Error& e) {
        failure[s] = e.what();
      }
    }
  }

  for (std::size_t s = 0; s < subsets.size(); ++s) {
    ReportCell cell;
    cell.key = {{"subset", subsets[s]}};
    const bool decodable = failure[s].empty();
    cell.metrics["decodable"] = Metric{decodable ? 1.0 : 0.0, static_cast<std::size_t>(trials)};
    cell.metrics["max_error"] =
        Metric{decodable ? worst[s] : std::nan(""), static_cast<std::size_t>(trials)};
    cell.ok = decodable && worst[s] <= tolerance;
    cell.note = failure[s];
    report.cells.push_back(std::move(cell));
  }
  return report;
}

ExperimentReport amplification_sweep(const std::vector<int>& k_values,
                                     const std::vector<double>& sigma_values,
                                     const InvertibleFunction& f, const DownstreamHead& head,
                                     int trials, std::uint64_t seed, const ClassMixture& mixture) {
  if (trials < 1) throw Error(ErrorCode::InvalidConfig, "trials must be >= 1");
  ExperimentReport report;
  report.name = "amplification";
  report.parameters = {{"k_values", k_values}, {"sigma_values", sigma_values},
                       {"function", f.kind_name()}, {"trials", trials},
                       {"seed", seed},         {"classes", mixture.classes}};

  std::size_t cell_index = 0;
  for (int k : k_values) {
    const auto g = build_generator(k + 1, k, Scheme::Uniform);
    std::vector<TaskId> subset;
    for (TaskId t = 2; t <= k + 1; ++t) subset.push_back(t);
    for (double sigma : sigma_values) {
      Rng rng(derive_seed(seed, cell_index++));
      double ratio_sum = 0.0;
      double ratio_min = std::numeric_limits<double>::infinity();
      double ratio_max = 0.0;
      std::size_t normal_correct = 0;
      std::size_t degraded_correct = 0;
      for (int t = 0; t < trials; ++t) {
        VecList inputs;
        std::vector<int> labels;
        for (int j = 0; j < k; ++j) {
          auto [x, y] = mixture.sample(rng);
          inputs.push_back(std::move(x));
          labels.push_back(y);
        }
        const auto batch = perturbed_encode(f, inputs, g, PerturbationModel{sigma, rng()});
        std::map<TaskId, Vec> results;
        for (TaskId task : subset) results.emplace(task, f.forward(batch.task_input(task)));
        const Vec f_hat = decode_batch(results, g, subset).front();
        const Vec truth = f.forward(inputs.front());
        if (sigma > 0.0) {
          const double ratio = (f_hat - truth).norm() / batch.noise.front().norm();
          ratio_sum += ratio;
          ratio_min = std::min(ratio_min, ratio);
          ratio_max = std::max(ratio_max, ratio);
        }
        if (head.predict(truth) == labels.front()) ++normal_correct;
        if (degraded_inference(head, f_hat) == labels.front()) ++degraded_correct;
      }
      const auto n = static_cast<std::size_t>(trials);
      const bool has_ratio = sigma > 0.0;
      ReportCell cell;
      cell.key = {{"k", k}, {"sigma", sigma}};
      cell.metrics["ratio_mean"] = Metric{has_ratio ? ratio_sum / trials : std::nan(""), n};
      cell.metrics["ratio_min"] = Metric{has_ratio ? ratio_min : std::nan(""), n};
      cell.metrics["ratio_max"] = Metric{has_ratio ? ratio_max : std::nan(""), n};
      cell.metrics["normal_acc"] = Metric{static_cast<double>(normal_correct) / trials, n};
      cell.metrics["degraded_acc"] = Metric{static_cast<double>(degraded_correct) / trials, n};
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

ExperimentReport overhead_scaling(const std::vector<int>& k_values, const InvertibleFunction& f,
                                  int repeats) {
  if (repeats < 3) throw Error(ErrorCode::InvalidConfig, "repeats must be >= 3");
  constexpr int kParityBatch = 512;

  ExperimentReport report;
  report.name = "overhead";
  report.parameters = {{"k_values", k_values}, {"function", f.kind_name()}, {"dim", f.dim()},
                       {"repeats", repeats}};

  for (std::size_t ci = 0; ci < k_values.size(); ++ci) {
    const int k = k_values[ci];
    const auto g = build_generator(k + 1, k, Scheme::Uniform);
    Rng rng(derive_seed(0x0bead, ci));
    VecList inputs;
    for (int j = 0; j < k; ++j) inputs.push_back(standard_normal(rng, f.dim()));
    const auto batch = ideal_encode(f, inputs, g);
    std::map<TaskId, Vec> results;
    for (TaskId t = 1; t <= k + 1; ++t) results.emplace(t, f.forward(batch.task_input(t)));
    std::vector<TaskId> subset;
    for (TaskId t = 2; t <= k + 1; ++t) subset.push_back(t);

    std::vector<double> encode_t, batch_t, stream_t, parity_t;
    for (int r = 0; r < repeats; ++r) {
      auto start = SteadyClock::now();
      const auto encoded = ideal_encode(f, inputs, g);
      encode_t.push_back(seconds_since(start));

      start = SteadyClock::now();
      const auto decoded = decode_batch(results, g, subset);
      batch_t.push_back(seconds_since(start));

      start = SteadyClock::now();
      DecoderState stream(g);
      stream.update(k + 1, results.at(k + 1));
      for (TaskId t = 2; t <= k; ++t) stream.update(t, results.at(t));
      stream_t.push_back(seconds_since(start));

      // Single parity event, after the k - 1 data events that precede it.
      std::vector<DecoderState> states(kParityBatch, DecoderState(g));
      for (auto& s : states)
        for (TaskId t = 2; t <= k; ++t) s.update(t, results.at(t));
      const Vec& parity = results.at(k + 1);
      start = SteadyClock::now();
      for (auto& s : states) s.update(k + 1, parity);
      parity_t.push_back(seconds_since(start) / kParityBatch);
    }

    ReportCell cell;
    cell.key = {{"k", k}};
    const auto n = static_cast<std::size_t>(repeats);
    cell.metrics["encode_s"] = Metric{median(encode_t), n};
    cell.metrics["decode_batch_s"] = Metric{median(batch_t), n};
    cell.metrics["online_stream_s"] = Metric{median(stream_t), n};
    cell.metrics["online_parity_event_s"] = Metric{median(parity_t), n * kParityBatch};
    report.cells.push_back(std::move(cell));
  }
  return report;
}

ExperimentReport latency_comparison(const LatencyConfig& cfg, const InvertibleFunction& f) {
  if (cfg.queries < 1) throw Error(ErrorCode::InvalidConfig, "queries must be >= 1");
  const auto coded = build_generator(cfg.n, cfg.k, cfg.scheme, cfg.code_seed);
  const auto uncoded = GeneratorMatrix::from_rows(Mat::Identity(cfg.k, cfg.k));
  const std::vector<DownstreamHead> heads{cfg.mixture.head_for(f)};

  StragglerModel calm = cfg.straggler;
  calm.straggle_prob = 0.0;
  calm.fail_policy.clear();

  ExperimentReport report;
  report.name = "latency";
  nlohmann::json straggler;
  to_json(straggler, cfg.straggler);
  report.parameters = {{"n", cfg.n},
                       {"k", cfg.k},
                       {"scheme", std::string(to_string(cfg.scheme))},
                       {"queries", cfg.queries},
                       {"straggler", straggler},
                       {"charge", cfg.charge == ComputeCharge::Measured ? "measured" : "none"},
                       {"seed", cfg.seed}};

  struct Arm {
    const char* name;
    const GeneratorMatrix* g;
    const StragglerModel* model;
  };
  const Arm arms[] = {{"baseline", &uncoded, &calm},
                      {"coded", &coded, &cfg.straggler},
                      {"uncoded", &uncoded, &cfg.straggler}};

  for (const auto& arm : arms) {
    ReportCell cell;
    cell.key = {{"arm", arm.name}};
    std::vector<QueryRecord> records;
    records.reserve(static_cast<std::size_t>(cfg.queries));
    try {
      for (int q = 0; q < cfg.queries; ++q) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(q)));
        VecList inputs;
        for (int j = 0; j < cfg.k; ++j) inputs.push_back(cfg.mixture.sample(rng).first);
        records.push_back(serve_query_sim(inputs, f, *arm.g, heads, *arm.model,
                                          static_cast<std::uint64_t>(q), SimOptions{cfg.charge}));
      }
    } catch (const Error& e) {
      cell.ok = false;
      cell.note = e.what();
      report.cells.push_back(std::move(cell));
      continue;
    }

    add_latency_metrics(cell, records);
    report.cells.push_back(std::move(cell));
  }
  return report;
}

ExperimentReport latency_tcp(const std::vector<Endpoint>& endpoints, const GeneratorMatrix& g,
                             const InvertibleFunction& f, const TcpLatencyConfig& cfg) {
  if (cfg.queries < 1) throw Error(ErrorCode::InvalidConfig, "queries must be >= 1");
  const std::vector<DownstreamHead> heads{cfg.mixture.head_for(f)};
  ExperimentReport report;
  report.name = "latency_tcp";
  std::vector<std::string> eps;
  for (const auto& e : endpoints) eps.push_back(e.to_string());
  report.parameters = {{"n", g.n()},
                       {"k", g.k()},
                       {"scheme", std::string(to_string(g.scheme()))},
                       {"endpoints", eps},
                       {"queries", cfg.queries},
                       {"timeout_seconds", cfg.timeout_seconds},
                       {"seed", cfg.seed}};

  TcpFrontEnd front(endpoints);
  std::vector<QueryRecord> records;
  ReportCell cell;
  cell.key = {{"arm", "tcp"}};
  try {
    for (int q = 0; q < cfg.queries; ++q) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(q)));
      VecList inputs;
      for (int j = 0; j < g.k(); ++j) inputs.push_back(cfg.mixture.sample(rng).first);
      const auto start = SteadyClock::now();
      const auto batch = ideal_encode(f, inputs, g);
      const double encode_seconds = seconds_since(start);
      auto record = front.run_query(batch, heads, static_cast<std::uint64_t>(q), cfg.timeout_seconds);
      record.encode_seconds = encode_seconds;
      records.push_back(std::move(record));
    }
  } catch (const Error& e) {
    cell.ok = false;
    cell.note = e.what();
  }
  if (!records.empty()) add_latency_metrics(cell, records);
  report.cells.push_back(std::move(cell));
  return report;
}

}  // namespace invcode::experiments
