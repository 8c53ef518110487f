#include "cli.hpp"

#include <csignal>
#include <memory>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

#include "invcode/error.hpp"
#include "invcode/experiments.hpp"
#include "invcode/tcp.hpp"
#include "run_config.hpp"

namespace invcode::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::atomic<WorkerServer*> g_worker{nullptr};

extern "C" void on_stop_signal(int) {
  if (auto* w = g_worker.load()) w->request_stop();
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationFailed:
    case ErrorCode::SingularSubset:
      return kValidation;
    case ErrorCode::InvalidShape:
    case ErrorCode::InvalidConfig:
    case ErrorCode::DimensionMismatch:
      return kUsage;
    default:
      return kRuntime;
  }
}

struct Common {
  bool pretty = false;
  std::string output_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_flag("--pretty", c.pretty, "Print a human-readable table instead of JSON");
  cmd->add_option("--output-dir", c.output_dir, "Report directory (default: $RESULTS_DIR or results)");
}

int emit_report(const ExperimentReport& report, const Common& common,
                const std::optional<std::string>& configured_dir, std::ostream& out,
                std::ostream& err) {
  const fs::path dir = common.output_dir.empty() ? results_dir(configured_dir) : fs::path(common.output_dir);
  const auto paths = write_report(report, dir);
  err << "wrote " << paths.json.string() << " and " << paths.table.string() << "\n";
  if (common.pretty) {
    out << report.to_table();
  } else {
    out << report.to_json().dump() << "\n";
  }
  return report.ok() ? kOk : kValidation;
}

VecList vec_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorCode::InvalidConfig, what + " must be an array of vectors");
  VecList out;
  for (const auto& v : j) out.push_back(vec_from_json(v));
  return out;
}

json vec_list_json(const VecList& vs) {
  auto arr = json::array();
  for (const auto& v : vs) arr.push_back(vec_to_json(v));
  return arr;
}

template <typename T>
T param(const json& p, const char* key, T fallback) {
  return p.contains(key) ? p.at(key).get<T>() : fallback;
}

std::uint64_t required_seed(const json& p) {
  if (!p.contains("seed")) throw Error(ErrorCode::InvalidConfig, "experiment.parameters.seed is required");
  return p.at("seed").get<std::uint64_t>();
}

ClassMixture mixture_for(const InvertibleFunction& f, int classes) {
  ClassMixture m;
  m.classes = classes;
  m.dim = f.dim();
  return m;
}

// ---- bench experiments ------------------------------------------------------

ExperimentReport bench_latency(const RunConfig& cfg, const InvertibleFunction& f) {
  const auto& p = cfg.parameters;
  reject_unknown(p, {"mode", "queries", "seed", "charge", "classes", "timeout", "endpoints",
                     "loopback_delays"},
                 "experiment.parameters");
  const auto mode = param<std::string>(p, "mode", "sim");
  const int classes = param(p, "classes", 4);
  const std::uint64_t seed = required_seed(p);
  const CodeSection code = cfg.code.value_or(CodeSection{11, 10, Scheme::Uniform, std::nullopt});

  if (mode == "sim") {
    if (!cfg.straggler) throw Error(ErrorCode::InvalidConfig, "sim latency needs a straggler section");
    experiments::LatencyConfig lc;
    lc.n = code.n;
    lc.k = code.k;
    lc.scheme = code.scheme;
    lc.code_seed = code.seed.value_or(0);
    lc.queries = param(p, "queries", 5000);
    lc.straggler = *cfg.straggler;
    const auto charge = param<std::string>(p, "charge", "measured");
    if (charge != "measured" && charge != "none")
      throw Error(ErrorCode::InvalidConfig, "charge must be 'measured' or 'none'");
    lc.charge = charge == "none" ? ComputeCharge::None : ComputeCharge::Measured;
    lc.mixture = mixture_for(f, classes);
    lc.seed = seed;
    return experiments::latency_comparison(lc, f);
  }
  if (mode != "tcp") throw Error(ErrorCode::InvalidConfig, "mode must be 'sim' or 'tcp'");

  const auto g = build_generator(code.n, code.k, code.scheme, code.seed);
  std::vector<Endpoint> endpoints;
  std::vector<std::unique_ptr<WorkerServer>> local;
  if (p.contains("endpoints")) {
    for (const auto& e : p.at("endpoints")) endpoints.push_back(Endpoint::parse(e.get<std::string>()));
  } else if (p.contains("loopback_delays")) {
    for (const auto& d : p.at("loopback_delays")) {
      local.push_back(std::make_unique<WorkerServer>(f, Endpoint{"127.0.0.1", 0},
                                                     WorkerOptions{d.get<double>()}));
      local.back()->start();
      endpoints.push_back(Endpoint{"127.0.0.1", local.back()->port()});
    }
  } else {
    throw Error(ErrorCode::InvalidConfig, "tcp latency needs endpoints or loopback_delays");
  }
  if (static_cast<int>(endpoints.size()) != g.n())
    throw Error(ErrorCode::InvalidConfig, "need exactly n = " + std::to_string(g.n()) + " workers");
  experiments::TcpLatencyConfig tc;
  tc.queries = param(p, "queries", 200);
  tc.timeout_seconds = param(p, "timeout", 2.0);
  tc.mixture = mixture_for(f, classes);
  tc.seed = seed;
  return experiments::latency_tcp(endpoints, g, f, tc);
}

ExperimentReport run_bench(const RunConfig& cfg) {
  const auto f = cfg.make_function();
  const auto& p = cfg.parameters;
  if (cfg.experiment == "latency") return bench_latency(cfg, f);
  if (cfg.experiment == "synth") {
    reject_unknown(p, {"k_values", "trials", "seed", "theta"}, "experiment.parameters");
    experiments::SynthConfig sc;
    sc.k_values = param<std::vector<int>>(p, "k_values", {2, 10, 50, 100});
    sc.trials_per_k = param(p, "trials", sc.trials_per_k);
    sc.theta = param(p, "theta", sc.theta);
    sc.seed = required_seed(p);
    return experiments::synth_reconstruction(sc);
  }
  if (cfg.experiment == "multi_failure") {
    reject_unknown(p, {"trials", "seed"}, "experiment.parameters");
    const CodeSection code = cfg.code.value_or(CodeSection{4, 2, Scheme::Multi42, std::nullopt});
    return experiments::multi_failure_check(code.n, code.k, f, param(p, "trials", 100),
                                            required_seed(p));
  }
  if (cfg.experiment == "amplification") {
    reject_unknown(p, {"k_values", "sigma_values", "trials", "seed", "classes"},
                   "experiment.parameters");
    const auto mixture = mixture_for(f, param(p, "classes", 4));
    return experiments::amplification_sweep(
        param<std::vector<int>>(p, "k_values", {2, 4, 10}),
        param<std::vector<double>>(p, "sigma_values", {0.0, 0.1, 0.3}), f, mixture.head_for(f),
        param(p, "trials", 2000), required_seed(p), mixture);
  }
  if (cfg.experiment == "overhead") {
    reject_unknown(p, {"k_values", "repeats"}, "experiment.parameters");
    return experiments::overhead_scaling(param<std::vector<int>>(p, "k_values", {4, 10, 40}), f,
                                         param(p, "repeats", 7));
  }
  throw Error(ErrorCode::InvalidConfig, "unknown experiment '" + cfg.experiment +
                                            "' (latency, synth, multi_failure, amplification, overhead)");
}

std::vector<TaskId> first_decodable(const GeneratorMatrix& g, const std::map<TaskId, Vec>& results) {
  std::vector<TaskId> have;
  for (const auto& [t, _] : results) have.push_back(t);
  std::vector<TaskId> chosen;
  if (static_cast<int>(have.size()) < g.k()) return chosen;
  for_each_subset(static_cast<int>(have.size()), g.k(), [&](const std::vector<TaskId>& pos) {
    std::vector<TaskId> s;
    for (TaskId p : pos) s.push_back(have[static_cast<std::size_t>(p - 1)]);
    if (scaled_determinant(g.submatrix(s)) > kSingularityTolerance) {
      chosen = std::move(s);
      return false;
    }
    return true;
  });
  return chosen;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coded computation over invertible functions", "invcode"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // matrix
  auto* matrix = app.add_subcommand("matrix", "Build (and verify) a generator matrix");
  int m_n = 0, m_k = 0;
  std::string m_scheme;
  std::optional<std::uint64_t> m_seed;
  bool m_verify = false, m_pretty = false;
  matrix->add_option("n", m_n, "Total tasks")->required();
  matrix->add_option("k", m_k, "Data tasks")->required();
  matrix->add_option("scheme", m_scheme, "uniform | multi42 | vandermonde | gaussian")->required();
  matrix->add_option("--seed", m_seed, "Seed (gaussian scheme)");
  matrix->add_flag("--verify", m_verify, "Check that every k-row subset is invertible");
  matrix->add_flag("--pretty", m_pretty, "Human-readable output");

  // synth
  auto* synth = app.add_subcommand("synth", "Rotation recovery error per k");
  Common synth_common;
  int s_kmin = 2, s_kmax = 100, s_trials = experiments::SynthConfig{}.trials_per_k;
  std::vector<int> s_ks;
  std::uint64_t s_seed = 0;
  double s_theta = std::numbers::pi / 3;
  bool s_quick = false;
  synth->add_option("--k-min", s_kmin, "Smallest k")->capture_default_str();
  synth->add_option("--k-max", s_kmax, "Largest k")->capture_default_str();
  synth->add_option("--k", s_ks, "Explicit k values (overrides the range)")->delimiter(',');
  synth->add_option("--trials", s_trials, "Trials per k")->capture_default_str();
  synth->add_option("--seed", s_seed, "Master seed")->capture_default_str();
  synth->add_option("--theta", s_theta, "Rotation angle in radians")->capture_default_str();
  synth->add_flag("--quick", s_quick, "Use 5000 trials per k");
  add_common(synth, synth_common);

  // encode
  auto* encode = app.add_subcommand("encode", "Encode k inputs into n task inputs");
  std::string e_config, e_inputs;
  encode->add_option("--config", e_config, "Run config with code, function and optional noise")->required();
  encode->add_option("--inputs", e_inputs, "JSON array of k input vectors")->required();

  // decode
  auto* decode = app.add_subcommand("decode", "Recover the k embeddings from task results");
  std::string d_config, d_results;
  std::vector<TaskId> d_subset;
  decode->add_option("--config", d_config, "Run config with a code section")->required();
  decode->add_option("--results", d_results, "JSON object {task id: result vector}")->required();
  decode->add_option("--subset", d_subset, "Task ids to decode from")->delimiter(',');

  // accuracy
  auto* accuracy = app.add_subcommand("accuracy", "Degraded vs normal accuracy per (k, sigma)");
  Common acc_common;
  std::string a_config;
  std::vector<int> a_ks{2, 4, 10};
  std::vector<double> a_sigmas{0.0, 0.1, 0.3};
  int a_trials = 5000, a_classes = 4;
  std::uint64_t a_seed = 0;
  bool a_quick = false;
  accuracy->add_option("--config", a_config, "Run config supplying the function");
  accuracy->add_option("--k", a_ks, "k values")->delimiter(',')->capture_default_str();
  accuracy->add_option("--sigma", a_sigmas, "Noise levels")->delimiter(',')->capture_default_str();
  accuracy->add_option("--trials", a_trials, "Trials per cell")->capture_default_str();
  accuracy->add_option("--classes", a_classes, "Mixture classes")->capture_default_str();
  accuracy->add_option("--seed", a_seed, "Master seed")->capture_default_str();
  accuracy->add_flag("--quick", a_quick, "Use 1000 trials per cell");
  add_common(accuracy, acc_common);

  // overhead
  auto* overhead = app.add_subcommand("overhead", "Encode and decode cost versus k");
  Common ovh_common;
  std::string o_config;
  std::vector<int> o_ks{4, 10, 40};
  int o_repeats = 9;
  overhead->add_option("--config", o_config, "Run config supplying the function");
  overhead->add_option("--k", o_ks, "k values")->delimiter(',')->capture_default_str();
  overhead->add_option("--repeats", o_repeats, "Repeats per k (median reported)")->capture_default_str();
  add_common(overhead, ovh_common);

  // bench
  auto* bench = app.add_subcommand("bench", "Run the experiment named in a config");
  Common bench_common;
  std::string b_config;
  bench->add_option("--config", b_config, "Run config")->required();
  add_common(bench, bench_common);

  // serve-worker
  auto* worker = app.add_subcommand("serve-worker", "Serve TASK frames over TCP");
  std::string w_listen = "127.0.0.1:0", w_function;
  double w_delay = 0.0;
  worker->add_option("--listen", w_listen, "host:port (port 0 picks a free one)")->capture_default_str();
  worker->add_option("--function", w_function, "Function JSON file")->required();
  worker->add_option("--delay", w_delay, "Artificial delay per task in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*matrix) {
      const auto g = build_generator(m_n, m_k, scheme_from_string(m_scheme), m_seed);
      json doc = {{"generator", g}};
      bool ok = true;
      if (m_verify) {
        const auto r = verify_any_k_rows(g);
        ok = r.ok;
        doc["verify"] = {{"ok", r.ok},
                         {"worst_subset", r.worst_subset},
                         {"worst_margin", r.worst_margin},
                         {"subsets_checked", r.subsets_checked},
                         {"sampled", r.sampled}};
      }
      if (m_pretty) {
        std::ostringstream rows;
        rows << g.rows();
        out << to_string(g.scheme()) << " (" << g.n() << ", " << g.k() << ")\n" << rows.str() << "\n";
        if (m_verify) out << "verify: " << (ok ? "ok" : "FAILED") << "\n";
      } else {
        out << doc.dump() << "\n";
      }
      return ok ? kOk : kValidation;
    }

    if (*synth) {
      experiments::SynthConfig cfg;
      if (s_ks.empty()) {
        if (s_kmin > s_kmax) throw Error(ErrorCode::InvalidConfig, "--k-min exceeds --k-max");
        for (int k = s_kmin; k <= s_kmax; ++k) cfg.k_values.push_back(k);
      } else {
        cfg.k_values = s_ks;
      }
      cfg.trials_per_k = s_quick ? experiments::kQuickTrials : s_trials;
      cfg.seed = s_seed;
      cfg.theta = s_theta;
      return emit_report(experiments::synth_reconstruction(cfg), synth_common, std::nullopt, out, err);
    }

    if (*encode) {
      const auto cfg = RunConfig::load(e_config);
      const auto g = cfg.generator();
      const auto f = cfg.make_function();
      const auto inputs = vec_list(load_json_file(e_inputs), "inputs");
      const auto batch = cfg.noise ? perturbed_encode(f, inputs, g, {cfg.noise->sigma, cfg.noise->seed})
                                   : ideal_encode(f, inputs, g);
      VecList tasks;
      for (TaskId t = 1; t <= batch.n(); ++t) tasks.push_back(batch.task_input(t));
      json doc = {{"mode", batch.mode == EncodeMode::Ideal ? "ideal" : "perturbed"},
                  {"generator", g},
                  {"tasks", vec_list_json(tasks)},
                  {"noise", vec_list_json(batch.noise)}};
      out << doc.dump() << "\n";
      return kOk;
    }

    if (*decode) {
      const auto cfg = RunConfig::load(d_config);
      const auto g = cfg.generator();
      const auto raw = load_json_file(d_results);
      if (!raw.is_object()) throw Error(ErrorCode::InvalidConfig, "results must map task ids to vectors");
      std::map<TaskId, Vec> results;
      for (const auto& [key, value] : raw.items()) {
        TaskId t = 0;
        try {
          t = std::stoi(key);
        } catch (const std::exception&) {
          throw Error(ErrorCode::InvalidConfig, "result key '" + key + "' is not a task id");
        }
        results.emplace(t, vec_from_json(value));
      }
      auto subset = d_subset.empty() ? first_decodable(g, results) : d_subset;
      if (subset.empty()) throw Error(ErrorCode::Undecodable, "no decodable subset among the results");
      std::sort(subset.begin(), subset.end());
      const auto estimates = decode_batch(results, g, subset);
      out << json{{"subset", subset}, {"estimates", vec_list_json(estimates)}}.dump() << "\n";
      return kOk;
    }

    if (*accuracy) {
      const auto cfg = a_config.empty() ? RunConfig{} : RunConfig::load(a_config);
      const auto f = cfg.make_function();
      const auto mixture = mixture_for(f, a_classes);
      const auto report = experiments::amplification_sweep(a_ks, a_sigmas, f, mixture.head_for(f),
                                                           a_quick ? 1000 : a_trials, a_seed, mixture);
      return emit_report(report, acc_common, cfg.output_dir, out, err);
    }

    if (*overhead) {
      const auto cfg = o_config.empty() ? RunConfig{} : RunConfig::load(o_config);
      return emit_report(experiments::overhead_scaling(o_ks, cfg.make_function(), o_repeats),
                         ovh_common, cfg.output_dir, out, err);
    }

    if (*bench) {
      const auto cfg = RunConfig::load(b_config);
      return emit_report(run_bench(cfg), bench_common, cfg.output_dir, out, err);
    }

    if (*worker) {
      const auto f = function_from_json(load_json_file(w_function));
      WorkerServer server(f, Endpoint::parse(w_listen), WorkerOptions{w_delay});
      g_worker.store(&server);
      struct sigaction sa {};
      sa.sa_handler = on_stop_signal;
      sigemptyset(&sa.sa_mask);
      sigaction(SIGTERM, &sa, nullptr);
      sigaction(SIGINT, &sa, nullptr);
      out << json{{"listening", Endpoint{Endpoint::parse(w_listen).host, server.port()}.to_string()}}.dump()
          << std::endl;
      server.serve();
      g_worker.store(nullptr);
      out << json{{"stopped", true}, {"tasks_served", server.tasks_served()}}.dump() << std::endl;
      return kOk;
    }
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace invcode::cli
