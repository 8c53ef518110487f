#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <numbers>

#include "invcode/error.hpp"

namespace invcode::cli {

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"code", "function", "noise", "straggler", "experiment", "output_dir"}, "config");
  RunConfig cfg;
  try {
    if (j.contains("code")) {
      const auto& c = j.at("code");
      reject_unknown(c, {"n", "k", "scheme", "seed"}, "code");
      CodeSection code;
      code.n = c.at("n").get<int>();
      code.k = c.at("k").get<int>();
      code.scheme = scheme_from_string(c.at("scheme").get<std::string>());
      if (c.contains("seed")) code.seed = c.at("seed").get<std::uint64_t>();
      if (code.scheme == Scheme::GaussianRandom && !code.seed)
        throw Error(ErrorCode::InvalidConfig, "code.seed is required for the gaussian scheme");
      cfg.code = code;
    }
    if (j.contains("function")) cfg.function = j.at("function");
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      reject_unknown(n, {"sigma", "seed"}, "noise");
      if (!n.contains("seed")) throw Error(ErrorCode::InvalidConfig, "noise.seed is required");
      cfg.noise = NoiseSection{n.at("sigma").get<double>(), n.at("seed").get<std::uint64_t>()};
      if (cfg.noise->sigma < 0.0) throw Error(ErrorCode::InvalidConfig, "noise.sigma must be >= 0");
    }
    if (j.contains("straggler")) cfg.straggler = straggler_from_json(j.at("straggler"));
    if (j.contains("experiment")) {
      const auto& e = j.at("experiment");
      reject_unknown(e, {"name", "parameters"}, "experiment");
      cfg.experiment = e.at("name").get<std::string>();
      cfg.parameters = e.value("parameters", nlohmann::json::object());
    }
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
  }
  if (cfg.function) (void)cfg.make_function();  // validate early
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_json(load_json_file(path));
}

GeneratorMatrix RunConfig::generator() const {
  if (!code) throw Error(ErrorCode::InvalidConfig, "config has no code section");
  return build_generator(code->n, code->k, code->scheme, code->seed);
}

InvertibleFunction RunConfig::make_function() const {
  if (!function) return InvertibleFunction::rotation(std::numbers::pi / 3);
  return function_from_json(*function);
}

std::filesystem::path results_dir(const std::optional<std::string>& configured) {
  if (const char* env = std::getenv("RESULTS_DIR"); env != nullptr && *env != '\0') return env;
  return configured.value_or("results");
}

}  // namespace invcode::cli
