#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "invcode/code_matrix.hpp"
#include "invcode/harness.hpp"
#include "invcode/invertible_fn.hpp"

namespace invcode::cli {

/// A required input file is absent or unreadable (exit 66).
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json load_json_file(const std::filesystem::path& path);

struct CodeSection {
  int n = 3;
  int k = 2;
  Scheme scheme = Scheme::Uniform;
  std::optional<std::uint64_t> seed;
};

struct NoiseSection {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// {code, function, noise, straggler, experiment: {name, parameters},
/// output_dir}. Every section is optional; commands validate the ones they
/// need.
struct RunConfig {
  std::optional<CodeSection> code;
  std::optional<nlohmann::json> function;
  std::optional<NoiseSection> noise;
  std::optional<StragglerModel> straggler;
  std::string experiment;
  nlohmann::json parameters = nlohmann::json::object();
  std::optional<std::string> output_dir;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  GeneratorMatrix generator() const;
  /// Rotation by pi/3 in the plane when the config has no function section.
  InvertibleFunction make_function() const;
};

/// Throws InvalidConfig if `j` has a key outside `allowed`.
void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                    const std::string& where);

/// RESULTS_DIR overrides the configured directory; default "results".
std::filesystem::path results_dir(const std::optional<std::string>& configured);

}  // namespace invcode::cli
