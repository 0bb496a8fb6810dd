#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace mbb {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Named pipelines: gaussian, dacmoser, giant, relax, strassen, duality-sweep.
const std::vector<std::string>& experiment_names();

// Parameters of `experiment` with their default values.
nlohmann::json default_params(const std::string& experiment);

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 1;
  std::string out_dir;  // empty: nothing is written
  nlohmann::json params = nlohmann::json::object();  // complete after parse_config
};

// Accepts {"experiment", "seed", "out", "params"}; missing params take their defaults.
// Unknown keys, wrong types and out-of-range values throw ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

std::uint64_t fnv1a64(const std::string& bytes);
// Hex FNV-1a of the canonical config without the output directory.
std::string config_hash(const ExperimentConfig& c);

struct Check {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  std::string relation = "<=";  // value relation tolerance
  bool passed = false;
};

// Passed when value <= tolerance (or >=); NaN never passes.
Check make_check(std::string name, double value, std::string relation, double tolerance);

enum class RunStatus { Completed, SolverError, NonConvergence };

struct RunManifest {
  std::string toolkit_version = kToolkitVersion;
  std::string experiment;
  std::string config_hash;
  nlohmann::json config;
  std::string started_at;  // UTC, ISO 8601
  std::string finished_at;
  double elapsed_seconds = 0.0;
  RunStatus status = RunStatus::Completed;
  std::string error;                   // what() of the solver error, if any
  std::vector<Check> checks;           // in evaluation order
  std::vector<std::string> artifacts;  // paths relative to the run directory
  nlohmann::json results = nlohmann::json::object();

  bool passed() const;
};

// Runs the pipeline; solver errors end the run with a failed "error" check. With an output
// directory, artifacts go to <out>/<experiment>/, the manifest to manifest.json there, and
// one line per run is appended to <out>/manifests.jsonl.
RunManifest run_experiment(const ExperimentConfig& cfg);
// At most `parallel` configs run at once; the result order follows `configs`.
std::vector<RunManifest> run_experiments(const std::vector<ExperimentConfig>& configs, int parallel = 1);

nlohmann::json to_json(const RunManifest& m, bool with_timestamps = true);
RunManifest manifest_from_json(const nlohmann::json& j);
RunManifest load_manifest(const std::string& path);

// 0 all checks pass, 1 a check failed, 3 a solver did not converge.
int exit_code(const RunManifest& m);
int exit_code(const std::vector<RunManifest>& ms);

struct Report {
  int manifests = 0;
  int checks = 0;
  int passed = 0;
  std::string text;
  nlohmann::json json;
};

// Aggregated pass/fail table. Throws InvalidArgument on an empty sequence.
Report report(const std::vector<RunManifest>& manifests);

}  // namespace mbb
