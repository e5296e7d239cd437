#pragma once

#include <stdexcept>
#include <string>

#include "gatecross/trainer.hpp"

namespace gatecross {

/// Raised on any configuration problem: malformed JSON (with file:line),
/// unknown keys, wrong value types, or violated invariants (with the
/// offending JSON path).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Every tunable of the pipeline, aggregated. The JSON file mirrors this
/// as sections: dynamics, ocp, collision, loss, policy, env, trainer.
/// Absent sections and keys keep their defaults; unknown keys are errors.
struct ProjectConfig {
  TrainConfig train;
};

/// Reads and validates a JSON config file. Comments (// and /* */) are
/// permitted. Throws ConfigError.
ProjectConfig load_project_config(const std::string& path);

/// Same, from an in-memory string; `origin` labels error messages.
ProjectConfig parse_project_config(const std::string& text,
                                   const std::string& origin);

/// Checks cross-field invariants of an already-populated config (also
/// called by the loaders). Throws ConfigError on violation.
void validate_project_config(const ProjectConfig& cfg,
                             const std::string& origin);

/// Renders the effective configuration as pretty-printed JSON.
std::string render_project_config(const ProjectConfig& cfg);

/// Writes render_project_config(cfg) to a file. Throws ConfigError when
/// the file cannot be written.
void save_project_config(const std::string& path, const ProjectConfig& cfg);

/// Applies GATECROSS_SEED and GATECROSS_THREADS environment variables on
/// top of the parsed config (command-line flags still take precedence).
void apply_env_overrides(ProjectConfig& cfg);

}  // namespace gatecross
