#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gatecross/config_io.hpp"

namespace gatecross {

/// Parsed command-line options shared by the subcommands. Zero/empty
/// values mean "not given on the command line".
struct CliOptions {
  std::string config_path;    // JSON config; defaults apply when empty
  std::string out_dir = "out";
  std::string checkpoint;     // eval / replay input
  std::string scenario_path;  // replay input
  std::string output_csv;     // replay output; default <out>/replay.csv
  bool seed_set = false;
  std::uint64_t seed = 0;
  int threads = 0;   // overrides trainer.threads when positive
  int trials = 0;    // overrides trainer.eval_trials when positive
  int instances = 0; // audit instances per suite when positive
  bool baseline = false;  // eval/replay the gate-aligned baseline policy
  std::string suite;      // audit suite filter; empty runs all
};

/// Subcommand entry points. Exit codes: 0 success; 1 runtime failure or
/// failed audit; 2 invalid config; 3 missing/corrupt checkpoint; 4 bad
/// scenario file.
int cmd_train(const CliOptions& opts);
int cmd_eval(const CliOptions& opts);
int cmd_replay(const CliOptions& opts);
int cmd_audit_grads(const CliOptions& opts);

/// One row of the gradient audit table.
struct AuditResult {
  std::string name;
  int instances = 0;
  double worst_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Max-norm relative error with a unit floor on the reference magnitude;
/// the acceptance comparator for every audit suite.
double max_rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want);

/// Finite-difference audits of every analytic gradient in the pipeline:
/// discrete dynamics Jacobians, the MPC solution-map sensitivity, the
/// collision envelope gradient, the policy backward pass, and the
/// end-to-end composition on reduced instances. `suite_filter` selects a
/// single suite by name when non-empty.
std::vector<AuditResult> run_gradient_audit(const ProjectConfig& cfg,
                                            std::uint64_t seed,
                                            const std::string& suite_filter,
                                            int instances_per_suite = 100);

}  // namespace gatecross
