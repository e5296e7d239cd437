#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gatecross/env.hpp"
#include "gatecross/hl_loss.hpp"
#include "gatecross/ocp.hpp"
#include "gatecross/policy_net.hpp"

namespace gatecross {

struct TrainConfig {
  int batch_size = 32;  // parallel environments per update
  int horizon = 35;     // closed-loop steps per episode
  int epochs = 700;
  long long max_sim_steps = 200000;

  double lr = 2e-4;
  double lr_decay = 0.99;
  int lr_decay_every = 50;  // episodes
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  bool use_adam = true;  // plain descent otherwise

  int eval_every = 0;  // epochs between evaluations; 0 disables
  int eval_trials = 32;
  std::uint64_t seed = 1;
  int threads = 1;

  int hidden = 256;
  int pretrain_samples = 4096;
  double pretrain_mse_tol = 1e-3;
  int pretrain_max_epochs = 4000;
  double pretrain_lr = 1e-3;

  int max_consecutive_mpc_failures = 10;
  double divergence_factor = 10.0;
  int divergence_patience = 20;

  OcpConfig ocp;
  EnvConfig env;
  LossWeights loss;
  OutputScaling scaling;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;  // per simulation step, 1/(B H)
  double mean_gate = 0.0;
  double mean_goal = 0.0;
  double mean_control_diff = 0.0;
  double grad_norm = 0.0;
  double success_rate = std::numeric_limits<double>::quiet_NaN();
  long long sim_steps = 0;  // cumulative
  double wall_time_s = 0.0;
  double lr = 0.0;
  int mpc_failures = 0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  long long total_sim_steps = 0;
  bool aborted = false;
  std::string abort_reason;
};

struct RolloutResult {
  double loss = 0.0;  // summed over executed steps
  double l_gate = 0.0, l_goal = 0.0, l_control_diff = 0.0;
  PolicyGrad grad;    // summed over steps; batch averaging is the caller's
  EpisodeResult episode;
  int mpc_failures = 0;
};

/// A policy maps the current state (plus the scenario, for gate/goal
/// context) to a decision vector.
using PolicyFn =
    std::function<DecisionVector(const QuadState&, const Scenario&)>;

PolicyFn network_policy(PolicyParams params, OutputScaling scaling);
/// Fixed reference at the gate pose with all weight heads at their range
/// midpoints — the untrained comparison baseline.
PolicyFn gate_aligned_policy(const OutputScaling& scaling);

/// One closed-loop training episode: per step, observation -> network ->
/// warm-started MPC -> high-level loss -> environment transition; the
/// analytic gradient chain dL/dxi * dxi/dz * dz/dparams accumulates over
/// steps. Steps whose MPC solve (or sensitivity) fails contribute loss but
/// no gradient; too many consecutive failures abort the episode.
RolloutResult rollout_and_grad(const PolicyParams& params,
                               const Scenario& scenario,
                               const TrainConfig& cfg);

struct EvalReport {
  double success_rate = std::numeric_limits<double>::quiet_NaN();
  int n_trials = 0;
  int n_success = 0;
  std::vector<EpisodeResult> trials;
  std::vector<std::uint64_t> trial_seeds;
};

/// Greedy closed-loop rollouts on n_trials seeded scenarios.
EvalReport evaluate(const PolicyFn& policy, int n_trials, std::uint64_t seed,
                    const TrainConfig& cfg);

/// Runs one greedy closed-loop episode (no gradients, losses not
/// evaluated) and returns the judged result with full trace.
EpisodeResult run_episode(const PolicyFn& policy, const Scenario& scenario,
                          const TrainConfig& cfg);

/// Pre-training followed by batched analytic-gradient descent. on_epoch,
/// when set, observes each epoch record as it is produced.
std::pair<PolicyParams, TrainingLog> train(
    const TrainConfig& cfg,
    const std::function<void(const EpochRecord&)>& on_epoch = nullptr);

/// Deterministic seed mixing for scenario streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t index);

/// Receding-horizon warm start: drop the first control, repeat the last.
OcpSolution shift_warm_start(const OcpSolution& sol);

}  // namespace gatecross
