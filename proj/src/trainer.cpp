#include "gatecross/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "gatecross/ocp_diff.hpp"
#include "gatecross/quad_dynamics.hpp"

namespace gatecross {

namespace {

Vec20 chain_dL_dz(const TrajectoryGradient& gxi,
                  const TrajectorySensitivity& sens) {
  Vec20 dz = Vec20::Zero();
  for (std::size_t k = 0; k < sens.dx_dz.size(); ++k)
    dz += sens.dx_dz[k].transpose() * gxi.d_xs[k];
  for (std::size_t k = 0; k < sens.du_dz.size(); ++k)
    dz += sens.du_dz[k].transpose() * gxi.d_us[k];
  return dz;
}

}  // namespace

OcpSolution shift_warm_start(const OcpSolution& sol) {
  OcpSolution w;
  w.us.assign(sol.us.begin() + 1, sol.us.end());
  w.us.push_back(sol.us.back());
  return w;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t index) {
  // splitmix64 over a combined word.
  std::uint64_t x = seed ^ (stream * 0x9E3779B97F4A7C15ULL) ^
                    (index + 0xBF58476D1CE4E5B9ULL);
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

PolicyFn network_policy(PolicyParams params, OutputScaling scaling) {
  return [params = std::move(params), scaling](const QuadState& x,
                                               const Scenario& sc) {
    const Observation o = build_observation(x, sc.p_goal, sc.gate);
    ForwardCache cache;
    return policy_forward(params, o, scaling, cache);
  };
}

PolicyFn gate_aligned_policy(const OutputScaling& scaling) {
  return [scaling](const QuadState&, const Scenario& sc) {
    DecisionVector z;
    z.set_p_ref(sc.gate.center);
    const double c = std::cos(sc.gate.tilt), s = std::sin(sc.gate.tilt);
    Mat3 R;
    R << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
    z.set_M_ref(R);
    for (int j = 0; j < 8; ++j)
      z.z(12 + j) = 0.5 * (scaling.lo(j) + scaling.hi(j));
    return z;
  };
}

RolloutResult rollout_and_grad(const PolicyParams& params,
                               const Scenario& scenario,
                               const TrainConfig& cfg) {
  const GoalSpec goal = GoalSpec::from_position(scenario.p_goal);
  const EllipsoidShape infl = inflated_ellipsoid(cfg.env);

  RolloutResult out;
  out.grad = PolicyGrad::zeros_like(params);
  out.episode.states.reserve(cfg.horizon + 1);

  QuadState x = scenario.x_init;
  Vec4 u_prev = cfg.ocp.dyn.u_hover();
  OcpSolution warm;
  bool have_warm = false;
  int consecutive_failures = 0;
  ForwardCache cache;
  OcpConfig ocp = cfg.ocp;
  // The traversal time is preset from the initial gate distance and desired
  // speed, then held fixed in episode time: each receding-horizon problem
  // sees it dt closer until it has passed.
  const double t_ref0 = traversal_time_estimate(
      scenario.x_init, scenario.gate, cfg.env.traversal_speed,
      ocp.N * ocp.dt);

  for (int i = 0; i < cfg.horizon; ++i) {
    ocp.t_ref = std::max(t_ref0 - i * ocp.dt, 0.0);
    const Observation obs =
        build_observation(x, scenario.p_goal, scenario.gate);
    const DecisionVector z = policy_forward(params, obs, cfg.scaling, cache);
    const OcpSolution sol =
        solve_ocp(x, z, goal, ocp, have_warm ? &warm : nullptr);
    const LossReport rep = total_loss(sol, scenario.gate, infl,
                                      scenario.p_goal, u_prev, cfg.loss);

    out.loss += rep.total;
    out.l_gate += rep.l_gate;
    out.l_goal += rep.l_goal;
    out.l_control_diff += rep.l_control_diff;
    out.episode.zs.push_back(z.z);
    out.episode.loss_trace.push_back(rep);

    bool grad_ok = sol.converged;
    if (grad_ok) {
      try {
        const TrajectorySensitivity sens =
            differentiate_ocp(sol, z, goal, ocp);
        out.grad += policy_backward(params, cfg.scaling, cache,
                                    chain_dL_dz(rep.grad_xi, sens));
      } catch (const std::exception&) {
        grad_ok = false;  // ill-conditioned sensitivity: drop this step
      }
    }
    if (grad_ok) {
      consecutive_failures = 0;
    } else {
      ++out.mpc_failures;
      if (++consecutive_failures > cfg.max_consecutive_mpc_failures) {
        out.episode.states.push_back(x);
        out.episode.aborted = true;
        break;
      }
    }

    const Vec4 u0 = sol.us[0];
    out.episode.states.push_back(x);
    out.episode.controls.push_back(u0);
    x = step_env(x, ControlInput::from_vector(u0), cfg.ocp.dyn);
    u_prev = u0;
    warm = shift_warm_start(sol);
    have_warm = true;
  }
  if (!out.episode.aborted) out.episode.states.push_back(x);

  const EpisodeResult judged = judge_episode(out.episode.states, scenario.gate,
                                             scenario.p_goal, cfg.env);
  out.episode.success = judged.success;
  out.episode.crossed = judged.crossed;
  out.episode.min_alpha = judged.min_alpha;
  out.episode.goal_distance = judged.goal_distance;
  out.episode.mpc_failures = out.mpc_failures;
  return out;
}

EpisodeResult run_episode(const PolicyFn& policy, const Scenario& scenario,
                          const TrainConfig& cfg) {
  const GoalSpec goal = GoalSpec::from_position(scenario.p_goal);
  EpisodeResult ep;
  ep.states.reserve(cfg.horizon + 1);

  QuadState x = scenario.x_init;
  OcpSolution warm;
  bool have_warm = false;
  OcpConfig ocp = cfg.ocp;
  const double t_ref0 = traversal_time_estimate(
      scenario.x_init, scenario.gate, cfg.env.traversal_speed,
      ocp.N * ocp.dt);
  for (int i = 0; i < cfg.horizon; ++i) {
    ocp.t_ref = std::max(t_ref0 - i * ocp.dt, 0.0);
    const DecisionVector z = policy(x, scenario);
    const OcpSolution sol =
        solve_ocp(x, z, goal, ocp, have_warm ? &warm : nullptr);
    if (!sol.converged) ++ep.mpc_failures;
    const Vec4 u0 = sol.us[0];
    ep.states.push_back(x);
    ep.controls.push_back(u0);
    ep.zs.push_back(z.z);
    x = step_env(x, ControlInput::from_vector(u0), cfg.ocp.dyn);
    warm = shift_warm_start(sol);
    have_warm = true;
  }
  ep.states.push_back(x);

  const EpisodeResult judged =
      judge_episode(ep.states, scenario.gate, scenario.p_goal, cfg.env);
  ep.success = judged.success;
  ep.crossed = judged.crossed;
  ep.min_alpha = judged.min_alpha;
  ep.goal_distance = judged.goal_distance;
  return ep;
}

EvalReport evaluate(const PolicyFn& policy, int n_trials, std::uint64_t seed,
                    const TrainConfig& cfg) {
  EvalReport report;
  report.n_trials = n_trials;
  if (n_trials <= 0) return report;  // rate stays NaN: undefined, flagged
  report.trials.reserve(n_trials);
  for (int i = 0; i < n_trials; ++i) {
    const std::uint64_t s = mix_seed(seed, 0xE7A1u, static_cast<std::uint64_t>(i));
    const Scenario sc = sample_scenario(s, cfg.env);
    EpisodeResult ep = run_episode(policy, sc, cfg);
    if (ep.success) ++report.n_success;
    report.trial_seeds.push_back(s);
    report.trials.push_back(std::move(ep));
  }
  report.success_rate =
      static_cast<double>(report.n_success) / static_cast<double>(n_trials);
  return report;
}

std::pair<PolicyParams, TrainingLog> train(
    const TrainConfig& cfg,
    const std::function<void(const EpochRecord&)>& on_epoch) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();

  PolicyParams params = PolicyParams::init(
      cfg.hidden, static_cast<unsigned>(mix_seed(cfg.seed, 0x1217u, 0)));

  // Pre-training set: initial observations from the scenario randomizer,
  // each regressed to its own gate center.
  {
    std::vector<Observation> obs;
    std::vector<Vec3> centers;
    obs.reserve(cfg.pretrain_samples);
    centers.reserve(cfg.pretrain_samples);
    for (int i = 0; i < cfg.pretrain_samples; ++i) {
      const Scenario sc = sample_scenario(
          mix_seed(cfg.seed, 0x93E7u, static_cast<std::uint64_t>(i)), cfg.env);
      obs.push_back(build_observation(sc.x_init, sc.p_goal, sc.gate));
      centers.push_back(sc.gate.center);
    }
    pretrain_center(params, cfg.scaling, obs, centers, cfg.pretrain_mse_tol,
                    cfg.pretrain_max_epochs, cfg.pretrain_lr);
  }

  TrainingLog log;
  const long long steps_per_epoch =
      static_cast<long long>(cfg.batch_size) * cfg.horizon;
  long long episodes = 0;
  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  int divergence_streak = 0;

  std::vector<Scenario> scenarios(cfg.batch_size);
  std::vector<RolloutResult> results(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (log.total_sim_steps + steps_per_epoch > cfg.max_sim_steps) break;

    for (int b = 0; b < cfg.batch_size; ++b)
      scenarios[b] = sample_scenario(
          mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 0x10000u,
                   static_cast<std::uint64_t>(b)),
          cfg.env);

    const int workers = std::max(1, std::min(cfg.threads, cfg.batch_size));
    if (workers == 1) {
      for (int b = 0; b < cfg.batch_size; ++b)
        results[b] = rollout_and_grad(params, scenarios[b], cfg);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w]() {
          for (int b = w; b < cfg.batch_size; b += workers)
            results[b] = rollout_and_grad(params, scenarios[b], cfg);
        });
      for (auto& t : pool) t.join();
    }

    // Fixed-order reduction keeps logs bit-reproducible for any thread
    // count; the 1/(B H) averaging follows the batched update rule.
    PolicyGrad grad = PolicyGrad::zeros_like(params);
    EpochRecord rec;
    rec.epoch = epoch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      grad += results[b].grad;
      rec.mean_loss += results[b].loss;
      rec.mean_gate += results[b].l_gate;
      rec.mean_goal += results[b].l_goal;
      rec.mean_control_diff += results[b].l_control_diff;
      rec.mpc_failures += results[b].mpc_failures;
    }
    const double scale = 1.0 / static_cast<double>(steps_per_epoch);
    grad *= scale;
    rec.mean_loss *= scale;
    rec.mean_gate *= scale;
    rec.mean_goal *= scale;
    rec.mean_control_diff *= scale;
    rec.grad_norm = grad.norm();

    const double lr_now =
        cfg.lr * std::pow(cfg.lr_decay,
                          static_cast<double>(episodes / cfg.lr_decay_every));
    if (cfg.use_adam)
      adam_update(params, grad, lr_now, cfg.adam_beta1, cfg.adam_beta2,
                  cfg.adam_eps);
    else
      sgd_update(params, grad, lr_now);

    episodes += cfg.batch_size;
    log.total_sim_steps += steps_per_epoch;
    rec.sim_steps = log.total_sim_steps;
    rec.lr = lr_now;

    if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
      const EvalReport ev =
          evaluate(network_policy(params, cfg.scaling), cfg.eval_trials,
                   mix_seed(cfg.seed, 0xEE11u, static_cast<std::uint64_t>(epoch)),
                   cfg);
      rec.success_rate = ev.success_rate;
    }

    rec.wall_time_s =
        std::chrono::duration<double>(clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (std::isnan(initial_loss)) initial_loss = rec.mean_loss;
    if (rec.mean_loss > cfg.divergence_factor * initial_loss) {
      if (++divergence_streak >= cfg.divergence_patience) {
        log.aborted = true;
        log.abort_reason = "loss diverged: " + std::to_string(rec.mean_loss) +
                           " vs initial " + std::to_string(initial_loss);
        break;
      }
    } else {
      divergence_streak = 0;
    }
  }
  return {std::move(params), std::move(log)};
}

}  // namespace gatecross
