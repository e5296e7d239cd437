#include "gatecross/env.hpp"

#include <algorithm>

#include "gatecross/quad_dynamics.hpp"

namespace gatecross {

Scenario sample_scenario(std::uint64_t seed, const EnvConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> tilt(cfg.tilt_min, cfg.tilt_max);
  std::uniform_real_distribution<double> jitter(-cfg.pos_jitter,
                                                cfg.pos_jitter);
  Scenario sc;
  sc.seed = seed;
  const double theta = tilt(rng);
  sc.gate = build_gate(cfg.gate_center, theta, cfg.inner_width,
                       cfg.inner_height, cfg.bar_thickness, cfg.bar_depth);
  sc.x_init.p = cfg.x_init_nominal + Vec3(jitter(rng), jitter(rng), jitter(rng));
  sc.x_init.v.setZero();
  sc.x_init.q = Vec4(1.0, 0.0, 0.0, 0.0);
  sc.p_goal = cfg.p_goal_nominal + Vec3(jitter(rng), jitter(rng), jitter(rng));
  return sc;
}

Scenario sample_scenario(std::mt19937_64& rng, const EnvConfig& cfg) {
  return sample_scenario(rng(), cfg);
}

QuadState step_env(const QuadState& x, const ControlInput& u,
                   const DynamicsParams& params) {
  return rk4_step(x, u, params);
}

double traversal_time_estimate(const QuadState& x, const GateGeometry& gate,
                               double v_des, double t_max) {
  const double plane_distance = x.p(1) - gate.center(1);
  const double closing_speed = std::max(v_des, -x.v(1));
  return std::clamp(plane_distance / closing_speed, 0.0, t_max);
}

double plan_crossing_time(const std::vector<QuadState>& xs, double plane_y,
                          double dt) {
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    const double a = xs[k].p(1) - plane_y;
    const double b = xs[k + 1].p(1) - plane_y;
    if (a > 0.0 && b <= 0.0) {
      const double frac = a / (a - b);
      return (static_cast<double>(k) + frac) * dt;
    }
  }
  return std::numeric_limits<double>::infinity();
}

double receding_traversal_time(const QuadState& x,
                               const std::vector<QuadState>& prev_plan,
                               const GateGeometry& gate, double v_des,
                               double dt, double t_max) {
  const double t_plan = plan_crossing_time(prev_plan, gate.center(1), dt);
  if (std::isfinite(t_plan)) return std::clamp(t_plan - dt, 0.0, t_max);
  return traversal_time_estimate(x, gate, v_des, t_max);
}

EllipsoidShape true_ellipsoid(const EnvConfig& cfg) {
  EllipsoidShape e;
  e.semi_axes = cfg.quad_semi_axes;
  return e;
}

EllipsoidShape inflated_ellipsoid(const EnvConfig& cfg) {
  EllipsoidShape e;
  e.semi_axes = cfg.quad_semi_axes;
  e.semi_axes(2) *= cfg.inflation_z;
  return e;
}

EpisodeResult judge_episode(const std::vector<QuadState>& states,
                            const GateGeometry& gate, const Vec3& p_goal,
                            const EnvConfig& cfg) {
  EpisodeResult res;
  if (states.empty()) return res;

  res.goal_distance = (states.back().p - p_goal).norm();

  // (a) Gate-plane crossing inside the opening, with the crossing point
  // linearly interpolated and expressed in the tilted gate frame.
  const double c = std::cos(gate.tilt), s = std::sin(gate.tilt);
  for (std::size_t k = 0; k + 1 < states.size(); ++k) {
    const double s0 = states[k].p(1) - gate.center(1);
    const double s1 = states[k + 1].p(1) - gate.center(1);
    if (!(s0 > 0.0 && s1 <= 0.0)) continue;
    const double t = s0 / (s0 - s1);
    const Vec3 d = states[k].p + t * (states[k + 1].p - states[k].p) -
                   gate.center;
    // Inverse of the tilt rotation about the world y axis.
    const double x_l = c * d(0) - s * d(2);
    const double z_l = s * d(0) + c * d(2);
    if (std::abs(x_l) <= 0.5 * gate.inner_width &&
        std::abs(z_l) <= 0.5 * gate.inner_height)
      res.crossed = true;
    break;
  }

  // (b) True-ellipsoid clearance at every executed state near the gate.
  // A non-converged subproblem is treated as a failed clearance check.
  const EllipsoidShape ell = true_ellipsoid(cfg);
  bool clearance_ok = true;
  for (const QuadState& x : states) {
    if ((x.p - gate.center).norm() > cfg.proximity_threshold) continue;
    Pose pose;
    pose.p = x.p;
    pose.q = x.q;
    for (const BarPolytope& bar : gate.bars) {
      const CollisionSolution sol = min_scaling(pose, ell, bar, cfg.collision);
      if (!sol.converged) {
        clearance_ok = false;
        continue;
      }
      res.min_alpha = std::min(res.min_alpha, sol.alpha_star);
    }
  }

  res.success = res.crossed && clearance_ok && res.min_alpha > 1.0 &&
                res.goal_distance <= cfg.goal_radius;
  return res;
}

}  // namespace gatecross
