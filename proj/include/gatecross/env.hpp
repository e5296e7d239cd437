#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "gatecross/collision.hpp"
#include "gatecross/hl_loss.hpp"
#include "gatecross/types.hpp"

namespace gatecross {

struct EnvConfig {
  Vec3 gate_center = Vec3(0.0, 0.0, 1.9);
  double tilt_min = -2.0 * M_PI / 5.0;
  double tilt_max = 2.0 * M_PI / 5.0;
  double inner_width = 0.6;
  double inner_height = 0.25;
  double bar_thickness = 0.05;
  double bar_depth = 0.05;
  Vec3 x_init_nominal = Vec3(0.0, 1.8, 1.2);
  Vec3 p_goal_nominal = Vec3(0.0, -1.8, 1.5);
  double pos_jitter = 0.1;  // uniform per-axis deviation [m]
  Vec3 quad_semi_axes = Vec3(0.3, 0.3, 0.1);
  double inflation_z = 2.5;  // loss-side scaling of the smallest semi-axis
  double goal_radius = 0.3;
  double proximity_threshold = 0.5;  // clearance-check window for judging
  double traversal_speed = 1.8;      // desired approach speed [m/s]
  CollisionOptions collision;
};

struct Scenario {
  QuadState x_init;
  Vec3 p_goal = Vec3::Zero();
  GateGeometry gate;
  std::uint64_t seed = 0;
};

struct EpisodeResult {
  std::vector<QuadState> states;   // H + 1 (shorter if aborted)
  std::vector<Vec4> controls;      // one per executed step
  std::vector<Vec20> zs;           // decision vector per executed step
  std::vector<LossReport> loss_trace;
  bool success = false;
  bool crossed = false;            // crossed the gate plane inside the opening
  double min_alpha = std::numeric_limits<double>::infinity();
  double goal_distance = std::numeric_limits<double>::infinity();
  int mpc_failures = 0;
  bool aborted = false;
};

/// Draws a scenario from the given seed: fixed gate center, uniform tilt,
/// initial position and goal jittered per axis, start at rest with
/// identity attitude.
Scenario sample_scenario(std::uint64_t seed, const EnvConfig& cfg);
Scenario sample_scenario(std::mt19937_64& rng, const EnvConfig& cfg);

/// System transition of the training loop: the nominal discrete dynamics.
QuadState step_env(const QuadState& x, const ControlInput& u,
                   const DynamicsParams& params);

/// Reference traversal time for the next MPC solve, estimated from the
/// remaining distance to the gate plane and the approach speed: the actual
/// closing speed toward the plane, floored by the desired speed v_des so
/// the estimate is well defined at rest. Keeping the divisor equal to the
/// realized speed makes the estimate recede by about one control period
/// per closed-loop step, so a shifted warm start stays aligned with the
/// weight schedule. The tilt axis coincides with the gate-plane normal
/// (world y), so the signed plane distance is the y offset; once the
/// quadrotor has crossed, the estimate stays at zero and the goal phase
/// owns the whole horizon.
double traversal_time_estimate(const QuadState& x, const GateGeometry& gate,
                               double v_des, double t_max);

/// First time at which a predicted state sequence crosses the gate plane
/// from the +y side, linearly interpolated between samples spaced dt apart;
/// +infinity when the sequence never crosses.
double plan_crossing_time(const std::vector<QuadState>& xs, double plane_y,
                          double dt);

/// Traversal time for the next solve of a receding closed loop: the
/// previous plan's predicted crossing time advanced by one control period
/// when that plan crosses the gate plane, otherwise the distance/speed
/// estimate at the new state (also the seed when no plan exists yet).
/// Anchoring the schedule to the plan keeps it consistent with the shifted
/// warm start even while the approach speed is still changing rapidly, and
/// it cannot stall: the estimate recedes every step until the window has
/// passed, after which the goal phase owns the whole horizon.
double receding_traversal_time(const QuadState& x,
                               const std::vector<QuadState>& prev_plan,
                               const GateGeometry& gate, double v_des,
                               double dt, double t_max);

/// The quadrotor's collision ellipsoid and its loss-side inflated variant.
EllipsoidShape true_ellipsoid(const EnvConfig& cfg);
EllipsoidShape inflated_ellipsoid(const EnvConfig& cfg);

/// Judges an executed state sequence: success iff the path crosses the
/// gate plane inside the opening, the true ellipsoid clears every bar
/// (alpha* > 1) at every state within the proximity window, and the final
/// position lies within goal_radius of the goal. The returned result
/// carries only the judgment fields (states are not copied in).
EpisodeResult judge_episode(const std::vector<QuadState>& states,
                            const GateGeometry& gate, const Vec3& p_goal,
                            const EnvConfig& cfg);

}  // namespace gatecross
