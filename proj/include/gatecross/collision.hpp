#pragma once

#include <array>

#include "gatecross/types.hpp"

namespace gatecross {

/// Rigid pose: world position plus scalar-first unit quaternion.
struct Pose {
  Vec3 p = Vec3::Zero();
  Vec4 q = Vec4(1.0, 0.0, 0.0, 0.0);
};

/// Axis-aligned ellipsoid in its own frame, given by semi-axes [m].
struct EllipsoidShape {
  Pose pose;
  Vec3 semi_axes = Vec3::Ones();
};

/// Box in its own frame, given by half extents [m] (6 halfspaces).
struct BarPolytope {
  Pose pose;
  Vec3 half_extents = Vec3::Ones();
};

/// A rectangular gate in the y = const plane: four bars framing an
/// inner_width x inner_height opening, rolled by `tilt` about the world
/// y axis through `center`. Bars are ordered top, bottom, left, right;
/// corners are the inner-opening corners ordered top-left, top-right,
/// bottom-left, bottom-right in the gate frame.
struct GateGeometry {
  Vec3 center = Vec3::Zero();
  double tilt = 0.0;
  double inner_width = 0.6;
  double inner_height = 0.25;
  double bar_thickness = 0.05;
  double bar_depth = 0.05;
  std::array<BarPolytope, 4> bars;
  std::array<Vec3, 4> corners;
};

GateGeometry build_gate(const Vec3& center, double tilt, double inner_width,
                        double inner_height, double bar_thickness,
                        double bar_depth);

/// Solution of the minimum-scaling problem between an ellipsoid and a box,
/// each scaled uniformly about its own center. Constraint order for the
/// multipliers: [ellipsoid cone, 6 box faces (+x,+y,+z,-x,-y,-z in the
/// box frame), alpha >= 0].
struct CollisionSolution {
  double alpha_star = 0.0;
  Vec3 x_star = Vec3::Zero();
  Eigen::Matrix<double, 8, 1> lambda_star = Eigen::Matrix<double, 8, 1>::Zero();
  bool converged = false;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double comp_slack = 0.0;
};

struct CollisionOptions {
  int max_iters = 60;
  double tol = 1e-10;  // primal/dual/complementarity residual target
};

/// Minimum uniform scaling alpha at which the quadrotor ellipsoid (placed
/// at quad_pose) and the bar share a point. Solved as a small primal-dual
/// interior-point program over (x, alpha). On non-convergence the best
/// iterate is returned with converged = false.
CollisionSolution min_scaling(const Pose& quad_pose, const EllipsoidShape& ell,
                              const BarPolytope& bar,
                              const CollisionOptions& opts = {});

/// Collision predicate of the minimum scaling: shrink-to-contact means hit.
inline bool collision_flag(double alpha_star) { return alpha_star <= 1.0; }

/// d(alpha*)/d(quad position, quad quaternion), from the envelope theorem:
/// the total derivative of the optimal value equals the partial derivative
/// of the Lagrangian at the optimizer, and only the ellipsoid constraint
/// depends on the quadrotor pose.
struct EnvelopeGrad {
  Vec3 d_position = Vec3::Zero();
  Vec4 d_quaternion = Vec4::Zero();
  bool weakly_active = false;  // active constraint with near-zero dual
};

/// Requires a converged solution; throws std::runtime_error otherwise.
EnvelopeGrad envelope_grad(const CollisionSolution& sol, const Pose& quad_pose,
                           const EllipsoidShape& ell, const BarPolytope& bar);

}  // namespace gatecross
