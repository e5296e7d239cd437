#pragma once

#include <array>
#include <vector>

#include "gatecross/collision.hpp"
#include "gatecross/ocp.hpp"
#include "gatecross/types.hpp"

namespace gatecross {

struct LossWeights {
  double beta_gate = 100.0;
  double beta_goal = 2.0;
  double beta_control_diff = 0.001;
  int h = 3;                         // terminal nodes penalized by the goal loss
  double proximity_threshold = 0.5;  // gate-check trigger distance [m]
  CollisionOptions collision;        // options for the per-bar subproblems
};

/// Gradient of a scalar with respect to the trajectory xi = {x_0:N, u_0:N-1}.
struct TrajectoryGradient {
  std::vector<Vec10> d_xs;
  std::vector<Vec4> d_us;

  static TrajectoryGradient zeros(int N) {
    TrajectoryGradient g;
    g.d_xs.assign(N + 1, Vec10::Zero());
    g.d_us.assign(N, Vec4::Zero());
    return g;
  }
};

/// Minimum scalings of one checked node against the four bars
/// (top, bottom, left, right).
struct NodeAlphas {
  int node = 0;
  std::array<double, 4> alpha{};
};

struct LossReport {
  double total = 0.0;
  double l_gate = 0.0;
  double l_goal = 0.0;
  double l_control_diff = 0.0;
  std::vector<NodeAlphas> alpha_values;
  TrajectoryGradient grad_xi;
  Vec4 grad_u_prev = Vec4::Zero();
  int solver_failures = 0;  // nodes skipped due to collision-solver failure
};

/// Gate traversal loss: beta_gate * sum over checked nodes and bars of
/// (alpha* - 1)^2, where a node is checked when its predicted position lies
/// within proximity_threshold of the gate center. The pose-(p,q) gradients
/// come from the envelope theorem and are accumulated into grad. Nodes where
/// any bar subproblem fails to converge are skipped and counted.
double gate_loss(const OcpSolution& sol, const GateGeometry& gate,
                 const EllipsoidShape& inflated_ell, const LossWeights& w,
                 TrajectoryGradient& grad,
                 std::vector<NodeAlphas>* alphas = nullptr,
                 int* failures = nullptr);

/// Goal-reaching loss over the last h predicted nodes; exact gradient.
double goal_loss(const OcpSolution& sol, const Vec3& p_goal,
                 const LossWeights& w, TrajectoryGradient& grad);

/// Control smoothness loss beta_cd * |u_now - u_prev|^2; returns the
/// gradient with respect to u_now (the first control of xi).
double control_diff_loss(const Vec4& u_now, const Vec4& u_prev,
                         const LossWeights& w, Vec4& d_u_now);

/// Assembles the three losses and stitches the gradients into one dL/dxi.
LossReport total_loss(const OcpSolution& sol, const GateGeometry& gate,
                      const EllipsoidShape& inflated_ell, const Vec3& p_goal,
                      const Vec4& u_prev, const LossWeights& w);

}  // namespace gatecross
