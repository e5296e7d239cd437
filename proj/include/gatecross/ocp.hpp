#pragma once

#include <optional>
#include <vector>

#include "gatecross/types.hpp"

namespace gatecross {

/// High-level decision vector z produced by the policy. Flat layout:
///   [0..2]   p_ref          reference position [m]
///   [3..11]  M_ref          unconstrained attitude reference, row-major
///   [12..14] q_p_ref_diag   reference position tracking weights
///   [15..17] q_p_goal_diag  goal position weights
///   [18]     q_R_ref        attitude tracking weight
///   [19]     gamma          temporal sharpness of the attitude bell
struct DecisionVector {
  static constexpr int kPRef = 0;
  static constexpr int kMRef = 3;
  static constexpr int kQpRef = 12;
  static constexpr int kQpGoal = 15;
  static constexpr int kQRRef = 18;
  static constexpr int kGamma = 19;

  Vec20 z = Vec20::Zero();

  Vec3 p_ref() const { return z.segment<3>(kPRef); }
  Mat3 M_ref() const {
    Mat3 M;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) M(i, j) = z(kMRef + 3 * i + j);
    return M;
  }
  Vec3 q_p_ref_diag() const { return z.segment<3>(kQpRef); }
  Vec3 q_p_goal_diag() const { return z.segment<3>(kQpGoal); }
  double q_R_ref() const { return z(kQRRef); }
  double gamma() const { return z(kGamma); }

  void set_p_ref(const Vec3& p) { z.segment<3>(kPRef) = p; }
  void set_M_ref(const Mat3& M) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) z(kMRef + 3 * i + j) = M(i, j);
  }
};

/// Full goal state: position p_goal, zero velocity, identity attitude.
struct GoalSpec {
  QuadState x_goal;

  static GoalSpec from_position(const Vec3& p_goal) {
    GoalSpec g;
    g.x_goal.p = p_goal;
    return g;
  }
};

struct OcpConfig {
  int N = 20;            // horizon steps
  double dt = 0.1;       // prediction step [s]
  double t_ref = 1.0;    // reference traversal time [s]

  Vec3 q_v_goal = Vec3::Ones();   // fixed goal-velocity weights
  Vec4 q_q_goal = Vec4::Ones();   // fixed goal-attitude weights
  Vec4 q_u = Vec4::Constant(0.1); // control regulation weights

  double z_min = 0.5;    // altitude bounds [m]
  double z_max = 2.0;
  double barrier_mu = 1e-3;

  double tol_stationarity = 1e-7;
  int max_iters = 300;
  double reg_init = 1e-6;
  double reg_max = 1e8;

  DynamicsParams dyn;
};

/// Predicted state/control trajectory plus solver diagnostics.
struct OcpSolution {
  std::vector<QuadState> xs;  // N + 1
  std::vector<Vec4> us;       // N
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;          // stage + terminal costs, no barrier
  double barrier_objective = 0.0;  // value actually minimized
  double final_reg = 0.0;          // Levenberg shift at the last iterate
};

/// Gate factors of the time-varying weights. gate_goal is defined as
/// 1 - gate_ref, so the pair sums to one exactly.
double gate_ref(double t_k, double t_ref);
double gate_goal(double t_k, double t_ref);

struct TimeVaryingWeights {
  Vec3 q_p_ref_vary;
  Vec3 q_p_goal_vary;
  double q_R_vary;
};

TimeVaryingWeights time_varying_weights(const DecisionVector& z, int k,
                                        const OcpConfig& cfg);

/// Stage cost: position tracking + attitude tracking + goal reaching +
/// control regulation about hover. Barrier terms are not included.
double stage_cost(const QuadState& x, const Vec4& u, const DecisionVector& z,
                  int k, const GoalSpec& goal, const OcpConfig& cfg);

/// Terminal cost: the goal-reaching term evaluated at k = N.
double terminal_cost(const QuadState& x_N, const DecisionVector& z,
                     const GoalSpec& goal, const OcpConfig& cfg);

/// Logarithmic barrier on the altitude band (value includes barrier_mu).
double state_barrier(const QuadState& x, const OcpConfig& cfg);
/// Logarithmic barrier on thrust and body-rate bounds.
double control_barrier(const Vec4& u, const OcpConfig& cfg);

/// Quadratic expansion of the barrier-augmented stage cost about (x, u).
/// include_state_barrier is false for k = 0 (fixed initial state).
void stage_expansion(const QuadState& x, const Vec4& u,
                     const DecisionVector& z, int k, const GoalSpec& goal,
                     const OcpConfig& cfg, bool include_state_barrier,
                     Vec10& lx, Vec4& lu, Mat10& lxx, Mat4& luu);
void terminal_expansion(const QuadState& x_N, const DecisionVector& z,
                        const GoalSpec& goal, const OcpConfig& cfg, Vec10& lx,
                        Mat10& lxx);

/// Cross derivatives d2c/dx dz of the stage and terminal costs; the
/// control block d2c/du dz is identically zero for this problem.
Mat10x20 stage_cost_xz(const QuadState& x, const DecisionVector& z, int k,
                       const GoalSpec& goal, const OcpConfig& cfg);
Mat10x20 terminal_cost_xz(const QuadState& x_N, const DecisionVector& z,
                          const GoalSpec& goal, const OcpConfig& cfg);

/// Barrier-augmented objective of a rollout-consistent trajectory.
double ocp_objective(const std::vector<QuadState>& xs,
                     const std::vector<Vec4>& us, const DecisionVector& z,
                     const GoalSpec& goal, const OcpConfig& cfg,
                     double* raw_cost = nullptr);

/// Solves the finite-horizon OCP by sequential LQR with backtracking line
/// search and Levenberg regularization on the barrier-augmented objective.
/// An infeasible warm start is rejected and a hover cold start used.
OcpSolution solve_ocp(const QuadState& x_init, const DecisionVector& z,
                      const GoalSpec& goal, const OcpConfig& cfg,
                      const OcpSolution* warm_start = nullptr);

}  // namespace gatecross
