#pragma once

#include <vector>

#include "gatecross/ocp.hpp"
#include "gatecross/types.hpp"

namespace gatecross {

/// Sensitivities of an optimal trajectory with respect to the decision
/// vector: dx_dz[k] = dx_k/dz (10x20, k = 0..N, dx_dz[0] = 0) and
/// du_dz[k] = du_k/dz (4x20, k = 0..N-1).
struct TrajectorySensitivity {
  std::vector<Mat10x20> dx_dz;
  std::vector<Mat4x20> du_dz;
};

struct OcpDiffOptions {
  /// Drop the second-order dynamics curvature (costate-weighted dynamics
  /// Hessians) from the Hamiltonian expansion.
  bool gauss_newton = false;
  /// Step for the forward-difference of the analytic dynamics Jacobians
  /// used to form the curvature terms.
  double fd_eps = 1e-7;
};

/// Differentiates the solved OCP with respect to z by solving the
/// matrix-valued LQR that arises from perturbing the Pontryagin
/// stationarity system: a backward Riccati recursion for (P_k, W_k)
/// followed by a forward rollout of the sensitivity dynamics.
///
/// Requires sol.converged; throws std::invalid_argument otherwise.
/// Throws std::runtime_error if the control Hessian of the Hamiltonian
/// loses positive definiteness under the forward solver's final
/// Levenberg shift.
TrajectorySensitivity differentiate_ocp(const OcpSolution& sol,
                                        const DecisionVector& z,
                                        const GoalSpec& goal,
                                        const OcpConfig& cfg,
                                        const OcpDiffOptions& opts = {});

}  // namespace gatecross
