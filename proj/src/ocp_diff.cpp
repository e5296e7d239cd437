#include "gatecross/ocp_diff.hpp"

#include <stdexcept>

#include <Eigen/Cholesky>

#include "dynamics_curvature.hpp"
#include "gatecross/quad_dynamics.hpp"

namespace gatecross {

TrajectorySensitivity differentiate_ocp(const OcpSolution& sol,
                                        const DecisionVector& z,
                                        const GoalSpec& goal,
                                        const OcpConfig& cfg,
                                        const OcpDiffOptions& opts) {
  if (!sol.converged)
    throw std::invalid_argument(
        "differentiate_ocp: solution not converged; sensitivities undefined");
  const int N = cfg.N;
  if (static_cast<int>(sol.us.size()) != N ||
      static_cast<int>(sol.xs.size()) != N + 1)
    throw std::invalid_argument("differentiate_ocp: trajectory/horizon mismatch");

  // Per-step dynamics Jacobians and costates lam[k] (lam[N] from the
  // terminal expansion, lam[k] = l_x + A' lam[k+1]).
  std::vector<Mat10> As(N);
  std::vector<Mat10x4> Bs(N);
  std::vector<Vec10> lam(N + 1);
  {
    Mat10 lxx;
    terminal_expansion(sol.xs[N], z, goal, cfg, lam[N], lxx);
    Vec10 lx;
    Vec4 lu;
    Mat4 luu;
    for (int k = N - 1; k >= 0; --k) {
      dynamics_jacobians(sol.xs[k], ControlInput::from_vector(sol.us[k]),
                         cfg.dyn, As[k], Bs[k]);
      stage_expansion(sol.xs[k], sol.us[k], z, k, goal, cfg, k > 0, lx, lu,
                      lxx, luu);
      lam[k] = lx + As[k].transpose() * lam[k + 1];
    }
  }

  // Backward Riccati recursion for the perturbed stationarity system with
  // value ansatz dlam_k = P_k dx_k + W_k dz. H_uz = 0: neither the control
  // cost nor the dynamics depend on z.
  std::vector<Mat4x10> K(N);
  std::vector<Mat4x20> Kw(N);
  Mat10 lxx_N;
  Vec10 lx_N;
  terminal_expansion(sol.xs[N], z, goal, cfg, lx_N, lxx_N);
  Mat10 P = lxx_N;
  Mat10x20 W = terminal_cost_xz(sol.xs[N], z, goal, cfg);

  const double rho = sol.final_reg;
  Vec10 lx;
  Vec4 lu;
  Mat10 lxx;
  Mat4 luu;
  Mat10 Phi_xx;
  Mat4x10 Phi_ux;
  Mat4 Phi_uu;
  for (int k = N - 1; k >= 0; --k) {
    stage_expansion(sol.xs[k], sol.us[k], z, k, goal, cfg, k > 0, lx, lu, lxx,
                    luu);
    Mat10 H_xx = lxx;
    Mat4 H_uu = luu;
    Mat4x10 H_ux = Mat4x10::Zero();
    if (!opts.gauss_newton) {
      dynamics_curvature(sol.xs[k], sol.us[k], lam[k + 1], cfg.dyn,
                         opts.fd_eps, Phi_xx, Phi_ux, Phi_uu);
      H_xx += Phi_xx;
      H_uu += Phi_uu;
      H_ux += Phi_ux;
    }
    const Mat10x20 H_xz = stage_cost_xz(sol.xs[k], z, k, goal, cfg);

    const Mat4 M = H_uu + Bs[k].transpose() * P * Bs[k] + rho * Mat4::Identity();
    const Eigen::LLT<Mat4> llt(0.5 * (M + M.transpose()).eval());
    if (llt.info() != Eigen::Success)
      throw std::runtime_error(
          "differentiate_ocp: control Hessian not positive definite "
          "(ill-conditioned sensitivity)");

    const Mat4x10 G = H_ux + Bs[k].transpose() * P * As[k];
    K[k] = llt.solve(G);
    Kw[k] = llt.solve(Mat4x20(Bs[k].transpose() * W));

    P = H_xx + As[k].transpose() * P * As[k] - G.transpose() * K[k];
    P = 0.5 * (P + P.transpose()).eval();
    W = H_xz + As[k].transpose() * W - G.transpose() * Kw[k];
  }

  TrajectorySensitivity sens;
  sens.dx_dz.assign(N + 1, Mat10x20::Zero());
  sens.du_dz.assign(N, Mat4x20::Zero());
  for (int k = 0; k < N; ++k) {
    sens.du_dz[k] = -K[k] * sens.dx_dz[k] - Kw[k];
    sens.dx_dz[k + 1] = As[k] * sens.dx_dz[k] + Bs[k] * sens.du_dz[k];
  }
  return sens;
}

}  // namespace gatecross
