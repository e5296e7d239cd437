#include "gatecross/hl_loss.hpp"

#include <stdexcept>

namespace gatecross {

double gate_loss(const OcpSolution& sol, const GateGeometry& gate,
                 const EllipsoidShape& inflated_ell, const LossWeights& w,
                 TrajectoryGradient& grad, std::vector<NodeAlphas>* alphas,
                 int* failures) {
  double loss = 0.0;
  const int n_nodes = static_cast<int>(sol.xs.size());
  for (int k = 0; k < n_nodes; ++k) {
    if ((sol.xs[k].p - gate.center).norm() > w.proximity_threshold) continue;

    Pose pose;
    pose.p = sol.xs[k].p;
    pose.q = sol.xs[k].q;

    std::array<CollisionSolution, 4> subs;
    bool all_ok = true;
    for (int n = 0; n < 4; ++n) {
      subs[n] = min_scaling(pose, inflated_ell, gate.bars[n], w.collision);
      if (!subs[n].converged) {
        all_ok = false;
        break;
      }
    }
    if (!all_ok) {
      if (failures) ++(*failures);
      continue;
    }

    NodeAlphas na;
    na.node = k;
    for (int n = 0; n < 4; ++n) {
      const double a = subs[n].alpha_star;
      na.alpha[n] = a;
      loss += w.beta_gate * (a - 1.0) * (a - 1.0);
      const EnvelopeGrad eg =
          envelope_grad(subs[n], pose, inflated_ell, gate.bars[n]);
      const double s = 2.0 * w.beta_gate * (a - 1.0);
      grad.d_xs[k].segment<3>(0) += s * eg.d_position;
      grad.d_xs[k].segment<4>(6) += s * eg.d_quaternion;
    }
    if (alphas) alphas->push_back(na);
  }
  return loss;
}

double goal_loss(const OcpSolution& sol, const Vec3& p_goal,
                 const LossWeights& w, TrajectoryGradient& grad) {
  const int N = static_cast<int>(sol.us.size());
  if (w.h < 1 || w.h > N)
    throw std::invalid_argument("goal_loss: h must lie in [1, N]");
  double loss = 0.0;
  for (int j = N - w.h + 1; j <= N; ++j) {
    const Vec3 dp = sol.xs[j].p - p_goal;
    loss += w.beta_goal * dp.squaredNorm();
    grad.d_xs[j].segment<3>(0) += 2.0 * w.beta_goal * dp;
  }
  return loss;
}

double control_diff_loss(const Vec4& u_now, const Vec4& u_prev,
                         const LossWeights& w, Vec4& d_u_now) {
  const Vec4 du = u_now - u_prev;
  d_u_now = 2.0 * w.beta_control_diff * du;
  return w.beta_control_diff * du.squaredNorm();
}

LossReport total_loss(const OcpSolution& sol, const GateGeometry& gate,
                      const EllipsoidShape& inflated_ell, const Vec3& p_goal,
                      const Vec4& u_prev, const LossWeights& w) {
  const int N = static_cast<int>(sol.us.size());
  LossReport rep;
  rep.grad_xi = TrajectoryGradient::zeros(N);
  rep.l_gate = gate_loss(sol, gate, inflated_ell, w, rep.grad_xi,
                         &rep.alpha_values, &rep.solver_failures);
  rep.l_goal = goal_loss(sol, p_goal, w, rep.grad_xi);
  Vec4 d_u0;
  rep.l_control_diff = control_diff_loss(sol.us[0], u_prev, w, d_u0);
  rep.grad_xi.d_us[0] += d_u0;
  rep.grad_u_prev = -d_u0;
  rep.total = rep.l_gate + rep.l_goal + rep.l_control_diff;
  return rep;
}

}  // namespace gatecross
