#pragma once

#include "gatecross/quad_dynamics.hpp"
#include "gatecross/types.hpp"

namespace gatecross {

// Weighted dynamics curvature at one step, by forward-differencing the
// analytic Jacobian-transpose products g_x = A(x,u)' w and g_u = B(x,u)' w
// for a fixed weight vector w (a costate or value-function gradient).
// Phi_xx and Phi_uu are symmetrized.
inline void dynamics_curvature(const QuadState& x, const Vec4& u,
                               const Vec10& w, const DynamicsParams& dyn,
                               double eps, Mat10& Phi_xx, Mat4x10& Phi_ux,
                               Mat4& Phi_uu) {
  Mat10 A;
  Mat10x4 B;
  dynamics_jacobians(x, ControlInput::from_vector(u), dyn, A, B);
  const Vec10 gx0 = A.transpose() * w;
  const Vec4 gu0 = B.transpose() * w;

  const Vec10 xv = x.to_vector();
  for (int j = 0; j < kStateDim; ++j) {
    Vec10 xp = xv;
    xp(j) += eps;
    dynamics_jacobians(QuadState::from_vector(xp), ControlInput::from_vector(u),
                       dyn, A, B);
    Phi_xx.col(j) = (A.transpose() * w - gx0) / eps;
    Phi_ux.col(j) = (B.transpose() * w - gu0) / eps;
  }
  for (int j = 0; j < kControlDim; ++j) {
    Vec4 up = u;
    up(j) += eps;
    dynamics_jacobians(x, ControlInput::from_vector(up), dyn, A, B);
    Phi_uu.col(j) = (B.transpose() * w - gu0) / eps;
  }
  Phi_xx = 0.5 * (Phi_xx + Phi_xx.transpose()).eval();
  Phi_uu = 0.5 * (Phi_uu + Phi_uu.transpose()).eval();
}

}  // namespace gatecross
