#pragma once

#include <array>

#include "gatecross/types.hpp"

namespace gatecross {

/// Rotation matrix from a scalar-first quaternion, homogeneous form
/// R(q) = (q0^2 - |qv|^2) I + 2 qv qv^T + 2 q0 [qv]_x.
/// Quadratic in q; equals the rotation of q/|q| scaled by |q|^2, so it is
/// the smooth extension used by all derivative code. No unit check.
inline Mat3 rot_from_quat_hom(const Vec4& q) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Mat3 R;
  R << w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z;
  return R;
}

/// Entry-wise derivatives dR/dq_a of the homogeneous rotation matrix,
/// a = 0..3. Each returned matrix is linear in q, so evaluating at a
/// canonical basis vector also yields the (constant) second derivatives.
std::array<Mat3, 4> drot_from_quat(const Vec4& q);

/// Validated rotation from a unit quaternion (|q| = 1 within 1e-6).
/// Throws std::invalid_argument otherwise.
Mat3 quat_to_rot(const Vec4& q);

/// Quaternion rate matrix Omega(w) with qdot = 0.5 * Omega(w) * q.
Mat4 omega_matrix(const Vec3& omega);

/// d(Omega(w) q)/dw, a 4x3 matrix linear in q.
Eigen::Matrix<double, 4, 3> quat_rate_wrt_omega(const Vec4& q);

/// Continuous-time derivative [v, R(q) f e_z / m - g e_z, 0.5 Omega(w) q].
Vec10 continuous_deriv(const QuadState& x, const ControlInput& u,
                       const DynamicsParams& params);

/// Jacobians of continuous_deriv with respect to state and control.
void continuous_jacobians(const QuadState& x, const ControlInput& u,
                          const DynamicsParams& params, Mat10& A, Mat10x4& B);

/// One classical RK4 step with zero-order-hold control; the quaternion is
/// renormalized after the step.
QuadState rk4_step(const QuadState& x, const ControlInput& u,
                   const DynamicsParams& params);

/// Jacobians of the discrete (renormalized) RK4 map, chained analytically
/// through the four stages.
void dynamics_jacobians(const QuadState& x, const ControlInput& u,
                        const DynamicsParams& params, Mat10& A, Mat10x4& B);

}  // namespace gatecross
