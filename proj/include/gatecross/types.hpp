#pragma once

#include <Eigen/Dense>

namespace gatecross {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// State/control dimensions of the point-mass + attitude quadrotor model.
inline constexpr int kStateDim = 10;
inline constexpr int kControlDim = 4;
// High-level decision vector produced by the policy.
inline constexpr int kDecisionDim = 20;
// Policy observation: state (10) + body-frame goal (3) + corners (12).
inline constexpr int kObsDim = 25;

using Vec10 = Eigen::Matrix<double, kStateDim, 1>;
using Mat10 = Eigen::Matrix<double, kStateDim, kStateDim>;
using Mat10x4 = Eigen::Matrix<double, kStateDim, kControlDim>;
using Mat4x10 = Eigen::Matrix<double, kControlDim, kStateDim>;
using Mat10x20 = Eigen::Matrix<double, kStateDim, kDecisionDim>;
using Mat4x20 = Eigen::Matrix<double, kControlDim, kDecisionDim>;
using Vec20 = Eigen::Matrix<double, kDecisionDim, 1>;
using Vec25 = Eigen::Matrix<double, kObsDim, 1>;

/// World-frame position/velocity plus a scalar-first unit quaternion
/// q = [q0, qx, qy, qz] rotating body to world.
struct QuadState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec4 q = Vec4(1.0, 0.0, 0.0, 0.0);

  Vec10 to_vector() const {
    Vec10 x;
    x << p, v, q;
    return x;
  }
  static QuadState from_vector(const Vec10& x) {
    QuadState s;
    s.p = x.segment<3>(0);
    s.v = x.segment<3>(3);
    s.q = x.segment<4>(6);
    return s;
  }
};

/// Collective thrust [N] and body rates [rad/s].
struct ControlInput {
  double f_r = 0.0;
  Vec3 omega = Vec3::Zero();

  Vec4 to_vector() const { return Vec4(f_r, omega.x(), omega.y(), omega.z()); }
  static ControlInput from_vector(const Vec4& u) {
    return ControlInput{u(0), u.segment<3>(1)};
  }
};

struct DynamicsParams {
  double m = 0.26;        // kg
  double g = 9.81;        // m/s^2
  double f_max = 4.0 * 0.26 * 9.81;  // N
  double omega_max = 10.0;           // rad/s
  double dt = 0.1;        // s

  Vec4 u_hover() const { return Vec4(m * g, 0.0, 0.0, 0.0); }
};

}  // namespace gatecross
