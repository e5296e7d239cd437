#include "gatecross/quad_dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace gatecross {

std::array<Mat3, 4> drot_from_quat(const Vec4& q) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  std::array<Mat3, 4> d;
  d[0] << w, -z, y, z, w, -x, -y, x, w;
  d[1] << x, y, z, y, -x, -w, z, w, -x;
  d[2] << -y, x, w, x, y, z, -w, z, -y;
  d[3] << -z, -w, x, w, -z, y, x, y, z;
  for (auto& m : d) m *= 2.0;
  return d;
}

Mat3 quat_to_rot(const Vec4& q) {
  const double n = q.norm();
  if (std::abs(n - 1.0) > 1e-6) {
    throw std::invalid_argument("quat_to_rot: quaternion norm " +
                                std::to_string(n) + " is not unit");
  }
  return rot_from_quat_hom(q / n);
}

Mat4 omega_matrix(const Vec3& omega) {
  const double wx = omega(0), wy = omega(1), wz = omega(2);
  Mat4 O;
  O << 0.0, -wx, -wy, -wz,
      wx, 0.0, wz, -wy,
      wy, -wz, 0.0, wx,
      wz, wy, -wx, 0.0;
  return O;
}

Eigen::Matrix<double, 4, 3> quat_rate_wrt_omega(const Vec4& q) {
  Eigen::Matrix<double, 4, 3> G;
  G << -q(1), -q(2), -q(3),
      q(0), -q(3), q(2),
      q(3), q(0), -q(1),
      -q(2), q(1), q(0);
  return G;
}

Vec10 continuous_deriv(const QuadState& x, const ControlInput& u,
                       const DynamicsParams& params) {
  const Mat3 R = rot_from_quat_hom(x.q);
  Vec10 dx;
  dx.segment<3>(0) = x.v;
  dx.segment<3>(3) = (u.f_r / params.m) * R.col(2);
  dx(5) -= params.g;
  dx.segment<4>(6) = 0.5 * omega_matrix(u.omega) * x.q;
  return dx;
}

void continuous_jacobians(const QuadState& x, const ControlInput& u,
                          const DynamicsParams& params, Mat10& A, Mat10x4& B) {
  A.setZero();
  B.setZero();
  A.block<3, 3>(0, 3).setIdentity();

  const auto dR = drot_from_quat(x.q);
  for (int a = 0; a < 4; ++a) {
    A.block<3, 1>(3, 6 + a) = (u.f_r / params.m) * dR[a].col(2);
  }
  A.block<4, 4>(6, 6) = 0.5 * omega_matrix(u.omega);

  B.block<3, 1>(3, 0) = rot_from_quat_hom(x.q).col(2) / params.m;
  B.block<4, 3>(6, 1) = 0.5 * quat_rate_wrt_omega(x.q);
}

QuadState rk4_step(const QuadState& x, const ControlInput& u,
                   const DynamicsParams& params) {
  const double dt = params.dt;
  const Vec10 x0 = x.to_vector();
  const Vec10 k1 = continuous_deriv(x, u, params);
  const Vec10 k2 = continuous_deriv(QuadState::from_vector(x0 + 0.5 * dt * k1), u, params);
  const Vec10 k3 = continuous_deriv(QuadState::from_vector(x0 + 0.5 * dt * k2), u, params);
  const Vec10 k4 = continuous_deriv(QuadState::from_vector(x0 + dt * k3), u, params);
  Vec10 xn = x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  QuadState out = QuadState::from_vector(xn);
  out.q.normalize();
  return out;
}

void dynamics_jacobians(const QuadState& x, const ControlInput& u,
                        const DynamicsParams& params, Mat10& A, Mat10x4& B) {
  const double dt = params.dt;
  const Vec10 x0 = x.to_vector();

  Mat10 A1, A2, A3, A4;
  Mat10x4 B1, B2, B3, B4;
  const Vec10 k1 = continuous_deriv(x, u, params);
  continuous_jacobians(x, u, params, A1, B1);

  const QuadState x2 = QuadState::from_vector(x0 + 0.5 * dt * k1);
  const Vec10 k2 = continuous_deriv(x2, u, params);
  continuous_jacobians(x2, u, params, A2, B2);

  const QuadState x3 = QuadState::from_vector(x0 + 0.5 * dt * k2);
  const Vec10 k3 = continuous_deriv(x3, u, params);
  continuous_jacobians(x3, u, params, A3, B3);

  const QuadState x4 = QuadState::from_vector(x0 + dt * k3);
  const Vec10 k4 = continuous_deriv(x4, u, params);
  continuous_jacobians(x4, u, params, A4, B4);

  // Chain rule through the stages.
  const Mat10 I = Mat10::Identity();
  const Mat10 dk1 = A1;
  const Mat10 dk2 = A2 * (I + 0.5 * dt * dk1);
  const Mat10 dk3 = A3 * (I + 0.5 * dt * dk2);
  const Mat10 dk4 = A4 * (I + dt * dk3);
  Mat10 Ad = I + (dt / 6.0) * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4);

  const Mat10x4 dk1u = B1;
  const Mat10x4 dk2u = B2 + 0.5 * dt * A2 * dk1u;
  const Mat10x4 dk3u = B3 + 0.5 * dt * A3 * dk2u;
  const Mat10x4 dk4u = B4 + dt * A4 * dk3u;
  Mat10x4 Bd = (dt / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u);

  // Renormalization of the quaternion block: qn = q / |q|,
  // dqn/dq = (I - qn qn^T) / |q|.
  const Vec10 xn = x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  const Vec4 qraw = xn.segment<4>(6);
  const double qn_norm = qraw.norm();
  const Vec4 qn = qraw / qn_norm;
  const Mat4 P = (Mat4::Identity() - qn * qn.transpose()) / qn_norm;
  Ad.block<4, 10>(6, 0) = P * Ad.block<4, 10>(6, 0);
  Bd.block<4, 4>(6, 0) = P * Bd.block<4, 4>(6, 0);

  A = Ad;
  B = Bd;
}

}  // namespace gatecross
