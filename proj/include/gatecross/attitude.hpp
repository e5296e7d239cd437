#pragma once

#include "gatecross/types.hpp"

namespace gatecross {

/// Unconstrained 3x3 attitude reference, as produced by the policy head.
struct AttitudeRef {
  Mat3 M = Mat3::Identity();
};

/// Projects M onto SO(3): U diag(1, 1, det(UV^T)) V^T. This is the
/// orthogonal Procrustes solution, i.e. the rotation closest to M in
/// Frobenius norm. Throws std::runtime_error if the projection is
/// degenerate (second singular value below 1e-9).
Mat3 svd_plus(const Mat3& M);

/// Squared Frobenius attitude error |R(q) - M|_F^2 for a unit quaternion.
double frob_att_cost(const Vec4& q, const Mat3& M);

/// Gradient of frob_att_cost with respect to the quaternion, using the
/// homogeneous rotation extension.
Vec4 frob_att_cost_grad(const Vec4& q, const Mat3& M);

/// Hessian of frob_att_cost with respect to the quaternion.
Mat4 frob_att_cost_hess(const Vec4& q, const Mat3& M);

}  // namespace gatecross
