#include "gatecross/attitude.hpp"

#include <stdexcept>

#include <Eigen/SVD>

#include "gatecross/quad_dynamics.hpp"

namespace gatecross {

Mat3 svd_plus(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()(1) < 1e-9) {
    throw std::runtime_error("svd_plus: degenerate projection, sigma_2 < 1e-9");
  }
  const Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  Vec3 s(1.0, 1.0, (U * V.transpose()).determinant());
  return U * s.asDiagonal() * V.transpose();
}

double frob_att_cost(const Vec4& q, const Mat3& M) {
  return (rot_from_quat_hom(q) - M).squaredNorm();
}

Vec4 frob_att_cost_grad(const Vec4& q, const Mat3& M) {
  const Mat3 E = rot_from_quat_hom(q) - M;
  const auto dR = drot_from_quat(q);
  Vec4 g;
  for (int a = 0; a < 4; ++a) g(a) = 2.0 * dR[a].cwiseProduct(E).sum();
  return g;
}

Mat4 frob_att_cost_hess(const Vec4& q, const Mat3& M) {
  const Mat3 E = rot_from_quat_hom(q) - M;
  const auto dR = drot_from_quat(q);
  Mat4 H;
  for (int b = 0; b < 4; ++b) {
    // dR is linear in q, so evaluating it at a basis vector gives the
    // constant second derivatives d2R/dq_a dq_b.
    const auto d2 = drot_from_quat(Vec4::Unit(b));
    for (int a = 0; a < 4; ++a) {
      H(a, b) = 2.0 * (dR[a].cwiseProduct(dR[b]).sum() + E.cwiseProduct(d2[a]).sum());
    }
  }
  return H;
}

}  // namespace gatecross
