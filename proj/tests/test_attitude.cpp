#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "gatecross/attitude.hpp"
#include "gatecross/quad_dynamics.hpp"
#include "oracles.hpp"

using namespace gatecross;
namespace oracle = gatecross::testing;

namespace {

Mat3 random_matrix(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat3 M;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) M(i, j) = n(rng);
  return M;
}

}  // namespace

TEST_CASE("svd_plus leaves the identity unchanged") {
  CHECK((svd_plus(Mat3::Identity()) - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("svd_plus is invariant to uniform positive scaling of a rotation") {
  std::mt19937_64 rng(101);
  for (int i = 0; i < 20; ++i) {
    const Mat3 R = oracle::random_rotation(rng);
    CHECK((svd_plus(2.0 * R) - R).norm() < 1e-9);
  }
}

TEST_CASE("svd_plus attains the Procrustes optimum found by manifold descent") {
  std::mt19937_64 rng(111);
  for (int i = 0; i < 20; ++i) {
    const Mat3 M = random_matrix(rng);
    if (M.jacobiSvd().singularValues()(1) < 1e-3) continue;  // well-conditioned only
    const Mat3 R = svd_plus(M);
    const auto oracle_best = oracle::procrustes_descent(M, rng);
    const double f_proj = (R - M).norm();
    CHECK(f_proj <= oracle_best.cost + 1e-6);
    CHECK(std::abs(f_proj - oracle_best.cost) < 1e-6);
  }
}

TEST_CASE("svd_plus is idempotent") {
  std::mt19937_64 rng(121);
  for (int i = 0; i < 20; ++i) {
    const Mat3 M = random_matrix(rng);
    const Mat3 R = svd_plus(M);
    CHECK((svd_plus(R) - R).norm() < 1e-9);
  }
}

TEST_CASE("every rotation is a fixed point of svd_plus") {
  std::mt19937_64 rng(131);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = oracle::random_rotation(rng);
    CHECK((svd_plus(R) - R).norm() < 1e-9);
  }
}

TEST_CASE("svd_plus flips the sign for an improper input") {
  // A reflection has det = -1; the projection must still return det = +1.
  Mat3 F = Mat3::Identity();
  F(2, 2) = -1.0;
  const Mat3 R = svd_plus(F);
  CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-9);
}

TEST_CASE("svd_plus rejects a rank-deficient matrix") {
  const Vec3 u(1.0, 2.0, -0.5), v(0.3, -1.0, 0.8);
  const Mat3 M = u * v.transpose();  // rank one: sigma_2 = 0
  CHECK_THROWS_AS(svd_plus(M), std::runtime_error);
}

TEST_CASE("frobenius attitude cost at matching and zero references") {
  const Vec4 q_id(1.0, 0.0, 0.0, 0.0);
  CHECK(frob_att_cost(q_id, Mat3::Identity()) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(frob_att_cost(q_id, Mat3::Zero()) == doctest::Approx(3.0));
}

TEST_CASE("grid argmin of the attitude cost coincides with svd_plus") {
  std::mt19937_64 rng(141);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat3 M = random_matrix(rng);
    if (M.jacobiSvd().singularValues()(1) < 1e-3) continue;
    const Mat3 R_star = svd_plus(M);
    // Dense random sampling of SO(3): no sampled rotation beats the
    // projected one, and the best sample lands near it.
    double best = std::numeric_limits<double>::infinity();
    Vec4 best_q = Vec4(1, 0, 0, 0);
    const double c_proj = (R_star - M).squaredNorm();
    for (int i = 0; i < 20000; ++i) {
      const Vec4 q = oracle::random_unit_quat(rng);
      const double c = frob_att_cost(q, M);
      if (c < best) {
        best = c;
        best_q = q;
      }
    }
    CHECK(c_proj <= best + 1e-12);
    const Mat3 R_best = quat_to_rot(best_q);
    // 20000 samples resolve SO(3) to roughly 0.2 rad; the geodesic distance
    // between the grid argmin and the projection must be within that.
    const double cos_angle =
        ((R_star.transpose() * R_best).trace() - 1.0) / 2.0;
    CHECK(std::acos(std::clamp(cos_angle, -1.0, 1.0)) < 0.35);
  }
}

TEST_CASE("attitude cost gradient and Hessian match finite differences") {
  std::mt19937_64 rng(151);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 M = random_matrix(rng);
    const Vec4 q = oracle::random_unit_quat(rng);
    const Vec4 g = frob_att_cost_grad(q, M);
    const Mat4 H = frob_att_cost_hess(q, M);

    const auto cost = [&](const Eigen::VectorXd& qi) {
      return frob_att_cost(Vec4(qi), M);
    };
    const Eigen::VectorXd g_fd = oracle::fd_gradient(cost, q, 1e-6);
    CHECK(oracle::max_rel_err_mat(g, g_fd) < 1e-6);

    const auto grad = [&](const Eigen::VectorXd& qi) -> Eigen::VectorXd {
      return frob_att_cost_grad(Vec4(qi), M);
    };
    const Eigen::MatrixXd H_fd = oracle::fd_jacobian(grad, q, 1e-6);
    CHECK(oracle::max_rel_err_mat(H, H_fd) < 1e-6);
  }
}
