#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "gatecross/quad_dynamics.hpp"
#include "oracles.hpp"

using namespace gatecross;
namespace oracle = gatecross::testing;

namespace {

QuadState random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-2.0, 2.0);
  std::uniform_real_distribution<double> vel(-3.0, 3.0);
  QuadState x;
  x.p = Vec3(pos(rng), pos(rng), pos(rng));
  x.v = Vec3(vel(rng), vel(rng), vel(rng));
  x.q = oracle::random_unit_quat(rng);
  return x;
}

ControlInput random_control(std::mt19937_64& rng, const DynamicsParams& par) {
  std::uniform_real_distribution<double> thrust(0.05 * par.f_max,
                                                0.95 * par.f_max);
  std::uniform_real_distribution<double> rate(-0.5 * par.omega_max,
                                              0.5 * par.omega_max);
  return ControlInput{thrust(rng), Vec3(rate(rng), rate(rng), rate(rng))};
}

}  // namespace

TEST_CASE("quat_to_rot maps the identity quaternion to the identity matrix") {
  const Mat3 R = quat_to_rot(Vec4(1.0, 0.0, 0.0, 0.0));
  CHECK((R - Mat3::Identity()).norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("quat_to_rot for a 90 degree rotation about y maps e_z to e_x") {
  const double c = std::cos(M_PI / 4.0), s = std::sin(M_PI / 4.0);
  const Mat3 R = quat_to_rot(Vec4(c, 0.0, s, 0.0));
  CHECK((R * Vec3::UnitZ() - Vec3::UnitX()).norm() < 1e-12);
}

TEST_CASE("quat_to_rot returns a proper rotation for random unit quaternions") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = quat_to_rot(oracle::random_unit_quat(rng));
    CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-9);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("quat_to_rot rejects a quaternion off the unit sphere") {
  CHECK_THROWS_AS(quat_to_rot(Vec4(1.01, 0.0, 0.0, 0.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(quat_to_rot(Vec4(0.0, 0.0, 0.0, 0.0)),
                  std::invalid_argument);
}

TEST_CASE("continuous derivative vanishes at hover") {
  const DynamicsParams par;
  QuadState x;
  x.p = Vec3(0.3, -0.2, 1.0);
  const Vec10 dx = continuous_deriv(
      x, ControlInput::from_vector(par.u_hover()), par);
  CHECK(dx.norm() < 1e-12);
}

TEST_CASE("continuous derivative in free fall is pure gravity") {
  const DynamicsParams par;
  QuadState x;
  const Vec10 dx = continuous_deriv(x, ControlInput{0.0, Vec3::Zero()}, par);
  CHECK((dx.segment<3>(3) - Vec3(0.0, 0.0, -par.g)).norm() < 1e-12);
  CHECK(dx.segment<4>(6).norm() < 1e-12);
}

TEST_CASE("pure yaw rate at identity attitude gives qdot = [0,0,0,0.5]") {
  const DynamicsParams par;
  QuadState x;
  ControlInput u{par.m * par.g, Vec3(0.0, 0.0, 1.0)};
  const Vec10 dx = continuous_deriv(x, u, par);
  CHECK((dx.segment<4>(6) - Vec4(0.0, 0.0, 0.0, 0.5)).norm() < 1e-12);
}

TEST_CASE("rk4_step holds the hover equilibrium") {
  DynamicsParams par;
  for (double dt : {0.1, 0.02, 0.5}) {
    par.dt = dt;
    QuadState x;
    x.p = Vec3(0.1, 0.2, 1.5);
    const QuadState n =
        rk4_step(x, ControlInput::from_vector(par.u_hover()), par);
    CHECK((n.p - x.p).norm() < 1e-10);
    CHECK(n.v.norm() < 1e-10);
    CHECK((n.q - x.q).norm() < 1e-10);
  }
}

TEST_CASE("rk4_step free fall over one step matches the ballistic closed form") {
  const DynamicsParams par;  // dt = 0.1
  QuadState x;
  x.p = Vec3(0.0, 0.0, 2.0);
  const QuadState n = rk4_step(x, ControlInput{0.0, Vec3::Zero()}, par);
  CHECK(n.v.z() == doctest::Approx(-0.981).epsilon(1e-9));
  CHECK(n.p.z() == doctest::Approx(2.0 - 0.04905).epsilon(1e-9));
}

TEST_CASE("constant body rate integrates to the closed-form quaternion") {
  DynamicsParams par;
  par.dt = 0.05;
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec3 omega = 2.0 * oracle::random_unit_vec(rng);
    QuadState x;
    ControlInput u{0.0, omega};
    const int steps = 8;
    for (int i = 0; i < steps; ++i) x = rk4_step(x, u, par);
    const double theta = omega.norm() * par.dt * steps;
    Vec4 q_exact;
    q_exact << std::cos(theta / 2.0),
        std::sin(theta / 2.0) * omega.normalized();
    CHECK((x.q - q_exact).norm() < 1e-6);
  }
}

TEST_CASE("quaternion norm stays unit over 1000 steps of random control") {
  const DynamicsParams par;
  std::mt19937_64 rng(31);
  QuadState x;
  x.p = Vec3(0.0, 0.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    x = rk4_step(x, random_control(rng, par), par);
    REQUIRE(std::abs(x.q.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("ballistic energy drifts less than 1e-4 relative over one second") {
  const DynamicsParams par;
  QuadState x;
  x.p = Vec3(0.0, 0.0, 100.0);
  x.v = Vec3(2.0, -1.0, 3.0);
  const auto energy = [&par](const QuadState& s) {
    return 0.5 * s.v.squaredNorm() + par.g * s.p.z();
  };
  const double e0 = energy(x);
  for (int i = 0; i < 10; ++i)
    x = rk4_step(x, ControlInput{0.0, Vec3::Zero()}, par);
  CHECK(std::abs(energy(x) - e0) / std::abs(e0) < 1e-4);
}

TEST_CASE("discrete position block of the state Jacobian is the identity") {
  const DynamicsParams par;
  std::mt19937_64 rng(41);
  const QuadState x = random_state(rng);
  const ControlInput u = random_control(rng, par);
  Mat10 A;
  Mat10x4 B;
  dynamics_jacobians(x, u, par, A, B);
  CHECK((A.topLeftCorner<3, 3>() - Mat3::Identity()).norm() < 1e-12);
  CHECK(A.block<7, 3>(3, 0).norm() < 1e-12);
}

TEST_CASE("hover thrust sensitivity of the continuous dynamics is e_z / m") {
  const DynamicsParams par;
  QuadState x;
  Mat10 A;
  Mat10x4 B;
  continuous_jacobians(x, ControlInput::from_vector(par.u_hover()), par, A, B);
  CHECK(B(3, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(B(4, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(B(5, 0) == doctest::Approx(1.0 / par.m).epsilon(1e-12));
}

TEST_CASE("discrete Jacobians match central finite differences") {
  const DynamicsParams par;
  std::mt19937_64 rng(51);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const QuadState x = random_state(rng);
    const ControlInput u = random_control(rng, par);
    Mat10 A;
    Mat10x4 B;
    dynamics_jacobians(x, u, par, A, B);

    const Vec10 xv = x.to_vector();
    const Vec4 uv = u.to_vector();
    const auto step_x = [&](const Eigen::VectorXd& xi) -> Eigen::VectorXd {
      return rk4_step(QuadState::from_vector(xi), u, par).to_vector();
    };
    const auto step_u = [&](const Eigen::VectorXd& ui) -> Eigen::VectorXd {
      return rk4_step(x, ControlInput::from_vector(ui), par).to_vector();
    };
    const Eigen::MatrixXd A_fd = oracle::fd_jacobian(step_x, xv, 1e-6);
    const Eigen::MatrixXd B_fd = oracle::fd_jacobian(step_u, uv, 1e-6);
    worst = std::max(worst, oracle::max_rel_err_mat(A, A_fd));
    worst = std::max(worst, oracle::max_rel_err_mat(B, B_fd));
  }
  CHECK(worst < 1e-5);
}
