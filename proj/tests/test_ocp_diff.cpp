#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "gatecross/ocp.hpp"
#include "gatecross/ocp_diff.hpp"
#include "gatecross/quad_dynamics.hpp"
#include "oracles.hpp"

using namespace gatecross;
namespace oracle = gatecross::testing;

namespace {

struct Instance {
  QuadState x0;
  DecisionVector z;
  GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.2, 1.4));
  OcpConfig cfg;
};

Instance nominal_instance() {
  Instance inst;
  inst.x0.p = Vec3(0.0, 1.2, 1.2);
  inst.z.set_p_ref(Vec3(0.0, 0.3, 1.6));
  inst.z.set_M_ref(Mat3::Identity());
  inst.z.z.segment<3>(DecisionVector::kQpRef) = Vec3::Constant(150.0);
  inst.z.z.segment<3>(DecisionVector::kQpGoal) = Vec3::Constant(100.0);
  inst.z.z(DecisionVector::kQRRef) = 50.0;
  inst.z.z(DecisionVector::kGamma) = 3.0;
  return inst;
}

OcpSolution resolve(const Instance& inst, const DecisionVector& z,
                    const OcpSolution& warm) {
  OcpSolution sol = solve_ocp(inst.x0, z, inst.goal, inst.cfg, &warm);
  REQUIRE(sol.converged);
  return sol;
}

}  // namespace

TEST_CASE("the initial state carries no sensitivity") {
  const Instance inst = nominal_instance();
  const OcpSolution sol = solve_ocp(inst.x0, inst.z, inst.goal, inst.cfg);
  REQUIRE(sol.converged);
  const TrajectorySensitivity sens =
      differentiate_ocp(sol, inst.z, inst.goal, inst.cfg);
  REQUIRE(sens.dx_dz.size() == static_cast<std::size_t>(inst.cfg.N + 1));
  REQUIRE(sens.du_dz.size() == static_cast<std::size_t>(inst.cfg.N));
  CHECK(sens.dx_dz[0].norm() == 0.0);
}

TEST_CASE("weights gated off for the whole horizon have zero sensitivity") {
  Instance inst = nominal_instance();
  inst.cfg.t_ref = -1.0;  // reference window closed at every step
  const OcpSolution sol = solve_ocp(inst.x0, inst.z, inst.goal, inst.cfg);
  REQUIRE(sol.converged);
  const TrajectorySensitivity sens =
      differentiate_ocp(sol, inst.z, inst.goal, inst.cfg);
  for (int k = 0; k <= inst.cfg.N; ++k) {
    CHECK(sens.dx_dz[k].middleCols<3>(DecisionVector::kPRef).norm() < 1e-12);
    CHECK(sens.dx_dz[k].middleCols<3>(DecisionVector::kQpRef).norm() < 1e-12);
  }
  for (int k = 0; k < inst.cfg.N; ++k) {
    CHECK(sens.du_dz[k].middleCols<3>(DecisionVector::kPRef).norm() < 1e-12);
    CHECK(sens.du_dz[k].middleCols<3>(DecisionVector::kQpRef).norm() < 1e-12);
  }
}

TEST_CASE("trajectory sensitivities match finite differences of re-solves") {
  const Instance inst = nominal_instance();
  const OcpSolution sol = solve_ocp(inst.x0, inst.z, inst.goal, inst.cfg);
  REQUIRE(sol.converged);
  const TrajectorySensitivity sens =
      differentiate_ocp(sol, inst.z, inst.goal, inst.cfg);

  const double delta = 1e-4;
  Mat10x20 fd_xN = Mat10x20::Zero();
  Mat10x20 fd_xMid = Mat10x20::Zero();
  Mat4x20 fd_u0 = Mat4x20::Zero();
  const int mid = inst.cfg.N / 2;
  for (int j = 0; j < 20; ++j) {
    DecisionVector zp = inst.z;
    zp.z(j) += delta;
    DecisionVector zm = inst.z;
    zm.z(j) -= delta;
    const OcpSolution sp = resolve(inst, zp, sol);
    const OcpSolution sm = resolve(inst, zm, sol);
    fd_xN.col(j) = (sp.xs[inst.cfg.N].to_vector() -
                    sm.xs[inst.cfg.N].to_vector()) /
                   (2.0 * delta);
    fd_xMid.col(j) =
        (sp.xs[mid].to_vector() - sm.xs[mid].to_vector()) / (2.0 * delta);
    fd_u0.col(j) = (sp.us[0] - sm.us[0]) / (2.0 * delta);
  }
  CHECK(oracle::max_rel_err_mat(sens.dx_dz[inst.cfg.N], fd_xN) < 1e-2);
  CHECK(oracle::max_rel_err_mat(sens.dx_dz[mid], fd_xMid) < 1e-2);
  CHECK(oracle::max_rel_err_mat(sens.du_dz[0], fd_u0) < 1e-2);
}

TEST_CASE("sensitivities propagate consistently through the dynamics") {
  const Instance inst = nominal_instance();
  const OcpSolution sol = solve_ocp(inst.x0, inst.z, inst.goal, inst.cfg);
  REQUIRE(sol.converged);
  for (bool gn : {false, true}) {
    OcpDiffOptions opts;
    opts.gauss_newton = gn;
    const TrajectorySensitivity sens =
        differentiate_ocp(sol, inst.z, inst.goal, inst.cfg, opts);
    for (int k = 0; k < inst.cfg.N; ++k) {
      Mat10 A;
      Mat10x4 B;
      dynamics_jacobians(sol.xs[k], ControlInput::from_vector(sol.us[k]),
                         inst.cfg.dyn, A, B);
      const Mat10x20 residual =
          sens.dx_dz[k + 1] - A * sens.dx_dz[k] - B * sens.du_dz[k];
      CHECK(residual.cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("the chain rule through the sensitivities matches a scalar probe") {
  // phi(z) = |p_N(z) - p_goal|^2 differentiated two ways.
  const Instance inst = nominal_instance();
  const OcpSolution sol = solve_ocp(inst.x0, inst.z, inst.goal, inst.cfg);
  REQUIRE(sol.converged);
  const TrajectorySensitivity sens =
      differentiate_ocp(sol, inst.z, inst.goal, inst.cfg);

  const Vec3 dp = sol.xs[inst.cfg.N].p - inst.goal.x_goal.p;
  const Vec20 grad =
      2.0 * sens.dx_dz[inst.cfg.N].topRows<3>().transpose() * dp;

  const double delta = 1e-4;
  Vec20 fd = Vec20::Zero();
  for (int j = 0; j < 20; ++j) {
    DecisionVector zp = inst.z;
    zp.z(j) += delta;
    DecisionVector zm = inst.z;
    zm.z(j) -= delta;
    const double phi_p =
        (resolve(inst, zp, sol).xs[inst.cfg.N].p - inst.goal.x_goal.p)
            .squaredNorm();
    const double phi_m =
        (resolve(inst, zm, sol).xs[inst.cfg.N].p - inst.goal.x_goal.p)
            .squaredNorm();
    fd(j) = (phi_p - phi_m) / (2.0 * delta);
  }
  const double denom = std::max(1.0, fd.cwiseAbs().maxCoeff());
  CHECK((grad - fd).cwiseAbs().maxCoeff() / denom < 1e-2);
}

TEST_CASE("differentiation is deterministic") {
  const Instance inst = nominal_instance();
  const OcpSolution sol = solve_ocp(inst.x0, inst.z, inst.goal, inst.cfg);
  REQUIRE(sol.converged);
  const TrajectorySensitivity a =
      differentiate_ocp(sol, inst.z, inst.goal, inst.cfg);
  const TrajectorySensitivity b =
      differentiate_ocp(sol, inst.z, inst.goal, inst.cfg);
  for (int k = 0; k <= inst.cfg.N; ++k)
    CHECK((a.dx_dz[k] - b.dx_dz[k]).norm() == 0.0);
  for (int k = 0; k < inst.cfg.N; ++k)
    CHECK((a.du_dz[k] - b.du_dz[k]).norm() == 0.0);
}

TEST_CASE("unconverged or malformed solutions are rejected") {
  const Instance inst = nominal_instance();
  OcpSolution sol = solve_ocp(inst.x0, inst.z, inst.goal, inst.cfg);
  REQUIRE(sol.converged);

  OcpSolution unconverged = sol;
  unconverged.converged = false;
  CHECK_THROWS_AS(
      differentiate_ocp(unconverged, inst.z, inst.goal, inst.cfg),
      std::invalid_argument);

  OcpSolution truncated = sol;
  truncated.xs.pop_back();
  CHECK_THROWS_AS(differentiate_ocp(truncated, inst.z, inst.goal, inst.cfg),
                  std::invalid_argument);

  OcpSolution no_controls = sol;
  no_controls.us.pop_back();
  CHECK_THROWS_AS(
      differentiate_ocp(no_controls, inst.z, inst.goal, inst.cfg),
      std::invalid_argument);
}
