#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "gatecross/env.hpp"
#include "gatecross/ocp.hpp"
#include "gatecross/quad_dynamics.hpp"
#include "oracles.hpp"

using namespace gatecross;
namespace oracle = gatecross::testing;

namespace {

DecisionVector mid_weights_z(const Vec3& p_ref) {
  DecisionVector z;
  z.set_p_ref(p_ref);
  z.set_M_ref(Mat3::Identity());
  z.z.segment<3>(DecisionVector::kQpRef) = Vec3::Constant(150.0);
  z.z.segment<3>(DecisionVector::kQpGoal) = Vec3::Constant(100.0);
  z.z(DecisionVector::kQRRef) = 50.0;
  z.z(DecisionVector::kGamma) = 3.0;
  return z;
}

QuadState hover_at(const Vec3& p) {
  QuadState x;
  x.p = p;
  return x;
}

}  // namespace

TEST_CASE("weight gates split evenly at the crossover time") {
  const OcpConfig cfg;  // t_ref = 1, dt = 0.1
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.5));
  const TimeVaryingWeights w = time_varying_weights(z, 10, cfg);
  CHECK((w.q_p_ref_vary - 0.5 * z.q_p_ref_diag()).norm() < 1e-12);
  CHECK((w.q_p_goal_vary - 0.5 * z.q_p_goal_diag()).norm() < 1e-12);
  CHECK(w.q_R_vary == doctest::Approx(z.q_R_ref()).epsilon(1e-12));
}

TEST_CASE("weight gates saturate away from the crossover") {
  const OcpConfig cfg;
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.5));
  const TimeVaryingWeights w0 = time_varying_weights(z, 0, cfg);
  CHECK((w0.q_p_ref_vary - z.q_p_ref_diag()).norm() < 1e-12);
  CHECK(w0.q_p_goal_vary.norm() < 1e-12);
  const TimeVaryingWeights wN = time_varying_weights(z, 20, cfg);
  CHECK(wN.q_p_ref_vary.norm() < 1e-12);
  CHECK((wN.q_p_goal_vary - z.q_p_goal_diag()).norm() < 1e-12);
}

TEST_CASE("reference and goal gates sum to one at every step") {
  for (double t_ref : {-0.3, 0.0, 0.35, 1.0, 1.97, 2.5}) {
    for (int k = 0; k <= 20; ++k) {
      const double t_k = 0.1 * k;
      CHECK(gate_ref(t_k, t_ref) + gate_goal(t_k, t_ref) == 1.0);
      CHECK(gate_ref(t_k, t_ref) >= 0.0);
      CHECK(gate_goal(t_k, t_ref) >= 0.0);
    }
  }
}

TEST_CASE("attitude weight peaks exactly at the traversal time") {
  const OcpConfig cfg;  // t_ref = 1 lies on the time grid at k = 10
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.5));
  double best = -1.0;
  int best_k = -1;
  for (int k = 0; k <= cfg.N; ++k) {
    const double w = time_varying_weights(z, k, cfg).q_R_vary;
    if (w > best) {
      best = w;
      best_k = k;
    }
  }
  CHECK(best_k == 10);
  CHECK(best == z.q_R_ref());
}

TEST_CASE("stage cost vanishes at the goal equilibrium with tracking off") {
  OcpConfig cfg;
  DecisionVector z;
  z.set_p_ref(Vec3(3.0, -1.0, 0.7));  // irrelevant: weights zero
  z.set_M_ref(Mat3::Identity());
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.2, 0.1, 1.4));
  const QuadState x = hover_at(goal.x_goal.p);
  const Vec4 u = cfg.dyn.u_hover();
  for (int k : {0, 7, 19})
    CHECK(stage_cost(x, u, z, k, goal, cfg) ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("stage cost reproduces the quadratic tracking arithmetic") {
  OcpConfig cfg;  // t_ref = 1: the reference gate saturates to 1 at k = 0
  DecisionVector z;
  const Vec3 p_ref(0.0, 0.4, 1.3);
  z.set_p_ref(p_ref);
  z.set_M_ref(Mat3::Identity());
  z.z.segment<3>(DecisionVector::kQpRef) = Vec3::Constant(2.0);
  const QuadState x = hover_at(p_ref + Vec3::UnitX());
  const GoalSpec goal = GoalSpec::from_position(x.p);  // goal terms vanish
  CHECK(stage_cost(x, cfg.dyn.u_hover(), z, 0, goal, cfg) ==
        doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("terminal cost is zero at the goal and quadratic off it") {
  OcpConfig cfg;
  cfg.t_ref = 0.0;  // goal gate fully open at k = N
  DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.5));
  z.z.segment<3>(DecisionVector::kQpGoal) = Vec3(11.0, 13.0, 17.0);
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.3, -0.4, 1.2));
  CHECK(terminal_cost(hover_at(goal.x_goal.p), z, goal, cfg) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(terminal_cost(hover_at(goal.x_goal.p + Vec3::UnitZ()), z, goal, cfg) ==
        doctest::Approx(17.0).epsilon(1e-12));
}

TEST_CASE("terminal cost equals the goal share of the stage cost at k = N") {
  OcpConfig cfg;
  std::mt19937_64 rng(301);
  std::uniform_real_distribution<double> um(-0.5, 0.5);
  DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.5));
  z.z.segment<3>(DecisionVector::kQpRef).setZero();  // remove tracking
  z.z(DecisionVector::kQRRef) = 0.0;
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.0, 1.5));
  for (int trial = 0; trial < 10; ++trial) {
    QuadState x;
    x.p = Vec3(um(rng), um(rng), 1.3 + um(rng));
    x.v = Vec3(um(rng), um(rng), um(rng));
    x.q = oracle::random_unit_quat(rng);
    const double lhs = terminal_cost(x, z, goal, cfg);
    const double rhs =
        stage_cost(x, cfg.dyn.u_hover(), z, cfg.N, goal, cfg);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("stage cost sum over the returned trajectory equals the objective") {
  OcpConfig cfg;
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.6));
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.2, 1.4));
  const QuadState x0 = hover_at(Vec3(0.0, 1.2, 1.2));
  const OcpSolution sol = solve_ocp(x0, z, goal, cfg);
  REQUIRE(sol.converged);
  double sum = 0.0;
  for (int k = 0; k < cfg.N; ++k)
    sum += stage_cost(sol.xs[k], sol.us[k], z, k, goal, cfg);
  sum += terminal_cost(sol.xs[cfg.N], z, goal, cfg);
  CHECK(std::abs(sum - sol.objective) <= 1e-10 * (1.0 + std::abs(sum)));
}

TEST_CASE("the hover equilibrium solves to itself") {
  // The log barriers bias the optimum away from exact hover by an amount
  // proportional to barrier_mu, so this probes the small-mu limit at the
  // altitude-band midpoint where the band barrier's gradient cancels.
  OcpConfig cfg;
  cfg.barrier_mu = 1e-6;
  DecisionVector z;
  const Vec3 p0(0.0, 0.0, 0.5 * (cfg.z_min + cfg.z_max));
  z.set_p_ref(p0);
  z.set_M_ref(Mat3::Identity());
  z.z.segment<3>(DecisionVector::kQpRef) = Vec3::Constant(1e-9);
  z.z.segment<3>(DecisionVector::kQpGoal) = Vec3::Constant(100.0);
  z.z(DecisionVector::kQRRef) = 1e-9;
  z.z(DecisionVector::kGamma) = 3.0;
  const GoalSpec goal = GoalSpec::from_position(p0);
  const OcpSolution sol = solve_ocp(hover_at(p0), z, goal, cfg);
  REQUIRE(sol.converged);
  for (int k = 0; k < cfg.N; ++k) {
    CHECK((sol.us[k] - cfg.dyn.u_hover()).norm() < 1e-4);
    CHECK((sol.xs[k].p - p0).norm() < 1e-4);
  }
}

TEST_CASE("a goal one meter away is reached within five centimeters") {
  OcpConfig cfg;
  cfg.t_ref = 0.0;  // pure goal phase
  DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.2));
  const Vec3 p0(0.0, 0.0, 1.2);
  const Vec3 p_goal = p0 + Vec3(0.3, -0.8, 0.52);  // about one meter
  const GoalSpec goal = GoalSpec::from_position(p_goal);
  const OcpSolution sol = solve_ocp(hover_at(p0), z, goal, cfg);
  REQUIRE(sol.converged);
  CHECK((sol.xs[cfg.N].p - p_goal).norm() < 0.05);
  for (const QuadState& x : sol.xs) {
    CHECK(x.p.z() > cfg.z_min);
    CHECK(x.p.z() < cfg.z_max);
  }
}

TEST_CASE("controls stay strictly inside the barrier bounds") {
  OcpConfig cfg;
  cfg.t_ref = 0.0;
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.5));
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.8, 1.5));
  const OcpSolution sol =
      solve_ocp(hover_at(Vec3(0.0, 1.8, 1.2)), z, goal, cfg);
  REQUIRE(sol.converged);
  for (const Vec4& u : sol.us) {
    CHECK(u(0) > 0.0);
    CHECK(u(0) < cfg.dyn.f_max);
    for (int i = 1; i < 4; ++i) CHECK(std::abs(u(i)) < cfg.dyn.omega_max);
  }
}

TEST_CASE("solution states replay exactly through the dynamics") {
  OcpConfig cfg;
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.6));
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.2, 1.4));
  const OcpSolution sol =
      solve_ocp(hover_at(Vec3(0.0, 1.2, 1.2)), z, goal, cfg);
  REQUIRE(sol.converged);
  CHECK((sol.xs[0].to_vector() -
         hover_at(Vec3(0.0, 1.2, 1.2)).to_vector()).norm() == 0.0);
  QuadState x = sol.xs[0];
  for (int k = 0; k < cfg.N; ++k) {
    x = rk4_step(x, ControlInput::from_vector(sol.us[k]), cfg.dyn);
    CHECK((x.to_vector() - sol.xs[k + 1].to_vector()).norm() < 1e-8);
  }
}

TEST_CASE("solutions vary continuously with the reference position") {
  OcpConfig cfg;
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.3, 1.5));
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.0, 1.4));
  const QuadState x0 = hover_at(Vec3(0.0, 1.0, 1.2));
  const OcpSolution base = solve_ocp(x0, z, goal, cfg);
  REQUIRE(base.converged);
  const auto traj_dist = [&](const OcpSolution& s) {
    double d = 0.0;
    for (int k = 0; k <= cfg.N; ++k)
      d = std::max(d, (s.xs[k].to_vector() - base.xs[k].to_vector()).norm());
    return d;
  };
  double prev = std::numeric_limits<double>::infinity();
  for (double delta : {1e-1, 1e-2, 1e-3, 1e-4}) {
    DecisionVector zp = z;
    zp.set_p_ref(z.p_ref() + Vec3(delta, 0.0, 0.0));
    const OcpSolution sp = solve_ocp(x0, zp, goal, cfg, &base);
    REQUIRE(sp.converged);
    const double d = traj_dist(sp);
    CHECK(d < prev);
    prev = d;
  }
  // The trajectory sensitivity to p_ref has slope of order one, so a 1e-4
  // reference shift should move the plan by well under 1e-3.
  CHECK(prev < 1e-3);
}

TEST_CASE("truncating the iteration cap never yields a lower objective") {
  // The line-searched solver only ever accepts decreasing barrier
  // objectives, so the best iterate after more iterations cannot be worse.
  OcpConfig cfg;
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.7));
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.5, 1.5));
  const QuadState x0 = hover_at(Vec3(0.0, 1.5, 1.2));
  double prev = std::numeric_limits<double>::infinity();
  for (int cap : {1, 2, 3, 5, 8, 13, 21, 34}) {
    cfg.max_iters = cap;
    const OcpSolution sol = solve_ocp(x0, z, goal, cfg);
    CHECK(sol.barrier_objective <= prev + 1e-9 * (1.0 + std::abs(prev)));
    prev = sol.barrier_objective;
  }
}

TEST_CASE("weakening the barrier lets an altitude-pressed solution approach the bound") {
  OcpConfig cfg;
  cfg.t_ref = 10.0;  // hold the reference phase over the whole horizon
  DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 2.5));  // above the ceiling
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, 0.0, 2.5));
  const QuadState x0 = hover_at(Vec3(0.0, 0.0, 1.5));
  double prev_peak = 0.0;
  for (double mu : {1e-1, 1e-2, 1e-3}) {
    cfg.barrier_mu = mu;
    const OcpSolution sol = solve_ocp(x0, z, goal, cfg);
    REQUIRE(sol.converged);
    double peak = 0.0;
    for (const QuadState& x : sol.xs) peak = std::max(peak, x.p.z());
    CHECK(peak < cfg.z_max);    // never crosses
    CHECK(peak > prev_peak);    // monotone approach as mu decreases
    prev_peak = peak;
  }
}

TEST_CASE("shifted warm starts halve the iteration count over a flight") {
  // Closed loop on the nominal gate scenario: every step after the first is
  // solved twice, once warm-started from the previous step's shifted plan
  // and once cold. Over the steps where both solves converge, warm starting
  // must at least halve the total iteration count.
  OcpConfig cfg;
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.9));
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.8, 1.5));
  const EnvConfig env;
  const GateGeometry gate =
      build_gate(env.gate_center, 0.0, env.inner_width, env.inner_height,
                 env.bar_depth, env.bar_thickness);

  QuadState x = hover_at(Vec3(0.0, 1.8, 1.2));
  OcpSolution prev;
  std::vector<QuadState> prev_plan;
  bool have_prev = false;
  int sum_warm = 0;
  int sum_cold = 0;
  int n_both = 0;
  for (int step = 0; step < 20; ++step) {
    cfg.t_ref = receding_traversal_time(x, prev_plan, gate,
                                        env.traversal_speed, cfg.dt,
                                        cfg.N * cfg.dt);
    OcpSolution warm;
    if (have_prev) {
      warm = prev;
      warm.us.erase(warm.us.begin());
      warm.us.push_back(warm.us.back());
    }
    const OcpSolution warmed =
        solve_ocp(x, z, goal, cfg, have_prev ? &warm : nullptr);
    REQUIRE(warmed.converged);
    if (have_prev) {
      const OcpSolution cold = solve_ocp(x, z, goal, cfg);
      if (cold.converged) {
        sum_warm += warmed.iterations;
        sum_cold += cold.iterations;
        ++n_both;
      }
    }
    prev = warmed;
    prev_plan = warmed.xs;
    have_prev = true;
    x = rk4_step(x, ControlInput::from_vector(warmed.us[0]), cfg.dyn);
  }
  REQUIRE(n_both >= 10);
  CHECK(sum_warm * 2 <= sum_cold);
}

TEST_CASE("an infeasible warm start falls back to the cold start") {
  OcpConfig cfg;
  const DecisionVector z = mid_weights_z(Vec3(0.0, 0.0, 1.5));
  const GoalSpec goal = GoalSpec::from_position(Vec3(0.0, -1.0, 1.4));
  const QuadState x0 = hover_at(Vec3(0.0, 1.0, 1.2));

  OcpSolution bad = solve_ocp(x0, z, goal, cfg);
  REQUIRE(bad.converged);
  for (Vec4& u : bad.us) u(0) = -1.0;  // negative thrust: barrier infinite

  const OcpSolution sol = solve_ocp(x0, z, goal, cfg, &bad);
  CHECK(sol.converged);
  CHECK(std::isfinite(sol.barrier_objective));
}

TEST_CASE("converged solves meet the stationarity tolerance") {
  OcpConfig cfg;
  std::mt19937_64 rng(311);
  std::uniform_real_distribution<double> um(-0.3, 0.3);
  for (int trial = 0; trial < 5; ++trial) {
    DecisionVector z = mid_weights_z(Vec3(um(rng), um(rng), 1.5 + um(rng)));
    const GoalSpec goal =
        GoalSpec::from_position(Vec3(um(rng), -1.2 + um(rng), 1.4));
    const QuadState x0 = hover_at(Vec3(um(rng), 1.2 + um(rng), 1.2));
    const OcpSolution sol = solve_ocp(x0, z, goal, cfg);
    if (!sol.converged) continue;
    CHECK(sol.kkt_residual < 1e-6);
  }
}
