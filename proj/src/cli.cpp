#include "gatecross/cli.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatecross/collision.hpp"
#include "gatecross/env.hpp"
#include "gatecross/hl_loss.hpp"
#include "gatecross/ocp.hpp"
#include "gatecross/ocp_diff.hpp"
#include "gatecross/policy_net.hpp"
#include "gatecross/quad_dynamics.hpp"
#include "gatecross/trainer.hpp"

namespace gatecross {
namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

Vec4 random_unit_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q;
  do {
    q << n(rng), n(rng), n(rng), n(rng);
  } while (q.norm() < 1e-6);
  return q.normalized();
}

Vec4 small_rotation_quat(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> ua(0.0, max_angle);
  Vec3 axis;
  do {
    axis << n(rng), n(rng), n(rng);
  } while (axis.norm() < 1e-6);
  axis.normalize();
  const double half = 0.5 * ua(rng);
  Vec4 q;
  q << std::cos(half), std::sin(half) * axis;
  return q;
}

Mat3 tilt_rotation(double tilt) {
  const double c = std::cos(tilt), s = std::sin(tilt);
  Mat3 R;
  R << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  return R;
}

// ---------------------------------------------------------------------------
// Gradient audit
// ---------------------------------------------------------------------------

AuditResult audit_dynamics(const ProjectConfig& pc, std::uint64_t seed, int n) {
  const DynamicsParams& dyn = pc.train.ocp.dyn;
  std::mt19937_64 rng(mix_seed(seed, 0xD11Au, 0));
  std::uniform_real_distribution<double> up(-2.0, 2.0), uv(-2.0, 2.0);
  std::uniform_real_distribution<double> uf(0.1 * dyn.f_max, 0.9 * dyn.f_max);
  std::uniform_real_distribution<double> uw(-0.9 * dyn.omega_max,
                                            0.9 * dyn.omega_max);
  const double eps = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    QuadState x;
    x.p << up(rng), up(rng), up(rng);
    x.v << uv(rng), uv(rng), uv(rng);
    x.q = random_unit_quat(rng);
    ControlInput u;
    u.f_r = uf(rng);
    u.omega << uw(rng), uw(rng), uw(rng);

    Mat10 A;
    Mat10x4 B;
    dynamics_jacobians(x, u, dyn, A, B);

    const Vec10 xv = x.to_vector();
    Mat10 A_fd;
    for (int j = 0; j < 10; ++j) {
      Vec10 xp = xv, xm = xv;
      xp(j) += eps;
      xm(j) -= eps;
      const Vec10 fp = rk4_step(QuadState::from_vector(xp), u, dyn).to_vector();
      const Vec10 fm = rk4_step(QuadState::from_vector(xm), u, dyn).to_vector();
      A_fd.col(j) = (fp - fm) / (2.0 * eps);
    }
    const Vec4 uv4 = u.to_vector();
    Mat10x4 B_fd;
    for (int j = 0; j < 4; ++j) {
      Vec4 upv = uv4, umv = uv4;
      upv(j) += eps;
      umv(j) -= eps;
      const Vec10 fp =
          rk4_step(x, ControlInput::from_vector(upv), dyn).to_vector();
      const Vec10 fm =
          rk4_step(x, ControlInput::from_vector(umv), dyn).to_vector();
      B_fd.col(j) = (fp - fm) / (2.0 * eps);
    }
    worst = std::max({worst, max_rel_err(A_fd, A), max_rel_err(B_fd, B)});
  }
  return {"dynamics", n, worst, 1e-5, worst < 1e-5};
}

struct OcpInstance {
  QuadState x0;
  DecisionVector z;
  GoalSpec goal;
};

OcpInstance sample_ocp_instance(std::mt19937_64& rng, const EnvConfig& env,
                                const OutputScaling& scaling) {
  std::uniform_real_distribution<double> jx(-0.3, 0.3), jv(-0.5, 0.5);
  std::uniform_real_distribution<double> jr(-0.2, 0.2), jm(-0.05, 0.05);
  std::uniform_real_distribution<double> ut(env.tilt_min, env.tilt_max);
  std::uniform_real_distribution<double> wp(30.0, 200.0), wr(5.0, 80.0);
  std::uniform_real_distribution<double> ug(0.5, 5.0);

  OcpInstance inst;
  inst.x0.p = env.x_init_nominal + Vec3(jx(rng), jx(rng), jx(rng));
  inst.x0.v = Vec3(jv(rng), jv(rng), jv(rng));
  inst.x0.q = small_rotation_quat(rng, 0.2);

  inst.z.set_p_ref(env.gate_center + Vec3(jr(rng), jr(rng), jr(rng)));
  Mat3 M = tilt_rotation(ut(rng));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) M(r, c) += jm(rng);
  inst.z.set_M_ref(M);
  inst.z.z(DecisionVector::kQpRef + 0) = wp(rng);
  inst.z.z(DecisionVector::kQpRef + 1) = wp(rng);
  inst.z.z(DecisionVector::kQpRef + 2) = wp(rng);
  inst.z.z(DecisionVector::kQpGoal + 0) = wp(rng);
  inst.z.z(DecisionVector::kQpGoal + 1) = wp(rng);
  inst.z.z(DecisionVector::kQpGoal + 2) = wp(rng);
  inst.z.z(DecisionVector::kQRRef) = wr(rng);
  inst.z.z(DecisionVector::kGamma) = ug(rng);
  // Keep everything inside the head ranges the policy could emit.
  for (int j = 0; j < 8; ++j) {
    inst.z.z(12 + j) =
        std::clamp(inst.z.z(12 + j), scaling.lo(j) + 1e-3, scaling.hi(j) - 1e-3);
  }

  inst.goal = GoalSpec::from_position(env.p_goal_nominal +
                                      Vec3(jx(rng), jx(rng), jx(rng)));
  return inst;
}

Eigen::MatrixXd flatten_sensitivity(const TrajectorySensitivity& sens) {
  const int Np1 = static_cast<int>(sens.dx_dz.size());
  const int N = static_cast<int>(sens.du_dz.size());
  Eigen::MatrixXd J(10 * Np1 + 4 * N, 20);
  for (int k = 0; k < Np1; ++k) J.middleRows(10 * k, 10) = sens.dx_dz[k];
  for (int k = 0; k < N; ++k)
    J.middleRows(10 * Np1 + 4 * k, 4) = sens.du_dz[k];
  return J;
}

Eigen::VectorXd flatten_trajectory(const OcpSolution& sol) {
  const int Np1 = static_cast<int>(sol.xs.size());
  const int N = static_cast<int>(sol.us.size());
  Eigen::VectorXd xi(10 * Np1 + 4 * N);
  for (int k = 0; k < Np1; ++k) xi.segment<10>(10 * k) = sol.xs[k].to_vector();
  for (int k = 0; k < N; ++k) xi.segment<4>(10 * Np1 + 4 * k) = sol.us[k];
  return xi;
}

AuditResult audit_ocp_sensitivity(const ProjectConfig& pc, std::uint64_t seed,
                                  int n) {
  OcpConfig ocp = pc.train.ocp;
  ocp.tol_stationarity = 1e-9;
  ocp.max_iters = 500;
  std::mt19937_64 rng(mix_seed(seed, 0x0C9Du, 0));
  double worst = 0.0;
  int done = 0;
  int attempts = 0;
  while (done < n && attempts < 20 * n) {
    ++attempts;
    const OcpInstance inst =
        sample_ocp_instance(rng, pc.train.env, pc.train.scaling);
    const OcpSolution sol = solve_ocp(inst.x0, inst.z, inst.goal, ocp);
    if (!sol.converged) continue;

    Eigen::MatrixXd J;
    try {
      J = flatten_sensitivity(differentiate_ocp(sol, inst.z, inst.goal, ocp));
    } catch (const std::exception&) {
      continue;
    }

    Eigen::MatrixXd J_fd(J.rows(), 20);
    bool ok = true;
    for (int j = 0; j < 20 && ok; ++j) {
      const double delta = 1e-5 * std::max(1.0, std::abs(inst.z.z(j)));
      DecisionVector zp = inst.z, zm = inst.z;
      zp.z(j) += delta;
      zm.z(j) -= delta;
      const OcpSolution sp = solve_ocp(inst.x0, zp, inst.goal, ocp, &sol);
      const OcpSolution sm = solve_ocp(inst.x0, zm, inst.goal, ocp, &sol);
      if (!sp.converged || !sm.converged) {
        ok = false;
        break;
      }
      J_fd.col(j) =
          (flatten_trajectory(sp) - flatten_trajectory(sm)) / (2.0 * delta);
    }
    if (!ok) continue;
    worst = std::max(worst, max_rel_err(J_fd, J));
    ++done;
  }
  return {"ocp_sensitivity", done, worst, 1e-2, done == n && worst < 1e-2};
}

AuditResult audit_envelope(const ProjectConfig& pc, std::uint64_t seed, int n) {
  CollisionOptions opts = pc.train.loss.collision;
  opts.tol = std::min(opts.tol, 1e-11);
  std::mt19937_64 rng(mix_seed(seed, 0xE57Eu, 0));
  std::uniform_real_distribution<double> ua(0.05, 0.4), ub(0.03, 0.5);
  std::uniform_real_distribution<double> uc(-1.5, 1.5), ud(0.3, 1.5);
  std::normal_distribution<double> nrm(0.0, 1.0);
  const double eps = 1e-5;
  double worst = 0.0;
  int done = 0;
  int attempts = 0;
  while (done < n && attempts < 50 * n) {
    ++attempts;
    EllipsoidShape ell;
    ell.semi_axes << ua(rng), ua(rng), ua(rng);
    ell.pose.p << uc(rng), uc(rng), uc(rng);
    ell.pose.q = random_unit_quat(rng);
    BarPolytope bar;
    bar.half_extents << ub(rng), ub(rng), ub(rng);
    Vec3 dir;
    do {
      dir << nrm(rng), nrm(rng), nrm(rng);
    } while (dir.norm() < 1e-6);
    bar.pose.p = ell.pose.p + ud(rng) * dir.normalized();
    bar.pose.q = random_unit_quat(rng);

    const Pose pose = ell.pose;
    const CollisionSolution sol = min_scaling(pose, ell, bar, opts);
    if (!sol.converged) continue;
    EnvelopeGrad eg;
    try {
      eg = envelope_grad(sol, pose, ell, bar);
    } catch (const std::exception&) {
      continue;
    }
    if (eg.weakly_active) continue;

    Eigen::VectorXd analytic(7), fd(7);
    analytic << eg.d_position, eg.d_quaternion;
    bool ok = true;
    for (int j = 0; j < 7 && ok; ++j) {
      Pose pp = pose, pm = pose;
      if (j < 3) {
        pp.p(j) += eps;
        pm.p(j) -= eps;
      } else {
        pp.q(j - 3) += eps;
        pm.q(j - 3) -= eps;
      }
      const CollisionSolution sp = min_scaling(pp, ell, bar, opts);
      const CollisionSolution sm = min_scaling(pm, ell, bar, opts);
      if (!sp.converged || !sm.converged) {
        ok = false;
        break;
      }
      fd(j) = (sp.alpha_star - sm.alpha_star) / (2.0 * eps);
    }
    if (!ok) continue;
    worst = std::max(worst, max_rel_err(fd, analytic));
    ++done;
  }
  return {"envelope", done, worst, 1e-4, done == n && worst < 1e-4};
}

Observation obs_from_vector(const Vec25& v) {
  Observation o;
  o.p_world = v.segment<3>(0);
  o.v_body = v.segment<3>(3);
  o.q = v.segment<4>(6);
  o.p_goal_body = v.segment<3>(10);
  for (int c = 0; c < 4; ++c) o.corners_body[c] = v.segment<3>(13 + 3 * c);
  return o;
}

AuditResult audit_policy(const ProjectConfig& pc, std::uint64_t seed, int n) {
  std::mt19937_64 rng(mix_seed(seed, 0xF01Cu, 0));
  std::normal_distribution<double> nrm(0.0, 1.0);
  const OutputScaling& scaling = pc.train.scaling;
  const double eps = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    PolicyParams params =
        PolicyParams::init(8, static_cast<unsigned>(mix_seed(seed, 0xF02Du, i)));
    // Randomize the output layer so gradients reach every tensor.
    for (int r = 0; r < params.W3.rows(); ++r)
      for (int c = 0; c < params.W3.cols(); ++c) params.W3(r, c) = 0.2 * nrm(rng);
    for (int r = 0; r < params.b3.size(); ++r) params.b3(r) = 0.2 * nrm(rng);

    QuadState x;
    x.p << nrm(rng), nrm(rng), 1.0 + 0.3 * nrm(rng);
    x.v << nrm(rng), nrm(rng), nrm(rng);
    x.q = random_unit_quat(rng);
    const GateGeometry gate = build_gate(
        Vec3(0.2 * nrm(rng), 0.2 * nrm(rng), 1.9 + 0.2 * nrm(rng)),
        0.5 * nrm(rng), 0.6, 0.25, 0.05, 0.05);
    const Vec3 p_goal(nrm(rng), -1.8 + 0.3 * nrm(rng), 1.5 + 0.2 * nrm(rng));
    const Observation obs = build_observation(x, p_goal, gate);

    Vec20 dL;
    for (int j = 0; j < 20; ++j) dL(j) = nrm(rng);

    ForwardCache cache;
    policy_forward(params, obs, scaling, cache);
    Vec25 d_obs;
    const PolicyGrad g = policy_backward(params, scaling, cache, dL, &d_obs);

    auto value = [&](const PolicyParams& p, const Observation& o) {
      ForwardCache c;
      const DecisionVector z = policy_forward(p, o, scaling, c);
      return dL.dot(z.z);
    };

    auto fd_matrix = [&](Eigen::MatrixXd& target) {
      Eigen::MatrixXd out(target.rows(), target.cols());
      for (int r = 0; r < target.rows(); ++r) {
        for (int c = 0; c < target.cols(); ++c) {
          const double keep = target(r, c);
          target(r, c) = keep + eps;
          const double fp = value(params, obs);
          target(r, c) = keep - eps;
          const double fm = value(params, obs);
          target(r, c) = keep;
          out(r, c) = (fp - fm) / (2.0 * eps);
        }
      }
      return out;
    };
    auto fd_vector = [&](Eigen::VectorXd& target) {
      Eigen::VectorXd out(target.size());
      for (int r = 0; r < target.size(); ++r) {
        const double keep = target(r);
        target(r) = keep + eps;
        const double fp = value(params, obs);
        target(r) = keep - eps;
        const double fm = value(params, obs);
        target(r) = keep;
        out(r) = (fp - fm) / (2.0 * eps);
      }
      return out;
    };

    worst = std::max({worst, max_rel_err(fd_matrix(params.W1), g.dW1),
                      max_rel_err(fd_matrix(params.W2), g.dW2),
                      max_rel_err(fd_matrix(params.W3), g.dW3)});
    worst = std::max({worst, max_rel_err(fd_vector(params.b1), g.db1),
                      max_rel_err(fd_vector(params.b2), g.db2),
                      max_rel_err(fd_vector(params.b3), g.db3)});

    Vec25 d_obs_fd;
    const Vec25 base = obs.to_vector();
    for (int j = 0; j < 25; ++j) {
      Vec25 vp = base, vm = base;
      vp(j) += eps;
      vm(j) -= eps;
      d_obs_fd(j) = (value(params, obs_from_vector(vp)) -
                     value(params, obs_from_vector(vm))) /
                    (2.0 * eps);
    }
    worst = std::max(worst, max_rel_err(d_obs_fd, d_obs));
  }
  return {"policy", n, worst, 1e-6, worst < 1e-6};
}

// Direction container reuses the gradient layout.
PolicyGrad random_direction(const PolicyParams& params, std::mt19937_64& rng) {
  std::normal_distribution<double> nrm(0.0, 1.0);
  PolicyGrad d = PolicyGrad::zeros_like(params);
  auto fill_m = [&](Eigen::MatrixXd& m) {
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) m(r, c) = nrm(rng);
  };
  auto fill_v = [&](Eigen::VectorXd& v) {
    for (int r = 0; r < v.size(); ++r) v(r) = nrm(rng);
  };
  fill_m(d.dW1);
  fill_m(d.dW2);
  fill_m(d.dW3);
  fill_v(d.db1);
  fill_v(d.db2);
  fill_v(d.db3);
  const double nm = d.norm();
  d *= 1.0 / std::max(nm, 1e-12);
  return d;
}

void params_axpy(PolicyParams& p, const PolicyGrad& d, double t) {
  p.W1 += t * d.dW1;
  p.W2 += t * d.dW2;
  p.W3 += t * d.dW3;
  p.b1 += t * d.db1;
  p.b2 += t * d.db2;
  p.b3 += t * d.db3;
}

double grad_dot(const PolicyGrad& a, const PolicyGrad& b) {
  return a.dW1.cwiseProduct(b.dW1).sum() + a.dW2.cwiseProduct(b.dW2).sum() +
         a.dW3.cwiseProduct(b.dW3).sum() + a.db1.dot(b.db1) +
         a.db2.dot(b.db2) + a.db3.dot(b.db3);
}

AuditResult audit_end_to_end(const ProjectConfig& pc, std::uint64_t seed,
                             int n) {
  TrainConfig cfg = pc.train;
  cfg.ocp.tol_stationarity = 1e-9;
  cfg.ocp.max_iters = 500;
  std::mt19937_64 rng(mix_seed(seed, 0xE2Eu, 0));
  std::normal_distribution<double> nrm(0.0, 1.0);
  const double delta = 1e-4;
  double worst = 0.0;
  int done = 0;
  int attempts = 0;
  while (done < n && attempts < 20 * n) {
    ++attempts;
    const int H = 1 + (done % 2);
    const Scenario sc =
        sample_scenario(mix_seed(seed, 0xE21u, attempts), cfg.env);
    const GoalSpec goal = GoalSpec::from_position(sc.p_goal);
    const EllipsoidShape infl = inflated_ellipsoid(cfg.env);

    PolicyParams params = PolicyParams::init(
        6, static_cast<unsigned>(mix_seed(seed, 0xE22u, attempts)));
    for (int r = 0; r < params.W3.rows(); ++r)
      for (int c = 0; c < params.W3.cols(); ++c)
        params.W3(r, c) = 0.15 * nrm(rng);
    for (int r = 0; r < params.b3.size(); ++r) params.b3(r) = 0.15 * nrm(rng);

    // Base rollout freezes the state / observation / previous-control
    // sequence; the verified object is the per-step composition
    // dL/dparams = backward(dL/dz) with dL/dz = dxi_dz^T dL/dxi.
    std::vector<QuadState> xs;
    std::vector<Observation> obses;
    std::vector<Vec4> u_prevs;
    std::vector<OcpSolution> sols;
    std::vector<std::vector<int>> checked_nodes;
    PolicyGrad g = PolicyGrad::zeros_like(params);
    QuadState x = sc.x_init;
    Vec4 u_prev = cfg.ocp.dyn.u_hover();
    bool ok = true;
    for (int i = 0; i < H && ok; ++i) {
      const Observation obs = build_observation(x, sc.p_goal, sc.gate);
      ForwardCache cache;
      const DecisionVector z = policy_forward(params, obs, cfg.scaling, cache);
      const OcpSolution sol = solve_ocp(x, z, goal, cfg.ocp);
      if (!sol.converged) {
        ok = false;
        break;
      }
      const LossReport rep =
          total_loss(sol, sc.gate, infl, sc.p_goal, u_prev, cfg.loss);
      if (rep.solver_failures > 0) {
        ok = false;
        break;
      }
      TrajectorySensitivity sens;
      try {
        sens = differentiate_ocp(sol, z, goal, cfg.ocp);
      } catch (const std::exception&) {
        ok = false;
        break;
      }
      Vec20 dz = Vec20::Zero();
      for (std::size_t k = 0; k < sens.dx_dz.size(); ++k)
        dz += sens.dx_dz[k].transpose() * rep.grad_xi.d_xs[k];
      for (std::size_t k = 0; k < sens.du_dz.size(); ++k)
        dz += sens.du_dz[k].transpose() * rep.grad_xi.d_us[k];
      g += policy_backward(params, cfg.scaling, cache, dz);

      std::vector<int> nodes;
      for (const auto& na : rep.alpha_values) nodes.push_back(na.node);
      xs.push_back(x);
      obses.push_back(obs);
      u_prevs.push_back(u_prev);
      sols.push_back(sol);
      checked_nodes.push_back(std::move(nodes));

      const Vec4 u0 = sol.us[0];
      x = step_env(x, ControlInput::from_vector(u0), cfg.ocp.dyn);
      u_prev = u0;
    }
    if (!ok) continue;

    // Loss of the frozen chain under perturbed parameters. Returns NaN when
    // a subproblem fails or the set of proximity-checked nodes changes
    // (the indicator is discontinuous; such draws are redrawn).
    auto frozen_loss = [&](const PolicyParams& p) {
      double total = 0.0;
      for (int i = 0; i < H; ++i) {
        ForwardCache cache;
        const DecisionVector z = policy_forward(p, obses[i], cfg.scaling, cache);
        const OcpSolution sol = solve_ocp(xs[i], z, goal, cfg.ocp, &sols[i]);
        if (!sol.converged) return kNaN;
        const LossReport rep =
            total_loss(sol, sc.gate, infl, sc.p_goal, u_prevs[i], cfg.loss);
        if (rep.solver_failures > 0) return kNaN;
        std::vector<int> nodes;
        for (const auto& na : rep.alpha_values) nodes.push_back(na.node);
        if (nodes != checked_nodes[i]) return kNaN;
        total += rep.total;
      }
      return total;
    };

    bool instance_ok = true;
    for (int d = 0; d < 2 && instance_ok; ++d) {
      const PolicyGrad dir = random_direction(params, rng);
      PolicyParams pp = params, pm = params;
      params_axpy(pp, dir, delta);
      params_axpy(pm, dir, -delta);
      const double fp = frozen_loss(pp);
      const double fm = frozen_loss(pm);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        instance_ok = false;
        break;
      }
      const double fd = (fp - fm) / (2.0 * delta);
      const double an = grad_dot(g, dir);
      const double rel = std::abs(fd - an) / std::max(1.0, std::abs(an));
      worst = std::max(worst, rel);
    }
    if (!instance_ok) continue;
    ++done;
  }
  return {"end_to_end", done, worst, 1e-2, done == n && worst < 1e-2};
}

// ---------------------------------------------------------------------------
// Shared command helpers
// ---------------------------------------------------------------------------

int load_config_or_fail(const CliOptions& opts, ProjectConfig& pc) {
  try {
    if (!opts.config_path.empty()) pc = load_project_config(opts.config_path);
    apply_env_overrides(pc);
    if (opts.seed_set) pc.train.seed = opts.seed;
    if (opts.threads > 0) pc.train.threads = opts.threads;
    if (opts.trials > 0) pc.train.eval_trials = opts.trials;
    validate_project_config(
        pc, opts.config_path.empty() ? "<defaults>" : opts.config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

bool ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    std::cerr << "cannot create output directory '" << dir
              << "': " << ec.message() << "\n";
    return false;
  }
  return true;
}

json epoch_to_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch},
         {"mean_loss", r.mean_loss},
         {"mean_gate", r.mean_gate},
         {"mean_goal", r.mean_goal},
         {"mean_control_diff", r.mean_control_diff},
         {"grad_norm", r.grad_norm},
         {"sim_steps", r.sim_steps},
         {"wall_time_s", r.wall_time_s},
         {"lr", r.lr},
         {"mpc_failures", r.mpc_failures}};
  if (std::isfinite(r.success_rate)) {
    j["success_rate"] = r.success_rate;
  } else {
    j["success_rate"] = nullptr;
  }
  return j;
}

int load_policy_or_fail(const CliOptions& opts, const ProjectConfig& pc,
                        PolicyFn& policy, OutputScaling& scaling) {
  scaling = pc.train.scaling;
  if (opts.baseline) {
    policy = gate_aligned_policy(scaling);
    return 0;
  }
  if (opts.checkpoint.empty()) {
    std::cerr << "a checkpoint is required (or pass --baseline)\n";
    return 3;
  }
  PolicyParams params;
  try {
    load_checkpoint(opts.checkpoint, params, scaling);
  } catch (const std::exception& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  }
  policy = network_policy(std::move(params), scaling);
  return 0;
}

// Replay scenarios: {"seed": n} draws from the configured distribution;
// explicit "x_init" {p,v,q}, "p_goal", and "gate" {center, tilt} fields
// override the drawn values.
int load_scenario_or_fail(const std::string& path, const EnvConfig& env,
                          Scenario& sc) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "scenario error: cannot open '" << path << "'\n";
    return 4;
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  json root;
  try {
    root = json::parse(buf.str(), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    std::cerr << "scenario error: " << path << ": " << e.what() << "\n";
    return 4;
  }
  if (!root.is_object()) {
    std::cerr << "scenario error: " << path << ": top level must be an object\n";
    return 4;
  }

  auto read_vec = [&](const json& node, const char* key, int len,
                      double* out) -> bool {
    const json& v = node.at(key);
    if (!v.is_array() || static_cast<int>(v.size()) != len) return false;
    for (int i = 0; i < len; ++i) {
      if (!v[i].is_number()) return false;
      out[i] = v[i].get<double>();
    }
    return true;
  };

  std::uint64_t seed = 0;
  try {
    for (const auto& item : root.items()) {
      const std::string& key = item.key();
      if (key != "seed" && key != "x_init" && key != "p_goal" && key != "gate") {
        std::cerr << "scenario error: " << path << ": unknown key '" << key
                  << "'\n";
        return 4;
      }
    }
    if (root.contains("seed")) {
      if (!root["seed"].is_number_integer() || root["seed"].get<long long>() < 0) {
        std::cerr << "scenario error: " << path << ": seed must be a"
                  << " non-negative integer\n";
        return 4;
      }
      seed = root["seed"].get<std::uint64_t>();
    }
    sc = sample_scenario(seed, env);

    if (root.contains("x_init")) {
      const json& xj = root["x_init"];
      if (!xj.is_object()) throw std::runtime_error("x_init must be an object");
      for (const auto& item : xj.items()) {
        if (item.key() != "p" && item.key() != "v" && item.key() != "q")
          throw std::runtime_error("x_init: unknown key '" + item.key() + "'");
      }
      if (xj.contains("p") && !read_vec(xj, "p", 3, sc.x_init.p.data()))
        throw std::runtime_error("x_init.p must be 3 numbers");
      if (xj.contains("v") && !read_vec(xj, "v", 3, sc.x_init.v.data()))
        throw std::runtime_error("x_init.v must be 3 numbers");
      if (xj.contains("q")) {
        if (!read_vec(xj, "q", 4, sc.x_init.q.data()))
          throw std::runtime_error("x_init.q must be 4 numbers");
        const double nq = sc.x_init.q.norm();
        if (nq < 1e-6) throw std::runtime_error("x_init.q is numerically zero");
        sc.x_init.q /= nq;
      }
    }
    if (root.contains("p_goal") &&
        !read_vec(root, "p_goal", 3, sc.p_goal.data()))
      throw std::runtime_error("p_goal must be 3 numbers");
    if (root.contains("gate")) {
      const json& gj = root["gate"];
      if (!gj.is_object()) throw std::runtime_error("gate must be an object");
      Vec3 center = sc.gate.center;
      double tilt = sc.gate.tilt;
      for (const auto& item : gj.items()) {
        if (item.key() != "center" && item.key() != "tilt")
          throw std::runtime_error("gate: unknown key '" + item.key() + "'");
      }
      if (gj.contains("center") && !read_vec(gj, "center", 3, center.data()))
        throw std::runtime_error("gate.center must be 3 numbers");
      if (gj.contains("tilt")) {
        if (!gj["tilt"].is_number())
          throw std::runtime_error("gate.tilt must be a number");
        tilt = gj["tilt"].get<double>();
      }
      sc.gate = build_gate(center, tilt, env.inner_width, env.inner_height,
                           env.bar_thickness, env.bar_depth);
    }
  } catch (const std::exception& e) {
    std::cerr << "scenario error: " << path << ": " << e.what() << "\n";
    return 4;
  }
  sc.seed = seed;
  return 0;
}

}  // namespace

double max_rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  if (got.rows() != want.rows() || got.cols() != want.cols())
    return std::numeric_limits<double>::infinity();
  const double scale = std::max(1.0, want.cwiseAbs().maxCoeff());
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

std::vector<AuditResult> run_gradient_audit(const ProjectConfig& cfg,
                                            std::uint64_t seed,
                                            const std::string& suite_filter,
                                            int instances_per_suite) {
  const int n = std::max(1, instances_per_suite);
  std::vector<AuditResult> out;
  auto want = [&](const char* name) {
    return suite_filter.empty() || suite_filter == name;
  };
  if (want("dynamics")) out.push_back(audit_dynamics(cfg, seed, n));
  if (want("ocp_sensitivity"))
    out.push_back(audit_ocp_sensitivity(cfg, seed, n));
  if (want("envelope")) out.push_back(audit_envelope(cfg, seed, n));
  if (want("policy")) out.push_back(audit_policy(cfg, seed, n));
  if (want("end_to_end")) out.push_back(audit_end_to_end(cfg, seed, n));
  return out;
}

int cmd_audit_grads(const CliOptions& opts) {
  ProjectConfig pc;
  if (int rc = load_config_or_fail(opts, pc)) return rc;
  const std::uint64_t seed = opts.seed_set ? opts.seed : 2026;
  const int n = opts.instances > 0 ? opts.instances : 100;

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<AuditResult> results =
      run_gradient_audit(pc, seed, opts.suite, n);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  if (results.empty()) {
    std::cerr << "unknown suite '" << opts.suite << "'; available: dynamics,"
              << " ocp_sensitivity, envelope, policy, end_to_end\n";
    return 1;
  }

  std::cout << std::left << std::setw(18) << "suite" << std::setw(11)
            << "instances" << std::setw(15) << "worst_rel_err" << std::setw(10)
            << "tol" << "result\n";
  bool all_pass = true;
  for (const AuditResult& r : results) {
    std::ostringstream err, tol;
    err << std::scientific << std::setprecision(2) << r.worst_rel_err;
    tol << std::scientific << std::setprecision(0) << r.tol;
    std::cout << std::left << std::setw(18) << r.name << std::setw(11)
              << r.instances << std::setw(15) << err.str() << std::setw(10)
              << tol.str() << (r.pass ? "PASS" : "FAIL") << "\n";
    all_pass = all_pass && r.pass;
  }
  std::cout << "audit wall time: " << std::fixed << std::setprecision(1)
            << secs << " s\n";
  return all_pass ? 0 : 1;
}

int cmd_train(const CliOptions& opts) {
  ProjectConfig pc;
  if (int rc = load_config_or_fail(opts, pc)) return rc;
  if (!ensure_out_dir(opts.out_dir)) return 1;

  const std::filesystem::path out(opts.out_dir);
  try {
    save_project_config((out / "resolved_config.json").string(), pc);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  std::ofstream log_stream((out / "train_log.jsonl").string());
  if (!log_stream) {
    std::cerr << "cannot open train_log.jsonl for writing\n";
    return 1;
  }

  auto on_epoch = [&](const EpochRecord& r) {
    log_stream << epoch_to_json(r).dump() << "\n";
    log_stream.flush();
    std::ostringstream line;
    line << "epoch " << std::setw(4) << r.epoch << "  loss " << std::scientific
         << std::setprecision(3) << r.mean_loss << "  gate " << r.mean_gate
         << "  goal " << r.mean_goal << "  |g| " << r.grad_norm << "  steps "
         << r.sim_steps << "  lr " << r.lr;
    if (r.mpc_failures > 0) line << "  mpc_failures " << r.mpc_failures;
    if (std::isfinite(r.success_rate))
      line << "  success " << std::fixed << std::setprecision(2)
           << r.success_rate;
    std::cout << line.str() << "\n" << std::flush;
  };

  auto [params, log] = train(pc.train, on_epoch);

  save_checkpoint((out / "checkpoint.json").string(), params,
                  pc.train.scaling);

  {
    std::ofstream curve((out / "learning_curve.csv").string());
    curve << "epoch,mean_loss,mean_gate,mean_goal,mean_control_diff,"
             "grad_norm,success_rate,sim_steps,wall_time_s,lr,mpc_failures\n";
    for (const EpochRecord& r : log.epochs) {
      curve << r.epoch << "," << fmt(r.mean_loss) << "," << fmt(r.mean_gate)
            << "," << fmt(r.mean_goal) << "," << fmt(r.mean_control_diff)
            << "," << fmt(r.grad_norm) << ","
            << (std::isfinite(r.success_rate) ? fmt(r.success_rate) : "nan")
            << "," << r.sim_steps << "," << fmt(r.wall_time_s) << ","
            << fmt(r.lr) << "," << r.mpc_failures << "\n";
    }
  }

  const PolicyFn policy = network_policy(params, pc.train.scaling);
  const EvalReport final_eval =
      evaluate(policy, pc.train.eval_trials,
               mix_seed(pc.train.seed, 0xF19A1u, 0), pc.train);

  json summary{{"total_sim_steps", log.total_sim_steps},
               {"epochs", static_cast<int>(log.epochs.size())},
               {"aborted", log.aborted},
               {"abort_reason", log.abort_reason},
               {"final_success_rate", final_eval.success_rate},
               {"final_eval_trials", final_eval.n_trials}};
  std::ofstream((out / "summary.json").string()) << summary.dump(2) << "\n";

  std::cout << "training " << (log.aborted ? "ABORTED" : "finished") << ": "
            << log.total_sim_steps << " sim steps, final success rate "
            << std::fixed << std::setprecision(3) << final_eval.success_rate
            << " on " << final_eval.n_trials << " trials\n";
  if (log.aborted) {
    std::cout << "abort reason: " << log.abort_reason << "\n";
    return 1;
  }
  std::cout << "checkpoint: " << (out / "checkpoint.json").string() << "\n";
  return 0;
}

int cmd_eval(const CliOptions& opts) {
  ProjectConfig pc;
  if (int rc = load_config_or_fail(opts, pc)) return rc;
  PolicyFn policy;
  OutputScaling scaling;
  if (int rc = load_policy_or_fail(opts, pc, policy, scaling)) return rc;
  if (!ensure_out_dir(opts.out_dir)) return 1;

  const int trials = opts.trials > 0 ? opts.trials : 128;
  const std::uint64_t seed = opts.seed_set ? opts.seed : pc.train.seed;
  const EvalReport rep = evaluate(policy, trials, seed, pc.train);

  const std::filesystem::path out(opts.out_dir);
  std::ofstream csv((out / "eval_trials.csv").string());
  csv << "trial,seed,success,crossed,min_alpha,goal_distance,steps,"
         "mpc_failures,aborted\n";
  for (int i = 0; i < static_cast<int>(rep.trials.size()); ++i) {
    const EpisodeResult& ep = rep.trials[i];
    csv << i << "," << rep.trial_seeds[i] << "," << (ep.success ? 1 : 0) << ","
        << (ep.crossed ? 1 : 0) << "," << fmt(ep.min_alpha) << ","
        << fmt(ep.goal_distance) << "," << ep.controls.size() << ","
        << ep.mpc_failures << "," << (ep.aborted ? 1 : 0) << "\n";
  }

  std::cout << (opts.baseline ? "baseline" : "policy") << " success rate: "
            << std::fixed << std::setprecision(3) << rep.success_rate << " ("
            << rep.n_success << "/" << rep.n_trials << ")\n";
  std::cout << "per-trial results: " << (out / "eval_trials.csv").string()
            << "\n";
  return 0;
}

int cmd_replay(const CliOptions& opts) {
  ProjectConfig pc;
  if (int rc = load_config_or_fail(opts, pc)) return rc;
  PolicyFn policy;
  OutputScaling scaling;
  if (int rc = load_policy_or_fail(opts, pc, policy, scaling)) return rc;
  if (opts.scenario_path.empty()) {
    std::cerr << "replay requires --scenario\n";
    return 4;
  }
  Scenario sc;
  if (int rc = load_scenario_or_fail(opts.scenario_path, pc.train.env, sc))
    return rc;
  if (!ensure_out_dir(opts.out_dir)) return 1;

  const TrainConfig& cfg = pc.train;
  const GoalSpec goal = GoalSpec::from_position(sc.p_goal);
  const EllipsoidShape infl = inflated_ellipsoid(cfg.env);
  const EllipsoidShape true_ell = true_ellipsoid(cfg.env);

  const std::filesystem::path out(opts.out_dir);
  const std::string csv_path = opts.output_csv.empty()
                                   ? (out / "replay.csv").string()
                                   : opts.output_csv;
  std::ofstream csv(csv_path);
  if (!csv) {
    std::cerr << "cannot open '" << csv_path << "' for writing\n";
    return 1;
  }
  csv << "time,px,py,pz,vx,vy,vz,qw,qx,qy,qz,f_r,wx,wy,wz";
  for (int j = 0; j < 20; ++j) csv << ",z" << j;
  csv << ",alpha_bar0,alpha_bar1,alpha_bar2,alpha_bar3"
      << ",l_total,l_gate,l_goal,l_control_diff\n";

  auto state_alphas = [&](const QuadState& x) {
    std::array<double, 4> a{};
    EllipsoidShape ell = true_ell;
    ell.pose.p = x.p;
    ell.pose.q = x.q;
    for (int b = 0; b < 4; ++b) {
      const CollisionSolution s =
          min_scaling(ell.pose, ell, sc.gate.bars[b], cfg.env.collision);
      a[b] = s.converged ? s.alpha_star : kNaN;
    }
    return a;
  };
  auto write_row = [&](double t, const QuadState& x, const Vec4* u,
                       const Vec20* z, const LossReport* rep) {
    csv << fmt(t);
    const Vec10 xv = x.to_vector();
    for (int j = 0; j < 10; ++j) csv << "," << fmt(xv(j));
    for (int j = 0; j < 4; ++j) csv << "," << (u ? fmt((*u)(j)) : "nan");
    for (int j = 0; j < 20; ++j) csv << "," << (z ? fmt((*z)(j)) : "nan");
    for (double a : state_alphas(x)) csv << "," << fmt(a);
    if (rep) {
      csv << "," << fmt(rep->total) << "," << fmt(rep->l_gate) << ","
          << fmt(rep->l_goal) << "," << fmt(rep->l_control_diff);
    } else {
      csv << ",nan,nan,nan,nan";
    }
    csv << "\n";
  };

  std::vector<QuadState> states;
  QuadState x = sc.x_init;
  Vec4 u_prev = cfg.ocp.dyn.u_hover();
  OcpSolution warm;
  bool have_warm = false;
  int mpc_failures = 0;
  OcpConfig ocp = cfg.ocp;
  const double t_ref0 = traversal_time_estimate(
      sc.x_init, sc.gate, cfg.env.traversal_speed, ocp.N * ocp.dt);
  for (int i = 0; i < cfg.horizon; ++i) {
    ocp.t_ref = std::max(t_ref0 - i * ocp.dt, 0.0);
    const DecisionVector z = policy(x, sc);
    const OcpSolution sol =
        solve_ocp(x, z, goal, ocp, have_warm ? &warm : nullptr);
    if (!sol.converged) ++mpc_failures;
    const LossReport rep =
        total_loss(sol, sc.gate, infl, sc.p_goal, u_prev, cfg.loss);
    const Vec4 u0 = sol.us[0];
    write_row(i * cfg.ocp.dt, x, &u0, &z.z, &rep);
    states.push_back(x);
    x = step_env(x, ControlInput::from_vector(u0), cfg.ocp.dyn);
    u_prev = u0;
    warm = shift_warm_start(sol);
    have_warm = true;
  }
  states.push_back(x);
  write_row(cfg.horizon * cfg.ocp.dt, x, nullptr, nullptr, nullptr);

  const EpisodeResult judged =
      judge_episode(states, sc.gate, sc.p_goal, cfg.env);
  std::cout << "replay: " << (judged.success ? "SUCCESS" : "FAILURE")
            << "  crossed=" << (judged.crossed ? 1 : 0)
            << "  min_alpha=" << std::setprecision(6) << judged.min_alpha
            << "  goal_distance=" << judged.goal_distance
            << "  mpc_failures=" << mpc_failures << "\n";
  std::cout << "trace: " << csv_path << "\n";
  return 0;
}

}  // namespace gatecross
