#include "gatecross/ocp.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "dynamics_curvature.hpp"
#include "gatecross/attitude.hpp"
#include "gatecross/quad_dynamics.hpp"

namespace gatecross {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Finite-difference step for the dynamics curvature and the stationarity
// level below which the full-curvature backward pass takes over from the
// Gauss-Newton one.
constexpr double kCurvatureEps = 1e-7;
constexpr double kCurvatureKkt = 1.0;

// tanh with hard saturation beyond |s| > 20; indistinguishable from the
// exact value at double precision and immune to extreme arguments.
double sat_tanh(double s) {
  if (s > 20.0) return 1.0;
  if (s < -20.0) return -1.0;
  return std::tanh(s);
}

// -mu (log(s - lo) + log(hi - s)); +inf outside the open interval.
double interval_barrier(double s, double lo, double hi, double mu) {
  if (s <= lo || s >= hi) return kInf;
  return -mu * (std::log(s - lo) + std::log(hi - s));
}

void interval_barrier_derivs(double s, double lo, double hi, double mu,
                             double& d1, double& d2) {
  const double a = s - lo;
  const double b = hi - s;
  d1 = -mu / a + mu / b;
  d2 = mu / (a * a) + mu / (b * b);
}

double bell_factor(double gamma, double t_k, double t_ref) {
  const double dt = t_k - t_ref;
  return std::exp(-gamma * dt * dt);
}

// Goal-reaching quadratic with the gated position block.
double goal_cost(const QuadState& x, const Vec3& q_p_goal_vary,
                 const GoalSpec& goal, const OcpConfig& cfg) {
  const Vec3 dp = x.p - goal.x_goal.p;
  const Vec3 dv = x.v - goal.x_goal.v;
  const Vec4 dq = x.q - goal.x_goal.q;
  return dp.dot(q_p_goal_vary.cwiseProduct(dp)) +
         dv.dot(cfg.q_v_goal.cwiseProduct(dv)) +
         dq.dot(cfg.q_q_goal.cwiseProduct(dq));
}

std::vector<QuadState> rollout(const QuadState& x0, const std::vector<Vec4>& us,
                               const DynamicsParams& dyn) {
  std::vector<QuadState> xs(us.size() + 1);
  xs[0] = x0;
  for (std::size_t k = 0; k < us.size(); ++k)
    xs[k + 1] = rk4_step(xs[k], ControlInput::from_vector(us[k]), dyn);
  return xs;
}

// Fallback initial guess for fast or tilted states where a constant hover
// rollout drifts out of the altitude band (infinite barrier objective):
// level the attitude with a proportional body-rate command and regulate
// the altitude toward the middle of the band, keeping every control
// strictly inside its bounds.
std::vector<Vec4> stabilizing_guess(const QuadState& x0, const OcpConfig& cfg) {
  const double z_mid = 0.5 * (cfg.z_min + cfg.z_max);
  const double f_lo = 0.02 * cfg.dyn.f_max;
  const double f_hi = 0.98 * cfg.dyn.f_max;
  const double om_max = 0.9 * cfg.dyn.omega_max;
  std::vector<Vec4> us(cfg.N);
  QuadState x = x0;
  for (int k = 0; k < cfg.N; ++k) {
    const Mat3 R = quat_to_rot(Vec4(x.q.normalized()));
    const double r33 = std::max(R(2, 2), 0.3);
    const double accel =
        cfg.dyn.g - 4.0 * x.v(2) - 4.0 * (x.p(2) - z_mid);
    const double f = std::clamp(cfg.dyn.m * accel / r33, f_lo, f_hi);
    const double sign_w = x.q(0) >= 0.0 ? 1.0 : -1.0;
    const Vec3 omega =
        (-6.0 * sign_w * x.q.segment<3>(1))
            .cwiseMax(-om_max)
            .cwiseMin(om_max);
    us[k] = Vec4(f, omega(0), omega(1), omega(2));
    x = rk4_step(x, ControlInput::from_vector(us[k]), cfg.dyn);
  }
  return us;
}

}  // namespace

double gate_ref(double t_k, double t_ref) {
  return 0.5 * (1.0 + sat_tanh(1000.0 * (t_ref - t_k)));
}

double gate_goal(double t_k, double t_ref) {
  return 1.0 - gate_ref(t_k, t_ref);
}

TimeVaryingWeights time_varying_weights(const DecisionVector& z, int k,
                                        const OcpConfig& cfg) {
  const double t_k = k * cfg.dt;
  const double s_ref = gate_ref(t_k, cfg.t_ref);
  TimeVaryingWeights w;
  w.q_p_ref_vary = s_ref * z.q_p_ref_diag();
  w.q_p_goal_vary = (1.0 - s_ref) * z.q_p_goal_diag();
  w.q_R_vary = z.q_R_ref() * bell_factor(z.gamma(), t_k, cfg.t_ref);
  return w;
}

double stage_cost(const QuadState& x, const Vec4& u, const DecisionVector& z,
                  int k, const GoalSpec& goal, const OcpConfig& cfg) {
  const TimeVaryingWeights w = time_varying_weights(z, k, cfg);
  const Vec3 dp = x.p - z.p_ref();
  double c = dp.dot(w.q_p_ref_vary.cwiseProduct(dp));
  c += w.q_R_vary * frob_att_cost(x.q, z.M_ref());
  c += goal_cost(x, w.q_p_goal_vary, goal, cfg);
  const Vec4 du = u - cfg.dyn.u_hover();
  c += du.dot(cfg.q_u.cwiseProduct(du));
  return c;
}

double terminal_cost(const QuadState& x_N, const DecisionVector& z,
                     const GoalSpec& goal, const OcpConfig& cfg) {
  const TimeVaryingWeights w = time_varying_weights(z, cfg.N, cfg);
  return goal_cost(x_N, w.q_p_goal_vary, goal, cfg);
}

double state_barrier(const QuadState& x, const OcpConfig& cfg) {
  return interval_barrier(x.p(2), cfg.z_min, cfg.z_max, cfg.barrier_mu);
}

double control_barrier(const Vec4& u, const OcpConfig& cfg) {
  double b = interval_barrier(u(0), 0.0, cfg.dyn.f_max, cfg.barrier_mu);
  for (int i = 1; i < 4; ++i)
    b += interval_barrier(u(i), -cfg.dyn.omega_max, cfg.dyn.omega_max,
                          cfg.barrier_mu);
  return b;
}

void stage_expansion(const QuadState& x, const Vec4& u,
                     const DecisionVector& z, int k, const GoalSpec& goal,
                     const OcpConfig& cfg, bool include_state_barrier,
                     Vec10& lx, Vec4& lu, Mat10& lxx, Mat4& luu) {
  const TimeVaryingWeights w = time_varying_weights(z, k, cfg);
  lx.setZero();
  lxx.setZero();

  const Vec3 dp_ref = x.p - z.p_ref();
  const Vec3 dp_goal = x.p - goal.x_goal.p;
  lx.segment<3>(0) = 2.0 * (w.q_p_ref_vary.cwiseProduct(dp_ref) +
                            w.q_p_goal_vary.cwiseProduct(dp_goal));
  lxx.block<3, 3>(0, 0) =
      Mat3(2.0 * (w.q_p_ref_vary + w.q_p_goal_vary).asDiagonal());

  const Vec3 dv = x.v - goal.x_goal.v;
  lx.segment<3>(3) = 2.0 * cfg.q_v_goal.cwiseProduct(dv);
  lxx.block<3, 3>(3, 3) = Mat3(2.0 * cfg.q_v_goal.asDiagonal());

  const Mat3 M = z.M_ref();
  lx.segment<4>(6) = w.q_R_vary * frob_att_cost_grad(x.q, M) +
                     2.0 * cfg.q_q_goal.cwiseProduct(x.q - goal.x_goal.q);
  lxx.block<4, 4>(6, 6) = w.q_R_vary * frob_att_cost_hess(x.q, M) +
                          Mat4(2.0 * cfg.q_q_goal.asDiagonal());

  const Vec4 du = u - cfg.dyn.u_hover();
  lu = 2.0 * cfg.q_u.cwiseProduct(du);
  luu = Mat4(2.0 * cfg.q_u.asDiagonal());

  double d1 = 0.0, d2 = 0.0;
  if (include_state_barrier) {
    interval_barrier_derivs(x.p(2), cfg.z_min, cfg.z_max, cfg.barrier_mu, d1,
                            d2);
    lx(2) += d1;
    lxx(2, 2) += d2;
  }
  interval_barrier_derivs(u(0), 0.0, cfg.dyn.f_max, cfg.barrier_mu, d1, d2);
  lu(0) += d1;
  luu(0, 0) += d2;
  for (int i = 1; i < 4; ++i) {
    interval_barrier_derivs(u(i), -cfg.dyn.omega_max, cfg.dyn.omega_max,
                            cfg.barrier_mu, d1, d2);
    lu(i) += d1;
    luu(i, i) += d2;
  }
}

void terminal_expansion(const QuadState& x_N, const DecisionVector& z,
                        const GoalSpec& goal, const OcpConfig& cfg, Vec10& lx,
                        Mat10& lxx) {
  const TimeVaryingWeights w = time_varying_weights(z, cfg.N, cfg);
  lx.setZero();
  lxx.setZero();
  lx.segment<3>(0) = 2.0 * w.q_p_goal_vary.cwiseProduct(x_N.p - goal.x_goal.p);
  lxx.block<3, 3>(0, 0) = Mat3(2.0 * w.q_p_goal_vary.asDiagonal());
  lx.segment<3>(3) = 2.0 * cfg.q_v_goal.cwiseProduct(x_N.v - goal.x_goal.v);
  lxx.block<3, 3>(3, 3) = Mat3(2.0 * cfg.q_v_goal.asDiagonal());
  lx.segment<4>(6) = 2.0 * cfg.q_q_goal.cwiseProduct(x_N.q - goal.x_goal.q);
  lxx.block<4, 4>(6, 6) = Mat4(2.0 * cfg.q_q_goal.asDiagonal());

  double d1 = 0.0, d2 = 0.0;
  interval_barrier_derivs(x_N.p(2), cfg.z_min, cfg.z_max, cfg.barrier_mu, d1,
                          d2);
  lx(2) += d1;
  lxx(2, 2) += d2;
}

Mat10x20 stage_cost_xz(const QuadState& x, const DecisionVector& z, int k,
                       const GoalSpec& goal, const OcpConfig& cfg) {
  Mat10x20 C = Mat10x20::Zero();
  const double t_k = k * cfg.dt;
  const double s_ref = gate_ref(t_k, cfg.t_ref);
  const double s_goal = 1.0 - s_ref;
  const double dtk = t_k - cfg.t_ref;
  const double e_bell = bell_factor(z.gamma(), t_k, cfg.t_ref);
  const double w_R = z.q_R_ref() * e_bell;

  // Position tracking: d/dp_ref and d/dq_p_ref_diag of 2 s_ref D (p - p_ref).
  C.block<3, 3>(0, DecisionVector::kPRef) =
      Mat3((-2.0 * s_ref) * z.q_p_ref_diag().asDiagonal());
  const Vec3 dp_ref = x.p - z.p_ref();
  for (int a = 0; a < 3; ++a)
    C(a, DecisionVector::kQpRef + a) = 2.0 * s_ref * dp_ref(a);

  // Gated goal position block: d/dq_p_goal_diag.
  const Vec3 dp_goal = x.p - goal.x_goal.p;
  for (int a = 0; a < 3; ++a)
    C(a, DecisionVector::kQpGoal + a) = 2.0 * s_goal * dp_goal(a);

  // Attitude tracking: the q-gradient is w_R * dF/dq with
  // dF/dq_a = 2 sum_ij dR_a(i,j) (R - M)(i,j), linear in M.
  const Vec4 Fq = frob_att_cost_grad(x.q, z.M_ref());
  const std::array<Mat3, 4> dR = drot_from_quat(x.q);
  for (int a = 0; a < 4; ++a)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        C(6 + a, DecisionVector::kMRef + 3 * i + j) = -2.0 * w_R * dR[a](i, j);
  C.block<4, 1>(6, DecisionVector::kQRRef) = e_bell * Fq;
  C.block<4, 1>(6, DecisionVector::kGamma) = (-dtk * dtk) * w_R * Fq;
  return C;
}

Mat10x20 terminal_cost_xz(const QuadState& x_N, const DecisionVector& z,
                          const GoalSpec& goal, const OcpConfig& cfg) {
  Mat10x20 C = Mat10x20::Zero();
  const double s_goal = gate_goal(cfg.N * cfg.dt, cfg.t_ref);
  const Vec3 dp_goal = x_N.p - goal.x_goal.p;
  for (int a = 0; a < 3; ++a)
    C(a, DecisionVector::kQpGoal + a) = 2.0 * s_goal * dp_goal(a);
  return C;
}

double ocp_objective(const std::vector<QuadState>& xs,
                     const std::vector<Vec4>& us, const DecisionVector& z,
                     const GoalSpec& goal, const OcpConfig& cfg,
                     double* raw_cost) {
  const int N = static_cast<int>(us.size());
  double raw = 0.0;
  double bar = 0.0;
  for (int k = 0; k < N; ++k) {
    raw += stage_cost(xs[k], us[k], z, k, goal, cfg);
    bar += control_barrier(us[k], cfg);
    if (k > 0) bar += state_barrier(xs[k], cfg);
  }
  raw += terminal_cost(xs.back(), z, goal, cfg);
  bar += state_barrier(xs.back(), cfg);
  if (raw_cost) *raw_cost = raw;
  return raw + bar;
}

OcpSolution solve_ocp(const QuadState& x_init, const DecisionVector& z,
                      const GoalSpec& goal, const OcpConfig& cfg,
                      const OcpSolution* warm_start) {
  const int N = cfg.N;
  std::vector<Vec4> us(N, cfg.dyn.u_hover());
  double reg_seed = cfg.reg_init;
  if (warm_start && static_cast<int>(warm_start->us.size()) == N) {
    const std::vector<QuadState> xs_w = rollout(x_init, warm_start->us, cfg.dyn);
    if (std::isfinite(ocp_objective(xs_w, warm_start->us, z, goal, cfg))) {
      us = warm_start->us;
      // Resume the trust schedule where the previous solve left it instead
      // of re-climbing from scratch.
      if (warm_start->final_reg > 0.0)
        reg_seed = std::clamp(warm_start->final_reg, 1e-9, 1.0);
    }
  }
  std::vector<QuadState> xs = rollout(x_init, us, cfg.dyn);
  double J = ocp_objective(xs, us, z, goal, cfg);
  if (!std::isfinite(J)) {
    us = stabilizing_guess(x_init, cfg);
    xs = rollout(x_init, us, cfg.dyn);
    J = ocp_objective(xs, us, z, goal, cfg);
  }

  std::vector<Vec4> kff(N);
  std::vector<Mat4x10> K(N);
  Mat10 A;
  Mat10x4 B;

  // Backward sweep: DDP/LQR gains under a Levenberg shift rho, plus the
  // adjoint stationarity residual max_k |dH/du_k|_inf of the current
  // trajectory and the expected-improvement coefficients. With curv set the
  // value-gradient-weighted dynamics curvature enters the expansion, giving
  // quadratic instead of linear local convergence; it is enabled once the
  // iterate is close enough for the full Newton model to be trustworthy.
  const auto backward = [&](double rho, bool curv, double& kkt_out,
                            double& dV1, double& dV2) {
    Vec10 Vx;
    Mat10 Vxx;
    terminal_expansion(xs[N], z, goal, cfg, Vx, Vxx);
    Vec10 lam = Vx;
    double resid = 0.0;
    dV1 = 0.0;
    dV2 = 0.0;
    Vec10 lx;
    Vec4 lu;
    Mat10 lxx;
    Mat4 luu;
    Mat10 Phi_xx;
    Mat4x10 Phi_ux;
    Mat4 Phi_uu;
    for (int k = N - 1; k >= 0; --k) {
      dynamics_jacobians(xs[k], ControlInput::from_vector(us[k]), cfg.dyn, A,
                         B);
      stage_expansion(xs[k], us[k], z, k, goal, cfg, k > 0, lx, lu, lxx, luu);

      resid = std::max(resid,
                       (lu + B.transpose() * lam).lpNorm<Eigen::Infinity>());
      lam = lx + A.transpose() * lam;

      const Vec10 Qx = lx + A.transpose() * Vx;
      const Vec4 Qu = lu + B.transpose() * Vx;
      Mat10 Qxx = lxx + A.transpose() * Vxx * A;
      Mat4 Quu = luu + B.transpose() * Vxx * B;
      Mat4x10 Qux = B.transpose() * Vxx * A;
      if (curv) {
        dynamics_curvature(xs[k], us[k], Vx, cfg.dyn, kCurvatureEps, Phi_xx,
                           Phi_ux, Phi_uu);
        Qxx += Phi_xx;
        Quu += Phi_uu;
        Qux += Phi_ux;
      }
      Quu = 0.5 * (Quu + Quu.transpose()).eval();

      const Mat4 Quu_reg = Quu + rho * Mat4::Identity();
      Eigen::LLT<Mat4> llt(Quu_reg);
      if (llt.info() != Eigen::Success) return false;
      kff[k] = -llt.solve(Qu);
      K[k] = -llt.solve(Qux);

      Vx = Qx + K[k].transpose() * Quu_reg * kff[k] + K[k].transpose() * Qu +
           Qux.transpose() * kff[k];
      Vxx = Qxx + K[k].transpose() * Quu_reg * K[k] + K[k].transpose() * Qux +
            Qux.transpose() * K[k];
      Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();
      dV1 += kff[k].dot(Qu);
      dV2 += 0.5 * kff[k].dot(Quu_reg * kff[k]);
    }
    kkt_out = resid;
    return true;
  };

  std::vector<QuadState> xs_n(N + 1);
  std::vector<Vec4> us_n(N);
  const auto try_forward = [&](double alpha) {
    xs_n[0] = x_init;
    for (int k = 0; k < N; ++k) {
      const Vec10 dx = xs_n[k].to_vector() - xs[k].to_vector();
      us_n[k] = us[k] + alpha * kff[k] + K[k] * dx;
      xs_n[k + 1] =
          rk4_step(xs_n[k], ControlInput::from_vector(us_n[k]), cfg.dyn);
    }
    return ocp_objective(xs_n, us_n, z, goal, cfg);
  };

  double reg = reg_seed;
  double kkt = kInf;
  bool converged = false;
  int iter = 0;
  double best_kkt = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (; iter < cfg.max_iters; ++iter) {
    double dV1 = 0.0, dV2 = 0.0;
    const bool curv = kkt < kCurvatureKkt;
    bool ok = backward(reg, curv, kkt, dV1, dV2);
    while (!ok && reg <= cfg.reg_max) {
      reg = std::max(10.0 * reg, 1e-6);
      ok = backward(reg, curv, kkt, dV1, dV2);
    }
    if (!ok) break;
    if (kkt < cfg.tol_stationarity) {
      converged = true;
      break;
    }
    const double noise = 1e-12 * (1.0 + std::abs(J));
    const double J_before = J;

    bool accepted = false;
    double gain_ratio = 1.0;
    for (double alpha = 1.0; alpha > 1e-6; alpha *= 0.5) {
      const double Jc = try_forward(alpha);
      if (!std::isfinite(Jc)) continue;
      const double expected = -(alpha * dV1 + alpha * alpha * dV2);
      const double min_gain = expected > 0.0 ? 1e-4 * expected : 0.0;
      const bool decreased = J - Jc > min_gain;
      const bool at_noise_floor = expected <= noise && Jc <= J + noise;
      if (decreased || at_noise_floor) {
        gain_ratio = expected > noise ? (J - Jc) / expected : 1.0;
        xs.swap(xs_n);
        us.swap(us_n);
        J = Jc;
        accepted = true;
        break;
      }
    }
    if (accepted) {
      // Trust-region style update: only relax the shift when the quadratic
      // model predicted the achieved decrease well, and stiffen it when the
      // step badly underdelivered; this keeps the iterate from skating along
      // barrier walls with a collapsed shift and an exploding residual.
      if (gain_ratio > 0.75)
        reg = std::max(reg / 2.0, 1e-9);
      else if (gain_ratio < 0.25)
        reg = std::min(std::max(reg, 1e-8) * 2.0, cfg.reg_max);
    } else {
      reg *= 10.0;
      if (reg > cfg.reg_max) break;
    }
    // Stop once neither the objective (beyond double-precision noise on J)
    // nor the stationarity residual has improved for a stretch: the
    // iterate sits at the numerical floor.
    const bool kkt_progress = kkt < 0.9 * best_kkt;
    if (kkt_progress) best_kkt = kkt;
    if (kkt_progress || (accepted && J_before - J > noise)) {
      stalled = 0;
    } else if (++stalled > 40) {
      break;
    }
  }

  OcpSolution sol;
  sol.xs = std::move(xs);
  sol.us = std::move(us);
  sol.kkt_residual = kkt;
  sol.iterations = iter;
  sol.converged = converged;
  sol.final_reg = reg;
  sol.barrier_objective =
      ocp_objective(sol.xs, sol.us, z, goal, cfg, &sol.objective);
  return sol;
}

}  // namespace gatecross
