#include "gatecross/collision.hpp"

#include <cmath>
#include <stdexcept>

#include "gatecross/quad_dynamics.hpp"

namespace gatecross {

namespace {

Vec4 quat_about_y(double angle) {
  return Vec4(std::cos(0.5 * angle), 0.0, std::sin(0.5 * angle), 0.0);
}

// Constraint values, Jacobian rows and the (single) nonlinear Hessian for
// the minimum-scaling program over y = (x, alpha):
//   g0       = |P (x - c_e)| - alpha          (ellipsoid cone)
//   g1..g6   = n_j^T (x - c_b) - alpha h_j    (box faces)
//   g7       = -alpha
struct ProblemData {
  Mat3 P;        // diag(1/a) R_e^T
  Vec3 c_e;
  Vec3 c_b;
  Eigen::Matrix<double, 6, 3> face_normals;  // world-frame rows
  Eigen::Matrix<double, 6, 1> face_half;
};

constexpr int kNumVars = 4;
constexpr int kNumCons = 8;

void eval_constraints(const ProblemData& pd, const Vec4& y,
                      Eigen::Matrix<double, kNumCons, 1>& g,
                      Eigen::Matrix<double, kNumCons, kNumVars>& J,
                      Mat4& H, double lambda0) {
  const Vec3 x = y.head<3>();
  const double alpha = y(3);

  const Vec3 v = pd.P * (x - pd.c_e);
  const double nv = std::max(v.norm(), 1e-15);
  const Vec3 vhat = v / nv;

  g(0) = nv - alpha;
  J.row(0).head<3>() = vhat.transpose() * pd.P;
  J(0, 3) = -1.0;

  for (int j = 0; j < 6; ++j) {
    g(1 + j) = pd.face_normals.row(j).dot(x - pd.c_b) - alpha * pd.face_half(j);
    J.row(1 + j).head<3>() = pd.face_normals.row(j);
    J(1 + j, 3) = -pd.face_half(j);
  }

  g(7) = -alpha;
  J.row(7).setZero();
  J(7, 3) = -1.0;

  H.setZero();
  H.topLeftCorner<3, 3>() =
      lambda0 * pd.P.transpose() * (Mat3::Identity() - vhat * vhat.transpose()) * pd.P / nv;
}

}  // namespace

GateGeometry build_gate(const Vec3& center, double tilt, double inner_width,
                        double inner_height, double bar_thickness,
                        double bar_depth) {
  if (inner_width <= 0.0 || inner_height <= 0.0 || bar_thickness <= 0.0 ||
      bar_depth <= 0.0) {
    throw std::invalid_argument("build_gate: dimensions must be positive");
  }
  GateGeometry gate;
  gate.center = center;
  gate.tilt = tilt;
  gate.inner_width = inner_width;
  gate.inner_height = inner_height;
  gate.bar_thickness = bar_thickness;
  gate.bar_depth = bar_depth;

  const Vec4 qg = quat_about_y(tilt);
  const Mat3 Rg = rot_from_quat_hom(qg);
  const double w = inner_width, h = inner_height;
  const double t = bar_thickness, d = bar_depth;

  // Top/bottom bars span the full outer width; left/right bars fill the
  // remaining inner height, so the four boxes exactly frame the opening.
  const std::array<Vec3, 4> local_centers = {
      Vec3(0.0, 0.0, 0.5 * (h + t)), Vec3(0.0, 0.0, -0.5 * (h + t)),
      Vec3(-0.5 * (w + t), 0.0, 0.0), Vec3(0.5 * (w + t), 0.0, 0.0)};
  const std::array<Vec3, 4> half_extents = {
      Vec3(0.5 * w + t, 0.5 * d, 0.5 * t), Vec3(0.5 * w + t, 0.5 * d, 0.5 * t),
      Vec3(0.5 * t, 0.5 * d, 0.5 * h), Vec3(0.5 * t, 0.5 * d, 0.5 * h)};
  for (int i = 0; i < 4; ++i) {
    gate.bars[i].pose.p = center + Rg * local_centers[i];
    gate.bars[i].pose.q = qg;
    gate.bars[i].half_extents = half_extents[i];
  }

  const std::array<Vec3, 4> local_corners = {
      Vec3(-0.5 * w, 0.0, 0.5 * h), Vec3(0.5 * w, 0.0, 0.5 * h),
      Vec3(-0.5 * w, 0.0, -0.5 * h), Vec3(0.5 * w, 0.0, -0.5 * h)};
  for (int i = 0; i < 4; ++i) gate.corners[i] = center + Rg * local_corners[i];
  return gate;
}

CollisionSolution min_scaling(const Pose& quad_pose, const EllipsoidShape& ell,
                              const BarPolytope& bar,
                              const CollisionOptions& opts) {
  CollisionSolution sol;

  ProblemData pd;
  pd.c_e = quad_pose.p;
  pd.c_b = bar.pose.p;
  const Mat3 Re = rot_from_quat_hom(quad_pose.q);
  pd.P = ell.semi_axes.cwiseInverse().asDiagonal() * Re.transpose();
  const Mat3 Rb = rot_from_quat_hom(bar.pose.q);
  for (int i = 0; i < 3; ++i) {
    pd.face_normals.row(i) = Rb.col(i).transpose();
    pd.face_normals.row(3 + i) = -Rb.col(i).transpose();
    pd.face_half(i) = bar.half_extents(i);
    pd.face_half(3 + i) = bar.half_extents(i);
  }

  // Coincident centers: both sets shrink to the same point.
  if ((pd.c_e - pd.c_b).norm() < 1e-12) {
    sol.alpha_star = 0.0;
    sol.x_star = pd.c_e;
    sol.converged = true;
    return sol;
  }

  // Strictly interior start on the segment between the centers.
  const Vec3 x0 = 0.5 * (pd.c_e + pd.c_b);
  const double gauge_e = (pd.P * (x0 - pd.c_e)).norm();
  double gauge_b = 0.0;
  const Vec3 xb = Rb.transpose() * (x0 - pd.c_b);
  for (int i = 0; i < 3; ++i)
    gauge_b = std::max(gauge_b, std::abs(xb(i)) / bar.half_extents(i));

  Vec4 y;
  y << x0, 1.5 * std::max(gauge_e, gauge_b) + 0.5;

  Eigen::Matrix<double, kNumCons, 1> g, s, lambda;
  Eigen::Matrix<double, kNumCons, kNumVars> J;
  Mat4 H;
  eval_constraints(pd, y, g, J, H, 0.0);
  s = -g;
  for (int i = 0; i < kNumCons; ++i)
    lambda(i) = std::clamp(1.0 / s(i), 1e-2, 1e2);

  const Vec4 grad_f(0.0, 0.0, 0.0, 1.0);
  const int max_iters = opts.max_iters;
  const double tol = opts.tol;

  for (int iter = 0; iter < max_iters; ++iter) {
    eval_constraints(pd, y, g, J, H, lambda(0));

    const Vec4 r_dual = grad_f + J.transpose() * lambda;
    const Eigen::Matrix<double, kNumCons, 1> r_prim = g + s;
    const double mu = s.dot(lambda) / kNumCons;

    sol.primal_residual = r_prim.cwiseAbs().maxCoeff();
    sol.dual_residual = r_dual.cwiseAbs().maxCoeff();
    sol.comp_slack = (s.cwiseProduct(lambda)).cwiseAbs().maxCoeff();
    sol.iterations = iter;
    if (sol.primal_residual < tol && sol.dual_residual < tol && mu < tol) {
      sol.converged = true;
      break;
    }

    const Eigen::Matrix<double, kNumCons, 1> d = lambda.cwiseQuotient(s);
    Mat4 M = H + J.transpose() * d.asDiagonal() * J;
    M.diagonal().array() += 1e-12;
    const Eigen::LDLT<Mat4> ldlt(M);

    auto solve_step = [&](const Eigen::Matrix<double, kNumCons, 1>& r_comp,
                          Vec4& dy, Eigen::Matrix<double, kNumCons, 1>& ds,
                          Eigen::Matrix<double, kNumCons, 1>& dl) {
      const Vec4 rhs = -r_dual + J.transpose() * (r_comp.cwiseQuotient(s)) -
                       J.transpose() * (d.cwiseProduct(r_prim));
      dy = ldlt.solve(rhs);
      ds = -r_prim - J * dy;
      dl = (-r_comp - lambda.cwiseProduct(ds)).cwiseQuotient(s);
    };

    auto max_step = [](const Eigen::Matrix<double, kNumCons, 1>& w,
                       const Eigen::Matrix<double, kNumCons, 1>& dw) {
      double a = 1.0;
      for (int i = 0; i < kNumCons; ++i)
        if (dw(i) < 0.0) a = std::min(a, -w(i) / dw(i));
      return a;
    };

    // Mehrotra predictor-corrector.
    Vec4 dy_aff;
    Eigen::Matrix<double, kNumCons, 1> ds_aff, dl_aff;
    solve_step(s.cwiseProduct(lambda), dy_aff, ds_aff, dl_aff);

    const double a_aff =
        std::min(max_step(s, ds_aff), max_step(lambda, dl_aff));
    const double mu_aff =
        (s + a_aff * ds_aff).dot(lambda + a_aff * dl_aff) / kNumCons;
    const double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);

    Vec4 dy;
    Eigen::Matrix<double, kNumCons, 1> ds, dl;
    const Eigen::Matrix<double, kNumCons, 1> r_comp =
        s.cwiseProduct(lambda) + ds_aff.cwiseProduct(dl_aff) -
        Eigen::Matrix<double, kNumCons, 1>::Constant(sigma * mu);
    solve_step(r_comp, dy, ds, dl);

    const double tau = 0.995;
    const double step =
        std::min({1.0, tau * max_step(s, ds), tau * max_step(lambda, dl)});
    y += step * dy;
    s += step * ds;
    lambda += step * dl;
  }

  sol.alpha_star = y(3);
  sol.x_star = y.head<3>();
  sol.lambda_star = lambda;
  return sol;
}

EnvelopeGrad envelope_grad(const CollisionSolution& sol, const Pose& quad_pose,
                           const EllipsoidShape& ell, const BarPolytope& bar) {
  if (!sol.converged) {
    throw std::runtime_error(
        "envelope_grad: collision solution did not converge, gradient invalid");
  }

  EnvelopeGrad out;

  // Weak activity check over all constraints: an active constraint whose
  // multiplier vanishes marks a potentially nonsmooth point of alpha*.
  const Mat3 Rb = rot_from_quat_hom(bar.pose.q);
  const Vec3 xb = Rb.transpose() * (sol.x_star - bar.pose.p);
  const Mat3 Re = rot_from_quat_hom(quad_pose.q);
  const Vec3 r = sol.x_star - quad_pose.p;
  const Mat3 Dinv = ell.semi_axes.cwiseInverse().asDiagonal();
  const Vec3 v = Dinv * Re.transpose() * r;

  Eigen::Matrix<double, 8, 1> g;
  g(0) = v.norm() - sol.alpha_star;
  for (int i = 0; i < 3; ++i) {
    g(1 + i) = xb(i) - sol.alpha_star * bar.half_extents(i);
    g(4 + i) = -xb(i) - sol.alpha_star * bar.half_extents(i);
  }
  g(7) = -sol.alpha_star;
  for (int j = 0; j < 8; ++j) {
    if (std::abs(g(j)) < 1e-6 && sol.lambda_star(j) < 1e-8)
      out.weakly_active = true;
  }

  // Only the ellipsoid constraint depends on the quadrotor pose, so the
  // Lagrangian derivative reduces to lambda_0 * dg_0/d(pose).
  const double nv = std::max(v.norm(), 1e-15);
  const Vec3 vhat = v / nv;
  const double lam0 = sol.lambda_star(0);

  out.d_position = -lam0 * (Dinv * Re.transpose()).transpose() * vhat;
  const auto dR = drot_from_quat(quad_pose.q);
  for (int a = 0; a < 4; ++a) {
    out.d_quaternion(a) = lam0 * vhat.dot(Dinv * dR[a].transpose() * r);
  }
  return out;
}

}  // namespace gatecross
