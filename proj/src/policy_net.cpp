#include "gatecross/policy_net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "gatecross/quad_dynamics.hpp"

namespace gatecross {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double dsilu(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

Eigen::VectorXd silu_vec(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return silu(v); });
}

Eigen::VectorXd dsilu_vec(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return dsilu(v); });
}

// One power iteration on W with persisted vectors; returns u' W v.
double power_iteration(const Eigen::MatrixXd& W, Eigen::VectorXd& u,
                       Eigen::VectorXd& v) {
  v = W.transpose() * u;
  const double vn = v.norm();
  if (vn > 0.0) v /= vn;
  u = W * v;
  const double un = u.norm();
  if (un > 0.0) u /= un;
  return u.dot(W * v);
}

void refresh_spectral(PolicyParams& p) {
  p.sigma1 = std::max(power_iteration(p.W1, p.u1, p.v1), 1e-12);
  p.sigma2 = std::max(power_iteration(p.W2, p.u2, p.v2), 1e-12);
}

}  // namespace

Observation build_observation(const QuadState& x, const Vec3& p_goal,
                              const GateGeometry& gate) {
  const Mat3 R = quat_to_rot(x.q);
  Observation o;
  o.p_world = x.p;
  o.v_body = R.transpose() * x.v;
  o.q = x.q;
  o.p_goal_body = R.transpose() * (p_goal - x.p);
  for (int i = 0; i < 4; ++i)
    o.corners_body[i] = R.transpose() * (gate.corners[i] - x.p);
  return o;
}

PolicyParams PolicyParams::init(int hidden, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto he = [&](int rows, int cols) {
    Eigen::MatrixXd W(rows, cols);
    const double std_dev = std::sqrt(2.0 / cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) W(i, j) = std_dev * gauss(rng);
    return W;
  };
  const auto unit = [&](int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = gauss(rng);
    return Eigen::VectorXd(v.normalized());
  };

  PolicyParams p;
  p.hidden = hidden;
  p.W1 = he(hidden, kObsDim);
  p.W2 = he(hidden, hidden);
  p.W3 = Eigen::MatrixXd::Zero(kDecisionDim, hidden);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.b2 = Eigen::VectorXd::Zero(hidden);
  p.b3 = Eigen::VectorXd::Zero(kDecisionDim);
  p.u1 = unit(hidden);
  p.v1 = unit(kObsDim);
  p.u2 = unit(hidden);
  p.v2 = unit(hidden);
  for (int i = 0; i < 30; ++i) refresh_spectral(p);

  p.m_W1 = Eigen::MatrixXd::Zero(hidden, kObsDim);
  p.v_W1 = p.m_W1;
  p.m_W2 = Eigen::MatrixXd::Zero(hidden, hidden);
  p.v_W2 = p.m_W2;
  p.m_W3 = Eigen::MatrixXd::Zero(kDecisionDim, hidden);
  p.v_W3 = p.m_W3;
  p.m_b1 = Eigen::VectorXd::Zero(hidden);
  p.v_b1 = p.m_b1;
  p.m_b2 = Eigen::VectorXd::Zero(hidden);
  p.v_b2 = p.m_b2;
  p.m_b3 = Eigen::VectorXd::Zero(kDecisionDim);
  p.v_b3 = p.m_b3;
  return p;
}

PolicyGrad PolicyGrad::zeros_like(const PolicyParams& p) {
  PolicyGrad g;
  g.dW1 = Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols());
  g.dW2 = Eigen::MatrixXd::Zero(p.W2.rows(), p.W2.cols());
  g.dW3 = Eigen::MatrixXd::Zero(p.W3.rows(), p.W3.cols());
  g.db1 = Eigen::VectorXd::Zero(p.b1.size());
  g.db2 = Eigen::VectorXd::Zero(p.b2.size());
  g.db3 = Eigen::VectorXd::Zero(p.b3.size());
  return g;
}

PolicyGrad& PolicyGrad::operator+=(const PolicyGrad& o) {
  dW1 += o.dW1;
  dW2 += o.dW2;
  dW3 += o.dW3;
  db1 += o.db1;
  db2 += o.db2;
  db3 += o.db3;
  return *this;
}

PolicyGrad& PolicyGrad::operator*=(double s) {
  dW1 *= s;
  dW2 *= s;
  dW3 *= s;
  db1 *= s;
  db2 *= s;
  db3 *= s;
  return *this;
}

double PolicyGrad::norm() const {
  return std::sqrt(dW1.squaredNorm() + dW2.squaredNorm() + dW3.squaredNorm() +
                   db1.squaredNorm() + db2.squaredNorm() + db3.squaredNorm());
}

DecisionVector policy_forward(const PolicyParams& params, const Observation& o,
                              const OutputScaling& scaling,
                              ForwardCache& cache) {
  cache.o = o.to_vector();
  cache.a1 = (params.W1 / params.sigma1) * cache.o + params.b1;
  cache.h1 = silu_vec(cache.a1);
  cache.a2 = (params.W2 / params.sigma2) * cache.h1 + params.b2;
  cache.h2 = silu_vec(cache.a2);
  cache.y = params.W3 * cache.h2 + params.b3;

  DecisionVector z;
  Vec3 off;
  for (int a = 0; a < 3; ++a)
    off(a) = scaling.p_off_lo +
             (scaling.p_off_hi - scaling.p_off_lo) * sigmoid(cache.y(a));
  const Mat3 R = rot_from_quat_hom(o.q);
  z.set_p_ref(o.p_world + R * off);
  for (int i = 3; i < 12; ++i) z.z(i) = cache.y(i);
  for (int j = 0; j < 8; ++j)
    z.z(12 + j) = scaling.lo(j) +
                  (scaling.hi(j) - scaling.lo(j)) * sigmoid(cache.y(12 + j));
  return z;
}

PolicyGrad policy_backward(const PolicyParams& params,
                           const OutputScaling& scaling,
                           const ForwardCache& cache, const Vec20& dL_dz,
                           Vec25* d_obs) {
  if (cache.a1.size() != params.hidden || cache.h2.size() != params.hidden ||
      cache.o.size() != kObsDim)
    throw std::invalid_argument("policy_backward: cache/params shape mismatch");

  const Vec4 q = cache.o.segment<4>(6);
  const Mat3 R = rot_from_quat_hom(q);

  Vec20 dy;
  Vec3 off;
  for (int a = 0; a < 3; ++a) {
    const double s = sigmoid(cache.y(a));
    off(a) = scaling.p_off_lo + (scaling.p_off_hi - scaling.p_off_lo) * s;
    const double d_off = (R.transpose() * dL_dz.segment<3>(0))(a);
    dy(a) = d_off * (scaling.p_off_hi - scaling.p_off_lo) * s * (1.0 - s);
  }
  for (int i = 3; i < 12; ++i) dy(i) = dL_dz(i);
  for (int j = 0; j < 8; ++j) {
    const double s = sigmoid(cache.y(12 + j));
    dy(12 + j) = dL_dz(12 + j) * (scaling.hi(j) - scaling.lo(j)) * s * (1.0 - s);
  }

  PolicyGrad g;
  g.dW3 = dy * cache.h2.transpose();
  g.db3 = dy;
  const Eigen::VectorXd dh2 = params.W3.transpose() * dy;
  const Eigen::VectorXd da2 = dh2.cwiseProduct(dsilu_vec(cache.a2));
  g.dW2 = (da2 * cache.h1.transpose()) / params.sigma2;
  g.db2 = da2;
  const Eigen::VectorXd dh1 = (params.W2.transpose() * da2) / params.sigma2;
  const Eigen::VectorXd da1 = dh1.cwiseProduct(dsilu_vec(cache.a1));
  g.dW1 = (da1 * cache.o.transpose()) / params.sigma1;
  g.db1 = da1;

  if (d_obs) {
    d_obs->setZero();
    *d_obs += Vec25((params.W1.transpose() * da1) / params.sigma1);
    // World mapping of the reference head: p_ref = p + R(q) off.
    d_obs->segment<3>(0) += dL_dz.segment<3>(0);
    const std::array<Mat3, 4> dR = drot_from_quat(q);
    for (int a = 0; a < 4; ++a)
      (*d_obs)(6 + a) += dL_dz.segment<3>(0).dot(dR[a] * off);
  }
  return g;
}

void adam_update(PolicyParams& params, const PolicyGrad& grad, double lr,
                 double beta1, double beta2, double eps) {
  params.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(params.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(params.step));
  const auto update = [&](auto& W, auto& m, auto& v, const auto& g) {
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    W -= (lr * (m / bc1).array() / ((v / bc2).array().sqrt() + eps)).matrix();
  };
  update(params.W1, params.m_W1, params.v_W1, grad.dW1);
  update(params.W2, params.m_W2, params.v_W2, grad.dW2);
  update(params.W3, params.m_W3, params.v_W3, grad.dW3);
  update(params.b1, params.m_b1, params.v_b1, grad.db1);
  update(params.b2, params.m_b2, params.v_b2, grad.db2);
  update(params.b3, params.m_b3, params.v_b3, grad.db3);
  refresh_spectral(params);
}

void sgd_update(PolicyParams& params, const PolicyGrad& grad, double lr) {
  params.step += 1;
  params.W1 -= lr * grad.dW1;
  params.W2 -= lr * grad.dW2;
  params.W3 -= lr * grad.dW3;
  params.b1 -= lr * grad.db1;
  params.b2 -= lr * grad.db2;
  params.b3 -= lr * grad.db3;
  refresh_spectral(params);
}

void pretrain_center(PolicyParams& params, const OutputScaling& scaling,
                     const std::vector<Observation>& observations,
                     const std::vector<Vec3>& gate_centers, double mse_tol,
                     int max_epochs, double lr) {
  if (observations.size() != gate_centers.size() || observations.empty())
    throw std::invalid_argument("pretrain_center: dataset size mismatch");
  const int n = static_cast<int>(observations.size());
  const Mat3 I3 = Mat3::Identity();

  // MSE over samples and the 12 regressed components (reference position
  // against the gate center, attitude matrix against identity).
  const auto sample_residual = [&](const DecisionVector& z, const Vec3& c,
                                   Vec20& dz) {
    dz.setZero();
    const Vec3 ep = z.p_ref() - c;
    const Mat3 eM = z.M_ref() - I3;
    dz.segment<3>(0) = 2.0 * ep;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) dz(3 + 3 * i + j) = 2.0 * eM(i, j);
    return ep.squaredNorm() + eM.squaredNorm();
  };

  std::mt19937 rng(12345);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  const int batch = std::min(256, n);

  ForwardCache cache;
  Vec20 dz;
  double mse = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += batch) {
      const int end = std::min(start + batch, n);
      PolicyGrad g = PolicyGrad::zeros_like(params);
      for (int idx = start; idx < end; ++idx) {
        const int i = order[idx];
        const DecisionVector z =
            policy_forward(params, observations[i], scaling, cache);
        sample_residual(z, gate_centers[i], dz);
        dz /= 12.0 * (end - start);
        g += policy_backward(params, scaling, cache, dz);
      }
      adam_update(params, g, lr);
    }
    mse = 0.0;
    for (int i = 0; i < n; ++i) {
      const DecisionVector z =
          policy_forward(params, observations[i], scaling, cache);
      mse += sample_residual(z, gate_centers[i], dz);
    }
    mse /= 12.0 * n;
    if (mse < mse_tol) return;
  }
  throw std::runtime_error("pretrain_center: did not reach MSE target, final " +
                           std::to_string(mse));
}

namespace {

nlohmann::json mat_to_json(const Eigen::MatrixXd& M) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) a.push_back(M(i, j));
  return a;
}

Eigen::MatrixXd mat_from_json(const nlohmann::json& a, int rows, int cols) {
  if (!a.is_array() || static_cast<int>(a.size()) != rows * cols)
    throw std::runtime_error("checkpoint: tensor size mismatch");
  Eigen::MatrixXd M(rows, cols);
  int k = 0;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) M(i, j) = a[k++].get<double>();
  return M;
}

Eigen::VectorXd vec_from_json(const nlohmann::json& a, int n) {
  return Eigen::VectorXd(mat_from_json(a, n, 1));
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyParams& p,
                     const OutputScaling& scaling) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["hidden"] = p.hidden;
  j["step"] = p.step;
  j["W1"] = mat_to_json(p.W1);
  j["W2"] = mat_to_json(p.W2);
  j["W3"] = mat_to_json(p.W3);
  j["b1"] = mat_to_json(p.b1);
  j["b2"] = mat_to_json(p.b2);
  j["b3"] = mat_to_json(p.b3);
  j["u1"] = mat_to_json(p.u1);
  j["v1"] = mat_to_json(p.v1);
  j["u2"] = mat_to_json(p.u2);
  j["v2"] = mat_to_json(p.v2);
  j["sigma1"] = p.sigma1;
  j["sigma2"] = p.sigma2;
  nlohmann::json adam;
  adam["m_W1"] = mat_to_json(p.m_W1);
  adam["v_W1"] = mat_to_json(p.v_W1);
  adam["m_W2"] = mat_to_json(p.m_W2);
  adam["v_W2"] = mat_to_json(p.v_W2);
  adam["m_W3"] = mat_to_json(p.m_W3);
  adam["v_W3"] = mat_to_json(p.v_W3);
  adam["m_b1"] = mat_to_json(p.m_b1);
  adam["v_b1"] = mat_to_json(p.v_b1);
  adam["m_b2"] = mat_to_json(p.m_b2);
  adam["v_b2"] = mat_to_json(p.v_b2);
  adam["m_b3"] = mat_to_json(p.m_b3);
  adam["v_b3"] = mat_to_json(p.v_b3);
  j["adam"] = std::move(adam);
  nlohmann::json sc;
  sc["p_off_lo"] = scaling.p_off_lo;
  sc["p_off_hi"] = scaling.p_off_hi;
  sc["lo"] = mat_to_json(scaling.lo);
  sc["hi"] = mat_to_json(scaling.hi);
  j["scaling"] = std::move(sc);

  std::ofstream f(path);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f << j.dump();
}

void load_checkpoint(const std::string& path, PolicyParams& p,
                     OutputScaling& scaling) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: parse error: ") +
                             e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported format version");
  const int h = j.at("hidden").get<int>();
  if (h < 1) throw std::runtime_error("checkpoint: invalid hidden size");
  p.hidden = h;
  p.step = j.at("step").get<long long>();
  p.W1 = mat_from_json(j.at("W1"), h, kObsDim);
  p.W2 = mat_from_json(j.at("W2"), h, h);
  p.W3 = mat_from_json(j.at("W3"), kDecisionDim, h);
  p.b1 = vec_from_json(j.at("b1"), h);
  p.b2 = vec_from_json(j.at("b2"), h);
  p.b3 = vec_from_json(j.at("b3"), kDecisionDim);
  p.u1 = vec_from_json(j.at("u1"), h);
  p.v1 = vec_from_json(j.at("v1"), kObsDim);
  p.u2 = vec_from_json(j.at("u2"), h);
  p.v2 = vec_from_json(j.at("v2"), h);
  p.sigma1 = j.at("sigma1").get<double>();
  p.sigma2 = j.at("sigma2").get<double>();
  const auto& adam = j.at("adam");
  p.m_W1 = mat_from_json(adam.at("m_W1"), h, kObsDim);
  p.v_W1 = mat_from_json(adam.at("v_W1"), h, kObsDim);
  p.m_W2 = mat_from_json(adam.at("m_W2"), h, h);
  p.v_W2 = mat_from_json(adam.at("v_W2"), h, h);
  p.m_W3 = mat_from_json(adam.at("m_W3"), kDecisionDim, h);
  p.v_W3 = mat_from_json(adam.at("v_W3"), kDecisionDim, h);
  p.m_b1 = vec_from_json(adam.at("m_b1"), h);
  p.v_b1 = vec_from_json(adam.at("v_b1"), h);
  p.m_b2 = vec_from_json(adam.at("m_b2"), h);
  p.v_b2 = vec_from_json(adam.at("v_b2"), h);
  p.m_b3 = vec_from_json(adam.at("m_b3"), kDecisionDim);
  p.v_b3 = vec_from_json(adam.at("v_b3"), kDecisionDim);
  const auto& sc = j.at("scaling");
  scaling.p_off_lo = sc.at("p_off_lo").get<double>();
  scaling.p_off_hi = sc.at("p_off_hi").get<double>();
  scaling.lo = vec_from_json(sc.at("lo"), 8);
  scaling.hi = vec_from_json(sc.at("hi"), 8);
  if (scaling.p_off_lo >= scaling.p_off_hi ||
      (scaling.hi - scaling.lo).minCoeff() <= 0.0)
    throw std::runtime_error("checkpoint: invalid scaling ranges");
}

}  // namespace gatecross
