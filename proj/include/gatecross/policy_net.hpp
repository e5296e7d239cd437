#pragma once

#include <string>
#include <vector>

#include "gatecross/collision.hpp"
#include "gatecross/ocp.hpp"
#include "gatecross/types.hpp"

namespace gatecross {

/// Network input. Position and quaternion are world-frame (the world
/// mapping of the reference head needs them); velocity, goal, and gate
/// corners are expressed in the body frame. Corner order: top-left,
/// top-right, bottom-left, bottom-right in the gate frame.
struct Observation {
  Vec3 p_world = Vec3::Zero();
  Vec3 v_body = Vec3::Zero();
  Vec4 q = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 p_goal_body = Vec3::Zero();
  std::array<Vec3, 4> corners_body{};

  Vec25 to_vector() const {
    Vec25 o;
    o << p_world, v_body, q, p_goal_body, corners_body[0], corners_body[1],
        corners_body[2], corners_body[3];
    return o;
  }
};

Observation build_observation(const QuadState& x, const Vec3& p_goal,
                              const GateGeometry& gate);

/// Output-head ranges. The first three raw outputs map through scaled
/// sigmoids to a body-frame reference offset per axis; the nine matrix
/// entries are linear; the last eight map through scaled sigmoids to
/// [q_p_ref_diag (3), q_p_goal_diag (3), q_R_ref, gamma].
struct OutputScaling {
  double p_off_lo = -3.0;  // [m]
  double p_off_hi = 3.0;
  Eigen::Matrix<double, 8, 1> lo =
      (Eigen::Matrix<double, 8, 1>() << 0, 0, 0, 0, 0, 0, 0, 0.1).finished();
  Eigen::Matrix<double, 8, 1> hi =
      (Eigen::Matrix<double, 8, 1>() << 300, 300, 300, 200, 200, 200, 100, 10)
          .finished();
};

/// MLP 25 -> hidden -> hidden -> 20 with SiLU activations and spectral
/// normalization (one persisted power iteration per hidden matrix). Raw
/// weights are stored; forward uses W / sigma. Adam moments live here so a
/// checkpoint is self-contained.
struct PolicyParams {
  int hidden = 256;
  Eigen::MatrixXd W1, W2, W3;
  Eigen::VectorXd b1, b2, b3;
  Eigen::VectorXd u1, v1, u2, v2;  // power-iteration vectors
  double sigma1 = 1.0, sigma2 = 1.0;
  Eigen::MatrixXd m_W1, v_W1, m_W2, v_W2, m_W3, v_W3;
  Eigen::VectorXd m_b1, v_b1, m_b2, v_b2, m_b3, v_b3;
  long long step = 0;

  /// He-normal hidden layers, zero output layer (so the sigmoid heads sit
  /// exactly at their midpoints), settled power iterations.
  static PolicyParams init(int hidden, unsigned seed);
};

struct PolicyGrad {
  Eigen::MatrixXd dW1, dW2, dW3;
  Eigen::VectorXd db1, db2, db3;

  static PolicyGrad zeros_like(const PolicyParams& p);
  PolicyGrad& operator+=(const PolicyGrad& o);
  PolicyGrad& operator*=(double s);
  double norm() const;
};

/// Activations retained by forward for the backward pass.
struct ForwardCache {
  Vec25 o;
  Eigen::VectorXd a1, h1, a2, h2;
  Vec20 y;  // raw outputs before the heads
};

DecisionVector policy_forward(const PolicyParams& params, const Observation& o,
                              const OutputScaling& scaling, ForwardCache& cache);

/// Reverse-mode gradient of a scalar with adjoint dL_dz, through the heads
/// (including the world mapping of the reference position), the SiLU
/// layers, and the frozen-at-step spectral normalization. d_obs, when
/// non-null, receives the input gradient. Throws std::invalid_argument on
/// a cache/params shape mismatch.
PolicyGrad policy_backward(const PolicyParams& params,
                           const OutputScaling& scaling,
                           const ForwardCache& cache, const Vec20& dL_dz,
                           Vec25* d_obs = nullptr);

/// Standard Adam with bias correction followed by one power iteration per
/// hidden matrix to refresh the spectral-norm estimates.
void adam_update(PolicyParams& params, const PolicyGrad& grad, double lr,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Plain gradient-descent update (the descent option); also refreshes the
/// spectral-norm estimates.
void sgd_update(PolicyParams& params, const PolicyGrad& grad, double lr);

/// Supervised regression of the reference heads to (gate center, identity
/// attitude) over the given observations. The eight sigmoid heads receive
/// no gradient, so they remain exactly at their range midpoints. Throws
/// std::runtime_error (carrying the final loss) if the MSE target is not
/// reached.
void pretrain_center(PolicyParams& params, const OutputScaling& scaling,
                     const std::vector<Observation>& observations,
                     const std::vector<Vec3>& gate_centers, double mse_tol,
                     int max_epochs = 4000, double lr = 1e-3);

/// Checkpoint container: JSON with layer shapes, weights, optimizer state,
/// and the OutputScaling table. Loading validates shapes and the format
/// version and throws std::runtime_error on any mismatch.
void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const OutputScaling& scaling);
void load_checkpoint(const std::string& path, PolicyParams& params,
                     OutputScaling& scaling);

}  // namespace gatecross
