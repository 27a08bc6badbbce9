#pragma once

// Gravity-prior fusion over one keyframe -> current window.
//
// Attitude convention: the IMU (= camera) body-to-world rotation is
//   R_wb = rot_yaw(yaw) * rot_rp(pitch, roll)
// with the world z axis along the sensed specific force of a static sensor,
// so the unit gravity reading in the body frame is rot_rp(pitch, roll)^T e3.
// The relative rotation current <- keyframe is then
//   R = A_cur^T rot_yaw(psi) A_key,   A = rot_rp(pitch, roll),
// where psi = yaw_key - yaw_cur agrees with the 4-DOF solver's yaw when the
// keyframe and current frame are level.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gravpnp/geometry.hpp"
#include "gravpnp/stereo.hpp"

namespace gravpnp {

inline constexpr double kGravity = 9.81;

struct ImuSample {
  double t = 0.0;               // s
  Vec3 gyro = Vec3::Zero();     // rad/s, body frame
  Vec3 accel = Vec3::Zero();    // m/s^2, specific force, body frame
};

struct RollPitch {
  double roll = 0.0;
  double pitch = 0.0;
};

struct FusionState {
  double yaw = 0.0;  // relative yaw (keyframe -> current)
  Vec3 t = Vec3::Zero();
  std::vector<RollPitch> attitudes;  // one per IMU instant, keyframe first, current last
};

struct WishartPrior {
  Mat3 Psi = Mat3::Identity();
  double nu = 10.0;

  static constexpr int kDim = 3;

  /// Prior whose MAP mode (K = 0) equals `mode`.
  static WishartPrior from_mode(const Mat3& mode, double nu) {
    WishartPrior p;
    p.nu = nu;
    p.Psi = mode * (nu + kDim + 1);
    p.validate();
    return p;
  }

  Mat3 mode() const { return Psi / (nu + kDim + 1); }

  void validate() const {
    if (!(nu > kDim + 1)) throw Error(ErrorCode::invalid_argument, "Wishart degrees of freedom must exceed 4");
    if (!Psi.allFinite() || (Psi - Psi.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + Psi.norm())) {
      throw Error(ErrorCode::invalid_argument, "Wishart scale must be symmetric");
    }
    if (Eigen::SelfAdjointEigenSolver<Mat3>(Psi).eigenvalues().minCoeff() < 0.0) {
      throw Error(ErrorCode::invalid_argument, "Wishart scale must be positive semi-definite");
    }
  }
};

struct GravityVector {
  Vec3 g = Vec3::UnitZ();

  GravityVector() = default;
  explicit GravityVector(const Vec3& v) : g(v) {
    if (std::abs(v.norm() - 1.0) > 1e-12) throw Error(ErrorCode::invalid_argument, "gravity vector must be unit");
  }
};

inline Rotation3 attitude_rotation(const EulerYRP& e) { return rot_yaw(e.yaw) * rot_rp(e.pitch, e.roll); }

/// Integrates body rates with a zero-order hold on each interval:
/// R_{k+1} = R_k exp([w_k dt]x).  Returns one attitude per sample, the first
/// equal to `start`.
inline std::vector<Rotation3> propagate_rotation(const Rotation3& start, std::span<const ImuSample> samples) {
  if (samples.empty()) throw Error(ErrorCode::insufficient_data, "no IMU samples");
  std::vector<Rotation3> out;
  out.reserve(samples.size());
  out.push_back(start);
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    const double dt = samples[k + 1].t - samples[k].t;
    if (!(dt > 0.0)) throw Error(ErrorCode::stream_order, "IMU timestamps must be strictly increasing");
    if (dt > 0.1) throw Error(ErrorCode::invalid_argument, "IMU sample spacing exceeds 0.1 s");
    out.push_back(out.back() * exp_so3(samples[k].gyro * dt));
  }
  return out;
}

inline std::vector<EulerYRP> propagate_attitude(const EulerYRP& start, std::span<const ImuSample> samples) {
  const auto rots = propagate_rotation(attitude_rotation(start), samples);
  std::vector<EulerYRP> out;
  out.reserve(rots.size());
  for (const auto& R : rots) out.push_back(factor_yaw_rollpitch(R));
  return out;
}

/// Unit gravity direction seen in the body frame at the given roll/pitch.
inline Vec3 body_gravity(double roll, double pitch, const GravityVector& g = {}) {
  return rot_rp(pitch, roll).transpose() * g.g;
}

/// Roll/pitch that map `g` onto the direction of `accel`.
inline RollPitch rollpitch_from_accel(const Vec3& accel) {
  const double n = accel.norm();
  if (!(n >= 0.1 * kGravity)) throw Error(ErrorCode::unreliable_sample, "accelerometer norm too small");
  const Vec3 u = accel / n;  // (-s_p, -c_p s_r, c_p c_r)
  RollPitch rp;
  rp.pitch = std::asin(std::clamp(-u.x(), -1.0, 1.0));
  rp.roll = std::atan2(-u.y(), u.z());
  return rp;
}

/// a/|a| - A(pitch, roll)^T g.
inline Vec3 gravity_residual(double roll, double pitch, const Vec3& accel, const GravityVector& g = {}) {
  const double n = accel.norm();
  if (!(n >= 0.1 * kGravity)) {
    throw Error(ErrorCode::unreliable_sample, "accelerometer norm below 0.1 g (free fall?)");
  }
  return accel / n - body_gravity(roll, pitch, g);
}

inline Rotation3 relative_rotation(double yaw, const RollPitch& key, const RollPitch& cur) {
  return rot_rp(cur.pitch, cur.roll).transpose() * rot_yaw(yaw) * rot_rp(key.pitch, key.roll);
}

/// Relative yaw psi such that relative_rotation(psi, key, cur) is closest to R.
inline double relative_yaw_from_rotation(const Rotation3& R, const RollPitch& key, const RollPitch& cur) {
  const Mat3 Y = rot_rp(cur.pitch, cur.roll) * R * rot_rp(key.pitch, key.roll).transpose();
  return std::atan2(Y(1, 0) - Y(0, 1), Y(0, 0) + Y(1, 1));
}

/// Reprojection residual q - pi(R p + t) and, optionally, its 2x8 Jacobian
/// w.r.t. (yaw, tx, ty, tz, roll_key, pitch_key, roll_cur, pitch_cur).
inline Vec2 visual_residual(const FusionState& s, const Correspondence& c, const TriPoint& tri,
                            Eigen::Matrix<double, 2, 8>* jac = nullptr) {
  if (s.attitudes.size() < 2) throw Error(ErrorCode::invalid_argument, "fusion state needs at least 2 attitudes");
  const RollPitch& k = s.attitudes.front();
  const RollPitch& u = s.attitudes.back();
  const Mat3 Ak = rot_rp(k.pitch, k.roll);
  const Mat3 AuT = rot_rp(u.pitch, u.roll).transpose();
  const Mat3 Rz = rot_yaw(s.yaw);
  const Vec3 P = AuT * Rz * Ak * tri.p + s.t;
  const Vec2 r = c.q - project(P);
  if (jac != nullptr) {
    Eigen::Matrix<double, 2, 3> D;
    D << 1.0 / P.z(), 0.0, -P.x() / (P.z() * P.z()),
        0.0, 1.0 / P.z(), -P.y() / (P.z() * P.z());
    const Vec3& p = tri.p;
    jac->col(0) = -D * (AuT * rot_yaw_derivative(s.yaw) * Ak * p);
    jac->middleCols<3>(1) = -D;
    jac->col(4) = -D * (AuT * Rz * rot_rp_droll(k.pitch, k.roll) * p);
    jac->col(5) = -D * (AuT * Rz * rot_rp_dpitch(k.pitch, k.roll) * p);
    jac->col(6) = -D * (rot_rp_droll(u.pitch, u.roll).transpose() * Rz * Ak * p);
    jac->col(7) = -D * (rot_rp_dpitch(u.pitch, u.roll).transpose() * Rz * Ak * p);
  }
  return r;
}

/// S = (1/K) sum r r^T.
inline Mat3 sample_covariance(std::span<const Vec3> residuals) {
  if (residuals.empty()) throw Error(ErrorCode::insufficient_data, "no residuals");
  Mat3 S = Mat3::Zero();
  for (const auto& r : residuals) S += r * r.transpose();
  return S / static_cast<double>(residuals.size());
}

/// Posterior mode (Psi + K S) / (nu + K + d + 1).
inline Mat3 wishart_map_update(const WishartPrior& prior, const Mat3& S, std::size_t K) {
  const double k = static_cast<double>(K);
  return (prior.Psi + k * S) / (prior.nu + k + WishartPrior::kDim + 1);
}

/// Negative log-posterior of Sigma given residual scatter K*S (up to constants):
///   (K + nu + d + 1) log|Sigma| + tr((Psi + K S) Sigma^-1).
inline double covariance_objective(const WishartPrior& prior, const Mat3& S, std::size_t K, const Mat3& Sigma) {
  const Eigen::LLT<Mat3> llt(Sigma);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double k = static_cast<double>(K);
  const Mat3 scatter = prior.Psi + k * S;
  return (k + prior.nu + WishartPrior::kDim + 1) * logdet + llt.solve(scatter).trace();
}

struct KeyframePrior {
  RollPitch mean;
  Mat2 cov = Mat2::Identity();  // over (roll, pitch)
};

struct BcdOptions {
  int max_rounds = 20;
  double tolerance = 1e-8;
  double gyro_noise_density = 1.2e-4;  // rad/s/sqrt(Hz)
  double gyro_bias_std = 0.0;          // rad/s, unmodelled bias folded into the coupling weight
  std::optional<KeyframePrior> keyframe_prior;
};

struct BcdResult {
  FusionState state;
  Mat3 sigma_imu = Mat3::Identity();
  int rounds = 0;
  bool degraded = false;
  std::vector<double> cost_history;  // joint cost after each round
  Mat2 current_cov = Mat2::Identity();  // marginal covariance of the current (roll, pitch)
};

/// Stacked, whitened residuals of the windowed problem.
class FusionProblem {
 public:
  FusionProblem(std::span<const Correspondence> corrs, std::span<const TriPoint> tris,
                std::span<const ImuSample> window, double sigma2_vis, const GravityVector& g, const BcdOptions& opt)
      : corrs_(corrs), tris_(tris), window_(window), g_(g), opt_(opt) {
    if (corrs.size() != tris.size()) throw Error(ErrorCode::invalid_argument, "correspondence / point count mismatch");
    if (corrs.size() < 3) throw Error(ErrorCode::insufficient_data, "fusion needs at least 3 correspondences");
    if (window.size() < 2) throw Error(ErrorCode::insufficient_data, "fusion window needs at least 2 IMU instants");
    if (!(sigma2_vis > 0.0)) throw Error(ErrorCode::invalid_argument, "visual variance must be positive");
    inv_sigma_vis_ = 1.0 / std::sqrt(sigma2_vis);
    for (std::size_t k = 0; k + 1 < window.size(); ++k) {
      const double dt = window[k + 1].t - window[k].t;
      if (!(dt > 0.0)) throw Error(ErrorCode::stream_order, "IMU timestamps must be strictly increasing");
      if (dt > 0.1) throw Error(ErrorCode::invalid_argument, "IMU sample spacing exceeds 0.1 s");
      increments_.push_back(exp_so3(window[k].gyro * dt).transpose());
      const double var = opt.gyro_noise_density * opt.gyro_noise_density * dt +
                         std::pow(opt.gyro_bias_std * dt, 2) + 1e-12;
      inv_sigma_coupling_.push_back(1.0 / std::sqrt(var));
    }
    for (const auto& s : window) {
      // validates the norm once up front
      (void)gravity_residual(0.0, 0.0, s.accel, g);
    }
    if (opt.keyframe_prior) {
      const Eigen::LLT<Mat2> llt(opt.keyframe_prior->cov);
      if (llt.info() != Eigen::Success) throw Error(ErrorCode::invalid_argument, "keyframe prior covariance not PD");
      prior_whiten_ = llt.matrixL().solve(Mat2::Identity());
    }
  }

  std::size_t instants() const { return window_.size(); }
  Eigen::Index params() const { return 4 + 2 * static_cast<Eigen::Index>(window_.size()); }
  Eigen::Index rows() const {
    const auto n = static_cast<Eigen::Index>(corrs_.size());
    const auto K = static_cast<Eigen::Index>(window_.size());
    return 2 * n + 3 * K + 3 * (K - 1) + (opt_.keyframe_prior ? 2 : 0);
  }

  std::vector<Vec3> gravity_residuals(const FusionState& s) const {
    std::vector<Vec3> out;
    out.reserve(window_.size());
    for (std::size_t k = 0; k < window_.size(); ++k) {
      out.push_back(gravity_residual(s.attitudes[k].roll, s.attitudes[k].pitch, window_[k].accel, g_));
    }
    return out;
  }

  /// Whitened residual vector; the gravity block is whitened by L^-1 with
  /// Sigma_imu = L L^T.
  Eigen::VectorXd evaluate(const FusionState& s, const Mat3& sigma_imu, Eigen::MatrixXd* J) const {
    check_state(s);
    const Eigen::LLT<Mat3> llt(sigma_imu);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::invalid_argument, "IMU covariance not positive definite");
    const Mat3 W = llt.matrixL().solve(Mat3::Identity());

    const auto n = static_cast<Eigen::Index>(corrs_.size());
    const auto K = static_cast<Eigen::Index>(window_.size());
    const Eigen::Index cur = 4 + 2 * (K - 1);
    Eigen::VectorXd r(rows());
    if (J != nullptr) J->setZero(rows(), params());
    Eigen::Index row = 0;

    Eigen::Matrix<double, 2, 8> jv;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      r.segment<2>(row) = inv_sigma_vis_ * visual_residual(s, corrs_[ii], tris_[ii], J ? &jv : nullptr);
      if (J != nullptr) {
        jv *= inv_sigma_vis_;
        J->block<2, 4>(row, 0) = jv.leftCols<4>();
        J->block<2, 2>(row, 4) = jv.middleCols<2>(4);
        J->block<2, 2>(row, cur) += jv.rightCols<2>();
      }
      row += 2;
    }

    for (Eigen::Index k = 0; k < K; ++k) {
      const RollPitch& a = s.attitudes[static_cast<std::size_t>(k)];
      r.segment<3>(row) = W * gravity_residual(a.roll, a.pitch, window_[static_cast<std::size_t>(k)].accel, g_);
      if (J != nullptr) {
        J->block<3, 2>(row, 4 + 2 * k) = -W * gravity_jacobian(a);
      }
      row += 3;
    }

    for (Eigen::Index k = 0; k + 1 < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const RollPitch& a = s.attitudes[kk];
      const RollPitch& b = s.attitudes[kk + 1];
      const double w = inv_sigma_coupling_[kk];
      const Mat3& D = increments_[kk];
      r.segment<3>(row) = w * (body_gravity(b.roll, b.pitch, g_) - D * body_gravity(a.roll, a.pitch, g_));
      if (J != nullptr) {
        J->block<3, 2>(row, 4 + 2 * k) = -w * D * gravity_jacobian(a);
        J->block<3, 2>(row, 4 + 2 * (k + 1)) = w * gravity_jacobian(b);
      }
      row += 3;
    }

    if (opt_.keyframe_prior) {
      const RollPitch& a = s.attitudes.front();
      const Vec2 d(wrap_angle(a.roll - opt_.keyframe_prior->mean.roll),
                   wrap_angle(a.pitch - opt_.keyframe_prior->mean.pitch));
      r.segment<2>(row) = prior_whiten_ * d;
      if (J != nullptr) J->block<2, 2>(row, 4) = prior_whiten_;
      row += 2;
    }
    return r;
  }

  /// Joint objective with the covariance block and its Wishart prior.
  double joint_cost(const FusionState& s, const Mat3& sigma_imu, const WishartPrior& prior) const {
    const Eigen::VectorXd r = evaluate(s, sigma_imu, nullptr);
    const Eigen::LLT<Mat3> llt(sigma_imu);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double K = static_cast<double>(window_.size());
    return r.squaredNorm() + (K + prior.nu + WishartPrior::kDim + 1) * logdet + llt.solve(prior.Psi).trace();
  }

  static FusionState apply(const FusionState& s, const Eigen::VectorXd& delta) {
    FusionState o = s;
    o.yaw = wrap_angle(s.yaw + delta(0));
    o.t += delta.segment<3>(1);
    for (std::size_t k = 0; k < o.attitudes.size(); ++k) {
      const auto i = 4 + 2 * static_cast<Eigen::Index>(k);
      o.attitudes[k].roll += delta(i);
      o.attitudes[k].pitch += delta(i + 1);
    }
    return o;
  }

 private:
  // d body_gravity / d (roll, pitch)
  Eigen::Matrix<double, 3, 2> gravity_jacobian(const RollPitch& a) const {
    Eigen::Matrix<double, 3, 2> G;
    G.col(0) = rot_rp_droll(a.pitch, a.roll).transpose() * g_.g;
    G.col(1) = rot_rp_dpitch(a.pitch, a.roll).transpose() * g_.g;
    return G;
  }

  void check_state(const FusionState& s) const {
    if (s.attitudes.size() != window_.size()) {
      throw Error(ErrorCode::invalid_argument, "state attitude count must match the IMU window");
    }
  }

  std::span<const Correspondence> corrs_;
  std::span<const TriPoint> tris_;
  std::span<const ImuSample> window_;
  GravityVector g_;
  BcdOptions opt_;
  double inv_sigma_vis_ = 1.0;
  std::vector<Mat3> increments_;
  std::vector<double> inv_sigma_coupling_;
  Mat2 prior_whiten_ = Mat2::Identity();
};

/// Block coordinate descent: Gauss-Newton on the state with Sigma_imu fixed
/// (step-halving so the joint cost never rises), then the closed-form
/// Wishart-MAP covariance update.  The initial Sigma_imu is the covariance
/// update evaluated at `init`.
inline BcdResult bcd_solve(const FusionState& init, std::span<const Correspondence> corrs,
                           std::span<const TriPoint> tris, std::span<const ImuSample> window, double sigma2_vis,
                           const WishartPrior& prior, const GravityVector& g = {}, const BcdOptions& opt = {}) {
  prior.validate();
  if (init.attitudes.size() < 2) throw Error(ErrorCode::invalid_argument, "fusion state needs at least 2 attitudes");
  const FusionProblem problem(corrs, tris, window, sigma2_vis, g, opt);
  const std::size_t K = problem.instants();

  auto covariance_step = [&](const FusionState& s) {
    const auto res = problem.gravity_residuals(s);
    return wishart_map_update(prior, sample_covariance(res), K);
  };

  BcdResult out;
  out.state = init;
  out.sigma_imu = covariance_step(init);
  double cost = problem.joint_cost(out.state, out.sigma_imu, prior);

  Eigen::MatrixXd J;
  for (int round = 0; round < opt.max_rounds; ++round) {
    out.rounds = round + 1;
    const Eigen::VectorXd r = problem.evaluate(out.state, out.sigma_imu, &J);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(J);
    if (qr.rank() < J.cols()) {
      out.degraded = true;
      break;
    }
    const Eigen::VectorXd delta = qr.solve(-r);
    if (!delta.allFinite()) {
      out.degraded = true;
      break;
    }

    // state block
    double step = 1.0;
    FusionState next = out.state;
    double next_cost = cost;
    bool improved = false;
    for (int halving = 0; halving < 20; ++halving, step *= 0.5) {
      const FusionState trial = FusionProblem::apply(out.state, step * delta);
      double c;
      try {
        c = problem.joint_cost(trial, out.sigma_imu, prior);
      } catch (const Error&) {
        continue;  // e.g. a point behind the camera at this step length
      }
      if (c <= cost) {
        next = trial;
        next_cost = c;
        improved = true;
        break;
      }
    }
    const double moved = improved ? step * delta.norm() : 0.0;
    if (improved) {
      out.state = next;
      cost = next_cost;
    }

    // covariance block: exact minimiser given the state
    out.sigma_imu = covariance_step(out.state);
    cost = problem.joint_cost(out.state, out.sigma_imu, prior);
    out.cost_history.push_back(cost);
    if (moved < opt.tolerance) break;
  }

  // marginal covariance of the current roll/pitch
  try {
    problem.evaluate(out.state, out.sigma_imu, &J);
    const Eigen::MatrixXd H = J.transpose() * J;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    const Eigen::Index cur = 4 + 2 * static_cast<Eigen::Index>(K - 1);
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(H.rows(), 2);
    E(cur, 0) = 1.0;
    E(cur + 1, 1) = 1.0;
    const Eigen::MatrixXd X = ldlt.solve(E);
    out.current_cov = X.middleRows<2>(cur);
    out.current_cov = 0.5 * (out.current_cov + out.current_cov.transpose()).eval();
    if (!out.current_cov.allFinite() || ldlt.info() != Eigen::Success) out.degraded = true;
  } catch (const Error&) {
    out.degraded = true;
  }
  return out;
}

}  // namespace gravpnp
