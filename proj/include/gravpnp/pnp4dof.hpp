#pragma once

// 4-DOF (yaw + translation) relative pose estimation with known roll/pitch.
//
// Pipeline: triangulate -> prerotate by R_rp -> stack the linear system in
// x = [cos yaw, sin yaw, t] -> ordinary LS or bias-eliminated solve ->
// Gauss-Newton on the sum of squared point-to-epipolar-line distances.

#include <span>
#include <vector>

#include "gravpnp/geometry.hpp"
#include "gravpnp/stereo.hpp"

namespace gravpnp {

using StateVec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

struct PrerotatedPoint {
  Vec3 rho = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

struct LinearSystem {
  Eigen::MatrixXd A;  // 2n x 5
  Eigen::VectorXd b;  // 2n
  std::vector<Mat3> covs;
  std::vector<Vec2> q;

  std::size_t size() const { return q.size(); }
};

/// Noise-correlation corrections of the normal equations.
struct BiasTerms {
  Mat5 G1 = Mat5::Zero();
  StateVec5 G2 = StateVec5::Zero();
};

inline StateVec5 to_state(const Pose4& pose) {
  StateVec5 x;
  x << std::cos(pose.yaw), std::sin(pose.yaw), pose.t;
  return x;
}

inline Pose4 normalize_state(const StateVec5& x) {
  if (!(std::hypot(x(0), x(1)) > 1e-9)) {
    throw Error(ErrorCode::ambiguous_yaw, "cos/sin components vanish: yaw undefined");
  }
  return {wrap_angle(std::atan2(x(1), x(0))), x.tail<3>()};
}

inline std::vector<PrerotatedPoint> prerotate(std::span<const TriPoint> points, const Rotation3& R_rp) {
  std::vector<PrerotatedPoint> out;
  out.reserve(points.size());
  for (const auto& tp : points) {
    out.push_back({R_rp * tp.p, R_rp * tp.cov * R_rp.transpose()});
  }
  return out;
}

/// Stacks A_i = [[rho1, -rho2, 1, 0, -q1], [rho2, rho1, 0, 1, -q2]],
/// b_i = rho3 * q.
inline LinearSystem build_linear_system(std::span<const PrerotatedPoint> pts, std::span<const Vec2> q) {
  if (pts.size() != q.size()) {
    throw Error(ErrorCode::invalid_argument, "point / observation count mismatch");
  }
  if (pts.size() < 3) {
    throw Error(ErrorCode::insufficient_data, "4-DOF linear system needs at least 3 points");
  }
  const auto n = static_cast<Eigen::Index>(pts.size());
  LinearSystem sys;
  sys.A.resize(2 * n, 5);
  sys.b.resize(2 * n);
  sys.covs.reserve(pts.size());
  sys.q.assign(q.begin(), q.end());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3& r = pts[i].rho;
    const Vec2& qi = q[i];
    sys.A.row(2 * i) << r.x(), -r.y(), 1.0, 0.0, -qi.x();
    sys.A.row(2 * i + 1) << r.y(), r.x(), 0.0, 1.0, -qi.y();
    sys.b.segment<2>(2 * i) = r.z() * qi;
    sys.covs.push_back(pts[i].cov);
  }
  return sys;
}

namespace detail {

// Rank/condition guard for a pivoted QR: ratio of extreme |R_ii| must stay
// below `max_cond`.
template <typename QR>
bool well_conditioned(const QR& qr, double max_cond) {
  const auto R = qr.matrixQR();
  const Eigen::Index k = std::min(R.rows(), R.cols());
  const double big = std::abs(R(0, 0));
  const double small = std::abs(R(k - 1, k - 1));
  return big > 0.0 && small * max_cond > big;
}

}  // namespace detail

inline StateVec5 solve_ls(const LinearSystem& sys) {
  if (sys.A.rows() < 5) {
    throw Error(ErrorCode::insufficient_data, "LS needs at least 3 points");
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sys.A);
  // cond(A^T A) = cond(A)^2 < 1e12
  if (!detail::well_conditioned(qr, 1e6)) {
    throw Error(ErrorCode::degenerate_geometry, "rank-deficient 4-DOF design matrix");
  }
  return qr.solve(sys.b);
}

inline BiasTerms bias_terms(const LinearSystem& sys) {
  BiasTerms g;
  const double n = static_cast<double>(sys.size());
  if (sys.size() == 0) return g;
  Mat3 mean_cov = Mat3::Zero();
  Vec2 g2 = Vec2::Zero();
  for (std::size_t i = 0; i < sys.size(); ++i) {
    const Mat3& S = sys.covs[i];
    const Vec2& q = sys.q[i];
    mean_cov += S;
    // (S13 I + S23 J) q with J = [[0, 1], [-1, 0]]
    g2 += Vec2(S(0, 2) * q.x() + S(1, 2) * q.y(), S(0, 2) * q.y() - S(1, 2) * q.x());
  }
  mean_cov /= n;
  const double c = mean_cov(0, 0) + mean_cov(1, 1);
  g.G1(0, 0) = c;
  g.G1(1, 1) = c;
  g.G2.head<2>() = g2 / n;
  return g;
}

/// Bias-eliminated solve: (A^T A / n - G1)^-1 (A^T b / n - G2).
inline StateVec5 solve_be(const LinearSystem& sys) {
  if (sys.size() < 3) {
    throw Error(ErrorCode::insufficient_data, "BE needs at least 3 points");
  }
  const double n = static_cast<double>(sys.size());
  const BiasTerms g = bias_terms(sys);
  const Mat5 M = sys.A.transpose() * sys.A / n - g.G1;
  const StateVec5 v = sys.A.transpose() * sys.b / n - g.G2;
  const Eigen::ColPivHouseholderQR<Mat5> qr(M);
  if (!detail::well_conditioned(qr, 1e12)) {
    throw Error(ErrorCode::degenerate_geometry, "singular bias-corrected normal matrix");
  }
  return qr.solve(v);
}

// --- epipolar ML cost ------------------------------------------------------

struct EpipolarResiduals {
  Eigen::VectorXd r;  // [d_L0, d_R0, d_L1, d_R1, ...]
  Eigen::MatrixXd J;  // d r / d (yaw, tx, ty, tz), empty unless requested
};

namespace detail {

// Signed point-to-line distance and its derivative given the line derivative.
inline double line_distance(const Vec3& l, const Vec3& xh, const Vec3* dl, double* dd) {
  const double m2 = l.x() * l.x() + l.y() * l.y();
  if (!(m2 > 0.0)) {
    throw Error(ErrorCode::degenerate_line, "epipolar line at infinity");
  }
  const double m = std::sqrt(m2);
  const double num = l.dot(xh);
  if (dl != nullptr) {
    *dd = dl->dot(xh) / m - num * (l.x() * dl->x() + l.y() * dl->y()) / (m2 * m);
  }
  return num / m;
}

}  // namespace detail

/// Point-to-epipolar-line distances in both keyframe images, optionally
/// with the analytic Jacobian w.r.t. (yaw, t).
inline EpipolarResiduals epipolar_residuals(const Pose4& pose, const Rotation3& R_rp,
                                            std::span<const Correspondence> corrs, const StereoRig& rig,
                                            bool with_jacobian) {
  const Rotation3 R = rot_yaw(pose.yaw) * R_rp;
  const Mat3 dR = rot_yaw_derivative(pose.yaw) * R_rp;
  const Vec3& t = pose.t;
  if (!(t.norm() > 1e-12)) {
    throw Error(ErrorCode::degenerate_epipolar, "zero translation: epipolar geometry undefined");
  }
  // right keyframe camera: R_R = R Rb^T, t_R = t - R Rb^T tb
  const Mat3 RbT = rig.R_rl.transpose();
  const Rotation3 RR = R * RbT;
  const Vec3 tR = t - RR * rig.t_rl;
  const Mat3 dRR = dR * RbT;
  const Vec3 dtR_dyaw = -dRR * rig.t_rl;
  if (!(tR.norm() > 1e-12)) {
    throw Error(ErrorCode::degenerate_epipolar, "zero right-camera translation");
  }

  const auto n = static_cast<Eigen::Index>(corrs.size());
  EpipolarResiduals out;
  out.r.resize(2 * n);
  if (with_jacobian) out.J.resize(2 * n, 4);

  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 qh = homogeneous(corrs[i].q);
    const Vec3 qxt = qh.cross(t);
    const Vec3 qxtR = qh.cross(tR);
    const Vec3 lL = R.transpose() * qxt;
    const Vec3 lR = RR.transpose() * qxtR;
    const Vec3 zh = homogeneous(corrs[i].z);
    const Vec3 yh = homogeneous(corrs[i].y);
    if (!with_jacobian) {
      out.r(2 * i) = detail::line_distance(lL, zh, nullptr, nullptr);
      out.r(2 * i + 1) = detail::line_distance(lR, yh, nullptr, nullptr);
      continue;
    }
    // d l / d yaw
    const Vec3 dlL_yaw = dR.transpose() * qxt;
    const Vec3 dlR_yaw = dRR.transpose() * qxtR + RR.transpose() * qh.cross(dtR_dyaw);
    double dd;
    out.r(2 * i) = detail::line_distance(lL, zh, &dlL_yaw, &dd);
    out.J(2 * i, 0) = dd;
    out.r(2 * i + 1) = detail::line_distance(lR, yh, &dlR_yaw, &dd);
    out.J(2 * i + 1, 0) = dd;
    // d l / d t_k = R^T (q x e_k) for both images
    for (int k = 0; k < 3; ++k) {
      const Vec3 qxe = qh.cross(Vec3::Unit(k));
      const Vec3 dlL = R.transpose() * qxe;
      const Vec3 dlR = RR.transpose() * qxe;
      detail::line_distance(lL, zh, &dlL, &dd);
      out.J(2 * i, 1 + k) = dd;
      detail::line_distance(lR, yh, &dlR, &dd);
      out.J(2 * i + 1, 1 + k) = dd;
    }
  }
  return out;
}

/// Sum of squared point-to-epipolar-line distances over both keyframe images.
inline double ml_cost(const Pose4& pose, const Rotation3& R_rp, std::span<const Correspondence> corrs,
                      const StereoRig& rig) {
  return epipolar_residuals(pose, R_rp, corrs, rig, false).r.squaredNorm();
}

/// Gauss-Newton on the epipolar ML cost; one step by default.
inline Pose4 gn_refine(const Pose4& init, const Rotation3& R_rp, std::span<const Correspondence> corrs,
                       const StereoRig& rig, int steps = 1) {
  if (corrs.size() < 3) {
    throw Error(ErrorCode::insufficient_data, "GN refinement needs at least 3 correspondences");
  }
  if (!std::isfinite(init.yaw) || !init.t.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "non-finite initial pose");
  }
  Pose4 pose = init;
  for (int it = 0; it < steps; ++it) {
    const EpipolarResiduals res = epipolar_residuals(pose, R_rp, corrs, rig, true);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(res.J);
    if (!detail::well_conditioned(qr, 1e8)) {
      throw Error(ErrorCode::degenerate_geometry, "singular Gauss-Newton normal matrix");
    }
    const Vec4 delta = qr.solve(-res.r);
    pose.yaw = wrap_angle(pose.yaw + delta(0));
    pose.t += delta.tail<3>();
  }
  return pose;
}

/// Full single-frame pipeline on an inlier set: triangulate with sigma2,
/// bias-eliminated solve, then `gn_steps` Gauss-Newton steps.
struct Estimate4Dof {
  StateVec5 x_be = StateVec5::Zero();
  Pose4 be;
  Pose4 refined;
};

inline Estimate4Dof estimate_4dof(std::span<const Correspondence> corrs, const Rotation3& R_rp,
                                  const StereoRig& rig, double sigma2, int gn_steps = 1) {
  const auto tris = triangulate_all(corrs, rig, sigma2);
  const auto pre = prerotate(tris, R_rp);
  std::vector<Vec2> q;
  q.reserve(corrs.size());
  for (const auto& c : corrs) q.push_back(c.q);
  const LinearSystem sys = build_linear_system(pre, q);
  Estimate4Dof est;
  est.x_be = solve_be(sys);
  est.be = normalize_state(est.x_be);
  est.refined = gn_steps > 0 ? gn_refine(est.be, R_rp, corrs, rig, gn_steps) : est.be;
  return est;
}

}  // namespace gravpnp
