#pragma once

// Rotation parameterizations, pinhole projection and epipolar machinery.
//
// Transform convention: a transform B_A T = (R, t) maps a point expressed in
// frame A to frame B as  p_B = R * p_A + t.  Inverses are (R^T, -R^T t).

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "gravpnp/error.hpp"

namespace gravpnp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Rotation3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDepthFloor = 1e-6;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

struct EulerYRP {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

/// 4-DOF relative pose: yaw about the optical axis plus translation.
struct Pose4 {
  double yaw = 0.0;
  Vec3 t = Vec3::Zero();
};

struct PoseSE3 {
  Rotation3 R = Rotation3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  PoseSE3 inverse() const { return {R.transpose(), -R.transpose() * t}; }

  /// (*this) after `rhs`: first rhs, then this.
  PoseSE3 operator*(const PoseSE3& rhs) const {
    return {R * rhs.R, R * rhs.t + t};
  }
};

/// Stereo rig.  `R_rl`, `t_rl` is the keyframe-left -> keyframe-right
/// transform.  A rectified rig whose right camera sits `b` metres along +x of
/// the left camera has R_rl = I and t_rl = (-b, 0, 0).
struct StereoRig {
  Rotation3 R_rl = Rotation3::Identity();
  Vec3 t_rl = Vec3(-0.2, 0.0, 0.0);
  double focal = 1100.0;
  int width = 800;
  int height = 800;

  static StereoRig rectified(double baseline, double focal, int width, int height) {
    if (!(baseline > 0.0) || !(focal > 0.0) || width <= 0 || height <= 0) {
      throw Error(ErrorCode::invalid_argument, "rectified rig needs positive baseline, focal and image size");
    }
    StereoRig rig;
    rig.t_rl = Vec3(-baseline, 0.0, 0.0);
    rig.focal = focal;
    rig.width = width;
    rig.height = height;
    return rig;
  }

  PoseSE3 extrinsic() const { return {R_rl, t_rl}; }

  /// Right camera centre in the left camera frame.
  Vec3 baseline() const { return -R_rl.transpose() * t_rl; }

  bool is_rectified(double tol = 1e-12) const {
    return (R_rl - Rotation3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(t_rl.y()) <= tol && std::abs(t_rl.z()) <= tol && t_rl.x() < 0.0;
  }

  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }

  Vec2 to_pixel(const Vec2& uv) const { return {focal * uv.x() + cx(), focal * uv.y() + cy()}; }
  Vec2 to_normalized(const Vec2& px) const { return {(px.x() - cx()) / focal, (px.y() - cy()) / focal}; }

  bool in_image(const Vec2& uv) const {
    const Vec2 px = to_pixel(uv);
    return px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height;
  }
};

/// Yaw factor R_psi: rotation by `yaw` about the optical (z) axis.  This is
/// the convention under which the 4-DOF linear system in x = [cos, sin, t]
/// is exact; the third row is always [0, 0, 1].
inline Rotation3 rot_yaw(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Rotation3 R;
  R << c, -s, 0.0,
      s, c, 0.0,
      0.0, 0.0, 1.0;
  return R;
}

/// d rot_yaw / d yaw.
inline Mat3 rot_yaw_derivative(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Mat3 D;
  D << -s, -c, 0.0,
      c, -s, 0.0,
      0.0, 0.0, 0.0;
  return D;
}

/// Combined roll-pitch factor R_theta_phi (pitch theta, roll phi).
inline Rotation3 rot_rp(double pitch, double roll) {
  const double ct = std::cos(pitch), st = std::sin(pitch);
  const double cp = std::cos(roll), sp = std::sin(roll);
  Rotation3 R;
  R << ct, -st * sp, st * cp,
      0.0, cp, sp,
      -st, -ct * sp, ct * cp;
  return R;
}

inline Mat3 rot_rp_dpitch(double pitch, double roll) {
  const double ct = std::cos(pitch), st = std::sin(pitch);
  const double cp = std::cos(roll), sp = std::sin(roll);
  Mat3 D;
  D << -st, -ct * sp, ct * cp,
      0.0, 0.0, 0.0,
      -ct, st * sp, -st * cp;
  return D;
}

inline Mat3 rot_rp_droll(double pitch, double roll) {
  const double ct = std::cos(pitch), st = std::sin(pitch);
  const double cp = std::cos(roll), sp = std::sin(roll);
  Mat3 D;
  D << 0.0, -st * cp, -st * sp,
      0.0, -sp, cp,
      0.0, -ct * cp, -ct * sp;
  return D;
}

/// Splits R = rot_yaw(yaw) * rot_rp(pitch, roll).
inline EulerYRP factor_yaw_rollpitch(const Rotation3& R) {
  if (std::abs(R(2, 0)) >= 1.0 - 1e-9) {
    throw Error(ErrorCode::degenerate_factorization, "pitch at +-90 deg: yaw/roll not separable");
  }
  EulerYRP e;
  e.pitch = -std::asin(R(2, 0));
  e.roll = std::atan2(-R(2, 1), R(2, 2));
  const Mat3 Ryaw = R * rot_rp(e.pitch, e.roll).transpose();
  // first column of rot_yaw is (cos, sin, 0)
  e.yaw = wrap_angle(std::atan2(Ryaw(1, 0), Ryaw(0, 0)));
  return e;
}

/// Roll-pitch factor of R (discarding yaw).
inline Rotation3 rp_factor(const Rotation3& R) {
  const EulerYRP e = factor_yaw_rollpitch(R);
  return rot_rp(e.pitch, e.roll);
}

/// Pinhole projection onto the normalized image plane.
inline Vec2 project(const Vec3& p) {
  if (!(p.z() > kDepthFloor)) {
    throw Error(ErrorCode::behind_camera, "point behind camera (depth <= 1e-6 m)");
  }
  return {p.x() / p.z(), p.y() / p.z()};
}

inline Vec3 backproject(const Vec2& uv, double depth) { return {uv.x() * depth, uv.y() * depth, depth}; }

inline Vec3 homogeneous(const Vec2& uv) { return {uv.x(), uv.y(), 1.0}; }

inline Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(),
      v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return S;
}

/// Epipolar line in the keyframe image induced by current-frame point q under
/// pose (current <- keyframe): l = ([t]x R)^T q^h.
inline Vec3 epipolar_line(const Vec2& q, const PoseSE3& pose) {
  if (!(pose.t.norm() > 1e-12)) {
    throw Error(ErrorCode::degenerate_epipolar, "zero translation: epipolar geometry undefined");
  }
  return pose.R.transpose() * homogeneous(q).cross(pose.t);
}

/// Signed distance from `pt` to line `l` in normalized coordinates.
inline double epipolar_distance(const Vec3& l, const Vec2& pt) {
  const double m = std::hypot(l.x(), l.y());
  if (!(m > 1e-14 * l.norm()) || m == 0.0) {
    throw Error(ErrorCode::degenerate_line, "line at infinity");
  }
  return l.dot(homogeneous(pt)) / m;
}

/// Current <- keyframe-right transform:  C_KR T = C_K T * (KR_K T)^-1.
inline PoseSE3 compose_stereo_pose(const PoseSE3& pose_ck, const StereoRig& rig) {
  return pose_ck * rig.extrinsic().inverse();
}

inline PoseSE3 to_se3(const Pose4& pose, const Rotation3& R_rp) {
  return {rot_yaw(pose.yaw) * R_rp, pose.t};
}

// SO(3) exponential / logarithm (rotation vectors).

inline Rotation3 exp_so3(const Vec3& w) {
  const double th2 = w.squaredNorm();
  const double th = std::sqrt(th2);
  double a, b;
  if (th < 1e-4) {
    a = 1.0 - th2 / 6.0;
    b = 0.5 - th2 / 24.0;
  } else {
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / th2;
  }
  const Mat3 K = skew(w);
  return Rotation3::Identity() + a * K + b * K * K;
}

inline Vec3 log_so3(const Rotation3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

/// Angle between two rotations (rad).
inline double rotation_angle(const Rotation3& A, const Rotation3& B) {
  return Eigen::AngleAxisd(A.transpose() * B).angle();
}

/// Angle between two directions (rad); NaN-safe for zero vectors (returns pi/2).
inline double direction_angle(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return kPi / 2.0;
  return std::acos(std::clamp(a.dot(b) / (na * nb), -1.0, 1.0));
}

}  // namespace gravpnp
