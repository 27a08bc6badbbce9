#pragma once

// Stereo noise-variance estimation and triangulation with first-order
// covariance propagation.

#include <optional>
#include <span>
#include <vector>

#include "gravpnp/geometry.hpp"

namespace gravpnp {

/// Tracked feature: current-left q, keyframe-left z, keyframe-right y
/// (normalized image coordinates).
struct Correspondence {
  Vec2 q = Vec2::Zero();
  Vec2 z = Vec2::Zero();
  Vec2 y = Vec2::Zero();
  std::optional<bool> is_inlier_truth;
};

/// Triangulated point in the keyframe-left frame with its 3x3 covariance.
struct TriPoint {
  Vec3 p = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

inline constexpr double kDisparityFloor = 1e-6;

/// Consistent 2D noise variance from rectified stereo pairs.  On a rectified
/// rig the row coordinates of a true pair agree, so v_z - v_y ~ N(0, 2 sigma^2).
inline double estimate_noise_variance(std::span<const Correspondence> pairs, const StereoRig& rig) {
  if (!rig.is_rectified()) {
    throw Error(ErrorCode::unsupported_configuration, "noise-variance estimator requires a rectified rig");
  }
  if (pairs.size() < 10) {
    throw Error(ErrorCode::insufficient_data, "noise-variance estimator needs at least 10 stereo pairs");
  }
  double acc = 0.0;
  for (const auto& c : pairs) {
    const double dv = c.z.y() - c.y.y();
    acc += dv * dv;
  }
  return acc / (2.0 * static_cast<double>(pairs.size()));
}

/// Rectified stereo triangulation.  Depth comes from the horizontal
/// disparity, X/Y from the left ray; the covariance is J (sigma2 I4) J^T with
/// J the Jacobian w.r.t. (u_z, v_z, u_y, v_y).
inline TriPoint triangulate(const Vec2& z, const Vec2& y, const StereoRig& rig, double sigma2) {
  if (!rig.is_rectified()) {
    throw Error(ErrorCode::unsupported_configuration, "triangulation requires a rectified rig");
  }
  const double b = rig.baseline().x();
  const double d = z.x() - y.x();
  if (!(d > kDisparityFloor)) {
    throw Error(ErrorCode::parallel_rays, "non-positive disparity");
  }
  const double Z = b / d;
  TriPoint tp;
  tp.p = Vec3(z.x() * Z, z.y() * Z, Z);

  const double k = b / (d * d);
  Eigen::Matrix<double, 3, 4> J;
  //        u_z                  v_z     u_y           v_y
  J << Z - z.x() * k,           0.0,    z.x() * k,    0.0,
       -z.y() * k,              Z,      z.y() * k,    0.0,
       -k,                      0.0,    k,            0.0;
  tp.cov = sigma2 * (J * J.transpose());
  return tp;
}

inline std::vector<TriPoint> triangulate_all(std::span<const Correspondence> corrs, const StereoRig& rig,
                                             double sigma2) {
  std::vector<TriPoint> out;
  out.reserve(corrs.size());
  for (const auto& c : corrs) out.push_back(triangulate(c.z, c.y, rig, sigma2));
  return out;
}

}  // namespace gravpnp
