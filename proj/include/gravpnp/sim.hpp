#pragma once

// Synthetic stereo + IMU data generation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "gravpnp/fusion.hpp"
#include "gravpnp/geometry.hpp"
#include "gravpnp/stereo.hpp"

namespace gravpnp {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent stream seeds from (master, index).
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct SimConfig {
  // camera rig
  double focal = 1100.0;  // px
  int width = 800;        // px
  int height = 800;       // px
  double baseline = 0.2;  // m, right camera along +x, identity rotation
  // scene and observations
  double depth_min = 1.0;  // m
  double depth_max = 10.0;  // m
  double pixel_noise = 2.5;  // px, std
  bool noise_current_frame = false;
  double outlier_ratio = 0.0;
  int points = 100;
  std::uint64_t seed = 1;
  // single-frame relative pose distribution
  double yaw_range_deg = 20.0;
  double rp_range_deg = 10.0;
  double trans_min = 0.1;  // m
  double trans_max = 0.5;  // m
  double rp_prior_noise_deg = 0.0;
  // rates
  double camera_rate = 10.0;  // Hz
  double imu_rate = 200.0;    // Hz
  // IMU noise (continuous-time densities)
  double gyro_noise_density = 1.2e-4;  // rad/s/sqrt(Hz)
  double gyro_bias_walk = 4e-6;        // rad/s^2/sqrt(Hz)
  double gyro_bias_init = 1e-4;        // rad/s, per-axis std of the bias left after initialization
  double accel_noise_density = 6e-4;   // m/s^2/sqrt(Hz)
  // trajectory
  double accel_bound = 1.0;    // m/s^2
  double duration = 150.0;     // s
  double burst_period = 10.0;  // s
  double quasi_static_fraction = 0.4;
  double attitude_amplitude_deg = 8.0;

  StereoRig rig() const { return StereoRig::rectified(baseline, focal, width, height); }
  double sigma() const { return pixel_noise / focal; }

  void validate() const {
    auto fail = [](const char* what) { throw Error(ErrorCode::invalid_argument, what); };
    if (!(focal > 0.0) || width <= 0 || height <= 0 || !(baseline > 0.0)) fail("invalid camera rig");
    if (!(depth_min > 0.0) || !(depth_max > depth_min)) fail("depth range must be positive and ordered");
    if (!(pixel_noise >= 0.0)) fail("pixel noise must be non-negative");
    if (!(outlier_ratio >= 0.0 && outlier_ratio < 1.0)) fail("outlier ratio must lie in [0, 1)");
    if (points < 3) fail("need at least 3 points");
    if (!(camera_rate > 0.0) || !(imu_rate > 0.0)) fail("rates must be positive");
    if (!(trans_min > 0.0) || !(trans_max >= trans_min)) fail("invalid translation range");
    if (!(gyro_noise_density >= 0.0) || !(gyro_bias_walk >= 0.0) || !(gyro_bias_init >= 0.0) ||
        !(accel_noise_density >= 0.0)) {
      fail("noise densities must be non-negative");
    }
    if (!(accel_bound >= 0.0) || !(duration > 0.0) || !(burst_period > 0.0)) fail("invalid trajectory settings");
    if (!(quasi_static_fraction >= 0.0 && quasi_static_fraction <= 1.0)) fail("quasi-static fraction must lie in [0, 1]");
  }
};

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline double gaussian(Rng& rng, double sigma) {
  return sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
}
inline Vec2 gaussian2(Rng& rng, double sigma) { return {gaussian(rng, sigma), gaussian(rng, sigma)}; }
inline Vec3 gaussian3(Rng& rng, double sigma) { return {gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma)}; }

/// One point with depth uniform in the range and pixel uniform over the left
/// image, rejection-sampled until it is also inside the right image.
inline Vec3 gen_point(const SimConfig& cfg, Rng& rng) {
  const StereoRig rig = cfg.rig();
  for (;;) {
    const double Z = uniform(rng, cfg.depth_min, cfg.depth_max);
    const Vec2 px(uniform(rng, 0.0, cfg.width), uniform(rng, 0.0, cfg.height));
    const Vec3 p = backproject(rig.to_normalized(px), Z);
    const Vec3 pr = rig.extrinsic().apply(p);
    if (pr.z() > kDepthFloor && rig.in_image(project(pr))) return p;
  }
}

inline std::vector<Vec3> gen_scene(const SimConfig& cfg, Rng& rng, int n) {
  if (n < 3) throw Error(ErrorCode::invalid_argument, "scene needs at least 3 points");
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pts.push_back(gen_point(cfg, rng));
  return pts;
}

inline std::vector<Vec3> gen_scene(const SimConfig& cfg, Rng& rng) { return gen_scene(cfg, rng, cfg.points); }

/// Relative pose (current <- keyframe) for single-frame experiments.
struct RelativePose {
  Pose4 pose;
  EulerYRP euler;
  Rotation3 R_rp = Rotation3::Identity();
  PoseSE3 se3;
};

inline RelativePose make_relative_pose(double yaw, double pitch, double roll, const Vec3& t) {
  RelativePose rp;
  rp.euler = {yaw, pitch, roll};
  rp.R_rp = rot_rp(pitch, roll);
  rp.pose = {yaw, t};
  rp.se3 = {rot_yaw(yaw) * rp.R_rp, t};
  return rp;
}

inline RelativePose sample_relative_pose(const SimConfig& cfg, Rng& rng) {
  const double yaw = deg2rad(uniform(rng, -cfg.yaw_range_deg, cfg.yaw_range_deg));
  const double pitch = deg2rad(uniform(rng, -cfg.rp_range_deg, cfg.rp_range_deg));
  const double roll = deg2rad(uniform(rng, -cfg.rp_range_deg, cfg.rp_range_deg));
  Vec3 dir = gaussian3(rng, 1.0);
  while (dir.norm() < 1e-6) dir = gaussian3(rng, 1.0);
  const Vec3 t = dir.normalized() * uniform(rng, cfg.trans_min, cfg.trans_max);
  return make_relative_pose(yaw, pitch, roll, t);
}

/// Roll/pitch prior perturbed by the configured attitude noise.
inline Rotation3 noisy_rp_prior(const RelativePose& truth, double noise_deg, Rng& rng) {
  const double s = deg2rad(noise_deg);
  return rot_rp(truth.euler.pitch + gaussian(rng, s), truth.euler.roll + gaussian(rng, s));
}

struct SyntheticFrame {
  std::vector<Correspondence> corrs;
  std::vector<TriPoint> points;  // true points, zero covariance
  PoseSE3 pose;                  // current <- keyframe
};

namespace detail {

inline bool visible_in_all(const Vec3& p, const PoseSE3& pose, const StereoRig& rig) {
  const Vec3 pc = pose.apply(p);
  if (!(pc.z() > 1e-3)) return false;
  return rig.in_image(project(pc));
}

}  // namespace detail

/// Stereo keyframe + current-frame observations.  Points that fall outside
/// the current image are resampled so the count is preserved.  Outliers
/// replace the current-frame point q by a uniform in-image location.
inline SyntheticFrame synth_observations(std::span<const Vec3> points, const PoseSE3& pose, const SimConfig& cfg,
                                         Rng& rng) {
  const StereoRig rig = cfg.rig();
  const double sigma = cfg.sigma();
  const std::size_t n = points.size();
  SyntheticFrame frame;
  frame.pose = pose;
  frame.corrs.reserve(n);
  frame.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p = points[i];
    while (!detail::visible_in_all(p, pose, rig)) p = gen_point(cfg, rng);
    Correspondence c;
    c.q = project(pose.apply(p));
    c.z = project(p);
    c.y = project(rig.extrinsic().apply(p));
    c.z += gaussian2(rng, sigma);
    c.y += gaussian2(rng, sigma);
    if (cfg.noise_current_frame) c.q += gaussian2(rng, sigma);
    c.is_inlier_truth = true;
    frame.corrs.push_back(c);
    frame.points.push_back({p, Mat3::Zero()});
  }
  const auto n_out = static_cast<std::size_t>(std::llround(cfg.outlier_ratio * static_cast<double>(n)));
  if (n_out > 0) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // Fisher-Yates prefix with our own draws keeps the stream reproducible.
    for (std::size_t k = 0; k < n_out; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng() % (n - k));
      std::swap(idx[k], idx[j]);
      Correspondence& c = frame.corrs[idx[k]];
      c.q = rig.to_normalized(Vec2(uniform(rng, 0.0, cfg.width), uniform(rng, 0.0, cfg.height)));
      c.is_inlier_truth = false;
    }
  }
  return frame;
}

/// Pose, scene and observations in one go.
struct SingleFrameSample {
  RelativePose truth;
  SyntheticFrame frame;
};

inline SingleFrameSample sample_single_frame(const SimConfig& cfg, Rng& rng, int n) {
  SingleFrameSample s;
  s.truth = sample_relative_pose(cfg, rng);
  const auto pts = gen_scene(cfg, rng, n);
  s.frame = synth_observations(pts, s.truth.se3, cfg, rng);
  return s;
}

// --- trajectories and IMU streams -------------------------------------------

/// Camera/IMU trajectory sampled at the IMU rate.  The body frame is the
/// left camera frame; world z is along the sensed specific force at rest.
struct Trajectory {
  std::vector<double> time;
  std::vector<Rotation3> R_wb;     // body -> world
  std::vector<Vec3> position;      // body origin in world (m)
  std::vector<Vec3> accel_world;   // linear acceleration (m/s^2)
  std::vector<Vec3> gyro_true;     // body rate held over [t_k, t_k+1) (rad/s)
  std::vector<Vec3> specific_force;  // body frame (m/s^2)
  std::vector<bool> quasi_static;

  std::size_t size() const { return time.size(); }
  EulerYRP attitude(std::size_t k) const { return factor_yaw_rollpitch(R_wb[k]); }

  /// World -> body transform (camera pose) at instant k.
  PoseSE3 camera_pose(std::size_t k) const {
    const Rotation3 M = R_wb[k].transpose();
    return {M, -M * position[k]};
  }
};

/// Acceleration envelope in [0, 1]: zero over the quasi-static head of each
/// period, then a sin^2 burst.
inline double burst_envelope(double t, const SimConfig& cfg) {
  const double phase = std::fmod(t, cfg.burst_period) / cfg.burst_period;
  if (phase < cfg.quasi_static_fraction || cfg.quasi_static_fraction >= 1.0) return 0.0;
  const double s = std::sin(kPi * (phase - cfg.quasi_static_fraction) / (1.0 - cfg.quasi_static_fraction));
  return s * s;
}

inline Trajectory gen_trajectory(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto N = static_cast<std::size_t>(std::llround(cfg.duration * cfg.imu_rate));
  if (N < 2) throw Error(ErrorCode::invalid_argument, "trajectory shorter than two IMU samples");
  const double dt = 1.0 / cfg.imu_rate;

  // attitude: slow sinusoids in roll/pitch, a drifting heading
  const double amp = deg2rad(cfg.attitude_amplitude_deg);
  const double f_roll = uniform(rng, 0.03, 0.08), f_pitch = uniform(rng, 0.03, 0.08);
  const double p_roll = uniform(rng, 0.0, 2.0 * kPi), p_pitch = uniform(rng, 0.0, 2.0 * kPi);
  const double yaw0 = uniform(rng, -kPi, kPi);
  const double yaw_rate = deg2rad(uniform(rng, -3.0, 3.0));
  const double yaw_amp = deg2rad(uniform(rng, 5.0, 15.0)), f_yaw = uniform(rng, 0.01, 0.03);

  // translation: constant horizontal drift plus bounded acceleration bursts
  const double heading = uniform(rng, -kPi, kPi);
  const Vec3 v0 = uniform(rng, 0.3, 0.6) * Vec3(std::cos(heading), std::sin(heading), 0.0);
  std::array<double, 3> f_acc{}, p_acc{};
  for (int i = 0; i < 3; ++i) {
    f_acc[i] = uniform(rng, 0.2, 0.5);
    p_acc[i] = uniform(rng, 0.0, 2.0 * kPi);
  }

  Trajectory tr;
  tr.time.resize(N);
  tr.R_wb.resize(N);
  tr.position.resize(N);
  tr.accel_world.resize(N);
  tr.gyro_true.resize(N);
  tr.specific_force.resize(N);
  tr.quasi_static.resize(N);
  Vec3 v = v0;
  for (std::size_t k = 0; k < N; ++k) {
    const double t = static_cast<double>(k) * dt;
    tr.time[k] = t;
    const double roll = amp * std::sin(2.0 * kPi * f_roll * t + p_roll);
    const double pitch = amp * std::sin(2.0 * kPi * f_pitch * t + p_pitch);
    const double yaw = yaw0 + yaw_rate * t + yaw_amp * std::sin(2.0 * kPi * f_yaw * t);
    tr.R_wb[k] = attitude_rotation({yaw, pitch, roll});

    const double e = burst_envelope(t, cfg);
    Vec3 u;
    for (int i = 0; i < 3; ++i) u(i) = std::sin(2.0 * kPi * f_acc[i] * t + p_acc[i]);
    u /= std::sqrt(3.0);  // |u| <= 1
    tr.accel_world[k] = e * cfg.accel_bound * u;
    tr.quasi_static[k] = e == 0.0;
    if (k == 0) {
      tr.position[k] = Vec3::Zero();
    } else {
      const Vec3 v_next = v + 0.5 * dt * (tr.accel_world[k - 1] + tr.accel_world[k]);
      tr.position[k] = tr.position[k - 1] + 0.5 * dt * (v + v_next);
      v = v_next;
    }
    tr.specific_force[k] = tr.R_wb[k].transpose() * (tr.accel_world[k] + kGravity * Vec3::UnitZ());
  }
  for (std::size_t k = 0; k + 1 < N; ++k) {
    tr.gyro_true[k] = log_so3(tr.R_wb[k].transpose() * tr.R_wb[k + 1]) / dt;
  }
  tr.gyro_true[N - 1] = tr.gyro_true[N - 2];
  return tr;
}

struct ImuStream {
  std::vector<ImuSample> samples;
  std::vector<Vec3> gyro_bias;  // true bias per sample
};

/// gyro = true rate + bias (random walk) + white noise; accel = true specific
/// force + white noise.  Densities are converted with the sample rate.
inline ImuStream synth_imu(const Trajectory& tr, const SimConfig& cfg, Rng& rng) {
  const double rate = cfg.imu_rate;
  const double sg = cfg.gyro_noise_density * std::sqrt(rate);
  const double sa = cfg.accel_noise_density * std::sqrt(rate);
  const double sb = cfg.gyro_bias_walk / std::sqrt(rate);
  ImuStream s;
  s.samples.resize(tr.size());
  s.gyro_bias.resize(tr.size());
  Vec3 bias = gaussian3(rng, cfg.gyro_bias_init);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    s.gyro_bias[k] = bias;
    s.samples[k].t = tr.time[k];
    s.samples[k].gyro = tr.gyro_true[k] + bias + gaussian3(rng, sg);
    s.samples[k].accel = tr.specific_force[k] + gaussian3(rng, sa);
    bias += gaussian3(rng, sb);
  }
  return s;
}

}  // namespace gravpnp
