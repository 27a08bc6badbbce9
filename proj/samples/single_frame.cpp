// Estimate one relative pose from a synthetic stereo frame with outliers.

#include <cstdio>

#include "gravpnp.hpp"

int main() {
  using namespace gravpnp;

  SimConfig cfg;
  cfg.points = 200;
  cfg.outlier_ratio = 0.3;
  Rng rng(cfg.seed);
  const SingleFrameSample s = sample_single_frame(cfg, rng, cfg.points);
  const StereoRig rig = cfg.rig();

  const double s2 = estimate_noise_variance(s.frame.corrs, rig);
  RansacParams params;
  params.threshold = 3.0 * std::sqrt(s2);
  const ConsensusResult c = ransac_4dof(s.frame.corrs, s.truth.R_rp, rig, params, s2);

  std::printf("noise estimate  %.3f px (true %.3f px)\n", std::sqrt(s2) * cfg.focal, cfg.pixel_noise);
  std::printf("iterations      %d\n", c.iterations);
  std::printf("inliers         %zu / %zu\n", c.inlier_count, s.frame.corrs.size());
  std::printf("yaw             %.4f deg (true %.4f deg)\n", rad2deg(c.pose.yaw), rad2deg(s.truth.pose.yaw));
  std::printf("t               [%.4f %.4f %.4f] m\n", c.pose.t.x(), c.pose.t.y(), c.pose.t.z());
  std::printf("true t          [%.4f %.4f %.4f] m\n", s.truth.pose.t.x(), s.truth.pose.t.y(), s.truth.pose.t.z());
  return 0;
}
