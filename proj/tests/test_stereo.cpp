#include <gtest/gtest.h>

#include "gravpnp/sim.hpp"
#include "gravpnp/stereo.hpp"
#include "test_util.hpp"

using namespace gravpnp;

namespace {

const StereoRig kRig = StereoRig::rectified(0.2, 1100, 800, 800);

std::vector<Correspondence> stereo_pairs(double pixel_noise, int n, std::uint64_t seed) {
  SimConfig cfg;
  cfg.pixel_noise = pixel_noise;
  Rng rng(seed);
  const auto pts = gen_scene(cfg, rng, n);
  return synth_observations(pts, PoseSE3{Mat3::Identity(), Vec3(0, 0, -0.1)}, cfg, rng).corrs;
}

// Monte Carlo sample covariance of triangulated points around a fixed truth.
Mat3 empirical_cov(const Vec3& p, const StereoRig& rig, double sigma, int draws, Rng& rng, Vec3* mean = nullptr) {
  const Vec2 z = project(p);
  const Vec2 y = project(rig.extrinsic().apply(p));
  std::vector<Vec3> xs;
  Vec3 m = Vec3::Zero();
  for (int i = 0; i < draws; ++i) {
    xs.push_back(triangulate(z + gaussian2(rng, sigma), y + gaussian2(rng, sigma), rig, sigma * sigma).p);
    m += xs.back();
  }
  m /= draws;
  Mat3 C = Mat3::Zero();
  for (const auto& x : xs) C += (x - m) * (x - m).transpose();
  if (mean) *mean = m;
  return C / (draws - 1);
}

}  // namespace

TEST(NoiseVariance, ZeroNoiseIsZero) {
  EXPECT_LE(estimate_noise_variance(stereo_pairs(0.0, 500, 1), kRig), 1e-15);
}

TEST(NoiseVariance, TenThousandPairsWithinTenPercent) {
  for (double px : {1.0, 2.5, 5.0}) {
    const double truth = std::pow(px / 1100.0, 2);
    const double est = estimate_noise_variance(stereo_pairs(px, 10000, 7), kRig);
    EXPECT_LT(std::abs(est - truth) / truth, 0.10) << "pixel noise " << px;
  }
}

TEST(NoiseVariance, TypicalNoiseLevel) {
  // the simulator's default noise is the 2.5 px / f = 1100 setting
  SimConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.pixel_noise, 2.5);
  EXPECT_DOUBLE_EQ(cfg.focal, 1100.0);
  EXPECT_DOUBLE_EQ(cfg.sigma(), 2.5 / 1100.0);
}

TEST(NoiseVariance, ConsistentAsPairsGrow) {
  const double truth = std::pow(2.5 / 1100.0, 2);
  double prev = 1e9;
  for (int n : {100, 2000, 40000}) {
    double err2 = 0.0;
    for (int r = 0; r < 20; ++r) {
      const double e = estimate_noise_variance(stereo_pairs(2.5, n, 100 + r), kRig) / truth - 1.0;
      err2 += e * e;
    }
    const double rmse = std::sqrt(err2 / 20);
    EXPECT_LT(rmse, prev);
    prev = rmse;
  }
  EXPECT_LT(prev, 0.02);
}

TEST(NoiseVariance, Errors) {
  StereoRig tilted = kRig;
  tilted.R_rl = rot_yaw(0.01);
  try {
    (void)estimate_noise_variance(stereo_pairs(1.0, 50, 2), tilted);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsupported_configuration);
  }
  try {
    (void)estimate_noise_variance(stereo_pairs(1.0, 9, 2), kRig);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_data);
  }
}

TEST(Triangulate, DepthFromDisparity) {
  const TriPoint tp = triangulate(Vec2(0, 0), Vec2(-0.02, 0), kRig, 0.0);
  EXPECT_NEAR(tp.p.x(), 0.0, 1e-15);
  EXPECT_NEAR(tp.p.y(), 0.0, 1e-15);
  EXPECT_NEAR(tp.p.z(), 10.0, 1e-12);
}

TEST(Triangulate, NoiseFreeRoundTrip) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p = backproject(Vec2(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)), 3.0);
    const TriPoint tp = triangulate(project(p), project(kRig.extrinsic().apply(p)), kRig, 1e-6);
    EXPECT_LE((tp.p - p).norm(), 1e-10);
    EXPECT_GT(tp.p.z(), 0.0);
    EXPECT_LE(testutil::max_abs(tp.cov - tp.cov.transpose()), 1e-12 * tp.cov.norm());
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat3>(tp.cov).eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Triangulate, NonPositiveDisparity) {
  for (const Vec2& y : {Vec2(0.0, 0.0), Vec2(0.01, 0.0)}) {
    try {
      (void)triangulate(Vec2(0, 0), y, kRig, 0.0);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::parallel_rays);
    }
  }
}

TEST(Triangulate, UnrectifiedRejected) {
  StereoRig rig = kRig;
  rig.t_rl = Vec3(-0.2, 0.01, 0.0);
  EXPECT_THROW((void)triangulate(Vec2(0, 0), Vec2(-0.02, 0), rig, 0.0), Error);
}

TEST(Triangulate, CovarianceMatchesJacobianFiniteDifference) {
  const Vec2 z(0.12, -0.07), y(0.08, -0.07);
  const double s2 = 1.7e-6;
  auto f = [&](const Eigen::VectorXd& m) -> Eigen::VectorXd {
    return triangulate(Vec2(m(0), m(1)), Vec2(m(2), m(3)), kRig, 0.0).p;
  };
  Eigen::VectorXd m(4);
  m << z, y;
  const Eigen::MatrixXd J = testutil::numeric_jacobian(f, m, 1e-7);
  const Mat3 expected = s2 * J * J.transpose();
  const Mat3 cov = triangulate(z, y, kRig, s2).cov;
  EXPECT_LE((cov - expected).norm() / expected.norm(), 1e-5);
}

TEST(Triangulate, MonteCarloCovarianceWithinTwentyPercent) {
  Rng rng(21);
  const double sigma = 2.5 / 1100.0;
  for (double depth : {2.0, 5.0}) {
    const Vec3 p = backproject(Vec2(0.1, -0.05), depth);
    const Mat3 emp = empirical_cov(p, kRig, sigma, 5000, rng);
    const Mat3 rep = triangulate(project(p), project(kRig.extrinsic().apply(p)), kRig, sigma * sigma).cov;
    EXPECT_LE((emp - rep).norm() / rep.norm(), 0.20) << "depth " << depth;
  }
}

TEST(Triangulate, NormalizedErrorsHaveUnitVariance) {
  Rng rng(22);
  const double sigma = 2.5 / 1100.0;
  const Vec3 p = backproject(Vec2(-0.08, 0.11), 4.0);
  const Vec2 z = project(p), y = project(kRig.extrinsic().apply(p));
  const Mat3 cov = triangulate(z, y, kRig, sigma * sigma).cov;
  const Mat3 Linv = Eigen::LLT<Mat3>(cov).matrixL().solve(Mat3::Identity());
  Vec3 var = Vec3::Zero();
  const int draws = 5000;
  for (int i = 0; i < draws; ++i) {
    const Vec3 e = Linv * (triangulate(z + gaussian2(rng, sigma), y + gaussian2(rng, sigma), kRig, 0.0).p - p);
    var += e.cwiseProduct(e);
  }
  var /= draws;
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(var(a), 1.0, 0.20) << "axis " << a;
}

TEST(Triangulate, DoublingBaselineHalvesDepthError) {
  Rng rng(23);
  const double sigma = 2.5 / 1100.0;
  const Vec3 p = backproject(Vec2(0.05, 0.02), 4.0);
  auto depth_rmse = [&](double baseline) {
    const StereoRig rig = StereoRig::rectified(baseline, 1100, 800, 800);
    const Vec2 z = project(p), y = project(rig.extrinsic().apply(p));
    double acc = 0.0;
    for (int i = 0; i < 5000; ++i) {
      const double e = triangulate(z + gaussian2(rng, sigma), y + gaussian2(rng, sigma), rig, 0.0).p.z() - p.z();
      acc += e * e;
    }
    return std::sqrt(acc / 5000) / p.z();
  };
  const double ratio = depth_rmse(0.4) / depth_rmse(0.2);
  EXPECT_NEAR(ratio, 0.5, 0.5 * 0.15);
}
