#include <gtest/gtest.h>

#include "gravpnp/five_point.hpp"
#include "gravpnp/sim.hpp"
#include "test_util.hpp"

using namespace gravpnp;

namespace {

struct Pair {
  std::vector<Vec2> x1, x2;
  PoseSE3 pose;
};

Pair make_pair(int n, double sigma, Rng& rng) {
  Pair p;
  p.pose.R = exp_so3(gaussian3(rng, 0.1));
  p.pose.t = Vec3(uniform(rng, -1, 1), uniform(rng, -0.3, 0.3), uniform(rng, -0.5, 0.5));
  while (static_cast<int>(p.x1.size()) < n) {
    const Vec3 X = backproject(Vec2(uniform(rng, -0.35, 0.35), uniform(rng, -0.35, 0.35)), uniform(rng, 2, 10));
    const Vec3 Y = p.pose.apply(X);
    if (Y.z() <= 0.1) continue;
    p.x1.push_back(project(X) + gaussian2(rng, sigma));
    p.x2.push_back(project(Y) + gaussian2(rng, sigma));
  }
  return p;
}

Mat3 essential(const PoseSE3& pose) { return skew(pose.t) * pose.R; }

// distance between essential matrices up to scale and sign
double e_distance(const Mat3& a, const Mat3& b) {
  const Mat3 an = a / a.norm(), bn = b / b.norm();
  return std::min((an - bn).norm(), (an + bn).norm());
}

}  // namespace

TEST(FivePoint, NoiseFreeSolutionsContainTruth) {
  Rng rng(1);
  int hits = 0;
  for (int i = 0; i < 200; ++i) {
    const Pair p = make_pair(5, 0.0, rng);
    const auto Es = five_point::solve(p.x1, p.x2);
    ASSERT_LE(Es.size(), 10u);
    double best = 1e9;
    for (const Mat3& E : Es) best = std::min(best, e_distance(E, essential(p.pose)));
    if (best < 1e-6) ++hits;
  }
  EXPECT_GE(hits, 196);
}

TEST(FivePoint, EverySolutionIsEssential) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Pair p = make_pair(5, 0.0, rng);
    for (const Mat3& E : five_point::solve(p.x1, p.x2)) {
      const Eigen::Vector3d s = Eigen::JacobiSVD<Mat3>(E).singularValues();
      EXPECT_NEAR(s(0), s(1), 1e-6 * s(0));
      EXPECT_LE(s(2), 1e-6 * s(0));
      for (int k = 0; k < 5; ++k) {
        EXPECT_LE(std::abs(homogeneous(p.x2[k]).dot(E * homogeneous(p.x1[k]))), 1e-9);
      }
    }
  }
}

TEST(FivePoint, WrongCount) {
  Rng rng(3);
  const Pair p = make_pair(6, 0.0, rng);
  EXPECT_THROW((void)five_point::solve(p.x1, p.x2), Error);
}

TEST(Sampson, ZeroOnConstraintAndFirstOrderOffIt) {
  Rng rng(4);
  const Pair p = make_pair(20, 0.0, rng);
  const Mat3 E = essential(p.pose);
  for (int k = 0; k < 20; ++k) {
    EXPECT_LE(five_point::sampson(E, p.x1[k], p.x2[k]), 1e-24);
    // shift x2 along the epipolar line normal by d: sampson ~ d^2 * |l2|^2 / (|l1|^2 + |l2|^2)
    const Vec3 l = E * homogeneous(p.x1[k]);
    const Vec2 n = l.head<2>().normalized();
    const double d = 1e-4;
    const Vec3 m = E.transpose() * homogeneous(p.x2[k] + d * n);
    const double ln2 = l.head<2>().squaredNorm();
    const double expected = d * d * ln2 / (ln2 + m.head<2>().squaredNorm());
    EXPECT_NEAR(five_point::sampson(E, p.x1[k], p.x2[k] + d * n), expected, 1e-6 * expected);
  }
}

TEST(Sampson, ScaleInvariant) {
  Rng rng(5);
  const Pair p = make_pair(5, 1e-3, rng);
  const Mat3 E = essential(p.pose);
  EXPECT_NEAR(five_point::sampson(E, p.x1[0], p.x2[0]), five_point::sampson(-7.0 * E, p.x1[0], p.x2[0]), 1e-18);
}

TEST(Decompose, RecoversPoseUpToScale) {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const Pair p = make_pair(30, 0.0, rng);
    const PoseSE3 est = five_point::decompose(essential(p.pose), p.x1, p.x2);
    EXPECT_LE((est.R - p.pose.R).norm(), 1e-9);
    EXPECT_LE((est.t - p.pose.t.normalized()).norm(), 1e-9);
  }
}

TEST(Ransac, RecoversPoseWithOutliers) {
  // no refit after consensus, so single trials are heavy-tailed; check medians
  Rng rng(7);
  const double sigma = 2.5 / 1100.0;
  std::vector<double> rot, dir;
  int kept_outliers = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Pair p = make_pair(200, sigma, rng);
    for (int k = 0; k < 60; ++k) p.x2[k] = Vec2(uniform(rng, -0.35, 0.35), uniform(rng, -0.35, 0.35));
    const auto res = five_point::ransac(p.x1, p.x2, 3.0 * sigma, 0.99, 10000, 8 + trial);
    rot.push_back(rad2deg(log_so3(res.pose.R.transpose() * p.pose.R).norm()));
    dir.push_back(rad2deg(direction_angle(res.pose.t, p.pose.t)));
    for (int k = 0; k < 60; ++k) kept_outliers += res.inliers[k];
    EXPECT_GT(res.iterations, 0);
  }
  std::sort(rot.begin(), rot.end());
  std::sort(dir.begin(), dir.end());
  EXPECT_LT(rot[25], 2.0);
  EXPECT_LT(dir[25], 8.0);
  EXPECT_LE(kept_outliers, 50 * 6);
}

TEST(Ransac, DeterministicAndValidated) {
  Rng rng(9);
  const Pair p = make_pair(80, 1e-3, rng);
  const auto a = five_point::ransac(p.x1, p.x2, 3e-3, 0.99, 500, 11);
  const auto b = five_point::ransac(p.x1, p.x2, 3e-3, 0.99, 500, 11);
  EXPECT_EQ(a.inliers, b.inliers);
  EXPECT_EQ(a.E, b.E);
  EXPECT_THROW((void)five_point::ransac(std::span(p.x1).first(4), std::span(p.x2).first(4), 1e-3, 0.99, 10, 1),
               Error);
  EXPECT_THROW((void)five_point::ransac(p.x1, p.x2, 0.0, 0.99, 10, 1), Error);
}
