#include <gtest/gtest.h>

#include "gravpnp/fusion.hpp"
#include "gravpnp/sim.hpp"
#include "test_util.hpp"

using namespace gravpnp;

namespace {

std::vector<ImuSample> constant_rate(const Vec3& w, int n, double dt) {
  std::vector<ImuSample> s(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    s[static_cast<std::size_t>(k)].t = k * dt;
    s[static_cast<std::size_t>(k)].gyro = w;
    s[static_cast<std::size_t>(k)].accel = Vec3(0, 0, kGravity);
  }
  return s;
}

// One keyframe -> current window cut out of a simulated trajectory.
struct Window {
  std::vector<ImuSample> imu;
  std::vector<Correspondence> corrs;
  std::vector<TriPoint> tris;
  FusionState truth;
  double sigma2 = 0.0;
  std::vector<bool> quasi_static;
};

SimConfig quiet_config() {
  SimConfig cfg;
  cfg.pixel_noise = 0.0;
  cfg.gyro_noise_density = 0.0;
  cfg.gyro_bias_walk = 0.0;
  cfg.gyro_bias_init = 0.0;
  cfg.accel_noise_density = 0.0;
  cfg.accel_bound = 0.0;
  cfg.duration = 6.0;
  return cfg;
}

Window make_window(const SimConfig& cfg, std::uint64_t seed, std::size_t k0, int points = 60) {
  Rng rng(seed);
  const Trajectory tr = gen_trajectory(cfg, rng);
  const ImuStream imu = synth_imu(tr, cfg, rng);
  const auto stride = static_cast<std::size_t>(std::llround(cfg.imu_rate / cfg.camera_rate));
  const std::size_t k1 = k0 + stride;
  Window w;
  w.imu.assign(imu.samples.begin() + static_cast<std::ptrdiff_t>(k0),
               imu.samples.begin() + static_cast<std::ptrdiff_t>(k1 + 1));
  const PoseSE3 rel = tr.camera_pose(k1) * tr.camera_pose(k0).inverse();
  const auto pts = gen_scene(cfg, rng, points);
  w.corrs = synth_observations(pts, rel, cfg, rng).corrs;
  w.sigma2 = std::pow(std::max(cfg.sigma(), 2.5 / 1100.0), 2);
  w.tris = triangulate_all(w.corrs, cfg.rig(), w.sigma2);
  for (std::size_t k = k0; k <= k1; ++k) {
    const EulerYRP e = tr.attitude(k);
    w.truth.attitudes.push_back({e.roll, e.pitch});
    w.quasi_static.push_back(tr.quasi_static[k]);
  }
  w.truth.yaw = wrap_angle(tr.attitude(k0).yaw - tr.attitude(k1).yaw);
  w.truth.t = rel.t;
  return w;
}

double state_distance(const FusionState& a, const FusionState& b) {
  double d = std::max(std::abs(wrap_angle(a.yaw - b.yaw)), (a.t - b.t).cwiseAbs().maxCoeff());
  for (std::size_t k = 0; k < a.attitudes.size(); ++k) {
    d = std::max({d, std::abs(a.attitudes[k].roll - b.attitudes[k].roll),
                  std::abs(a.attitudes[k].pitch - b.attitudes[k].pitch)});
  }
  return d;
}

const WishartPrior kPrior = WishartPrior::from_mode(Mat3::Identity() * 1e-6, 10.0);

}  // namespace

TEST(Propagate, ZeroRateKeepsAttitude) {
  const EulerYRP start{0.3, -0.1, 0.05};
  const auto out = propagate_attitude(start, constant_rate(Vec3::Zero(), 50, 0.005));
  ASSERT_EQ(out.size(), 50u);
  for (const auto& e : out) {
    EXPECT_NEAR(e.yaw, start.yaw, 1e-12);
    EXPECT_NEAR(e.pitch, start.pitch, 1e-12);
    EXPECT_NEAR(e.roll, start.roll, 1e-12);
  }
}

TEST(Propagate, LevelBodyTurnsAboutVertical) {
  const auto out = propagate_attitude({0.0, 0.0, 0.0}, constant_rate(Vec3(0, 0, 0.1), 101, 0.01));
  EXPECT_NEAR(out.back().yaw, 0.1, 1e-12);
  EXPECT_NEAR(out.back().roll, 0.0, 1e-12);
  EXPECT_NEAR(out.back().pitch, 0.0, 1e-12);
}

TEST(Propagate, ConstantBiasDriftGrowsLinearly) {
  const Vec3 b(2e-3, -1e-3, 3e-3);
  const auto rots = propagate_rotation(Mat3::Identity(), constant_rate(b, 201, 0.005));
  for (std::size_t k : {50u, 100u, 200u}) {
    EXPECT_NEAR(log_so3(rots[k]).norm(), b.norm() * 0.005 * static_cast<double>(k), 1e-12);
  }
}

TEST(Propagate, StreamOrder) {
  auto s = constant_rate(Vec3::Zero(), 5, 0.01);
  s[3].t = s[2].t;
  try {
    (void)propagate_rotation(Mat3::Identity(), s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::stream_order);
  }
  EXPECT_THROW((void)propagate_rotation(Mat3::Identity(), std::vector<ImuSample>{}), Error);
}

TEST(Gravity, LevelIsZero) {
  EXPECT_LE(gravity_residual(0.0, 0.0, Vec3(0, 0, kGravity)).norm(), 1e-15);
}

TEST(Gravity, RollOffsetGivesAngle) {
  const double d = deg2rad(1.0);
  const Vec3 a = kGravity * body_gravity(d, 0.0);
  EXPECT_NEAR(gravity_residual(0.0, 0.0, a).norm(), 2.0 * std::sin(d / 2), 1e-14);
  EXPECT_LE(gravity_residual(d, 0.0, a).norm(), 1e-15);
}

TEST(Gravity, LateralAccelerationResidual) {
  EXPECT_NEAR(gravity_residual(0.0, 0.0, Vec3(1.0, 0.0, kGravity)).norm(), 1.0 / kGravity, 1e-3);
}

TEST(Gravity, FreeFallRejected) {
  try {
    (void)gravity_residual(0.0, 0.0, Vec3(0.1, 0.2, 0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unreliable_sample);
  }
}

TEST(Gravity, RollPitchFromAccelRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const double r = uniform(rng, -1.2, 1.2), p = uniform(rng, -1.2, 1.2);
    const RollPitch e = rollpitch_from_accel(3.0 * body_gravity(r, p));
    EXPECT_NEAR(e.roll, r, 1e-12);
    EXPECT_NEAR(e.pitch, p, 1e-12);
  }
}

TEST(RelativeRotation, YawRoundTrip) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const RollPitch a{uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)};
    const RollPitch b{uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)};
    const double psi = uniform(rng, -3.0, 3.0);
    EXPECT_NEAR(relative_yaw_from_rotation(relative_rotation(psi, a, b), a, b), psi, 1e-12);
  }
}

TEST(RelativeRotation, MatchesWorldAttitudes) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const EulerYRP e0{uniform(rng, -3, 3), uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)};
    const EulerYRP e1{uniform(rng, -3, 3), uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)};
    const Rotation3 expected = attitude_rotation(e1).transpose() * attitude_rotation(e0);
    const Rotation3 got = relative_rotation(e0.yaw - e1.yaw, {e0.roll, e0.pitch}, {e1.roll, e1.pitch});
    EXPECT_LE((got - expected).norm(), 1e-12);
  }
}

TEST(VisualResidual, ZeroAtTruthAndTranslationShift) {
  FusionState s;
  s.attitudes = {{0.0, 0.0}, {0.0, 0.0}};
  Correspondence c;
  const TriPoint tri{Vec3(0, 0, 5), Mat3::Zero()};
  EXPECT_LE(visual_residual(s, c, tri).norm(), 1e-15);
  s.t.x() = 0.01;
  const Vec2 r = visual_residual(s, c, tri);
  EXPECT_NEAR(r.x(), -0.002, 1e-15);
  EXPECT_NEAR(r.y(), 0.0, 1e-15);
}

TEST(VisualResidual, JacobianMatchesFiniteDifference) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    FusionState s;
    s.yaw = uniform(rng, -0.5, 0.5);
    s.t = Vec3(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3));
    s.attitudes = {{uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)}, {uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)}};
    Correspondence c;
    c.q = Vec2(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2));
    const TriPoint tri{backproject(Vec2(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)), uniform(rng, 2, 8)),
                       Mat3::Zero()};
    Eigen::Matrix<double, 2, 8> J;
    (void)visual_residual(s, c, tri, &J);
    auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      FusionState o;
      o.yaw = x(0);
      o.t = x.segment<3>(1);
      o.attitudes = {{x(4), x(5)}, {x(6), x(7)}};
      return visual_residual(o, c, tri);
    };
    Eigen::VectorXd x(8);
    x << s.yaw, s.t, s.attitudes[0].roll, s.attitudes[0].pitch, s.attitudes[1].roll, s.attitudes[1].pitch;
    EXPECT_LE(testutil::relative_jacobian_error(J, testutil::numeric_jacobian(f, x)), 1e-5);
  }
}

TEST(FusionProblem, JacobianMatchesFiniteDifference) {
  SimConfig cfg = quiet_config();
  cfg.accel_bound = 1.0;
  cfg.accel_noise_density = 6e-4;
  cfg.gyro_noise_density = 1.2e-4;
  const Window w = make_window(cfg, 5, 700, 15);
  BcdOptions opt;
  opt.gyro_bias_std = 1e-4;
  opt.keyframe_prior = KeyframePrior{{0.01, -0.02}, Mat2(Vec2(1e-4, 2e-4).asDiagonal())};
  const FusionProblem prob(w.corrs, w.tris, w.imu, w.sigma2, GravityVector{}, opt);
  FusionState s = w.truth;
  s.yaw += 0.01;
  s.t.y() += 0.02;
  for (auto& a : s.attitudes) a.roll += 0.003;
  const Mat3 sigma = Mat3(Vec3(1e-6, 2e-6, 3e-6).asDiagonal()) + Mat3::Constant(2e-7);
  Eigen::MatrixXd J;
  (void)prob.evaluate(s, sigma, &J);
  ASSERT_EQ(J.rows(), prob.rows());
  ASSERT_EQ(J.cols(), prob.params());
  auto f = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
    return prob.evaluate(FusionProblem::apply(s, d), sigma, nullptr);
  };
  const Eigen::MatrixXd Jn = testutil::numeric_jacobian(f, Eigen::VectorXd::Zero(prob.params()), 1e-7);
  EXPECT_LE(testutil::relative_jacobian_error(J, Jn), 1e-5);
}

TEST(Covariance, SampleCovarianceExample) {
  const std::vector<Vec3> r = {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 2, 0), Vec3(0, -2, 0)};
  const Mat3 S = sample_covariance(r);
  EXPECT_LE(testutil::max_abs(S - Mat3(Vec3(0.5, 2.0, 0.0).asDiagonal())), 1e-15);
  EXPECT_THROW((void)sample_covariance(std::vector<Vec3>{}), Error);
}

TEST(Covariance, NoDataGivesPriorMode) {
  const Mat3 mode = Mat3(Vec3(1.0, 2.0, 3.0).asDiagonal());
  const WishartPrior p = WishartPrior::from_mode(mode, 7.0);
  EXPECT_LE(testutil::max_abs(wishart_map_update(p, Mat3::Identity() * 100.0, 0) - mode), 1e-14);
  EXPECT_LE(testutil::max_abs(p.mode() - mode), 1e-14);
}

TEST(Covariance, ModeIsFixedPoint) {
  const Mat3 mode = Mat3(Vec3(1.0, 2.0, 3.0).asDiagonal()) + Mat3::Constant(0.3);
  const WishartPrior p = WishartPrior::from_mode(mode, 12.0);
  for (std::size_t K : {1u, 10u, 1000u}) {
    EXPECT_LE(testutil::max_abs(wishart_map_update(p, mode, K) - mode), 1e-13);
  }
}

TEST(Covariance, UpdateIsPsdAndMonotoneInScatter) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    std::vector<Vec3> r;
    for (int k = 0; k < 5; ++k) r.push_back(gaussian3(rng, 1e-2));
    const Mat3 S = sample_covariance(r);
    const Mat3 Sig = wishart_map_update(kPrior, S, r.size());
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat3>(Sig).eigenvalues().minCoeff(), 0.0);
    const Vec3 extra = gaussian3(rng, 1e-2);
    const Mat3 Sig2 = wishart_map_update(kPrior, S + extra * extra.transpose(), r.size());
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat3>(Sig2 - Sig).eigenvalues().minCoeff(), -1e-18);
  }
}

TEST(Covariance, UpdateMinimizesObjective) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    std::vector<Vec3> r;
    for (int k = 0; k < 20; ++k) r.push_back(gaussian3(rng, 1e-3));
    const Mat3 S = sample_covariance(r);
    const Mat3 best = wishart_map_update(kPrior, S, r.size());
    const double f0 = covariance_objective(kPrior, S, r.size(), best);
    for (int j = 0; j < 10; ++j) {
      const Mat3 G = Mat3::Identity() + 0.1 * Mat3::NullaryExpr([&] { return gaussian(rng, 1.0); });
      const Mat3 other = G * best * G.transpose();
      EXPECT_GE(covariance_objective(kPrior, S, r.size(), other), f0 - 1e-9 * std::abs(f0));
    }
  }
}

TEST(Wishart, Validation) {
  EXPECT_THROW((void)WishartPrior::from_mode(Mat3::Identity(), 4.0), Error);
  WishartPrior p;
  p.Psi(0, 1) = 0.5;
  EXPECT_THROW(p.validate(), Error);
  p.Psi = -Mat3::Identity();
  EXPECT_THROW(p.validate(), Error);
}

TEST(Bcd, NoiseFreeRecoversTruth) {
  const SimConfig cfg = quiet_config();
  Rng pick(8);
  for (int i = 0; i < 100; ++i) {
    const auto k0 = static_cast<std::size_t>(uniform(pick, 0, 1000));
    const Window w = make_window(cfg, mix_seed(9, static_cast<std::uint64_t>(i)), k0);
    FusionState init = w.truth;
    init.yaw += uniform(pick, -0.02, 0.02);
    init.t += gaussian3(pick, 0.02);
    for (auto& a : init.attitudes) {
      a.roll += 0.005;
      a.pitch -= 0.004;
    }
    const BcdResult res = bcd_solve(init, w.corrs, w.tris, w.imu, w.sigma2, kPrior);
    EXPECT_FALSE(res.degraded);
    EXPECT_LE(state_distance(res.state, w.truth), 1e-9) << "config " << i;
    // gravity residuals vanish, so the covariance collapses to Psi / (nu + K + 4)
    const double K = static_cast<double>(w.imu.size());
    EXPECT_LE(testutil::max_abs(res.sigma_imu - kPrior.Psi / (kPrior.nu + K + 4.0)), 1e-9 * kPrior.Psi.norm());
  }
}

TEST(Bcd, CostHistoryNonIncreasing) {
  SimConfig cfg;
  cfg.duration = 6.0;
  Rng pick(10);
  for (int i = 0; i < 20; ++i) {
    const Window w = make_window(cfg, mix_seed(11, static_cast<std::uint64_t>(i)), 400 + 37 * i);
    FusionState init = w.truth;
    init.yaw += 0.01;
    init.t += gaussian3(pick, 0.05);
    const BcdResult res = bcd_solve(init, w.corrs, w.tris, w.imu, w.sigma2, kPrior);
    ASSERT_FALSE(res.cost_history.empty());
    EXPECT_LE(res.rounds, 20);
    for (std::size_t k = 1; k < res.cost_history.size(); ++k) {
      EXPECT_LE(res.cost_history[k], res.cost_history[k - 1] + 1e-9 * std::abs(res.cost_history[k - 1]));
    }
    EXPECT_TRUE((res.current_cov - res.current_cov.transpose()).norm() < 1e-15);
    EXPECT_GT(res.current_cov.determinant(), 0.0);
  }
}

TEST(Bcd, BurstWindowsInflateImuCovariance) {
  SimConfig cfg;
  cfg.duration = 10.0;
  const WishartPrior prior =
      WishartPrior::from_mode(Mat3::Identity() * std::pow(cfg.accel_noise_density * std::sqrt(cfg.imu_rate) / kGravity, 2), 10.0);
  std::vector<double> quiet, burst;
  for (std::size_t k0 = 0; k0 + 21 < 2000; k0 += 20) {
    const Window w = make_window(cfg, 12, k0, 40);
    const bool all_static = std::all_of(w.quasi_static.begin(), w.quasi_static.end(), [](bool b) { return b; });
    const bool all_moving = std::none_of(w.quasi_static.begin(), w.quasi_static.end(), [](bool b) { return b; });
    if (!all_static && !all_moving) continue;
    BcdOptions opt;
    opt.gyro_bias_std = cfg.gyro_bias_init;
    opt.keyframe_prior = KeyframePrior{w.truth.attitudes.front(), Mat2::Identity() * 1e-6};
    const BcdResult res = bcd_solve(w.truth, w.corrs, w.tris, w.imu, w.sigma2, prior, GravityVector{}, opt);
    (all_static ? quiet : burst).push_back(res.sigma_imu.trace());
  }
  ASSERT_GE(quiet.size(), 10u);
  ASSERT_GE(burst.size(), 10u);
  std::sort(quiet.begin(), quiet.end());
  std::sort(burst.begin(), burst.end());
  EXPECT_GT(burst[burst.size() / 2], 3.0 * quiet[quiet.size() / 2]);
}

TEST(Bcd, InputValidation) {
  const Window w = make_window(quiet_config(), 13, 100, 10);
  FusionState bad = w.truth;
  bad.attitudes.pop_back();
  EXPECT_THROW((void)bcd_solve(bad, w.corrs, w.tris, w.imu, w.sigma2, kPrior), Error);
  const std::span<const Correspondence> two(w.corrs.data(), 2);
  const std::span<const TriPoint> two_t(w.tris.data(), 2);
  EXPECT_THROW((void)bcd_solve(w.truth, two, two_t, w.imu, w.sigma2, kPrior), Error);
  EXPECT_THROW((void)bcd_solve(w.truth, w.corrs, w.tris, w.imu, 0.0, kPrior), Error);
  EXPECT_THROW(GravityVector(Vec3(0, 0, 2)), Error);
}
