#pragma once

// Minimal-set (3-point) consensus for 4-DOF pose with a roll/pitch prior.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "gravpnp/pnp4dof.hpp"
#include "gravpnp/sim.hpp"

namespace gravpnp {

struct RansacParams {
  double confidence = 0.99;
  int sample_size = 3;
  double threshold = 0.0;  // normalized-coordinate distance; 3 * sigma_hat by convention
  int max_iterations = 1000;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(confidence > 0.0 && confidence < 1.0)) {
      throw Error(ErrorCode::invalid_argument, "confidence must lie in (0, 1)");
    }
    if (sample_size < 3) throw Error(ErrorCode::invalid_argument, "sample size must be at least 3");
    if (!(threshold > 0.0)) throw Error(ErrorCode::invalid_argument, "inlier threshold must be positive");
    if (max_iterations < 1) throw Error(ErrorCode::invalid_argument, "iteration cap must be positive");
  }
};

struct ConsensusResult {
  std::vector<bool> inliers;
  Pose4 pose;
  int iterations = 0;
  std::size_t inlier_count = 0;
  std::chrono::nanoseconds elapsed{0};
};

/// ceil(log(1 - p) / log(1 - w^s)), clamped to [1, cap].
inline int required_iterations(double p, double w, int s, int cap = std::numeric_limits<int>::max()) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::invalid_argument, "confidence must lie in (0, 1)");
  if (s < 1) throw Error(ErrorCode::invalid_argument, "sample size must be positive");
  if (cap < 1) throw Error(ErrorCode::invalid_argument, "iteration cap must be positive");
  if (!(w > 0.0)) return cap;
  if (w >= 1.0) return 1;
  const double ws = std::pow(w, s);
  const double denom = std::log1p(-ws);
  if (!(denom < 0.0)) return cap;  // w^s underflows
  const double n = std::ceil(std::log1p(-p) / denom);
  if (!(n < static_cast<double>(cap))) return cap;
  return std::max(1, static_cast<int>(n));
}

/// Ordinary LS on the 6x5 system of three prerotated points.
inline StateVec5 minimal_solve(std::span<const PrerotatedPoint> pts, std::span<const Vec2> q) {
  if (pts.size() != 3 || q.size() != 3) {
    throw Error(ErrorCode::invalid_argument, "minimal solve takes exactly 3 correspondences");
  }
  const LinearSystem sys = build_linear_system(pts, q);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sys.A);
  if (qr.rank() < 5 || !detail::well_conditioned(qr, 1e10)) {
    throw Error(ErrorCode::degenerate_sample, "degenerate minimal sample");
  }
  return qr.solve(sys.b);
}

/// Inlier iff both epipolar distances are within tau.
inline std::vector<bool> classify_inliers(const Pose4& pose, const Rotation3& R_rp, std::span<const Correspondence> corrs,
                                          const StereoRig& rig, double tau) {
  const EpipolarResiduals res = epipolar_residuals(pose, R_rp, corrs, rig, false);
  std::vector<bool> mask(corrs.size());
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    mask[i] = std::max(std::abs(res.r(2 * k)), std::abs(res.r(2 * k + 1))) <= tau;
  }
  return mask;
}

namespace detail {

inline std::size_t count_true(const std::vector<bool>& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
}

template <typename T>
std::vector<T> select(std::span<const T> all, const std::vector<bool>& mask) {
  std::vector<T> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (mask[i]) out.push_back(all[i]);
  }
  return out;
}

}  // namespace detail

/// Adaptive 3-point RANSAC followed by a bias-eliminated + one-step GN refit
/// on the consensus set.  `sigma2` is the 2D noise variance used for the
/// triangulation covariances of the refit.
inline ConsensusResult ransac_4dof(std::span<const Correspondence> corrs, const Rotation3& R_rp, const StereoRig& rig,
                                   const RansacParams& params, double sigma2) {
  params.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = corrs.size();
  const auto s = static_cast<std::size_t>(params.sample_size);
  if (n < s) throw Error(ErrorCode::insufficient_data, "fewer correspondences than the sample size");

  // Points that cannot be triangulated are never sampled.
  std::vector<PrerotatedPoint> pre(n);
  std::vector<std::size_t> usable;
  usable.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const TriPoint tp = triangulate(corrs[i].z, corrs[i].y, rig, sigma2);
      pre[i] = {R_rp * tp.p, R_rp * tp.cov * R_rp.transpose()};
      usable.push_back(i);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::parallel_rays) throw;
    }
  }
  if (usable.size() < s) throw Error(ErrorCode::insufficient_data, "too few triangulable correspondences");

  Rng rng(params.seed);
  std::vector<bool> best_mask;
  std::size_t best_count = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  Pose4 best_pose;
  int budget = params.max_iterations;
  int it = 0;

  std::vector<PrerotatedPoint> sp(s);
  std::vector<Vec2> sq(s);
  std::vector<std::size_t> idx(s);
  for (; it < budget; ++it) {
    // distinct indices by rejection (s << n)
    for (std::size_t k = 0; k < s; ++k) {
      bool fresh;
      do {
        idx[k] = usable[static_cast<std::size_t>(rng() % usable.size())];
        fresh = std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx[k]) ==
                idx.begin() + static_cast<std::ptrdiff_t>(k);
      } while (!fresh);
      sp[k] = pre[idx[k]];
      sq[k] = corrs[idx[k]].q;
    }
    Pose4 cand;
    std::vector<bool> mask;
    try {
      StateVec5 x;
      if (s == 3) {
        x = minimal_solve(sp, sq);
      } else {
        x = solve_ls(build_linear_system(sp, sq));
      }
      cand = normalize_state(x);
      mask = classify_inliers(cand, R_rp, corrs, rig, params.threshold);
    } catch (const Error&) {
      continue;  // degenerate sample: draw again, the iteration still counts
    }
    const std::size_t count = detail::count_true(mask);
    if (count < s || count < best_count) continue;
    double cost = 0.0;
    if (count == best_count) {
      const auto in = detail::select<Correspondence>(corrs, mask);
      cost = ml_cost(cand, R_rp, in, rig);
      if (!(cost < best_cost)) continue;
    } else {
      const auto in = detail::select<Correspondence>(corrs, mask);
      cost = ml_cost(cand, R_rp, in, rig);
    }
    best_mask = std::move(mask);
    best_count = count;
    best_cost = cost;
    best_pose = cand;
    const double w = static_cast<double>(best_count) / static_cast<double>(usable.size());
    budget = std::min(params.max_iterations,
                      required_iterations(params.confidence, w, params.sample_size, params.max_iterations));
  }
  if (best_count < s) throw Error(ErrorCode::consensus_failure, "no hypothesis reached the minimal inlier count");

  ConsensusResult out;
  out.iterations = it;
  out.pose = best_pose;
  out.inliers = best_mask;

  // Refit on the consensus set, then re-classify once with the refined pose.
  auto refit = [&](const std::vector<bool>& mask, Pose4& pose) {
    const auto in = detail::select<Correspondence>(corrs, mask);
    try {
      pose = estimate_4dof(in, R_rp, rig, sigma2, 1).refined;
      return true;
    } catch (const Error&) {
      return false;
    }
  };
  if (refit(out.inliers, out.pose)) {
    auto mask = classify_inliers(out.pose, R_rp, corrs, rig, params.threshold);
    if (mask != out.inliers && detail::count_true(mask) >= s) {
      Pose4 again = out.pose;
      if (refit(mask, again)) {
        out.pose = again;
        out.inliers = std::move(mask);
      }
    }
  }
  out.inlier_count = detail::count_true(out.inliers);
  out.elapsed = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start);
  return out;
}

}  // namespace gravpnp
