#pragma once

// Monte Carlo harness, CRLB oracle and CSV emission.

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gravpnp/consensus.hpp"
#include "gravpnp/five_point.hpp"
#include "gravpnp/fusion.hpp"
#include "gravpnp/pnp4dof.hpp"
#include "gravpnp/sim.hpp"
#include "gravpnp/stereo.hpp"

namespace gravpnp {

// --- results and CSV ---------------------------------------------------------

/// Column-oriented experiment output: a fixed header and numeric rows.
struct McResult {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw Error(ErrorCode::invalid_argument, "unknown column: " + name);
    return static_cast<std::size_t>(it - columns.begin());
  }
  double at(std::size_t row, const std::string& name) const { return rows.at(row).at(column(name)); }
  std::vector<double> col(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r[c]);
    return v;
  }
};

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void write_csv(const McResult& r, std::ostream& os) {
  for (std::size_t i = 0; i < r.columns.size(); ++i) os << (i ? "," : "") << r.columns[i];
  os << '\n';
  for (const auto& row : r.rows) {
    if (row.size() != r.columns.size()) throw Error(ErrorCode::invalid_argument, "row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_number(row[i]);
    os << '\n';
  }
}

inline void emit_csv(const McResult& r, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io_failure, "cannot open for writing: " + path);
  write_csv(r, f);
  f.flush();
  if (!f) throw Error(ErrorCode::io_failure, "write failed: " + path);
}

inline McResult parse_csv(std::istream& is) {
  McResult r;
  std::string line;
  if (!std::getline(is, line)) return r;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) r.columns.push_back(cell);
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != r.columns.size()) throw Error(ErrorCode::invalid_argument, "ragged CSV row");
    r.rows.push_back(std::move(row));
  }
  return r;
}

inline McResult read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_failure, "cannot open for reading: " + path);
  return parse_csv(f);
}

// --- statistics --------------------------------------------------------------

inline double rms(std::span<const double> v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

/// Ranks starting at 1, ties receive their average rank.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error(ErrorCode::insufficient_data, "need paired samples");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0 && sbb > 0.0)) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  return pearson(ra, rb);
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::insufficient_data, "need at least two points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

// --- worker pool -------------------------------------------------------------

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs fn(i) for i in [0, count) on `threads` workers and returns the
/// results in index order.
template <typename Fn>
auto parallel_trials(std::size_t count, unsigned threads, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using T = decltype(fn(std::size_t{}));
  std::vector<T> out(count);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count && !failed; i = next++) {
          try {
            out[i] = fn(i);
          } catch (...) {
            if (!failed.exchange(true)) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

// --- CRLB --------------------------------------------------------------------

using CrlbMatrix = Mat4;

/// sigma^2 (J^T J)^-1 with J the Jacobian of all epipolar distances w.r.t.
/// (yaw, t) at the true pose, evaluated on noise-free correspondences.
inline CrlbMatrix crlb_4dof(std::span<const Correspondence> noise_free, const Pose4& truth, const Rotation3& R_rp,
                            const StereoRig& rig, double sigma2) {
  const EpipolarResiduals res = epipolar_residuals(truth, R_rp, noise_free, rig, true);
  const Mat4 info = res.J.transpose() * res.J;
  const Eigen::LDLT<Mat4> ldlt(info);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-12 * ldlt.vectorD().maxCoeff())) {
    throw Error(ErrorCode::degenerate_geometry, "singular Fisher information");
  }
  return sigma2 * ldlt.solve(Mat4::Identity());
}

/// Noise-free correspondences for the same points and pose.
inline std::vector<Correspondence> noise_free_correspondences(std::span<const TriPoint> points, const PoseSE3& pose,
                                                              const StereoRig& rig) {
  std::vector<Correspondence> out;
  out.reserve(points.size());
  for (const auto& tp : points) {
    Correspondence c;
    c.q = project(pose.apply(tp.p));
    c.z = project(tp.p);
    c.y = project(rig.extrinsic().apply(tp.p));
    c.is_inlier_truth = true;
    out.push_back(c);
  }
  return out;
}

// --- experiment settings -----------------------------------------------------

struct PnpExperiment {
  std::vector<int> points = {25, 100, 400, 1600};
  int runs = 700;
  double rp_noise_deg = 0.0;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct RansacExperiment {
  std::vector<double> outlier_rates = {0.1, 0.2, 0.3};
  int runs = 400;
  int points = 200;
  double rp_noise_deg = 0.2;
  double confidence = 0.99;
  int max_iterations = 1000;
  bool include_timing = false;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct CrlbExperiment {
  std::vector<int> points = {25, 100, 200, 400, 500, 1600};
  int runs = 50;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct NoiseExperiment {
  std::vector<double> pixel_noise = {1.0, 2.5, 5.0};
  int pairs = 10000;
  int runs = 20;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct DriftExperiment {
  std::uint64_t seed = 1;
  int runs = 1;  // independent trajectories; rows carry the run index
  double wishart_dof = 10.0;
  unsigned threads = 1;
};

namespace detail {

inline double yaw_error(double est, double truth) { return wrap_angle(est - truth); }

/// Fixed single-frame truth for a Monte Carlo sweep, drawn from the master seed.
inline RelativePose sweep_truth(const SimConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xC0FFEE));
  return sample_relative_pose(cfg, rng);
}

}  // namespace detail

// --- mc-pnp ------------------------------------------------------------------

/// LS / BE / one-step GN accuracy versus point count.  The relative pose is
/// fixed per sweep; scenes and noise are redrawn per trial.
inline McResult run_mc_pnp(const SimConfig& cfg, const PnpExperiment& ex) {
  cfg.validate();
  if (ex.runs < 1) throw Error(ErrorCode::invalid_argument, "runs must be positive");
  const StereoRig rig = cfg.rig();
  const RelativePose truth = detail::sweep_truth(cfg, ex.seed);
  const StateVec5 x_true = to_state(truth.pose);

  struct Trial {
    bool ok = false;
    StateVec5 e_ls, e_be;
    Vec4 e_ls4, e_be4, e_gn4;
    Vec4 crlb_diag;
    bool gn_reduced = false;
  };

  McResult out;
  out.columns = {"n", "runs", "failures", "rp_noise_deg",
                 "rmse_yaw_ls_deg", "rmse_t_ls", "rmse_yaw_be_deg", "rmse_t_be", "rmse_yaw_gn_deg", "rmse_t_gn",
                 "rmse_tx_gn", "rmse_ty_gn", "rmse_tz_gn",
                 "bias_ls", "bias_be",
                 "crlb_yaw_deg", "crlb_t", "crlb_tx", "crlb_ty", "crlb_tz",
                 "gn_cost_reduced_frac", "seed"};
  for (std::size_t gi = 0; gi < ex.points.size(); ++gi) {
    const int n = ex.points[gi];
    if (n < 3) throw Error(ErrorCode::invalid_argument, "point count must be at least 3");
    const std::uint64_t grid_seed = mix_seed(ex.seed, 1000 + gi);
    auto trials = parallel_trials(static_cast<std::size_t>(ex.runs), ex.threads, [&](std::size_t r) {
      Trial tr;
      Rng rng(mix_seed(grid_seed, r));
      const auto pts = gen_scene(cfg, rng, n);
      const SyntheticFrame fr = synth_observations(pts, truth.se3, cfg, rng);
      const Rotation3 R_rp = noisy_rp_prior(truth, ex.rp_noise_deg, rng);
      try {
        const double s2 = cfg.sigma() * cfg.sigma();
        const auto pre = prerotate(triangulate_all(fr.corrs, rig, s2), R_rp);
        std::vector<Vec2> q;
        for (const auto& c : fr.corrs) q.push_back(c.q);
        const LinearSystem sys = build_linear_system(pre, q);
        const StateVec5 x_ls = solve_ls(sys);
        const StateVec5 x_be = solve_be(sys);
        const Pose4 ls = normalize_state(x_ls);
        const Pose4 be = normalize_state(x_be);
        const Pose4 gn = gn_refine(be, R_rp, fr.corrs, rig, 1);
        tr.e_ls = x_ls - x_true;
        tr.e_be = x_be - x_true;
        tr.e_ls4 << detail::yaw_error(ls.yaw, truth.pose.yaw), ls.t - truth.pose.t;
        tr.e_be4 << detail::yaw_error(be.yaw, truth.pose.yaw), be.t - truth.pose.t;
        tr.e_gn4 << detail::yaw_error(gn.yaw, truth.pose.yaw), gn.t - truth.pose.t;
        tr.gn_reduced = ml_cost(gn, R_rp, fr.corrs, rig) < ml_cost(be, R_rp, fr.corrs, rig);
        const auto clean = noise_free_correspondences(fr.points, truth.se3, rig);
        tr.crlb_diag = crlb_4dof(clean, truth.pose, truth.R_rp, rig, s2).diagonal();
        tr.ok = true;
      } catch (const Error&) {
        tr.ok = false;
      }
      return tr;
    });

    int ok = 0, reduced = 0;
    StateVec5 m_ls = StateVec5::Zero(), m_be = StateVec5::Zero();
    Vec4 s_ls = Vec4::Zero(), s_be = Vec4::Zero(), s_gn = Vec4::Zero(), c = Vec4::Zero();
    for (const auto& t : trials) {
      if (!t.ok) continue;
      ++ok;
      reduced += t.gn_reduced ? 1 : 0;
      m_ls += t.e_ls;
      m_be += t.e_be;
      s_ls += t.e_ls4.cwiseAbs2();
      s_be += t.e_be4.cwiseAbs2();
      s_gn += t.e_gn4.cwiseAbs2();
      c += t.crlb_diag;
    }
    const double k = std::max(ok, 1);
    s_ls /= k;
    s_be /= k;
    s_gn /= k;
    c /= k;
    auto tnorm = [](const Vec4& v) { return std::sqrt(v.tail<3>().sum()); };
    out.rows.push_back({static_cast<double>(n), static_cast<double>(ex.runs), static_cast<double>(ex.runs - ok),
                        ex.rp_noise_deg,
                        rad2deg(std::sqrt(s_ls(0))), tnorm(s_ls), rad2deg(std::sqrt(s_be(0))), tnorm(s_be),
                        rad2deg(std::sqrt(s_gn(0))), tnorm(s_gn),
                        std::sqrt(s_gn(1)), std::sqrt(s_gn(2)), std::sqrt(s_gn(3)),
                        (m_ls / k).norm(), (m_be / k).norm(),
                        rad2deg(std::sqrt(c(0))), tnorm(c), std::sqrt(c(1)), std::sqrt(c(2)), std::sqrt(c(3)),
                        reduced / k, static_cast<double>(ex.seed)});
  }
  return out;
}

// --- crlb --------------------------------------------------------------------

/// CRLB standard deviations averaged (in variance) over scene draws.
inline McResult run_crlb(const SimConfig& cfg, const CrlbExperiment& ex) {
  cfg.validate();
  const StereoRig rig = cfg.rig();
  const RelativePose truth = detail::sweep_truth(cfg, ex.seed);
  const double s2 = cfg.sigma() * cfg.sigma();
  McResult out;
  out.columns = {"n", "runs", "failures", "crlb_yaw_deg", "crlb_tx", "crlb_ty", "crlb_tz", "seed"};
  for (std::size_t gi = 0; gi < ex.points.size(); ++gi) {
    const int n = ex.points[gi];
    const std::uint64_t grid_seed = mix_seed(ex.seed, 2000 + gi);
    auto diags = parallel_trials(static_cast<std::size_t>(ex.runs), ex.threads, [&](std::size_t r) {
      Rng rng(mix_seed(grid_seed, r));
      const auto pts = gen_scene(cfg, rng, n);
      std::vector<TriPoint> tps;
      for (const auto& p : pts) tps.push_back({p, Mat3::Zero()});
      try {
        const auto clean = noise_free_correspondences(tps, truth.se3, rig);
        return std::optional<Vec4>(crlb_4dof(clean, truth.pose, truth.R_rp, rig, s2).diagonal());
      } catch (const Error&) {
        return std::optional<Vec4>();
      }
    });
    Vec4 c = Vec4::Zero();
    int ok = 0;
    for (const auto& d : diags) {
      if (d) {
        c += *d;
        ++ok;
      }
    }
    c /= std::max(ok, 1);
    out.rows.push_back({static_cast<double>(n), static_cast<double>(ex.runs), static_cast<double>(ex.runs - ok),
                        rad2deg(std::sqrt(c(0))), std::sqrt(c(1)), std::sqrt(c(2)), std::sqrt(c(3)),
                        static_cast<double>(ex.seed)});
  }
  return out;
}

// --- mc-ransac ---------------------------------------------------------------

/// Paired 3-point (4-DOF) and 5-point (essential matrix) consensus on the same
/// correspondences.  Rotation errors use the yaw of each estimate; translation
/// errors are direction angles.
inline McResult run_mc_ransac(const SimConfig& base, const RansacExperiment& ex) {
  base.validate();
  struct Trial {
    bool ok3 = false, ok5 = false;
    double yaw3 = 0, yaw5 = 0, dir3 = 0, dir5 = 0;
    double rec3 = 0, prec3 = 0, rec5 = 0, prec5 = 0;
    double it3 = 0, it5 = 0;
    double us3 = 0, us5 = 0;
  };
  McResult out;
  out.columns = {"outlier_rate", "runs", "failures_3pt", "failures_5pt",
                 "rmse_yaw_3pt_deg", "rmse_yaw_5pt_deg", "rmse_tdir_3pt_deg", "rmse_tdir_5pt_deg",
                 "median_yaw_3pt_deg", "median_yaw_5pt_deg", "median_tdir_3pt_deg", "median_tdir_5pt_deg",
                 "recall_3pt", "precision_3pt", "recall_5pt", "precision_5pt",
                 "mean_iterations_3pt", "mean_iterations_5pt", "seed"};
  if (ex.include_timing) {
    out.columns.insert(out.columns.end() - 1, {"median_time_3pt_us", "median_time_5pt_us", "time_reduction"});
  }
  // wall-clock comparisons are only meaningful without contention
  const unsigned threads = ex.include_timing ? 1u : ex.threads;

  for (std::size_t gi = 0; gi < ex.outlier_rates.size(); ++gi) {
    SimConfig cfg = base;
    cfg.outlier_ratio = ex.outlier_rates[gi];
    cfg.validate();
    const StereoRig rig = cfg.rig();
    const std::uint64_t grid_seed = mix_seed(ex.seed, 3000 + gi);
    auto trials = parallel_trials(static_cast<std::size_t>(ex.runs), threads, [&](std::size_t r) {
      Trial tr;
      Rng rng(mix_seed(grid_seed, r));
      const SingleFrameSample s = sample_single_frame(cfg, rng, ex.points);
      const Rotation3 R_rp = noisy_rp_prior(s.truth, ex.rp_noise_deg, rng);
      const std::uint64_t rs = rng();
      const auto& corrs = s.frame.corrs;

      auto label_stats = [&](const std::vector<bool>& mask, double& rec, double& prec) {
        double tp = 0, pos = 0, truth_in = 0;
        for (std::size_t i = 0; i < corrs.size(); ++i) {
          const bool in = corrs[i].is_inlier_truth.value_or(true);
          truth_in += in;
          pos += mask[i];
          tp += mask[i] && in;
        }
        rec = truth_in > 0 ? tp / truth_in : 0.0;
        prec = pos > 0 ? tp / pos : 0.0;
      };

      double s2 = 0.0;
      try {
        s2 = estimate_noise_variance(corrs, rig);
      } catch (const Error&) {
        return tr;
      }
      const double tau = 3.0 * std::sqrt(s2);
      try {
        RansacParams p;
        p.confidence = ex.confidence;
        p.threshold = tau;
        p.max_iterations = ex.max_iterations;
        p.seed = rs;
        const ConsensusResult c = ransac_4dof(corrs, R_rp, rig, p, s2);
        const PoseSE3 est = to_se3(c.pose, R_rp);
        tr.yaw3 = std::abs(rad2deg(detail::yaw_error(factor_yaw_rollpitch(est.R).yaw, s.truth.euler.yaw)));
        tr.dir3 = rad2deg(direction_angle(est.t, s.truth.se3.t));
        label_stats(c.inliers, tr.rec3, tr.prec3);
        tr.it3 = c.iterations;
        tr.us3 = static_cast<double>(c.elapsed.count()) * 1e-3;
        tr.ok3 = true;
      } catch (const Error&) {
      }
      try {
        std::vector<Vec2> x1, x2;
        for (const auto& c : corrs) {
          x1.push_back(c.z);
          x2.push_back(c.q);
        }
        const auto f = five_point::ransac(x1, x2, tau, ex.confidence, ex.max_iterations, rs);
        tr.yaw5 = std::abs(rad2deg(detail::yaw_error(factor_yaw_rollpitch(f.pose.R).yaw, s.truth.euler.yaw)));
        tr.dir5 = rad2deg(direction_angle(f.pose.t, s.truth.se3.t));
        label_stats(f.inliers, tr.rec5, tr.prec5);
        tr.it5 = f.iterations;
        tr.us5 = static_cast<double>(f.elapsed.count()) * 1e-3;
        tr.ok5 = true;
      } catch (const Error&) {
      }
      return tr;
    });

    std::vector<double> y3, y5, d3, d5, t3, t5;
    double rec3 = 0, prec3 = 0, rec5 = 0, prec5 = 0, it3 = 0, it5 = 0;
    for (const auto& t : trials) {
      if (t.ok3) {
        y3.push_back(t.yaw3);
        d3.push_back(t.dir3);
        t3.push_back(t.us3);
        rec3 += t.rec3;
        prec3 += t.prec3;
        it3 += t.it3;
      }
      if (t.ok5) {
        y5.push_back(t.yaw5);
        d5.push_back(t.dir5);
        t5.push_back(t.us5);
        rec5 += t.rec5;
        prec5 += t.prec5;
        it5 += t.it5;
      }
    }
    const double n3 = std::max<double>(1.0, static_cast<double>(y3.size()));
    const double n5 = std::max<double>(1.0, static_cast<double>(y5.size()));
    std::vector<double> row = {ex.outlier_rates[gi], static_cast<double>(ex.runs),
                               static_cast<double>(ex.runs - static_cast<int>(y3.size())),
                               static_cast<double>(ex.runs - static_cast<int>(y5.size())),
                               rms(y3), rms(y5), rms(d3), rms(d5),
                               median(y3), median(y5), median(d3), median(d5),
                               rec3 / n3, prec3 / n3, rec5 / n5, prec5 / n5, it3 / n3, it5 / n5};
    if (ex.include_timing) {
      const double m3 = median(t3), m5 = median(t5);
      row.insert(row.end(), {m3, m5, 1.0 - m3 / m5});
    }
    row.push_back(static_cast<double>(ex.seed));
    out.rows.push_back(std::move(row));
  }
  return out;
}

// --- noise-est ---------------------------------------------------------------

inline McResult run_noise_est(const SimConfig& base, const NoiseExperiment& ex) {
  base.validate();
  if (ex.pairs < 10) throw Error(ErrorCode::invalid_argument, "need at least 10 pairs");
  McResult out;
  out.columns = {"pixel_noise", "pairs", "runs", "sigma2_true", "sigma2_mean", "rel_err_mean", "rel_err_max", "seed"};
  for (std::size_t gi = 0; gi < ex.pixel_noise.size(); ++gi) {
    SimConfig cfg = base;
    cfg.pixel_noise = ex.pixel_noise[gi];
    cfg.validate();
    const StereoRig rig = cfg.rig();
    const double truth = cfg.sigma() * cfg.sigma();
    const std::uint64_t grid_seed = mix_seed(ex.seed, 4000 + gi);
    auto est = parallel_trials(static_cast<std::size_t>(ex.runs), ex.threads, [&](std::size_t r) {
      Rng rng(mix_seed(grid_seed, r));
      const auto pts = gen_scene(cfg, rng, ex.pairs);
      const auto fr = synth_observations(pts, PoseSE3{Rotation3::Identity(), Vec3(0.0, 0.0, -0.1)}, cfg, rng);
      return estimate_noise_variance(fr.corrs, rig);
    });
    double mean = 0.0, rel_mean = 0.0, rel_max = 0.0;
    for (double e : est) {
      mean += e;
      const double rel = truth > 0.0 ? std::abs(e - truth) / truth : std::abs(e);
      rel_mean += rel;
      rel_max = std::max(rel_max, rel);
    }
    const double k = static_cast<double>(std::max<std::size_t>(est.size(), 1));
    out.rows.push_back({cfg.pixel_noise, static_cast<double>(ex.pairs), static_cast<double>(ex.runs), truth,
                        mean / k, rel_mean / k, rel_max, static_cast<double>(ex.seed)});
  }
  return out;
}

// --- drift -------------------------------------------------------------------

/// Frame-to-frame tracking over a simulated trajectory: gyro propagation ->
/// roll/pitch prior -> 4-DOF PnP (BE + GN, or 3-point consensus when the
/// config has outliers) -> windowed gravity fusion.  One row per camera
/// frame and run.
inline McResult run_drift(const SimConfig& cfg, const DriftExperiment& ex) {
  cfg.validate();
  const double ratio = cfg.imu_rate / cfg.camera_rate;
  const auto stride = static_cast<std::size_t>(std::llround(ratio));
  if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-9) {
    throw Error(ErrorCode::invalid_argument, "IMU rate must be an integer multiple of the camera rate");
  }
  if (ex.runs < 1) throw Error(ErrorCode::invalid_argument, "runs must be positive");
  const StereoRig rig = cfg.rig();
  const double accel_dir_sigma = std::max(cfg.accel_noise_density * std::sqrt(cfg.imu_rate) / kGravity, 1e-6);
  const WishartPrior prior =
      WishartPrior::from_mode(Mat3::Identity() * accel_dir_sigma * accel_dir_sigma, ex.wishart_dof);

  McResult out;
  out.columns = {"run", "frame", "time", "roll_err_deg", "pitch_err_deg", "yaw_err_deg", "trans_err_m",
                 "trace_sigma_imu", "accel_true_mean", "bcd_rounds", "degraded", "pnp_failed"};

  auto runs = parallel_trials(static_cast<std::size_t>(ex.runs), ex.threads, [&](std::size_t run) {
    std::vector<std::vector<double>> rows;
    const std::uint64_t run_seed = mix_seed(ex.seed, 5000 + run);
    Rng traj_rng(mix_seed(run_seed, 1));
    Rng imu_rng(mix_seed(run_seed, 2));
    Rng scene_rng(mix_seed(run_seed, 3));
    const Trajectory tr = gen_trajectory(cfg, traj_rng);
    const ImuStream imu = synth_imu(tr, cfg, imu_rng);

    // initial estimate: roll/pitch from the first accelerometer sample,
    // yaw and position from ground truth (unobservable gauge)
    RollPitch rp = rollpitch_from_accel(imu.samples[0].accel);
    double yaw_abs = tr.attitude(0).yaw;
    Vec3 pos = tr.position[0];
    Mat2 rp_cov = Mat2::Identity() * accel_dir_sigma * accel_dir_sigma;

    const double window_span = static_cast<double>(stride) / cfg.imu_rate;
    for (std::size_t k1 = stride; k1 < tr.size(); k1 += stride) {
      const std::size_t k0 = k1 - stride;
      const std::span<const ImuSample> window(imu.samples.data() + k0, stride + 1);

      const Rotation3 Rwb_key = attitude_rotation({yaw_abs, rp.pitch, rp.roll});
      const auto predicted = propagate_rotation(Rwb_key, window);

      const PoseSE3 truth_rel = tr.camera_pose(k1) * tr.camera_pose(k0).inverse();
      const auto pts = gen_scene(cfg, scene_rng, cfg.points);
      const SyntheticFrame fr = synth_observations(pts, truth_rel, cfg, scene_rng);

      // roll/pitch prior for the 4-DOF solver from the gyro prediction
      const Rotation3 R_pred = predicted.back().transpose() * Rwb_key;
      const EulerYRP pe = factor_yaw_rollpitch(R_pred);
      const Rotation3 R_rp = rot_rp(pe.pitch, pe.roll);

      FusionState init;
      init.attitudes.reserve(predicted.size());
      for (const auto& R : predicted) {
        const EulerYRP e = factor_yaw_rollpitch(R);
        init.attitudes.push_back({e.roll, e.pitch});
      }
      init.attitudes.front() = rp;

      bool pnp_failed = false;
      std::vector<Correspondence> inl = fr.corrs;
      double s2 = cfg.sigma() * cfg.sigma();
      try {
        s2 = estimate_noise_variance(fr.corrs, rig);
        Pose4 pose;
        if (cfg.outlier_ratio > 0.0) {
          RansacParams p;
          p.threshold = 3.0 * std::sqrt(s2);
          p.seed = scene_rng();
          const ConsensusResult c = ransac_4dof(fr.corrs, R_rp, rig, p, s2);
          inl = detail::select<Correspondence>(fr.corrs, c.inliers);
          pose = c.pose;
        } else {
          pose = estimate_4dof(fr.corrs, R_rp, rig, s2, 1).refined;
        }
        const PoseSE3 est = to_se3(pose, R_rp);
        init.yaw = relative_yaw_from_rotation(est.R, init.attitudes.front(), init.attitudes.back());
        init.t = est.t;
      } catch (const Error&) {
        // fall back to the gyro prediction and a zero translation guess
        pnp_failed = true;
        init.yaw = relative_yaw_from_rotation(R_pred, init.attitudes.front(), init.attitudes.back());
        init.t = Vec3::Zero();
      }
      s2 = std::max(s2, 1e-14);

      // expected bias magnitude under the random-walk model
      const double bias_std = std::sqrt(cfg.gyro_bias_init * cfg.gyro_bias_init +
                                        cfg.gyro_bias_walk * cfg.gyro_bias_walk * tr.time[k1]);
      BcdOptions opt;
      opt.gyro_noise_density = cfg.gyro_noise_density;
      opt.gyro_bias_std = bias_std;
      opt.keyframe_prior = KeyframePrior{rp, rp_cov};

      BcdResult res;
      bool solved = false;
      try {
        const auto tris = triangulate_all(inl, rig, s2);
        res = bcd_solve(init, inl, tris, window, s2, prior, GravityVector{}, opt);
        solved = true;
      } catch (const Error&) {
        res.state = init;
        res.degraded = true;
        res.sigma_imu = prior.mode();
        res.current_cov = rp_cov;
      }

      // chain the absolute estimate
      const RollPitch rp_cur = res.state.attitudes.back();
      const double yaw_cur = wrap_angle(yaw_abs - res.state.yaw);
      const Rotation3 Rwb_cur = attitude_rotation({yaw_cur, rp_cur.pitch, rp_cur.roll});
      pos = pos - Rwb_cur * res.state.t;
      rp = rp_cur;
      yaw_abs = yaw_cur;
      if (res.current_cov.allFinite() && res.current_cov.determinant() > 0.0 && !res.degraded) {
        rp_cov = res.current_cov;
      }
      // the window treats the gyro bias as white; its correlated part shows up
      // as process noise between windows
      rp_cov += Mat2::Identity() * std::pow(bias_std * window_span, 2);

      const EulerYRP te = tr.attitude(k1);
      double acc = 0.0;
      for (std::size_t k = k0; k <= k1; ++k) acc += tr.accel_world[k].norm();
      acc /= static_cast<double>(stride + 1);
      rows.push_back({static_cast<double>(run), static_cast<double>(k1 / stride), tr.time[k1],
                      rad2deg(wrap_angle(rp.roll - te.roll)), rad2deg(wrap_angle(rp.pitch - te.pitch)),
                      rad2deg(wrap_angle(yaw_abs - te.yaw)), (pos - tr.position[k1]).norm(),
                      res.sigma_imu.trace(), acc, static_cast<double>(res.rounds),
                      (res.degraded || !solved) ? 1.0 : 0.0, pnp_failed ? 1.0 : 0.0});
    }
    return rows;
  });
  for (auto& r : runs) {
    for (auto& row : r) out.rows.push_back(std::move(row));
  }
  return out;
}

struct DriftSummary {
  double rp_rmse_first = 0, rp_rmse_last = 0;    // deg, roll and pitch pooled
  double yaw_rmse_first = 0, yaw_rmse_last = 0;  // deg
  double spearman_trace_accel = 0;
  std::size_t windows = 0;
};

/// Window metrics over the first and last `span_s` seconds, pooled over runs.
inline DriftSummary summarize_drift(const McResult& r, double span_s = 10.0) {
  DriftSummary s;
  const auto time = r.col("time");
  const auto roll = r.col("roll_err_deg");
  const auto pitch = r.col("pitch_err_deg");
  const auto yaw = r.col("yaw_err_deg");
  const auto tr = r.col("trace_sigma_imu");
  const auto acc = r.col("accel_true_mean");
  if (time.empty()) throw Error(ErrorCode::insufficient_data, "empty drift result");
  const double t_end = *std::max_element(time.begin(), time.end());
  std::vector<double> rp_first, rp_last, y_first, y_last;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (time[i] <= span_s) {
      rp_first.insert(rp_first.end(), {roll[i], pitch[i]});
      y_first.push_back(yaw[i]);
    }
    if (time[i] > t_end - span_s) {
      rp_last.insert(rp_last.end(), {roll[i], pitch[i]});
      y_last.push_back(yaw[i]);
    }
  }
  s.rp_rmse_first = rms(rp_first);
  s.rp_rmse_last = rms(rp_last);
  s.yaw_rmse_first = rms(y_first);
  s.yaw_rmse_last = rms(y_last);
  s.spearman_trace_accel = spearman(tr, acc);
  s.windows = time.size();
  return s;
}

}  // namespace gravpnp
