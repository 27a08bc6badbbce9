// Benchmark driver: runs one experiment and writes its CSV.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gravpnp/bench.hpp"

namespace {

using gravpnp::Error;
using gravpnp::ErrorCode;
using gravpnp::SimConfig;

void report(const std::string& code, const std::string& message) {
  nlohmann::json j;
  j["error"] = code;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string to_flag(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

/// key = value lines; '#' starts a comment. Keys use the long flag names with
/// either '-' or '_'. Flags given on the command line take precedence.
void apply_config_file(CLI::App& sub, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::io_failure, "cannot open config: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::invalid_argument, path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string flag = to_flag(key);
    if (flag == "--config") throw Error(ErrorCode::invalid_argument, "config files cannot include other configs");
    CLI::Option* opt = sub.get_option_no_throw(flag);
    if (opt == nullptr) {
      throw Error(ErrorCode::invalid_argument, path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (opt->count() > 0) continue;
    if (opt->get_items_expected_max() > 1) {
      std::string item;
      std::stringstream ss(value);
      while (std::getline(ss, item, ',')) opt->add_result(trim(item));
    } else {
      opt->add_result(value);
    }
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw Error(ErrorCode::invalid_argument, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void add_sim_options(CLI::App& sub, SimConfig& c) {
  sub.add_option("--focal", c.focal, "focal length (px)");
  sub.add_option("--width", c.width, "image width (px)");
  sub.add_option("--height", c.height, "image height (px)");
  sub.add_option("--baseline", c.baseline, "stereo baseline (m)");
  sub.add_option("--depth-min", c.depth_min, "nearest point depth (m)");
  sub.add_option("--depth-max", c.depth_max, "farthest point depth (m)");
  sub.add_option("--pixel-noise", c.pixel_noise, "image noise std (px)");
  sub.add_option("--noise-current-frame", c.noise_current_frame, "also perturb current-frame observations");
  sub.add_option("--outlier-ratio", c.outlier_ratio, "fraction of corrupted correspondences");
  sub.add_option("--points", c.points, "points per frame");
  sub.add_option("--yaw-range-deg", c.yaw_range_deg, "relative yaw range (deg)");
  sub.add_option("--rp-range-deg", c.rp_range_deg, "roll/pitch range (deg)");
  sub.add_option("--trans-min", c.trans_min, "minimum translation (m)");
  sub.add_option("--trans-max", c.trans_max, "maximum translation (m)");
  sub.add_option("--rp-prior-noise-deg", c.rp_prior_noise_deg, "roll/pitch prior noise (deg)");
  sub.add_option("--camera-rate", c.camera_rate, "camera rate (Hz)");
  sub.add_option("--imu-rate", c.imu_rate, "IMU rate (Hz)");
  sub.add_option("--gyro-noise-density", c.gyro_noise_density, "gyro white noise (rad/s/sqrt(Hz))");
  sub.add_option("--gyro-bias-walk", c.gyro_bias_walk, "gyro bias random walk (rad/s^2/sqrt(Hz))");
  sub.add_option("--gyro-bias-init", c.gyro_bias_init, "initial gyro bias std (rad/s)");
  sub.add_option("--accel-noise-density", c.accel_noise_density, "accelerometer white noise (m/s^2/sqrt(Hz))");
  sub.add_option("--accel-bound", c.accel_bound, "acceleration bound (m/s^2)");
  sub.add_option("--duration", c.duration, "trajectory length (s)");
  sub.add_option("--burst-period", c.burst_period, "motion burst period (s)");
  sub.add_option("--quasi-static-fraction", c.quasi_static_fraction, "quasi-static part of each period");
  sub.add_option("--attitude-amplitude-deg", c.attitude_amplitude_deg, "roll/pitch oscillation amplitude (deg)");
}

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 1;
  int runs = 0;  // 0 keeps the experiment default
  unsigned threads = 1;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Common& common,
                      SimConfig& cfg) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", common.config, "key = value file with option defaults");
  sub->add_option("--seed", common.seed, "master seed");
  sub->add_option("--out", common.out, "output CSV (stdout if omitted)");
  sub->add_option("--runs", common.runs, "Monte Carlo runs per grid point")->check(CLI::PositiveNumber);
  sub->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
  add_sim_options(*sub, cfg);
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gravity-aided 4-DOF pose estimation benchmarks"};
  app.require_subcommand(1);

  Common common;
  SimConfig cfg;
  gravpnp::PnpExperiment pnp;
  gravpnp::RansacExperiment ransac;
  gravpnp::CrlbExperiment crlb;
  gravpnp::NoiseExperiment noise;
  gravpnp::DriftExperiment drift;

  auto* c_pnp = add_command(app, "mc-pnp", "LS / BE / GN accuracy against the CRLB", common, cfg);
  c_pnp->add_option("--points-grid", pnp.points, "point counts")->delimiter(',');
  c_pnp->add_option("--rp-noise", pnp.rp_noise_deg, "roll/pitch prior noise (deg)");

  auto* c_ransac = add_command(app, "mc-ransac", "3-point vs 5-point consensus", common, cfg);
  c_ransac->add_option("--rates", ransac.outlier_rates, "outlier rates")->delimiter(',');
  c_ransac->add_option("--rp-noise", ransac.rp_noise_deg, "roll/pitch prior noise (deg)");
  c_ransac->add_option("--confidence", ransac.confidence, "RANSAC confidence");
  c_ransac->add_option("--max-iterations", ransac.max_iterations, "iteration cap");
  c_ransac->add_flag("--include-timing", ransac.include_timing, "add wall-clock columns (forces one thread)");

  auto* c_drift = add_command(app, "drift", "visual-inertial drift over a trajectory", common, cfg);
  c_drift->add_option("--wishart-dof", drift.wishart_dof, "inverse-Wishart prior degrees of freedom");

  auto* c_crlb = add_command(app, "crlb", "CRLB against point count", common, cfg);
  c_crlb->add_option("--points-grid", crlb.points, "point counts")->delimiter(',');

  auto* c_noise = add_command(app, "noise-est", "image noise variance estimator", common, cfg);
  c_noise->add_option("--pixel-noise-grid", noise.pixel_noise, "pixel noise levels (px)")->delimiter(',');
  c_noise->add_option("--pairs", noise.pairs, "stereo pairs per estimate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("usage", e.what());
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!common.config.empty()) apply_config_file(*sub, common.config);
    cfg.seed = common.seed;
    cfg.validate();

    gravpnp::McResult result;
    const auto runs = [&](int fallback) { return common.runs > 0 ? common.runs : fallback; };
    if (sub == c_pnp) {
      pnp.seed = common.seed;
      pnp.runs = runs(pnp.runs);
      pnp.threads = common.threads;
      result = gravpnp::run_mc_pnp(cfg, pnp);
    } else if (sub == c_ransac) {
      ransac.seed = common.seed;
      ransac.runs = runs(ransac.runs);
      ransac.threads = common.threads;
      result = gravpnp::run_mc_ransac(cfg, ransac);
    } else if (sub == c_drift) {
      drift.seed = common.seed;
      drift.runs = runs(drift.runs);
      drift.threads = common.threads;
      result = gravpnp::run_drift(cfg, drift);
    } else if (sub == c_crlb) {
      crlb.seed = common.seed;
      crlb.runs = runs(crlb.runs);
      crlb.threads = common.threads;
      result = gravpnp::run_crlb(cfg, crlb);
    } else {
      noise.seed = common.seed;
      noise.runs = runs(noise.runs);
      noise.threads = common.threads;
      result = gravpnp::run_noise_est(cfg, noise);
    }

    if (common.out.empty()) {
      gravpnp::write_csv(result, std::cout);
    } else {
      gravpnp::emit_csv(result, common.out);
    }
  } catch (const Error& e) {
    report(gravpnp::to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    report("internal", e.what());
    return 1;
  }
  return 0;
}
