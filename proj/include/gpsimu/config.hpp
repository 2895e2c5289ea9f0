#pragma once

/**
 * @file config.hpp
 * @brief Run configuration and its flat `key = value` text format.
 *
 * One key per line, `#` starts a comment, unknown keys are rejected. Every
 * ScenarioConfig field has a key of the same name (angles in radians).
 * Estimator keys are prefixed by the part they tune. The filter's sensor
 * noise follows the scenario's unless set with a `filter_` key.
 */

#include "gpsimu/aekf17.hpp"
#include "gpsimu/simulator.hpp"
#include "gpsimu/timesync.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gpsimu {

struct PipelineConfig {
  FilterNoiseConfig noise;
  double tau_walk = 1e-6;          // AEKF delay random walk, s^2 per IMU step
  double init_tau_var = 0.1 * 0.1;
  bool aekf_quadratic = true;

  SyncConfig sync;
  int accel_fir_taps = 41;
  double accel_fir_cutoff = 50.0;  // Hz
  int gyro_fir_taps = 11;
  double gyro_fir_cutoff = 120.0;  // Hz
  bool whitening = true;

  std::size_t align_samples = 200;
  double delay_slew = 0.1;      // max change of the applied delay per tick, fraction of ts
  double delay_buffer = 2.5;    // s of IMU history kept for alignment and reckoning
  double initial_delay = std::numeric_limits<double>::quiet_NaN();  // NaN: offline calibration

  double rmse_start = 20.0;  // s
  double output_rate = 100.0;  // Hz
};

struct RunConfig {
  ScenarioConfig scenario;
  PipelineConfig pipeline;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Sel>
Field number(Sel sel) {
  return {[sel](RunConfig& c, const std::string& k, const std::string& v) { sel(c) = parse_double(k, v); },
          [sel](const RunConfig& c) { return format_double(sel(c)); }};
}

inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto num = [&t](const char* name, auto sel) { t.emplace_back(name, number(sel)); };
    auto integer = [&t](const char* name, auto sel) {
      t.emplace_back(name, Field{[sel](RunConfig& c, const std::string& k, const std::string& v) {
                                   sel(c) = static_cast<std::remove_cvref_t<decltype(sel(c))>>(parse_int(k, v));
                                 },
                                 [sel](const RunConfig& c) {
                                   return std::to_string(sel(c));
                                 }});
    };
    auto boolean = [&t](const char* name, auto sel) {
      t.emplace_back(name, Field{[sel](RunConfig& c, const std::string& k, const std::string& v) {
                                   sel(c) = parse_bool(k, v);
                                 },
                                 [sel](const RunConfig& c) {
                                   return std::string(sel(c) ? "true" : "false");
                                 }});
    };
    num("duration", [](auto& c) -> auto& { return c.scenario.duration; });
    num("imu_rate", [](auto& c) -> auto& { return c.scenario.imu_rate; });
    num("gps_rate", [](auto& c) -> auto& { return c.scenario.gps_rate; });
    num("gyro_noise_var", [](auto& c) -> auto& { return c.scenario.gyro_noise_var; });
    num("accel_noise_var", [](auto& c) -> auto& { return c.scenario.accel_noise_var; });
    num("mag_noise_var", [](auto& c) -> auto& { return c.scenario.mag_noise_var; });
    num("gps_pos_var", [](auto& c) -> auto& { return c.scenario.gps_pos_var; });
    num("gps_vel_var", [](auto& c) -> auto& { return c.scenario.gps_vel_var; });
    num("max_gyro_bias", [](auto& c) -> auto& { return c.scenario.max_gyro_bias; });
    num("max_accel_bias", [](auto& c) -> auto& { return c.scenario.max_accel_bias; });
    num("gps_delay", [](auto& c) -> auto& { return c.scenario.gps_delay; });
    num("max_sync_error", [](auto& c) -> auto& { return c.scenario.max_sync_error; });
    num("dynamics", [](auto& c) -> auto& { return c.scenario.dynamics; });
    t.emplace_back("trajectory",
                   Field{[](RunConfig& c, const std::string&, const std::string& v) {
                           if (v == "dynamic") c.scenario.trajectory = TrajectoryKind::Dynamic;
                           else if (v == "vertical") c.scenario.trajectory = TrajectoryKind::Vertical;
                           else throw ConfigError("config: trajectory must be 'dynamic' or 'vertical'");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.scenario.trajectory == TrajectoryKind::Dynamic ? "dynamic" : "vertical");
                         }});
    boolean("attitude_chirp", [](auto& c) -> auto& { return c.scenario.attitude_chirp; });
    num("static_time", [](auto& c) -> auto& { return c.scenario.static_time; });
    num("ramp_time", [](auto& c) -> auto& { return c.scenario.ramp_time; });
    num("mag_declination", [](auto& c) -> auto& { return c.scenario.mag_declination; });
    num("mag_inclination", [](auto& c) -> auto& { return c.scenario.mag_inclination; });
    num("dropout_start", [](auto& c) -> auto& { return c.scenario.dropout_start; });
    num("dropout_end", [](auto& c) -> auto& { return c.scenario.dropout_end; });
    num("vibration_accel", [](auto& c) -> auto& { return c.scenario.vibration_accel; });
    num("vibration_gyro", [](auto& c) -> auto& { return c.scenario.vibration_gyro; });
    num("vibration_freq", [](auto& c) -> auto& { return c.scenario.vibration_freq; });
    integer("seed", [](auto& c) -> auto& { return c.scenario.seed; });

    num("filter_gyro_noise_var", [](auto& c) -> auto& { return c.pipeline.noise.gyro_noise_var; });
    num("filter_accel_noise_var", [](auto& c) -> auto& { return c.pipeline.noise.accel_noise_var; });
    num("filter_mag_var", [](auto& c) -> auto& { return c.pipeline.noise.mag_var; });
    num("filter_gps_pos_var", [](auto& c) -> auto& { return c.pipeline.noise.gps_pos_var; });
    num("filter_gps_vel_var", [](auto& c) -> auto& { return c.pipeline.noise.gps_vel_var; });
    num("filter_gyro_bias_walk", [](auto& c) -> auto& { return c.pipeline.noise.gyro_bias_walk; });
    num("filter_accel_bias_walk", [](auto& c) -> auto& { return c.pipeline.noise.accel_bias_walk; });
    num("filter_position_walk", [](auto& c) -> auto& { return c.pipeline.noise.position_walk; });
    t.emplace_back("filter_mag_mode",
                   Field{[](RunConfig& c, const std::string&, const std::string& v) {
                           if (v == "heading") c.pipeline.noise.mag_mode = MagUpdateMode::Heading;
                           else if (v == "full") c.pipeline.noise.mag_mode = MagUpdateMode::Full;
                           else throw ConfigError("config: filter_mag_mode must be 'heading' or 'full'");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.pipeline.noise.mag_mode == MagUpdateMode::Full ? "full" : "heading");
                         }});
    num("filter_init_attitude_sigma", [](auto& c) -> auto& { return c.pipeline.noise.init_attitude_sigma; });
    num("filter_init_pos_var", [](auto& c) -> auto& { return c.pipeline.noise.init_pos_var; });
    num("filter_init_vel_var", [](auto& c) -> auto& { return c.pipeline.noise.init_vel_var; });
    num("filter_init_accel_bias_var", [](auto& c) -> auto& { return c.pipeline.noise.init_accel_bias_var; });
    num("filter_init_gyro_bias_var", [](auto& c) -> auto& { return c.pipeline.noise.init_gyro_bias_var; });

    num("aekf_tau_walk", [](auto& c) -> auto& { return c.pipeline.tau_walk; });
    num("aekf_init_tau_var", [](auto& c) -> auto& { return c.pipeline.init_tau_var; });
    boolean("aekf_quadratic", [](auto& c) -> auto& { return c.pipeline.aekf_quadratic; });

    num("sync_grid_dt", [](auto& c) -> auto& { return c.pipeline.sync.grid_dt; });
    num("sync_window", [](auto& c) -> auto& { return c.pipeline.sync.window; });
    integer("sync_diff_samples", [](auto& c) -> auto& { return c.pipeline.sync.diff_samples; });
    integer("sync_smoothing_taps", [](auto& c) -> auto& { return c.pipeline.sync.smoothing_taps; });
    num("sync_max_shift", [](auto& c) -> auto& { return c.pipeline.sync.xcorr.max_shift; });
    num("sync_peak_threshold", [](auto& c) -> auto& { return c.pipeline.sync.xcorr.peak_threshold; });
    num("sync_energy_threshold", [](auto& c) -> auto& { return c.pipeline.sync.xcorr.energy_threshold; });
    num("sync_process_noise", [](auto& c) -> auto& { return c.pipeline.sync.gfa.process_noise; });
    num("sync_obs_noise", [](auto& c) -> auto& { return c.pipeline.sync.gfa.obs_noise[0]; });
    num("sync_gamma", [](auto& c) -> auto& { return c.pipeline.sync.gfa.gamma; });
    num("sync_initial_var", [](auto& c) -> auto& { return c.pipeline.sync.initial_P; });

    integer("whiten_accel_taps", [](auto& c) -> auto& { return c.pipeline.accel_fir_taps; });
    num("whiten_accel_cutoff", [](auto& c) -> auto& { return c.pipeline.accel_fir_cutoff; });
    integer("whiten_gyro_taps", [](auto& c) -> auto& { return c.pipeline.gyro_fir_taps; });
    num("whiten_gyro_cutoff", [](auto& c) -> auto& { return c.pipeline.gyro_fir_cutoff; });
    boolean("whiten_enabled", [](auto& c) -> auto& { return c.pipeline.whitening; });

    integer("align_samples", [](auto& c) -> auto& { return c.pipeline.align_samples; });
    num("delay_slew", [](auto& c) -> auto& { return c.pipeline.delay_slew; });
    num("delay_buffer", [](auto& c) -> auto& { return c.pipeline.delay_buffer; });
    num("initial_delay", [](auto& c) -> auto& { return c.pipeline.initial_delay; });
    num("rmse_start", [](auto& c) -> auto& { return c.pipeline.rmse_start; });
    num("output_rate", [](auto& c) -> auto& { return c.pipeline.output_rate; });
    return t;
  }();
  return table;
}

}  // namespace detail

/// Checks the estimator settings that the individual constructors do not.
inline void validate(const PipelineConfig& p) {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(std::string("PipelineConfig: ") + msg);
  };
  require(p.align_samples >= 1, "align_samples must be >= 1");
  require(p.delay_slew > 0.0 && p.delay_slew < 1.0, "delay_slew must be in (0, 1)");
  require(p.delay_buffer > 0.0, "delay_buffer must be positive");
  require(p.rmse_start >= 0.0, "rmse_start must be non-negative");
  require(p.output_rate > 0.0, "output_rate must be positive");
  require(p.sync.gfa.process_noise > 0.0 && p.sync.gfa.obs_noise[0] > 0.0, "GFA noises must be positive");
  require(p.sync.gfa.gamma > 0.0, "GFA gamma must be positive");
  // Above 1/fused the fused gain can exceed one and P grows without bound.
  require(p.sync.gfa.gamma * p.sync.gfa.fused <= 1.0 + 1e-12, "GFA gamma must not exceed 1/fused");
  require(std::isnan(p.initial_delay) || (p.initial_delay >= 0.0 && p.initial_delay <= kMaxTau),
          "initial_delay must be NaN or in [0, 2]");
}

/// Parses config text on top of `base`. Throws ConfigError listing every
/// unknown key.
[[nodiscard]] inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::map<std::string, std::string> kv;
  std::vector<std::string> unknown;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, const detail::Field*> index;
  for (const auto& [name, f] : detail::fields()) index[name] = &f;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string s = detail::trim(line);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (!index.count(key)) {
      unknown.push_back(key);
      continue;
    }
    kv[key] = value;
  }
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  for (const auto& [key, value] : kv) {
    index[key]->set(base, key, value);
  }
  auto follow = [&kv](const char* key, double& dst, double src) {
    if (!kv.count(key)) dst = src;
  };
  const ScenarioConfig& sc = base.scenario;
  FilterNoiseConfig& fn = base.pipeline.noise;
  follow("filter_gyro_noise_var", fn.gyro_noise_var, sc.gyro_noise_var);
  follow("filter_accel_noise_var", fn.accel_noise_var, sc.accel_noise_var);
  follow("filter_mag_var", fn.mag_var, sc.mag_noise_var);
  follow("filter_gps_pos_var", fn.gps_pos_var, sc.gps_pos_var);
  follow("filter_gps_vel_var", fn.gps_vel_var, sc.gps_vel_var);
  if (kv.count("sync_obs_noise")) base.pipeline.sync.gfa.obs_noise.fill(base.pipeline.sync.gfa.obs_noise[0]);
  base.scenario.validate();
  validate(base.pipeline);
  return base;
}

[[nodiscard]] inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Full key listing; parse_config(format_config(c)) reproduces c.
[[nodiscard]] inline std::string format_config(const RunConfig& c) {
  std::string out;
  for (const auto& [name, f] : detail::fields()) out += name + " = " + f.get(c) + "\n";
  return out;
}

}  // namespace gpsimu
