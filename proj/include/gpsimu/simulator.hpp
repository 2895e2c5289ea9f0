#pragma once

/**
 * @file simulator.hpp
 * @brief Ground-truth trajectories and synthetic IMU / GPS streams.
 *
 * The trajectory is analytic: a sum of sinusoids in position, a slow yaw
 * swing, and a roll/pitch chirp whose amplitude and frequency grow
 * exponentially over the run. All motion is multiplied by a C2 ramp so the
 * platform starts at rest, which lets the estimators align from a static
 * window. Position amplitudes are scaled so that the peak acceleration over
 * the sampled run equals ScenarioConfig::dynamics exactly.
 *
 * Sensor models:
 *   gyro  = omega_b + b_g + n_g              (rad/s)
 *   accel = C^T (a_n - g e_down) / g + b_a + n_a   (g)
 *   mag   = C^T m_n + n_m                    (normalized)
 *   gps   = truth(t - delay) + n             (m, m/s, NED)
 * Biases are constant per run, drawn uniformly within the configured limits.
 */

#include "gpsimu/mathcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gpsimu {

enum class TrajectoryKind { Dynamic, Vertical };

struct ScenarioConfig {
  double duration = 60.0;  // s
  double imu_rate = 1000.0;  // Hz
  double gps_rate = 10.0;    // Hz

  double gyro_noise_var = 0.0017;   // (rad/s)^2
  double accel_noise_var = 0.01;    // g^2
  double mag_noise_var = 0.02;      // normalized units^2
  double gps_pos_var = 4.0;         // m^2
  double gps_vel_var = 0.1;         // (m/s)^2
  double max_gyro_bias = 0.01;      // rad/s
  double max_accel_bias = 0.1;      // g

  double gps_delay = 0.2;       // injected latency, s
  double max_sync_error = 0.6;  // upper bound accepted for gps_delay, s

  double dynamics = 19.61;  // peak linear acceleration, m/s^2 (0 = hover)
  TrajectoryKind trajectory = TrajectoryKind::Dynamic;
  bool attitude_chirp = true;
  double static_time = 2.0;  // s at rest before the motion ramp
  double ramp_time = 5.0;    // s

  double mag_declination = -(6.0 + 2.0 / 60.0) * kDegToRad;
  double mag_inclination = (47.0 + 14.0 / 60.0) * kDegToRad;

  // GPS outage window [start, end); disabled when end <= start.
  double dropout_start = 0.0;
  double dropout_end = 0.0;

  // Narrowband vibration added to the accelerometer (g) and gyro (rad/s).
  double vibration_accel = 0.0;
  double vibration_gyro = 0.0;
  double vibration_freq = 150.0;  // Hz

  std::uint64_t seed = 1;

  [[nodiscard]] MagModel mag_model() const { return {mag_declination, mag_inclination}; }
  [[nodiscard]] double imu_period() const { return 1.0 / imu_rate; }
  [[nodiscard]] double gps_period() const { return 1.0 / gps_rate; }
  [[nodiscard]] std::size_t imu_per_gps() const {
    return static_cast<std::size_t>(std::llround(imu_rate / gps_rate));
  }

  void validate() const {
    auto require = [](bool ok, const char* msg) {
      if (!ok) throw ConfigError(std::string("ScenarioConfig: ") + msg);
    };
    require(duration > 0.0, "duration must be positive");
    require(imu_rate > 0.0 && gps_rate > 0.0, "rates must be positive");
    require(gps_rate <= imu_rate, "gps_rate must not exceed imu_rate");
    const double ratio = imu_rate / gps_rate;
    require(std::abs(ratio - std::round(ratio)) < 1e-9, "imu_rate must be a multiple of gps_rate");
    require(gyro_noise_var >= 0 && accel_noise_var >= 0 && mag_noise_var >= 0 &&
                gps_pos_var >= 0 && gps_vel_var >= 0,
            "noise variances must be non-negative");
    require(max_gyro_bias >= 0 && max_accel_bias >= 0, "bias limits must be non-negative");
    require(gps_delay >= 0.0, "gps_delay must be non-negative");
    require(gps_delay <= max_sync_error, "gps_delay exceeds max_sync_error");
    require(gps_delay <= duration, "gps_delay exceeds duration");
    require(dynamics >= 0.0, "dynamics must be non-negative");
    require(static_time >= 0.0 && ramp_time > 0.0, "invalid ramp timing");
  }
};

struct TruthSample {
  double t = 0.0;
  Quaternion attitude;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
  Vec3 angular_rate = Vec3::Zero();  // body frame
};

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // g, specific force
  Vec3 mag = Vec3::Zero();    // normalized
};

struct GpsSample {
  double t = 0.0;  // emission time
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
};

namespace detail {

struct Sinusoid {
  double amplitude;
  double freq_hz;
  double phase;
};

// Quintic smootherstep: zero value, slope and curvature at both ends.
struct Ramp {
  double start;
  double length;

  void eval(double t, double& w, double& dw, double& ddw) const {
    const double u = (t - start) / length;
    if (u <= 0.0) {
      w = dw = ddw = 0.0;
    } else if (u >= 1.0) {
      w = 1.0;
      dw = ddw = 0.0;
    } else {
      w = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
      dw = 30.0 * u * u * (1.0 - u) * (1.0 - u) / length;
      ddw = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (length * length);
    }
  }
};

// Exponential chirp A0 e^{ka t} sin(c * p(t) + phase), p' = 2 pi f0 e^{kf t}.
struct Chirp {
  double amp0;
  double amp_rate;
  double freq0;
  double freq_rate;
  double freq_scale;
  double phase;

  void eval(double t, double& x, double& dx) const {
    const double a = amp0 * std::exp(amp_rate * t);
    const double da = amp_rate * a;
    const double ef = std::exp(freq_rate * t);
    const double p = 2.0 * kPi * freq0 * (freq_rate == 0.0 ? t : (ef - 1.0) / freq_rate);
    const double dp = 2.0 * kPi * freq0 * ef;
    const double arg = freq_scale * p + phase;
    x = a * std::sin(arg);
    dx = da * std::sin(arg) + a * freq_scale * dp * std::cos(arg);
  }
};

}  // namespace detail

/// Analytic truth trajectory; at() is valid for any t (rest for t < start).
class Trajectory {
 public:
  explicit Trajectory(const ScenarioConfig& config)
      : ramp_{config.static_time, config.ramp_time}, hover_(config.dynamics == 0.0) {
    config.validate();
    if (config.trajectory == TrajectoryKind::Dynamic) {
      axes_[0] = {{1.0, 0.16, 0.0}, {0.5, 0.37, 1.1}};
      axes_[1] = {{0.8, 0.21, 0.7}, {0.45, 0.43, 2.3}};
      axes_[2] = {{0.25, 0.27, 1.9}, {0.12, 0.51, 0.4}};
      yaw0_ = 0.35;
      if (!hover_) {
        yaw_swing_ = {0.6, 0.025, 0.0};
        if (config.attitude_chirp) {
          const double k = std::log(6.0) / config.duration;
          roll_chirp_ = detail::Chirp{2.0 * kDegToRad, k, 0.1, k, 1.0, 0.0};
          pitch_chirp_ = detail::Chirp{2.0 * kDegToRad, k, 0.1, k, 1.17, 0.9};
        }
      }
    } else {
      axes_[2] = {{1.0, 0.15, 0.0}, {0.6, 0.37, 1.0}, {0.4, 0.61, 2.0}};
      yaw0_ = 0.35;
    }
    if (hover_) {
      for (auto& a : axes_) a.clear();
      scale_ = 0.0;
      return;
    }
    // Peak |a| over the sampled run with unit scale, then rescale.
    scale_ = 1.0;
    const auto n = static_cast<std::size_t>(std::llround(config.duration * config.imu_rate));
    double peak = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
      peak = std::max(peak, at(static_cast<double>(k) / config.imu_rate).acceleration.norm());
    }
    // A run that ends inside the static lead-in never moves.
    scale_ = peak > 0.0 ? config.dynamics / peak : 0.0;
  }

  [[nodiscard]] TruthSample at(double t) const {
    TruthSample s;
    s.t = t;
    double w, dw, ddw;
    ramp_.eval(t, w, dw, ddw);
    for (int i = 0; i < 3; ++i) {
      double p = 0, dp = 0, ddp = 0;
      for (const auto& c : axes_[i]) {
        const double om = 2.0 * kPi * c.freq_hz;
        const double arg = om * t + c.phase;
        p += c.amplitude * std::sin(arg);
        dp += c.amplitude * om * std::cos(arg);
        ddp -= c.amplitude * om * om * std::sin(arg);
      }
      s.position(i) = scale_ * w * p;
      s.velocity(i) = scale_ * (dw * p + w * dp);
      s.acceleration(i) = scale_ * (ddw * p + 2.0 * dw * dp + w * ddp);
    }

    double roll = 0, droll = 0, pitch = 0, dpitch = 0;
    if (roll_chirp_) {
      double x, dx;
      roll_chirp_->eval(t, x, dx);
      roll = w * x;
      droll = dw * x + w * dx;
      pitch_chirp_->eval(t, x, dx);
      pitch = w * x;
      dpitch = dw * x + w * dx;
    }
    const double om_y = 2.0 * kPi * yaw_swing_.freq_hz;
    const double swing = yaw_swing_.amplitude * std::sin(om_y * t + yaw_swing_.phase);
    const double dswing = yaw_swing_.amplitude * om_y * std::cos(om_y * t + yaw_swing_.phase);
    const double yaw = yaw0_ + w * swing;
    const double dyaw = dw * swing + w * dswing;

    s.attitude = euler_to_quat({roll, pitch, yaw});
    const double sr = std::sin(roll), cr = std::cos(roll);
    const double sp = std::sin(pitch), cp = std::cos(pitch);
    s.angular_rate = {droll - dyaw * sp, dpitch * cr + dyaw * cp * sr, -dpitch * sr + dyaw * cp * cr};
    return s;
  }

  [[nodiscard]] double scale() const { return scale_; }

 private:
  detail::Ramp ramp_;
  bool hover_;
  std::array<std::vector<detail::Sinusoid>, 3> axes_;
  double scale_ = 1.0;
  double yaw0_ = 0.0;
  detail::Sinusoid yaw_swing_{0.0, 0.0, 0.0};
  std::optional<detail::Chirp> roll_chirp_;
  std::optional<detail::Chirp> pitch_chirp_;
};

[[nodiscard]] inline std::vector<TruthSample> generate_trajectory(const ScenarioConfig& config) {
  const Trajectory traj(config);
  const auto n = static_cast<std::size_t>(std::llround(config.duration * config.imu_rate));
  std::vector<TruthSample> out;
  out.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) out.push_back(traj.at(static_cast<double>(k) / config.imu_rate));
  return out;
}

struct ImuStream {
  std::vector<ImuSample> samples;
  Vec3 gyro_bias = Vec3::Zero();   // rad/s
  Vec3 accel_bias = Vec3::Zero();  // g
};

namespace detail {
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}
}  // namespace detail

[[nodiscard]] inline Vec3 specific_force_body(const TruthSample& s) {
  return quat_to_dcm(s.attitude).transpose() * (s.acceleration - Vec3(0, 0, kGravity)) / kGravity;
}

[[nodiscard]] inline ImuStream synthesize_imu(std::span<const TruthSample> truth,
                                              const ScenarioConfig& config) {
  if (truth.empty()) throw ConfigError("synthesize_imu: empty truth");
  ImuStream out;
  auto bias_rng = detail::stream_rng(config.seed, 1);
  std::uniform_real_distribution<double> ug(-config.max_gyro_bias, config.max_gyro_bias);
  std::uniform_real_distribution<double> ua(-config.max_accel_bias, config.max_accel_bias);
  for (int i = 0; i < 3; ++i) out.gyro_bias(i) = ug(bias_rng);
  for (int i = 0; i < 3; ++i) out.accel_bias(i) = ua(bias_rng);

  auto rng = detail::stream_rng(config.seed, 2);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double sg = std::sqrt(config.gyro_noise_var);
  const double sa = std::sqrt(config.accel_noise_var);
  const double sm = std::sqrt(config.mag_noise_var);
  const Vec3 m_n = mag_field_ned(config.mag_model());
  const Vec3 vib_phase(0.0, 2.1, 4.2);

  out.samples.reserve(truth.size());
  for (const auto& s : truth) {
    const Mat3 c = quat_to_dcm(s.attitude);
    ImuSample m;
    m.t = s.t;
    m.gyro = s.angular_rate + out.gyro_bias;
    m.accel = c.transpose() * (s.acceleration - Vec3(0, 0, kGravity)) / kGravity + out.accel_bias;
    m.mag = c.transpose() * m_n;
    for (int i = 0; i < 3; ++i) m.gyro(i) += sg * unit(rng);
    for (int i = 0; i < 3; ++i) m.accel(i) += sa * unit(rng);
    for (int i = 0; i < 3; ++i) m.mag(i) += sm * unit(rng);
    if (config.vibration_accel != 0.0 || config.vibration_gyro != 0.0) {
      for (int i = 0; i < 3; ++i) {
        const double tone = std::sin(2.0 * kPi * config.vibration_freq * s.t + vib_phase(i));
        m.accel(i) += config.vibration_accel * tone;
        m.gyro(i) += config.vibration_gyro * tone;
      }
    }
    out.samples.push_back(m);
  }
  return out;
}

[[nodiscard]] inline bool in_dropout(const ScenarioConfig& config, double t) {
  return config.dropout_end > config.dropout_start && t >= config.dropout_start &&
         t < config.dropout_end;
}

[[nodiscard]] inline std::vector<GpsSample> synthesize_gps(const Trajectory& traj,
                                                           const ScenarioConfig& config) {
  config.validate();
  auto rng = detail::stream_rng(config.seed, 3);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double sp = std::sqrt(config.gps_pos_var);
  const double sv = std::sqrt(config.gps_vel_var);
  const auto n = static_cast<std::size_t>(std::floor(config.duration * config.gps_rate + 1e-9));
  std::vector<GpsSample> out;
  out.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / config.gps_rate;
    // Draw noise even inside an outage so the surviving samples do not
    // depend on the dropout window.
    Vec3 np, nv;
    for (int i = 0; i < 3; ++i) np(i) = sp * unit(rng);
    for (int i = 0; i < 3; ++i) nv(i) = sv * unit(rng);
    if (in_dropout(config, t)) continue;
    const TruthSample s = traj.at(t - config.gps_delay);
    out.push_back({t, s.position + np, s.velocity + nv});
  }
  return out;
}

/// One simulated run: truth at IMU rate plus both sensor streams.
struct SensorLog {
  ScenarioConfig config;
  std::vector<TruthSample> truth;
  ImuStream imu;
  std::vector<GpsSample> gps;
};

[[nodiscard]] inline SensorLog simulate(const ScenarioConfig& config) {
  SensorLog log;
  log.config = config;
  const Trajectory traj(config);
  const auto n = static_cast<std::size_t>(std::llround(config.duration * config.imu_rate));
  log.truth.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) log.truth.push_back(traj.at(static_cast<double>(k) / config.imu_rate));
  log.imu = synthesize_imu(log.truth, config);
  log.gps = synthesize_gps(traj, config);
  return log;
}

/// The vertical-only bench record used for offline delay calibration. It
/// shares the sensor setup and latency of `config` but uses its own noise
/// streams.
[[nodiscard]] inline ScenarioConfig calibration_scenario(const ScenarioConfig& config) {
  ScenarioConfig c = config;
  c.trajectory = TrajectoryKind::Vertical;
  c.attitude_chirp = false;
  c.dynamics = 6.0;
  c.duration = 40.0;
  c.dropout_start = c.dropout_end = 0.0;
  c.seed = config.seed ^ 0x9e3779b97f4a7c15ULL;
  return c;
}

}  // namespace gpsimu
