#pragma once

/**
 * @file aekf17.hpp
 * @brief Delay-augmented EKF: the 16-state filter plus the GPS latency tau as
 *        a 17th state, with a second-order Taylor measurement model
 *
 *   r_gps = r - v tau + a tau^2 / 2
 *   v_gps = v - a tau
 *
 * where a is the kinematic acceleration implied by the current IMU sample
 * and state estimate. a is treated as an input, so the Jacobian has no
 * a-dependence on q or b_f.
 */

#include "gpsimu/ekf16.hpp"

#include <algorithm>
#include <optional>

namespace gpsimu {

using Vector17 = Eigen::Matrix<double, 17, 1>;
using Matrix17 = Eigen::Matrix<double, 17, 17>;
using Matrix9x17 = Eigen::Matrix<double, 9, 17>;

inline constexpr int kTauIndex = 16;
inline constexpr double kMaxTau = 2.0;

struct AugState {
  NavState x;
  double tau = 0.0;  // s

  [[nodiscard]] Vector17 to_vector() const {
    Vector17 v;
    v.head<16>() = x.to_vector();
    v(kTauIndex) = tau;
    return v;
  }
  [[nodiscard]] static AugState from_vector(const Vector17& v) {
    return {NavState::from_vector(v.head<16>()), v(kTauIndex)};
  }
};

struct AekfConfig {
  FilterNoiseConfig noise;
  double tau_walk = 1e-6;       // s^2 per IMU step
  double init_tau_var = 0.1 * 0.1;
  bool quadratic_term = true;   // include a tau^2 / 2 in the position rows
};

[[nodiscard]] inline Observation9 delayed_observation_model(const AugState& s, const Vec3& accel,
                                                            const MagModel& model,
                                                            bool quadratic_term = true) {
  const double tau = s.tau;
  Observation9 z;
  z.mag = predicted_mag(s.x.q, model);
  z.position = s.x.r - s.x.v * tau + (quadratic_term ? 0.5 * tau * tau : 0.0) * accel;
  z.velocity = s.x.v - accel * tau;
  return z;
}

[[nodiscard]] inline Matrix9x17 augmented_jacobian(const AugState& s, const Vec3& accel,
                                                   const MagModel& model,
                                                   bool quadratic_term = true) {
  const double tau = s.tau;
  Matrix9x17 h = Matrix9x17::Zero();
  h.block<3, 4>(0, idx::q) = mag_jacobian(s.x.q, model);
  h.block<3, 3>(3, idx::r) = Mat3::Identity();
  h.block<3, 3>(3, idx::v) = -tau * Mat3::Identity();
  h.block<3, 3>(6, idx::v) = Mat3::Identity();
  h.block<3, 1>(3, kTauIndex) = -s.x.v + (quadratic_term ? tau : 0.0) * accel;
  h.block<3, 1>(6, kTauIndex) = -accel;
  return h;
}

struct AekfStep {
  AugState state;
  Matrix17 P;
  bool updated = false;
};

class Aekf17 {
 public:
  Aekf17(const AekfConfig& config, const MagModel& model) : cfg_(config), model_(model) {
    cfg_.noise.validate();
    if (!(cfg_.tau_walk > 0) || !(cfg_.init_tau_var > 0)) {
      throw ConfigError("AekfConfig: tau variances must be positive");
    }
    reset_covariance();
  }

  void initialize(const NavState& x, double tau) {
    s_.x = x;
    s_.x.q = quat_normalize(x.q);
    s_.tau = tau;
    reset_covariance();
  }

  void initialize(const AugState& s, const Matrix17& p) {
    s_ = s;
    s_.x.q = quat_normalize(s.x.q);
    P_ = p;
    project_quaternion_covariance<17>(P_, s_.x.q);
  }

  void predict(const ImuSample& imu, double ts) {
    Matrix17 a = Matrix17::Identity();
    a.topLeftCorner<16, 16>() = jacobian_and_discretize(s_.x, imu, ts);
    Matrix17 q = Matrix17::Zero();
    q.topLeftCorner<16, 16>() = process_noise(s_.x, ts, cfg_.noise);
    q(kTauIndex, kTauIndex) = cfg_.tau_walk;
    s_.x = gpsimu::predict(s_.x, imu, ts);
    const bool check = (++steps_ % Ekf16::kPsdCheckInterval) == 0;
    auto pred = covariance_predict<17>(P_, a, q, check);
    P_ = pred.P;
    if (!pred.psd_ok) health_.diverged = true;
    last_imu_ = imu;
  }

  bool update_mag(const Vec3& mag_body) {
    if (!mag_body.allFinite()) return skip();
    if (cfg_.noise.mag_mode == MagUpdateMode::Full) {
      const Vec3 innovation = make_mag_pseudo(s_.x.q, mag_body, model_) - predicted_mag(s_.x.q, model_);
      Eigen::Matrix<double, 3, 17> h = Eigen::Matrix<double, 3, 17>::Zero();
      h.block<3, 4>(0, idx::q) = mag_jacobian(s_.x.q, model_);
      return accept(kalman_correct<17, 3>(P_, innovation, h, cfg_.noise.mag_var * Mat3::Identity()));
    }
    const HeadingRow row = heading_row(s_.x.q, mag_body, cfg_.noise.mag_var, model_);
    if (!row.ok) return skip();
    Eigen::Matrix<double, 1, 17> h = Eigen::Matrix<double, 1, 17>::Zero();
    h.block<1, 4>(0, idx::q) = row.h;
    return accept(kalman_correct<17, 1>(P_, Eigen::Matrix<double, 1, 1>(row.innovation), h,
                                        Eigen::Matrix<double, 1, 1>(row.r)));
  }

  /// GPS update with the Taylor-expanded delayed model. The acceleration
  /// comes from the most recent IMU sample.
  bool update_gps(const GpsSample& gps) {
    const Vec3 accel = current_acceleration();
    const Observation9 zh = delayed_observation_model(s_, accel, model_, cfg_.quadratic_term);
    const Matrix9x17 hfull = augmented_jacobian(s_, accel, model_, cfg_.quadratic_term);
    Eigen::Matrix<double, 6, 1> innovation;
    innovation << gps.position - zh.position, gps.velocity - zh.velocity;
    const Eigen::Matrix<double, 6, 17> h = hfull.bottomRows<6>();
    Eigen::Matrix<double, 6, 6> r = Eigen::Matrix<double, 6, 6>::Zero();
    r.diagonal() << Vec3::Constant(cfg_.noise.gps_pos_var), Vec3::Constant(cfg_.noise.gps_vel_var);
    return accept(kalman_correct<17, 6>(P_, innovation, h, r));
  }

  /// One IMU tick: predict, magnetometer update, then GPS if present.
  AekfStep step(const ImuSample& imu, double ts, const std::optional<GpsSample>& gps) {
    predict(imu, ts);
    update_mag(imu.mag);
    bool updated = false;
    if (gps) updated = update_gps(*gps);
    return {s_, P_, updated};
  }

  [[nodiscard]] Vec3 current_acceleration() const {
    return navigation_acceleration(s_.x.q, last_imu_.accel, s_.x.accel_bias);
  }

  [[nodiscard]] const AugState& state() const { return s_; }
  [[nodiscard]] const Matrix17& covariance() const { return P_; }
  [[nodiscard]] const FilterHealth& health() const { return health_; }
  [[nodiscard]] const AekfConfig& config() const { return cfg_; }

 private:
  void reset_covariance() {
    P_.setZero();
    P_.diagonal().head<16>() = cfg_.noise.initial_covariance_diag();
    P_(kTauIndex, kTauIndex) = cfg_.init_tau_var;
    project_quaternion_covariance<17>(P_, s_.x.q);
  }

  bool skip() {
    health_.degraded = true;
    ++health_.skipped_updates;
    return false;
  }

  bool accept(const KalmanCorrection<17>& c) {
    if (!c.ok) return skip();
    Vector17 x = s_.to_vector() + c.dx;
    clamp_biases<17>(x, health_);
    // A negative latency is non-physical but routine near tau = 0.
    if (x(kTauIndex) < 0.0) {
      x(kTauIndex) = 0.0;
      ++health_.clamp_events;
    } else if (x(kTauIndex) > kMaxTau) {
      x(kTauIndex) = kMaxTau;
      health_.diverged = true;
    }
    s_ = AugState::from_vector(x);
    s_.x.q = quat_normalize(s_.x.q);
    P_ = c.P;
    project_quaternion_covariance<17>(P_, s_.x.q);
    return true;
  }

  AekfConfig cfg_;
  MagModel model_;
  AugState s_;
  Matrix17 P_;
  FilterHealth health_;
  ImuSample last_imu_{0.0, Vec3::Zero(), Vec3(0, 0, -1), Vec3::Zero()};
  std::size_t steps_ = 0;
};

}  // namespace gpsimu
