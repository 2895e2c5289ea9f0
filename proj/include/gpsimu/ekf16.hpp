#pragma once

/**
 * @file ekf16.hpp
 * @brief Quaternion EKF over [q, r, v, b_f, b_w] with inertial prediction and
 *        magnetometer + GPS correction.
 *
 * Mechanization (continuous):
 *   q'   = 1/2 Xi(q) (w - b_w)
 *   r'   = v
 *   v'   = C(q) (f - b_f) g + [0 0 g]
 *   b_f' = b_w' = 0
 * with f in g units and b_f kept in g. Prediction is one explicit Euler step
 * per IMU sample; covariance uses A = I + F ts + (F ts)^2 / 2.
 */

#include "gpsimu/mathcore.hpp"
#include "gpsimu/simulator.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>

namespace gpsimu {

using Vector16 = Eigen::Matrix<double, 16, 1>;
using Matrix16 = Eigen::Matrix<double, 16, 16>;
using Vector9 = Eigen::Matrix<double, 9, 1>;
using Matrix9x16 = Eigen::Matrix<double, 9, 16>;

/// Offsets of each block inside the state vector.
namespace idx {
inline constexpr int q = 0;
inline constexpr int r = 4;
inline constexpr int v = 7;
inline constexpr int bf = 10;
inline constexpr int bw = 13;
}  // namespace idx

inline constexpr double kMaxAccelBias = 0.5;  // g
inline constexpr double kMaxGyroBias = 0.1;   // rad/s

struct NavState {
  Quaternion q;
  Vec3 r = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();  // g
  Vec3 gyro_bias = Vec3::Zero();   // rad/s

  [[nodiscard]] Vector16 to_vector() const {
    Vector16 x;
    x.segment<4>(idx::q) = q.vec();
    x.segment<3>(idx::r) = r;
    x.segment<3>(idx::v) = v;
    x.segment<3>(idx::bf) = accel_bias;
    x.segment<3>(idx::bw) = gyro_bias;
    return x;
  }

  [[nodiscard]] static NavState from_vector(const Vector16& x) {
    NavState s;
    s.q = Quaternion::from_vec(x.segment<4>(idx::q));
    s.r = x.segment<3>(idx::r);
    s.v = x.segment<3>(idx::v);
    s.accel_bias = x.segment<3>(idx::bf);
    s.gyro_bias = x.segment<3>(idx::bw);
    return s;
  }
};

struct Observation9 {
  Vec3 mag = Vec3::Zero();
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();

  [[nodiscard]] Vector9 vec() const {
    Vector9 z;
    z << mag, position, velocity;
    return z;
  }
};

enum class MagUpdateMode {
  Heading,  // scalar update of yaw by the tilt-compensated magnetic heading
  Full,     // all three pseudo-measurement rows
};

struct FilterNoiseConfig {
  // Process noise, per IMU sample.
  double gyro_noise_var = 0.0017;   // (rad/s)^2
  double accel_noise_var = 0.01;    // g^2
  double gyro_bias_walk = 1e-13;    // (rad/s)^2 per step
  double accel_bias_walk = 1e-11;   // g^2 per step
  double position_walk = 0.0;       // m^2 per step

  // Measurement noise.
  double mag_var = 0.02;
  double gps_pos_var = 4.0;
  double gps_vel_var = 0.1;
  MagUpdateMode mag_mode = MagUpdateMode::Heading;

  // Initial covariance.
  double init_attitude_sigma = 5.0 * kDegToRad;  // rad
  double init_pos_var = 4.0;
  double init_vel_var = 0.1;
  double init_accel_bias_var = 0.05 * 0.05;
  double init_gyro_bias_var = 0.05 * 0.05;

  void validate() const {
    const bool ok = gyro_noise_var > 0 && accel_noise_var > 0 && gyro_bias_walk > 0 &&
                    accel_bias_walk > 0 && position_walk >= 0 && mag_var > 0 && gps_pos_var > 0 &&
                    gps_vel_var > 0 && init_attitude_sigma > 0 && init_pos_var > 0 &&
                    init_vel_var > 0 && init_accel_bias_var > 0 && init_gyro_bias_var > 0;
    if (!ok) throw ConfigError("FilterNoiseConfig: all variances must be positive");
  }

  [[nodiscard]] Vector16 initial_covariance_diag() const {
    Vector16 d;
    // A small rotation angle a maps to quaternion components of about a/2.
    const double qv = 0.25 * init_attitude_sigma * init_attitude_sigma;
    d.segment<4>(idx::q).setConstant(qv);
    d.segment<3>(idx::r).setConstant(init_pos_var);
    d.segment<3>(idx::v).setConstant(init_vel_var);
    d.segment<3>(idx::bf).setConstant(init_accel_bias_var);
    d.segment<3>(idx::bw).setConstant(init_gyro_bias_var);
    return d;
  }
};

struct FilterHealth {
  bool diverged = false;   // bias clamp hit or covariance lost PSD
  bool degraded = false;   // at least one update skipped
  std::size_t skipped_updates = 0;
  std::size_t clamp_events = 0;  // soft state clamps that did not count as divergence
};

/// The 4x3 matrix of q' = 1/2 Xi(q) w.
[[nodiscard]] inline Eigen::Matrix<double, 4, 3> quat_rate_matrix(const Quaternion& q) {
  Eigen::Matrix<double, 4, 3> xi;
  xi << -q.q1, -q.q2, -q.q3,
         q.q0, -q.q3,  q.q2,
         q.q3,  q.q0, -q.q1,
        -q.q2,  q.q1,  q.q0;
  return xi;
}

[[nodiscard]] inline bool all_finite(const ImuSample& m) {
  return m.gyro.allFinite() && m.accel.allFinite() && m.mag.allFinite() && std::isfinite(m.t);
}

/// Kinematic acceleration in NED implied by a specific-force sample.
[[nodiscard]] inline Vec3 navigation_acceleration(const Quaternion& q, const Vec3& accel_g,
                                                  const Vec3& accel_bias) {
  return dcm_from_components(q) * ((accel_g - accel_bias) * kGravity) + Vec3(0, 0, kGravity);
}

[[nodiscard]] inline Vector16 state_derivative(const NavState& x, const ImuSample& imu) {
  Vector16 xd = Vector16::Zero();
  xd.segment<4>(idx::q) = 0.5 * quat_rate_matrix(x.q) * (imu.gyro - x.gyro_bias);
  xd.segment<3>(idx::r) = x.v;
  xd.segment<3>(idx::v) = navigation_acceleration(x.q, imu.accel, x.accel_bias);
  return xd;
}

/// One Euler step of the mechanization followed by renormalization.
[[nodiscard]] inline NavState predict(const NavState& x, const ImuSample& imu, double ts) {
  if (!(ts > 0.0)) throw ConfigError("predict: ts must be positive");
  if (!all_finite(imu)) throw NumericError("predict: non-finite IMU sample");
  NavState out = NavState::from_vector(x.to_vector() + ts * state_derivative(x, imu));
  out.q = quat_normalize(out.q);
  return out;
}

/// Analytic Jacobian F = d(state_derivative)/dx.
[[nodiscard]] inline Matrix16 state_jacobian(const NavState& x, const ImuSample& imu) {
  Matrix16 f = Matrix16::Zero();
  const Vec3 w = imu.gyro - x.gyro_bias;
  Eigen::Matrix4d omega;
  omega << 0, -w.x(), -w.y(), -w.z(),
           w.x(), 0, w.z(), -w.y(),
           w.y(), -w.z(), 0, w.x(),
           w.z(), w.y(), -w.x(), 0;
  f.block<4, 4>(idx::q, idx::q) = 0.5 * omega;
  f.block<4, 3>(idx::q, idx::bw) = -0.5 * quat_rate_matrix(x.q);
  f.block<3, 3>(idx::r, idx::v) = Mat3::Identity();
  const Vec3 fb = (imu.accel - x.accel_bias) * kGravity;
  const auto partials = dcm_partials(x.q);
  for (int i = 0; i < 4; ++i) f.block<3, 1>(idx::v, idx::q + i) = partials[i] * fb;
  f.block<3, 3>(idx::v, idx::bf) = -kGravity * dcm_from_components(x.q);
  return f;
}

template <int N>
[[nodiscard]] Eigen::Matrix<double, N, N> discretize(const Eigen::Matrix<double, N, N>& f, double ts) {
  using M = Eigen::Matrix<double, N, N>;
  const M ft = f * ts;
  return M::Identity() + ft + 0.5 * ft * ft;
}

[[nodiscard]] inline Matrix16 jacobian_and_discretize(const NavState& x, const ImuSample& imu,
                                                      double ts) {
  return discretize<16>(state_jacobian(x, imu), ts);
}

/// Discrete process noise: sensor noise mapped through the mechanization.
[[nodiscard]] inline Matrix16 process_noise(const NavState& x, double ts,
                                            const FilterNoiseConfig& cfg) {
  Matrix16 q = Matrix16::Zero();
  const Eigen::Matrix<double, 4, 3> xi = quat_rate_matrix(x.q);
  q.block<4, 4>(idx::q, idx::q) = (0.25 * ts * ts * cfg.gyro_noise_var) * xi * xi.transpose();
  q.block<3, 3>(idx::r, idx::r) = cfg.position_walk * Mat3::Identity();
  q.block<3, 3>(idx::v, idx::v) =
      (ts * ts * kGravity * kGravity * cfg.accel_noise_var) * Mat3::Identity();
  q.block<3, 3>(idx::bf, idx::bf) = cfg.accel_bias_walk * Mat3::Identity();
  q.block<3, 3>(idx::bw, idx::bw) = cfg.gyro_bias_walk * Mat3::Identity();
  return q;
}

template <int N>
[[nodiscard]] double min_eigenvalue(const Eigen::Matrix<double, N, N>& p) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(p, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

template <int N>
struct CovariancePrediction {
  Eigen::Matrix<double, N, N> P;
  bool psd_ok = true;
};

inline constexpr double kPsdTolerance = 1e-9;

/// P = A P A^T + Q, re-symmetrized. The eigenvalue check is optional since it
/// dominates the cost at 16 states.
template <int N>
[[nodiscard]] CovariancePrediction<N> covariance_predict(const Eigen::Matrix<double, N, N>& p,
                                                         const Eigen::Matrix<double, N, N>& a,
                                                         const Eigen::Matrix<double, N, N>& q,
                                                         bool check_psd = true) {
  CovariancePrediction<N> out;
  out.P.noalias() = a * p * a.transpose();
  out.P += q;
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  out.psd_ok = (out.P.diagonal().array() >= 0.0).all();
  if (check_psd && out.psd_ok) out.psd_ok = min_eigenvalue<N>(out.P) >= -kPsdTolerance;
  return out;
}

/// Body-frame field predicted by the state: C(q)^T m_n.
[[nodiscard]] inline Vec3 predicted_mag(const Quaternion& q, const MagModel& model) {
  return dcm_from_components(q).transpose() * mag_field_ned(model);
}

/// d(C(q)^T m_n)/dq, the 3x4 magnetic block of the observation Jacobian.
[[nodiscard]] inline Eigen::Matrix<double, 3, 4> mag_jacobian(const Quaternion& q,
                                                              const MagModel& model) {
  const Vec3 mn = mag_field_ned(model);
  const auto partials = dcm_partials(q);
  Eigen::Matrix<double, 3, 4> h;
  for (int i = 0; i < 4; ++i) h.col(i) = partials[i].transpose() * mn;
  return h;
}

[[nodiscard]] inline Observation9 observation_model(const NavState& x, const MagModel& model) {
  return {predicted_mag(x.q, model), x.r, x.v};
}

[[nodiscard]] inline Matrix9x16 observation_jacobian(const NavState& x, const MagModel& model) {
  Matrix9x16 h = Matrix9x16::Zero();
  h.block<3, 4>(0, idx::q) = mag_jacobian(x.q, model);
  h.block<3, 3>(3, idx::r) = Mat3::Identity();
  h.block<3, 3>(6, idx::v) = Mat3::Identity();
  return h;
}

template <int N>
struct KalmanCorrection {
  Eigen::Matrix<double, N, 1> dx;
  Eigen::Matrix<double, N, N> P;
  bool ok = false;
};

/// Gain, correction, and Joseph-form covariance for M measurement rows.
/// Returns ok = false (and the prior P) when H P H^T + R is not positive
/// definite.
template <int N, int M>
[[nodiscard]] KalmanCorrection<N> kalman_correct(const Eigen::Matrix<double, N, N>& p,
                                                 const Eigen::Matrix<double, M, 1>& innovation,
                                                 const Eigen::Matrix<double, M, N>& h,
                                                 const Eigen::Matrix<double, M, M>& r) {
  using MatN = Eigen::Matrix<double, N, N>;
  KalmanCorrection<N> out;
  out.dx.setZero();
  out.P = p;
  if (!innovation.allFinite()) return out;
  const Eigen::Matrix<double, N, M> pht = p * h.transpose();
  const Eigen::Matrix<double, M, M> s = h * pht + r;
  Eigen::LLT<Eigen::Matrix<double, M, M>> llt(s);
  if (llt.info() != Eigen::Success) return out;
  const Eigen::Matrix<double, N, M> k = llt.solve(pht.transpose()).transpose();
  out.dx = k * innovation;
  const MatN ikh = MatN::Identity() - k * h;
  out.P = ikh * p * ikh.transpose() + k * r * k.transpose();
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  out.ok = out.dx.allFinite() && out.P.allFinite();
  if (!out.ok) {
    out.dx.setZero();
    out.P = p;
  }
  return out;
}

/// Removes the covariance along the quaternion itself. The state keeps a
/// unit quaternion, so that direction carries no uncertainty, but the
/// unnormalized DCM in the velocity Jacobian would otherwise observe it.
template <int N>
void project_quaternion_covariance(Eigen::Matrix<double, N, N>& p, const Quaternion& q) {
  const Vec4 u = q.vec();
  const Eigen::Matrix4d t = Eigen::Matrix4d::Identity() - u * u.transpose();
  p.template topRows<4>() = (t * p.template topRows<4>()).eval();
  p.template leftCols<4>() = (p.template leftCols<4>() * t).eval();
  p = 0.5 * (p + p.transpose()).eval();
}

[[nodiscard]] inline NavState apply_correction(const NavState& x, const Vector16& dx) {
  NavState out = NavState::from_vector(x.to_vector() + dx);
  out.q = quat_normalize(out.q);
  return out;
}

struct EkfUpdate {
  NavState state;
  Matrix16 P;
  bool ok = false;
};

/// Joint 9-row update with the full observation of magnetometer, position
/// and velocity.
[[nodiscard]] inline EkfUpdate update(const NavState& x_pred, const Matrix16& p_pred,
                                      const Observation9& z, const Matrix9x16& h,
                                      const Eigen::Matrix<double, 9, 9>& r, const MagModel& model) {
  const Vector9 innovation = z.vec() - observation_model(x_pred, model).vec();
  const auto c = kalman_correct<16, 9>(p_pred, innovation, h, r);
  return {c.ok ? apply_correction(x_pred, c.dx) : x_pred, c.P, c.ok};
}

/// Update on the magnetometer rows only.
[[nodiscard]] inline EkfUpdate partial_update_mag(const NavState& x, const Matrix16& p,
                                                  const Vec3& z_mag, double mag_var,
                                                  const MagModel& model) {
  const Vec3 innovation = z_mag - predicted_mag(x.q, model);
  Eigen::Matrix<double, 3, 16> h = Eigen::Matrix<double, 3, 16>::Zero();
  h.block<3, 4>(0, idx::q) = mag_jacobian(x.q, model);
  const auto c = kalman_correct<16, 3>(p, innovation, h, mag_var * Mat3::Identity());
  return {c.ok ? apply_correction(x, c.dx) : x, c.P, c.ok};
}

/// Update on the GPS position and velocity rows only.
[[nodiscard]] inline EkfUpdate partial_update_gps(const NavState& x, const Matrix16& p,
                                                  const Vec3& z_pos, const Vec3& z_vel,
                                                  double pos_var, double vel_var) {
  Eigen::Matrix<double, 6, 1> innovation;
  innovation << z_pos - x.r, z_vel - x.v;
  Eigen::Matrix<double, 6, 16> h = Eigen::Matrix<double, 6, 16>::Zero();
  h.block<3, 3>(0, idx::r) = Mat3::Identity();
  h.block<3, 3>(3, idx::v) = Mat3::Identity();
  Eigen::Matrix<double, 6, 6> r = Eigen::Matrix<double, 6, 6>::Zero();
  r.diagonal() << pos_var, pos_var, pos_var, vel_var, vel_var, vel_var;
  const auto c = kalman_correct<16, 6>(p, innovation, h, r);
  return {c.ok ? apply_correction(x, c.dx) : x, c.P, c.ok};
}

/// Body field rebuilt from the estimated roll/pitch and the
/// tilt-compensated magnetic heading.
[[nodiscard]] inline Vec3 make_mag_pseudo(const Quaternion& q, const Vec3& mag_body, const MagModel& model) {
  const EulerAngles att = quat_to_euler(q);
  return mag_pseudo_measurement(att, magnetic_heading(mag_body, att.roll, att.pitch, model), model);
}

/// Scalar heading measurement row: innovation, H over the quaternion block
/// and R.
///
/// The tilt-compensated heading minus the estimated yaw equals the
/// declination minus the horizontal bearing of C(q) m_b. Writing the
/// measurement that way keeps its dependence on roll and pitch in H, so roll
/// and pitch errors are not fed back as heading information.
struct HeadingRow {
  double innovation = 0.0;
  Eigen::Matrix<double, 1, 4> h = Eigen::Matrix<double, 1, 4>::Zero();
  double r = 0.0;
  bool ok = false;  // false when the field is (nearly) vertical
};

[[nodiscard]] inline HeadingRow heading_row(const Quaternion& q, const Vec3& mag_body, double mag_var,
                                            const MagModel& model) {
  HeadingRow row;
  const Vec3 n = dcm_from_components(q) * mag_body;
  const double h2 = n.x() * n.x() + n.y() * n.y();
  if (h2 < 1e-6) return row;
  row.innovation = wrap_angle(model.declination - std::atan2(n.y(), n.x()));
  // H at the predicted body field: a Jacobian built from the noisy sample
  // would correlate with the innovation noise and bias the tilt.
  const Mat3 c = dcm_from_components(q);
  const Vec3 mn = mag_field_ned(model);
  const Vec3 mb_hat = c.transpose() * mn;
  const double g2 = mn.x() * mn.x() + mn.y() * mn.y();
  const auto d = dcm_partials(q);
  for (int i = 0; i < 4; ++i) {
    const Vec3 dn = d[i] * mb_hat;
    row.h(i) = (mn.x() * dn.y() - mn.y() * dn.x()) / g2;
  }
  row.r = mag_var / g2;
  row.ok = true;
  return row;
}

/// Static alignment: roll/pitch from the mean specific force, yaw from the
/// tilt-compensated magnetometer.
[[nodiscard]] inline Quaternion align_attitude(const Vec3& accel_mean_g, const Vec3& mag_mean,
                                               const MagModel& model) {
  const double roll = std::atan2(-accel_mean_g.y(), -accel_mean_g.z());
  const double pitch =
      std::atan2(accel_mean_g.x(), std::hypot(accel_mean_g.y(), accel_mean_g.z()));
  const double yaw = magnetic_heading(mag_mean, roll, pitch, model);
  return euler_to_quat({roll, pitch, yaw});
}

/// Bias components beyond the physical limits are clamped and flag divergence.
template <int N>
inline void clamp_biases(Eigen::Matrix<double, N, 1>& x, FilterHealth& health) {
  for (int i = 0; i < 3; ++i) {
    double& bf = x(idx::bf + i);
    double& bw = x(idx::bw + i);
    if (std::abs(bf) > kMaxAccelBias) {
      bf = std::copysign(kMaxAccelBias, bf);
      health.diverged = true;
    }
    if (std::abs(bw) > kMaxGyroBias) {
      bw = std::copysign(kMaxGyroBias, bw);
      health.diverged = true;
    }
  }
}

class Ekf16 {
 public:
  static constexpr int kPsdCheckInterval = 1000;

  Ekf16(const FilterNoiseConfig& noise, const MagModel& model) : noise_(noise), model_(model) {
    noise_.validate();
    P_.setZero();
    P_.diagonal() = noise_.initial_covariance_diag();
  }

  void initialize(const NavState& x) {
    x_ = x;
    x_.q = quat_normalize(x_.q);
    P_.setZero();
    P_.diagonal() = noise_.initial_covariance_diag();
    project_quaternion_covariance<16>(P_, x_.q);
  }

  void initialize(const NavState& x, const Matrix16& p) {
    x_ = x;
    x_.q = quat_normalize(x_.q);
    P_ = p;
    project_quaternion_covariance<16>(P_, x_.q);
  }

  void predict(const ImuSample& imu, double ts) {
    const Matrix16 a = jacobian_and_discretize(x_, imu, ts);
    const Matrix16 q = process_noise(x_, ts, noise_);
    x_ = gpsimu::predict(x_, imu, ts);
    const bool check = (++steps_ % kPsdCheckInterval) == 0;
    auto pred = covariance_predict<16>(P_, a, q, check);
    P_ = pred.P;
    if (!pred.psd_ok) health_.diverged = true;
  }

  bool update_mag(const Vec3& mag_body) {
    if (!mag_body.allFinite()) return skip();
    if (noise_.mag_mode == MagUpdateMode::Full) {
      return accept(partial_update_mag(x_, P_, make_mag_pseudo(x_.q, mag_body, model_), noise_.mag_var, model_));
    }
    const HeadingRow row = heading_row(x_.q, mag_body, noise_.mag_var, model_);
    if (!row.ok) return skip();
    Eigen::Matrix<double, 1, 16> h = Eigen::Matrix<double, 1, 16>::Zero();
    h.block<1, 4>(0, idx::q) = row.h;
    const auto c = kalman_correct<16, 1>(P_, Eigen::Matrix<double, 1, 1>(row.innovation), h,
                                         Eigen::Matrix<double, 1, 1>(row.r));
    return accept({c.ok ? apply_correction(x_, c.dx) : x_, c.P, c.ok});
  }

  bool update_gps(const GpsSample& gps) {
    return accept(
        partial_update_gps(x_, P_, gps.position, gps.velocity, noise_.gps_pos_var, noise_.gps_vel_var));
  }

  [[nodiscard]] const NavState& state() const { return x_; }
  [[nodiscard]] const Matrix16& covariance() const { return P_; }
  [[nodiscard]] const FilterHealth& health() const { return health_; }
  [[nodiscard]] const FilterNoiseConfig& noise() const { return noise_; }
  [[nodiscard]] const MagModel& mag_model() const { return model_; }

 private:
  bool skip() {
    health_.degraded = true;
    ++health_.skipped_updates;
    return false;
  }

  bool accept(const EkfUpdate& u) {
    if (!u.ok) return skip();
    Vector16 x = u.state.to_vector();
    clamp_biases<16>(x, health_);
    x_ = NavState::from_vector(x);
    P_ = u.P;
    project_quaternion_covariance<16>(P_, x_.q);
    return true;
  }

  FilterNoiseConfig noise_;
  MagModel model_;
  NavState x_;
  Matrix16 P_;
  FilterHealth health_;
  std::size_t steps_ = 0;
};

}  // namespace gpsimu
