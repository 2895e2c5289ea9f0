#pragma once

/**
 * @file mathcore.hpp
 * @brief Frame conventions and rotation algebra shared by every estimator.
 *
 * Frames:
 *   - navigation frame n: local North-East-Down, meters
 *   - body frame b: front-right-down, fixed to the IMU
 *
 * Quaternions are scalar-first (q0, q1, q2, q3), Hamilton product, and
 * rotate body vectors into the navigation frame. quat_to_dcm() therefore
 * returns the body-to-navigation matrix, so that v_n = C * v_b and the
 * body-frame magnetic field is C^T * m_n.
 *
 * Euler angles follow the aerospace Z-Y-X (yaw, pitch, roll) sequence:
 * C = Rz(yaw) * Ry(pitch) * Rx(roll).
 */

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gpsimu {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec4 = Eigen::Vector4d;

inline constexpr double kGravity = 9.80665;  // m/s^2 per g
inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

/// Raised when an operation receives numerically degenerate input.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised for contract violations on configuration or arguments.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

struct Quaternion {
  double q0 = 1.0;
  double q1 = 0.0;
  double q2 = 0.0;
  double q3 = 0.0;

  [[nodiscard]] Vec4 vec() const { return {q0, q1, q2, q3}; }
  [[nodiscard]] static Quaternion from_vec(const Vec4& v) { return {v(0), v(1), v(2), v(3)}; }
  [[nodiscard]] double norm() const { return std::sqrt(q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3); }
  [[nodiscard]] Quaternion conjugate() const { return {q0, -q1, -q2, -q3}; }

  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

struct EulerAngles {
  double roll = 0.0;   // rad, (-pi, pi]
  double pitch = 0.0;  // rad, [-pi/2, pi/2]
  double yaw = 0.0;    // rad, (-pi, pi]
  bool gimbal_lock = false;  // pitch within 1e-6 rad of +-pi/2; roll/yaw not unique
};

/// Local geomagnetic field direction. Angles in radians.
struct MagModel {
  double declination = 0.0;
  double inclination = 0.0;
};

inline constexpr double kUnitNormTolerance = 1e-6;

/// Wraps an angle into (-pi, pi].
[[nodiscard]] inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

[[nodiscard]] inline Quaternion quat_normalize(const Quaternion& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericError("quat_normalize: quaternion norm is zero or not finite");
  }
  return {q.q0 / n, q.q1 / n, q.q2 / n, q.q3 / n};
}

[[nodiscard]] inline Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
  return {a.q0 * b.q0 - a.q1 * b.q1 - a.q2 * b.q2 - a.q3 * b.q3,
          a.q0 * b.q1 + a.q1 * b.q0 + a.q2 * b.q3 - a.q3 * b.q2,
          a.q0 * b.q2 - a.q1 * b.q3 + a.q2 * b.q0 + a.q3 * b.q1,
          a.q0 * b.q3 + a.q1 * b.q2 - a.q2 * b.q1 + a.q3 * b.q0};
}

/// Quaternion for a rotation of |theta| radians about theta/|theta|.
[[nodiscard]] inline Quaternion quat_from_rotation_vector(const Vec3& theta) {
  const double angle = theta.norm();
  if (angle < 1e-12) {
    return quat_normalize({1.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z()});
  }
  const Vec3 axis = theta / angle;
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), s * axis.x(), s * axis.y(), s * axis.z()};
}

/// Rotation vector of the rotation q (inverse of quat_from_rotation_vector).
[[nodiscard]] inline Vec3 quat_to_rotation_vector(const Quaternion& q_in) {
  Quaternion q = quat_normalize(q_in);
  if (q.q0 < 0) q = {-q.q0, -q.q1, -q.q2, -q.q3};
  const Vec3 v(q.q1, q.q2, q.q3);
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  return v * (2.0 * std::atan2(s, q.q0) / s);
}

/// The quadratic-form rotation matrix of q, evaluated without a norm check.
/// This is the function the filter Jacobians differentiate.
[[nodiscard]] inline Mat3 dcm_from_components(const Quaternion& q) {
  const double q0 = q.q0, q1 = q.q1, q2 = q.q2, q3 = q.q3;
  Mat3 c;
  c << 1.0 - 2.0 * (q2 * q2 + q3 * q3), 2.0 * (q1 * q2 - q3 * q0), 2.0 * (q1 * q3 + q2 * q0),
      2.0 * (q1 * q2 + q3 * q0), 1.0 - 2.0 * (q1 * q1 + q3 * q3), 2.0 * (q2 * q3 - q1 * q0),
      2.0 * (q1 * q3 - q2 * q0), 2.0 * (q2 * q3 + q1 * q0), 1.0 - 2.0 * (q1 * q1 + q2 * q2);
  return c;
}

/// Body-to-navigation direction cosine matrix of a unit quaternion.
[[nodiscard]] inline Mat3 quat_to_dcm(const Quaternion& q) {
  if (std::abs(q.norm() - 1.0) > kUnitNormTolerance) {
    throw NumericError("quat_to_dcm: quaternion is not unit norm");
  }
  return dcm_from_components(q);
}

/// Derivatives of dcm_from_components with respect to q0..q3.
[[nodiscard]] inline std::array<Mat3, 4> dcm_partials(const Quaternion& q) {
  const double q0 = q.q0, q1 = q.q1, q2 = q.q2, q3 = q.q3;
  std::array<Mat3, 4> d;
  d[0] << 0, -2 * q3, 2 * q2,
          2 * q3, 0, -2 * q1,
          -2 * q2, 2 * q1, 0;
  d[1] << 0, 2 * q2, 2 * q3,
          2 * q2, -4 * q1, -2 * q0,
          2 * q3, 2 * q0, -4 * q1;
  d[2] << -4 * q2, 2 * q1, 2 * q0,
          2 * q1, 0, 2 * q3,
          -2 * q0, 2 * q3, -4 * q2;
  d[3] << -4 * q3, -2 * q0, 2 * q1,
          2 * q0, -4 * q3, 2 * q2,
          2 * q1, 2 * q2, 0;
  return d;
}

[[nodiscard]] inline Quaternion euler_to_quat(const EulerAngles& e) {
  const double cr = std::cos(0.5 * e.roll), sr = std::sin(0.5 * e.roll);
  const double cp = std::cos(0.5 * e.pitch), sp = std::sin(0.5 * e.pitch);
  const double cy = std::cos(0.5 * e.yaw), sy = std::sin(0.5 * e.yaw);
  return {cr * cp * cy + sr * sp * sy,
          sr * cp * cy - cr * sp * sy,
          cr * sp * cy + sr * cp * sy,
          cr * cp * sy - sr * sp * cy};
}

[[nodiscard]] inline EulerAngles dcm_to_euler(const Mat3& c) {
  EulerAngles e;
  e.pitch = std::atan2(-c(2, 0), std::hypot(c(2, 1), c(2, 2)));
  e.gimbal_lock = (0.5 * kPi - std::abs(e.pitch)) < 1e-6;
  if (e.gimbal_lock) {
    // Only yaw - roll (or yaw + roll) is defined; report it all as yaw.
    e.roll = 0.0;
    e.yaw = wrap_angle(std::atan2(-c(0, 1), c(1, 1)));
  } else {
    e.roll = wrap_angle(std::atan2(c(2, 1), c(2, 2)));
    e.yaw = wrap_angle(std::atan2(c(1, 0), c(0, 0)));
  }
  return e;
}

[[nodiscard]] inline EulerAngles quat_to_euler(const Quaternion& q) {
  return dcm_to_euler(quat_to_dcm(q));
}

/// Normalized local field in NED: [sin(i)cos(d), sin(i)sin(d), cos(i)].
[[nodiscard]] inline Vec3 mag_field_ned(const MagModel& m) {
  const double si = std::sin(m.inclination);
  return {si * std::cos(m.declination), si * std::sin(m.declination), std::cos(m.inclination)};
}

// Frame rotations of the magnetometer pseudo-measurement. Each maps
// navigation-side components into the next frame of the Z-Y-X chain.

[[nodiscard]] inline Mat3 roll_frame_rotation(double roll) {
  const double c = std::cos(roll), s = std::sin(roll);
  Mat3 m;
  m << 1, 0, 0,
       0, c, s,
       0, -s, c;
  return m;
}

[[nodiscard]] inline Mat3 pitch_frame_rotation(double pitch) {
  const double c = std::cos(pitch), s = std::sin(pitch);
  Mat3 m;
  m << c, 0, -s,
       0, 1, 0,
       s, 0, c;
  return m;
}

[[nodiscard]] inline Mat3 yaw_frame_rotation(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Mat3 m;
  m << c, s, 0,
       -s, c, 0,
       0, 0, 1;
  return m;
}

/// Magnetic heading from a body-frame field sample, tilt-compensated with
/// the given roll and pitch.
[[nodiscard]] inline double magnetic_heading(const Vec3& mag_body, double roll, double pitch,
                                             const MagModel& model) {
  // Undo roll then pitch: level = Ry(pitch) * Rx(roll) * m_b.
  const Vec3 level = pitch_frame_rotation(pitch).transpose() *
                     (roll_frame_rotation(roll).transpose() * mag_body);
  return wrap_angle(model.declination - std::atan2(level.y(), level.x()));
}

/// Body-frame field synthesized from estimated roll/pitch and a measured
/// heading. Roll and pitch come from the filter, so the resulting innovation
/// only carries heading information.
[[nodiscard]] inline Vec3 mag_pseudo_measurement(const EulerAngles& attitude, double mag_heading,
                                                 const MagModel& model) {
  return roll_frame_rotation(attitude.roll) * pitch_frame_rotation(attitude.pitch) *
         yaw_frame_rotation(mag_heading) * mag_field_ned(model);
}

}  // namespace gpsimu
