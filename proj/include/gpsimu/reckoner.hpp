#pragma once

/**
 * @file reckoner.hpp
 * @brief Stage two: forward re-integration of the undelayed IMU stream.
 *
 * The fusion filter runs on IMU data delayed to match the GPS latency, so
 * its estimate describes the vehicle at t - tau. The reckoner re-applies the
 * strapdown step to the raw samples in (t - tau, t] to get a timely state,
 * and records the navigation-frame acceleration along the way for the
 * correlation loop.
 */

#include "gpsimu/ekf16.hpp"

#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace gpsimu {

struct TimedAccel {
  double t = 0.0;
  Vec3 a = Vec3::Zero();  // m/s^2, NED, gravity removed
};

struct ReckonResult {
  NavState state;
  double t = 0.0;  // time the state refers to
  std::vector<TimedAccel> accel;
  bool stale = false;
};

/// Integrates every sample with anchor_time < t <= t_end. The first step
/// may be fractional. Biases stay at their anchor values.
[[nodiscard]] inline ReckonResult forward_reckon(const NavState& anchor, double anchor_time,
                                                 std::span<const ImuSample> samples, double nominal_dt,
                                                 double t_end) {
  ReckonResult out;
  out.state = anchor;
  out.t = anchor_time;
  double prev = anchor_time;
  for (const auto& s : samples) {
    if (s.t <= anchor_time) continue;
    if (s.t > t_end) break;
    const double dt = s.t - prev;
    // A sample may stand in for at most ~1.5 periods of motion.
    if (dt > 1.5 * nominal_dt) out.stale = true;
    out.state = predict(out.state, s, dt);
    out.t = s.t;
    prev = s.t;
    out.accel.push_back({s.t, navigation_acceleration(out.state.q, s.accel, out.state.accel_bias)});
  }
  if (t_end - out.t > 1.5 * nominal_dt) out.stale = true;
  return out;
}

/// Averages consecutive blocks of `factor` samples; the output is stamped at
/// the mean sample time.
class AccelDecimator {
 public:
  explicit AccelDecimator(int factor) : factor_(factor) {
    if (factor < 1) throw ConfigError("AccelDecimator: factor must be >= 1");
  }

  std::optional<TimedAccel> push(const TimedAccel& s) {
    sum_ += s.a;
    tsum_ += s.t;
    if (++count_ < factor_) return std::nullopt;
    TimedAccel out{tsum_ / count_, sum_ / count_};
    sum_.setZero();
    tsum_ = 0.0;
    count_ = 0;
    return out;
  }

 private:
  int factor_;
  int count_ = 0;
  Vec3 sum_ = Vec3::Zero();
  double tsum_ = 0.0;
};

/// Ring of raw IMU samples plus the current forward solution. reanchor()
/// re-integrates from a fresh filter state; push() extends by one sample.
class Reckoner {
 public:
  Reckoner(double span_seconds, double nominal_dt) : span_(span_seconds), dt_(nominal_dt) {
    if (!(span_seconds > 0.0) || !(nominal_dt > 0.0)) throw ConfigError("Reckoner: invalid span or period");
  }

  /// Adds a raw sample. Returns the forward acceleration at its time when
  /// the reckoner is anchored.
  std::optional<TimedAccel> push(const ImuSample& s) {
    buf_.push_back(s);
    while (!buf_.empty() && buf_.front().t < s.t - span_) buf_.pop_front();
    if (!state_) return std::nullopt;
    const double dt = s.t - t_;
    if (dt <= 0.0) return std::nullopt;
    if (dt > 1.5 * dt_) stale_ = true;
    *state_ = predict(*state_, s, dt);
    t_ = s.t;
    return TimedAccel{s.t, navigation_acceleration(state_->q, s.accel, state_->accel_bias)};
  }

  /// Replaces the forward solution with one integrated from `anchor`
  /// (valid at anchor_time) up to the newest buffered sample.
  void reanchor(const NavState& anchor, double anchor_time) {
    const std::vector<ImuSample> samples(buf_.begin(), buf_.end());
    const double t_end = buf_.empty() ? anchor_time : buf_.back().t;
    ReckonResult r = forward_reckon(anchor, anchor_time, samples, dt_, t_end);
    stale_ = r.stale || (!buf_.empty() && anchor_time < buf_.front().t - dt_);
    state_ = r.state;
    t_ = r.t;
  }

  [[nodiscard]] bool anchored() const { return state_.has_value(); }
  [[nodiscard]] const NavState& state() const { return *state_; }
  [[nodiscard]] double time() const { return t_; }
  [[nodiscard]] bool stale() const { return stale_; }
  [[nodiscard]] std::size_t buffered() const { return buf_.size(); }

 private:
  double span_;
  double dt_;
  std::deque<ImuSample> buf_;
  std::optional<NavState> state_;
  double t_ = 0.0;
  bool stale_ = false;
};

}  // namespace gpsimu
