#pragma once

/**
 * @file harness.hpp
 * @brief Runs the three estimators over a sensor log and scores them.
 *
 * Methods:
 *   ekf       16-state filter on raw IMU, GPS used as if it had no latency
 *   aekf      17-state filter with the delay as a state
 *   proposed  delay loop + aligned 16-state filter + forward reckoning;
 *             scored on the timely (stage two) output
 *
 * Errors are evaluated against truth at the output time, after
 * PipelineConfig::rmse_start. Per-axis errors are pooled, i.e. each RMSE is
 * sqrt of the mean over time and axes.
 */

#include "gpsimu/aekf17.hpp"
#include "gpsimu/config.hpp"
#include "gpsimu/ekf16.hpp"
#include "gpsimu/reckoner.hpp"
#include "gpsimu/sensor_io.hpp"
#include "gpsimu/simulator.hpp"
#include "gpsimu/timesync.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <future>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gpsimu {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class Method { Ekf, Aekf, Proposed };

[[nodiscard]] inline std::string to_string(Method m) {
  switch (m) {
    case Method::Ekf: return "ekf";
    case Method::Aekf: return "aekf";
    case Method::Proposed: return "proposed";
  }
  return "?";
}

[[nodiscard]] inline Method parse_method(const std::string& s) {
  if (s == "ekf") return Method::Ekf;
  if (s == "aekf") return Method::Aekf;
  if (s == "proposed") return Method::Proposed;
  throw ConfigError("unknown method '" + s + "' (expected ekf, aekf or proposed)");
}

struct SensorData {
  ScenarioConfig config;
  std::vector<ImuSample> imu;
  std::vector<GpsSample> gps;
};

[[nodiscard]] inline SensorData sensor_data(const SensorLog& log) {
  return {log.config, log.imu.samples, log.gps};
}

struct EstimateSample {
  double t = 0.0;
  NavState state;       // the method's output at t
  double tau = kNaN;    // delay estimate, s
  NavState delayed;     // proposed only: the fusion filter's state at t - lag
  double lag = kNaN;    // proposed only: lag currently applied to the IMU data
};

struct InnovationSample {
  double t = 0.0;
  Eigen::Matrix<double, 6, 1> nu = Eigen::Matrix<double, 6, 1>::Zero();  // position, velocity
};

struct Span {
  double start = 0.0;
  double end = 0.0;
};

struct RunResult {
  Method method = Method::Proposed;
  std::vector<EstimateSample> estimates;
  std::vector<SyncTraceRow> sync_trace;
  std::vector<InnovationSample> innovations;
  std::vector<Span> gps_outages;
  FilterHealth health;
  double initial_delay = kNaN;
  std::size_t ticks = 0;
  double wall_seconds = 0.0;
};

/// Gaps between consecutive GPS samples longer than 1.5 periods.
[[nodiscard]] inline std::vector<Span> find_gps_outages(std::span<const GpsSample> gps, double period) {
  std::vector<Span> out;
  for (std::size_t i = 1; i < gps.size(); ++i) {
    if (gps[i].t - gps[i - 1].t > 1.5 * period) out.push_back({gps[i - 1].t, gps[i].t});
  }
  return out;
}

namespace detail {

class StaticAligner {
 public:
  explicit StaticAligner(std::size_t n) : n_(n) {}
  void add(const ImuSample& s) {
    if (count_ >= n_) return;
    accel_ += s.accel;
    mag_ += s.mag;
    ++count_;
  }
  [[nodiscard]] bool ready() const { return count_ >= n_; }
  [[nodiscard]] Quaternion attitude(const MagModel& model) const {
    return align_attitude(accel_ / static_cast<double>(count_), mag_ / static_cast<double>(count_), model);
  }

 private:
  std::size_t n_;
  std::size_t count_ = 0;
  Vec3 accel_ = Vec3::Zero();
  Vec3 mag_ = Vec3::Zero();
};

inline NavState initial_state(const Quaternion& q, const GpsSample& g) {
  NavState x;
  x.q = q;
  x.r = g.position;
  x.v = g.velocity;
  return x;
}

inline std::size_t output_stride(const ScenarioConfig& sc, const PipelineConfig& p) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sc.imu_rate / p.output_rate)));
}

/// Walks IMU ticks and hands each GPS sample to the tick at which it has
/// been emitted.
class GpsFeed {
 public:
  explicit GpsFeed(std::span<const GpsSample> gps) : gps_(gps) {}
  const GpsSample* next(double t_imu) {
    if (i_ < gps_.size() && gps_[i_].t <= t_imu + 1e-9) return &gps_[i_++];
    return nullptr;
  }

 private:
  std::span<const GpsSample> gps_;
  std::size_t i_ = 0;
};

inline double tick_period(std::span<const ImuSample> imu, std::size_t k, double nominal) {
  if (k == 0) return nominal;
  const double dt = imu[k].t - imu[k - 1].t;
  return dt > 0.0 ? dt : nominal;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Offline calibration
// ---------------------------------------------------------------------------

/// Down-axis acceleration from IMU-only strapdown (gyro-integrated attitude
/// from a static alignment) on the working grid, and the GPS acceleration
/// resampled to it. Returns the ±6 s correlation peak.
[[nodiscard]] inline double calibrate_from_record(const SensorData& rec, const PipelineConfig& p) {
  const ScenarioConfig& sc = rec.config;
  if (rec.imu.size() < p.align_samples + 10 || rec.gps.size() < 20) {
    throw CalibrationError("calibration record is too short");
  }
  const MagModel model = sc.mag_model();
  detail::StaticAligner al(p.align_samples);
  for (std::size_t k = 0; k < p.align_samples; ++k) al.add(rec.imu[k]);
  NavState x;
  x.q = al.attitude(model);
  const auto factor = static_cast<int>(std::llround(p.sync.grid_dt * sc.imu_rate));
  AccelDecimator dec(std::max(1, factor));
  std::vector<double> grid;
  std::vector<double> imu_down;
  for (std::size_t k = 0; k < rec.imu.size(); ++k) {
    const ImuSample& s = rec.imu[k];
    if (k > 0) x = predict(x, s, detail::tick_period(rec.imu, k, sc.imu_period()));
    const Vec3 a = navigation_acceleration(x.q, s.accel, Vec3::Zero());
    if (auto d = dec.push({s.t, a})) {
      grid.push_back(d->t);
      imu_down.push_back(d->a.z());
    }
  }
  std::vector<Vec3> vel;
  std::vector<double> vt;
  for (const auto& g : rec.gps) {
    vel.push_back(g.velocity);
    vt.push_back(g.t);
  }
  const int n = p.sync.diff_samples;
  const DifferencedSeries diff = gps_accel_difference(vel, n, sc.gps_period());
  std::vector<double> at;
  std::vector<double> ad;
  for (std::size_t j = 0; j < diff.values.size(); ++j) {
    at.push_back(0.5 * (vt[j] + vt[j + n]));
    ad.push_back(diff.values[j].z());
  }
  // Keep the grid inside the span covered by GPS so no value is held.
  std::vector<double> g2;
  std::vector<double> i2;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (grid[k] >= at.front() && grid[k] <= at.back()) {
      g2.push_back(grid[k]);
      i2.push_back(imu_down[k]);
    }
  }
  const auto gps_down = resample_linear<double>(at, ad, g2);
  const auto kernel = make_smoothing_kernel(p.sync.smoothing_taps);
  return offline_calibrate(smooth(i2, kernel), smooth(gps_down, kernel), p.sync.grid_dt);
}

/// Initial delay: the configured value, or the calibration record of the
/// scenario.
[[nodiscard]] inline double resolve_initial_delay(const ScenarioConfig& sc, const PipelineConfig& p) {
  if (!std::isnan(p.initial_delay)) return p.initial_delay;
  const SensorLog cal = simulate(calibration_scenario(sc));
  return std::clamp(calibrate_from_record(sensor_data(cal), p), 0.0, kMaxTau);
}

// ---------------------------------------------------------------------------
// Estimator runs
// ---------------------------------------------------------------------------

[[nodiscard]] inline RunResult run_ekf(const SensorData& data, const PipelineConfig& p) {
  const ScenarioConfig& sc = data.config;
  const MagModel model = sc.mag_model();
  RunResult res;
  res.method = Method::Ekf;
  res.gps_outages = find_gps_outages(data.gps, sc.gps_period());
  const auto stride = detail::output_stride(sc, p);
  Ekf16 f(p.noise, model);
  detail::StaticAligner al(p.align_samples);
  detail::GpsFeed feed(data.gps);
  bool started = false;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < data.imu.size(); ++k) {
    const ImuSample& u = data.imu[k];
    const GpsSample* g = feed.next(u.t);
    if (!started) {
      al.add(u);
      if (g && al.ready()) {
        f.initialize(detail::initial_state(al.attitude(model), *g));
        started = true;
      }
      continue;
    }
    f.predict(u, detail::tick_period(data.imu, k, sc.imu_period()));
    f.update_mag(u.mag);
    if (g) {
      InnovationSample in{g->t, {}};
      in.nu << g->position - f.state().r, g->velocity - f.state().v;
      res.innovations.push_back(in);
      f.update_gps(*g);
    }
    ++res.ticks;
    if (k % stride == 0) res.estimates.push_back({u.t, f.state(), kNaN, {}, kNaN});
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.health = f.health();
  return res;
}

[[nodiscard]] inline RunResult run_aekf(const SensorData& data, const PipelineConfig& p, double tau0) {
  const ScenarioConfig& sc = data.config;
  const MagModel model = sc.mag_model();
  RunResult res;
  res.method = Method::Aekf;
  res.initial_delay = tau0;
  res.gps_outages = find_gps_outages(data.gps, sc.gps_period());
  const auto stride = detail::output_stride(sc, p);
  AekfConfig cfg{p.noise, p.tau_walk, p.init_tau_var, p.aekf_quadratic};
  Aekf17 f(cfg, model);
  detail::StaticAligner al(p.align_samples);
  detail::GpsFeed feed(data.gps);
  bool started = false;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < data.imu.size(); ++k) {
    const ImuSample& u = data.imu[k];
    const GpsSample* g = feed.next(u.t);
    if (!started) {
      al.add(u);
      if (g && al.ready()) {
        f.initialize(detail::initial_state(al.attitude(model), *g), tau0);
        started = true;
      }
      continue;
    }
    f.predict(u, detail::tick_period(data.imu, k, sc.imu_period()));
    f.update_mag(u.mag);
    if (g) {
      const Observation9 zh =
          delayed_observation_model(f.state(), f.current_acceleration(), model, p.aekf_quadratic);
      InnovationSample in{g->t, {}};
      in.nu << g->position - zh.position, g->velocity - zh.velocity;
      res.innovations.push_back(in);
      f.update_gps(*g);
    }
    ++res.ticks;
    if (k % stride == 0) res.estimates.push_back({u.t, f.state().x, f.state().tau, {}, kNaN});
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.health = f.health();
  return res;
}

/// The separated pipeline, one IMU tick at a time.
class ProposedPipeline {
 public:
  ProposedPipeline(const ScenarioConfig& sc, const PipelineConfig& p, double tau0)
      : sc_(sc),
        p_(p),
        model_(sc.mag_model()),
        ts_(sc.imu_period()),
        spec_(p.whitening ? WhitenSpec::design(p.accel_fir_taps, p.accel_fir_cutoff, p.gyro_fir_taps,
                                               p.gyro_fir_cutoff, sc.imu_rate)
                          : WhitenSpec{{1.0}, {1.0}, sc.imu_period()}),
        fir_accel_(spec_.accel_taps),
        fir_gyro_(spec_.gyro_taps),
        capacity_(static_cast<std::size_t>(std::ceil(p.delay_buffer / ts_)) + 8),
        line_accel_(capacity_, ts_),
        line_gyro_(capacity_, ts_),
        line_mag_(capacity_, ts_),
        reckoner_(p.delay_buffer, ts_),
        decimator_(std::max(1, static_cast<int>(std::llround(p.sync.grid_dt / ts_)))),
        sync_(p.sync, tau0),
        filter_(p.noise, model_),
        aligner_(p.align_samples),
        lag_(tau0),
        filter_lag_(std::max(tau0, spec_.accel_delay())) {
    validate(p);
  }

  struct Tick {
    bool started = false;
    std::optional<SyncTraceRow> sync;
    std::optional<InnovationSample> innovation;
  };

  Tick step(const ImuSample& u, const GpsSample* gps, double ts) {
    Tick out;
    const Vec3 aw = fir_accel_.push(u.accel);
    const Vec3 gw = fir_gyro_.push(u.gyro);
    if (line_accel_.size() == 0) {
      line_accel_.prime(aw);
      line_gyro_.prime(gw);
      line_mag_.prime(u.mag);
    } else {
      line_accel_.push(aw);
      line_gyro_.push(gw);
      line_mag_.push(u.mag);
    }

    // Move the applied lag toward the loop's estimate at a bounded rate.
    const double max_lag = std::min(kMaxTau, line_accel_.max_delay() - spec_.gyro_delay());
    const double target = std::clamp(sync_.estimate().tau, 0.0, max_lag);
    const double slew = p_.delay_slew * ts;
    lag_ += std::clamp(target - lag_, -slew, slew);
    // The filter runs at least the accel filter's group delay behind, since
    // that stream cannot be advanced. GPS fixes newer than the filter time
    // wait in a queue.
    const double filter_lag = std::max(lag_, spec_.accel_delay());
    const double step = filter_lag - filter_lag_;
    filter_lag_ = filter_lag;
    const DelayVector dv = delay_vector(filter_lag - spec_.accel_delay(), spec_);
    if (dv.clamped) ++health_extra_.clamp_events;
    const double t_filter = u.t - filter_lag;
    const ImuSample delayed{t_filter, line_gyro_.at_delay(dv.gyro), line_accel_.at_delay(dv.accel),
                            line_mag_.at_delay(dv.mag)};

    if (auto a = reckoner_.push(u)) {
      if (auto d = decimator_.push(*a)) sync_.add_forward_accel(d->t, d->a);
    }

    if (!started_) {
      aligner_.add(u);
      if (gps && aligner_.ready()) {
        filter_.initialize(detail::initial_state(aligner_.attitude(model_), *gps));
        reckoner_.reanchor(filter_.state(), t_filter);
        started_ = true;
      }
      if (gps) out.sync = sync_.add_gps(gps->t, gps->velocity, sc_.gps_period());
      out.started = started_;
      return out;
    }

    if (gps) {
      pending_.push_back({*gps, gps->t - lag_});
      out.sync = sync_.add_gps(gps->t, gps->velocity, sc_.gps_period());
    }
    filter_.predict(delayed, ts - step);
    filter_.update_mag(delayed.mag);
    bool updated = false;
    while (!pending_.empty() && pending_.front().valid_at <= t_filter + 0.5 * ts) {
      const GpsSample& g = pending_.front().gps;
      InnovationSample in{g.t, {}};
      in.nu << g.position - filter_.state().r, g.velocity - filter_.state().v;
      out.innovation = in;
      filter_.update_gps(g);
      pending_.pop_front();
      updated = true;
    }
    if (updated) reckoner_.reanchor(filter_.state(), t_filter);
    out.started = true;
    return out;
  }

  [[nodiscard]] EstimateSample output(double t) const {
    return {t, reckoner_.anchored() ? reckoner_.state() : filter_.state(), sync_.estimate().tau,
            filter_.state(), lag_};
  }

  [[nodiscard]] FilterHealth health() const {
    FilterHealth h = filter_.health();
    h.clamp_events += health_extra_.clamp_events;
    return h;
  }

  [[nodiscard]] const WhitenSpec& whiten_spec() const { return spec_; }
  [[nodiscard]] double applied_lag() const { return lag_; }
  [[nodiscard]] bool stale() const { return reckoner_.stale(); }

 private:
  ScenarioConfig sc_;
  PipelineConfig p_;
  MagModel model_;
  double ts_;
  WhitenSpec spec_;
  FirFilter<Vec3> fir_accel_;
  FirFilter<Vec3> fir_gyro_;
  std::size_t capacity_;
  FractionalDelayLine<Vec3> line_accel_;
  FractionalDelayLine<Vec3> line_gyro_;
  FractionalDelayLine<Vec3> line_mag_;
  Reckoner reckoner_;
  AccelDecimator decimator_;
  TimeSyncLoop sync_;
  Ekf16 filter_;
  detail::StaticAligner aligner_;
  double lag_;
  double filter_lag_ = 0.0;
  struct PendingFix {
    GpsSample gps;
    double valid_at;  // filter time the fix describes
  };
  std::deque<PendingFix> pending_;
  bool started_ = false;
  FilterHealth health_extra_;
};

[[nodiscard]] inline RunResult run_proposed(const SensorData& data, const PipelineConfig& p, double tau0) {
  const ScenarioConfig& sc = data.config;
  RunResult res;
  res.method = Method::Proposed;
  res.initial_delay = tau0;
  res.gps_outages = find_gps_outages(data.gps, sc.gps_period());
  const auto stride = detail::output_stride(sc, p);
  ProposedPipeline pipe(sc, p, tau0);
  detail::GpsFeed feed(data.gps);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < data.imu.size(); ++k) {
    const ImuSample& u = data.imu[k];
    const auto tick = pipe.step(u, feed.next(u.t), detail::tick_period(data.imu, k, sc.imu_period()));
    if (tick.sync) res.sync_trace.push_back(*tick.sync);
    if (tick.innovation) res.innovations.push_back(*tick.innovation);
    if (!tick.started) continue;
    ++res.ticks;
    if (k % stride == 0) res.estimates.push_back(pipe.output(u.t));
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.health = pipe.health();
  return res;
}

[[nodiscard]] inline RunResult run_method(const SensorData& data, Method m, const PipelineConfig& p,
                                          double tau0) {
  switch (m) {
    case Method::Ekf: return run_ekf(data, p);
    case Method::Aekf: return run_aekf(data, p, tau0);
    case Method::Proposed: return run_proposed(data, p, tau0);
  }
  throw ConfigError("run_method: bad method");
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct RunReport {
  std::string method;
  std::uint64_t seed = 0;
  double dynamics = 0.0;
  double true_delay = 0.0;
  double rmse_window_start = 0.0;
  std::size_t samples = 0;  // estimates inside the window

  double roll_rmse_deg = kNaN;
  double pitch_rmse_deg = kNaN;
  double yaw_rmse_deg = kNaN;
  double attitude_rmse_deg = kNaN;
  double velocity_rmse = kNaN;
  double position_rmse = kNaN;
  double delay_rmse = kNaN;
  double mean_delay = kNaN;
  double initial_delay = kNaN;
  double convergence_time = kNaN;
  Vec3 gyro_bias_rmse = Vec3::Constant(kNaN);
  Vec3 accel_bias_rmse = Vec3::Constant(kNaN);

  bool diverged = false;
  bool degraded = false;
  std::size_t skipped_updates = 0;
  std::vector<Span> gps_outages;

  double us_per_tick = kNaN;  // wall clock per IMU tick; not reproducible
};

struct TruthView {
  std::span<const TruthSample> samples;  // on the IMU grid starting at t = 0
  double rate = 1000.0;
  std::optional<Vec3> gyro_bias;
  std::optional<Vec3> accel_bias;

  [[nodiscard]] const TruthSample* at(double t) const {
    if (samples.empty()) return nullptr;
    const auto i = std::llround((t - samples.front().t) * rate);
    if (i < 0 || static_cast<std::size_t>(i) >= samples.size()) return nullptr;
    return &samples[static_cast<std::size_t>(i)];
  }
};

/// Rotation angle between two attitudes, rad.
[[nodiscard]] inline double attitude_error_angle(const Quaternion& est, const Quaternion& truth) {
  const Quaternion d = quat_multiply(truth.conjugate(), est);
  return 2.0 * std::atan2(Vec3(d.q1, d.q2, d.q3).norm(), std::abs(d.q0));
}

[[nodiscard]] inline RunReport compute_report(const RunResult& res, const TruthView& truth,
                                              const ScenarioConfig& sc, const PipelineConfig& p) {
  RunReport r;
  r.method = to_string(res.method);
  r.seed = sc.seed;
  r.dynamics = sc.dynamics;
  r.true_delay = sc.gps_delay;
  r.rmse_window_start = p.rmse_start;
  r.initial_delay = res.initial_delay;
  r.diverged = res.health.diverged;
  r.degraded = res.health.degraded;
  r.skipped_updates = res.health.skipped_updates;
  r.gps_outages = res.gps_outages;
  if (res.ticks > 0) r.us_per_tick = 1e6 * res.wall_seconds / static_cast<double>(res.ticks);

  Vec3 att_sq = Vec3::Zero();
  double vel_sq = 0.0, pos_sq = 0.0, tau_sq = 0.0, tau_sum = 0.0;
  Vec3 bg_sq = Vec3::Zero(), ba_sq = Vec3::Zero();
  std::size_t n = 0, n_tau = 0;
  double last_bad = -1.0;
  bool any = false;
  for (const auto& e : res.estimates) {
    const TruthSample* ts = truth.at(e.t);
    if (!ts) continue;
    any = true;
    if (attitude_error_angle(e.state.q, ts->attitude) > 1.0 * kDegToRad) last_bad = e.t;
    if (e.t < p.rmse_start) continue;
    const EulerAngles ee = quat_to_euler(e.state.q);
    const EulerAngles et = quat_to_euler(ts->attitude);
    const Vec3 da(wrap_angle(ee.roll - et.roll), wrap_angle(ee.pitch - et.pitch), wrap_angle(ee.yaw - et.yaw));
    att_sq += da.cwiseAbs2();
    vel_sq += (e.state.v - ts->velocity).squaredNorm();
    pos_sq += (e.state.r - ts->position).squaredNorm();
    if (truth.gyro_bias) bg_sq += (e.state.gyro_bias - *truth.gyro_bias).cwiseAbs2();
    if (truth.accel_bias) ba_sq += (e.state.accel_bias - *truth.accel_bias).cwiseAbs2();
    if (!std::isnan(e.tau)) {
      tau_sq += (e.tau - sc.gps_delay) * (e.tau - sc.gps_delay);
      tau_sum += e.tau;
      ++n_tau;
    }
    ++n;
  }
  r.samples = n;
  if (n > 0) {
    const double dn = static_cast<double>(n);
    r.roll_rmse_deg = std::sqrt(att_sq.x() / dn) * kRadToDeg;
    r.pitch_rmse_deg = std::sqrt(att_sq.y() / dn) * kRadToDeg;
    r.yaw_rmse_deg = std::sqrt(att_sq.z() / dn) * kRadToDeg;
    r.attitude_rmse_deg = std::sqrt(att_sq.sum() / (3.0 * dn)) * kRadToDeg;
    r.velocity_rmse = std::sqrt(vel_sq / (3.0 * dn));
    r.position_rmse = std::sqrt(pos_sq / (3.0 * dn));
    if (truth.gyro_bias) r.gyro_bias_rmse = (bg_sq / dn).cwiseSqrt();
    if (truth.accel_bias) r.accel_bias_rmse = (ba_sq / dn).cwiseSqrt();
  }
  if (n_tau > 0) {
    r.delay_rmse = std::sqrt(tau_sq / static_cast<double>(n_tau));
    r.mean_delay = tau_sum / static_cast<double>(n_tau);
  }
  if (any && !res.estimates.empty()) {
    // Converged once the error stays below 1 deg; never, if the run ends above it.
    const double t_last = res.estimates.back().t;
    r.convergence_time = last_bad < 0.0 ? res.estimates.front().t : (last_bad >= t_last ? kNaN : last_bad);
  }
  return r;
}

/// Statistics available without truth.
struct ReplayStats {
  std::size_t gps_updates = 0;
  std::array<double, 6> innovation_rms{};
  std::array<double, 6> innovation_lag1{};  // normalized lag-1 autocorrelation
  double velocity_roughness = kNaN;         // RMS second difference of output velocity, m/s
  double mean_delay = kNaN;
  double final_delay = kNaN;
};

[[nodiscard]] inline ReplayStats replay_stats(const RunResult& res, double rmse_start) {
  ReplayStats s;
  std::vector<const InnovationSample*> in;
  for (const auto& i : res.innovations) {
    if (i.t >= rmse_start) in.push_back(&i);
  }
  s.gps_updates = in.size();
  for (int c = 0; c < 6; ++c) {
    double m = 0.0;
    for (auto* i : in) m += i->nu(c);
    m = in.empty() ? 0.0 : m / static_cast<double>(in.size());
    double v = 0.0, c1 = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      const double x = in[j]->nu(c) - m;
      v += x * x;
      sq += in[j]->nu(c) * in[j]->nu(c);
      if (j > 0) c1 += x * (in[j - 1]->nu(c) - m);
    }
    s.innovation_rms[c] = in.empty() ? kNaN : std::sqrt(sq / static_cast<double>(in.size()));
    s.innovation_lag1[c] = v > 0.0 ? c1 / v : kNaN;
  }
  double rough = 0.0;
  std::size_t nr = 0, nt = 0;
  double tau_sum = 0.0;
  for (std::size_t k = 2; k < res.estimates.size(); ++k) {
    if (res.estimates[k].t < rmse_start) continue;
    const Vec3 d2 = res.estimates[k].state.v - 2.0 * res.estimates[k - 1].state.v + res.estimates[k - 2].state.v;
    rough += d2.squaredNorm();
    ++nr;
    if (!std::isnan(res.estimates[k].tau)) {
      tau_sum += res.estimates[k].tau;
      ++nt;
    }
  }
  if (nr > 0) s.velocity_roughness = std::sqrt(rough / (3.0 * static_cast<double>(nr)));
  if (nt > 0) s.mean_delay = tau_sum / static_cast<double>(nt);
  if (!res.estimates.empty()) s.final_delay = res.estimates.back().tau;
  return s;
}

// ---------------------------------------------------------------------------
// JSON and CSV output
// ---------------------------------------------------------------------------

namespace detail {
inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
inline nlohmann::json vec(const Vec3& v) { return {num(v.x()), num(v.y()), num(v.z())}; }
inline nlohmann::json spans(const std::vector<Span>& s) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : s) a.push_back({num(x.start), num(x.end)});
  return a;
}
}  // namespace detail

/// With `timing` false the output depends only on the inputs and the seed.
[[nodiscard]] inline nlohmann::json to_json(const RunReport& r, bool timing = true) {
  using detail::num;
  nlohmann::json j{
      {"method", r.method},
      {"seed", r.seed},
      {"dynamics", num(r.dynamics)},
      {"true_delay_s", num(r.true_delay)},
      {"rmse_window_start_s", num(r.rmse_window_start)},
      {"samples", r.samples},
      {"roll_rmse_deg", num(r.roll_rmse_deg)},
      {"pitch_rmse_deg", num(r.pitch_rmse_deg)},
      {"yaw_rmse_deg", num(r.yaw_rmse_deg)},
      {"attitude_rmse_deg", num(r.attitude_rmse_deg)},
      {"velocity_rmse_mps", num(r.velocity_rmse)},
      {"position_rmse_m", num(r.position_rmse)},
      {"delay_rmse_s", num(r.delay_rmse)},
      {"mean_delay_s", num(r.mean_delay)},
      {"initial_delay_s", num(r.initial_delay)},
      {"convergence_time_s", num(r.convergence_time)},
      {"gyro_bias_rmse_radps", detail::vec(r.gyro_bias_rmse)},
      {"accel_bias_rmse_g", detail::vec(r.accel_bias_rmse)},
      {"diverged", r.diverged},
      {"degraded", r.degraded},
      {"skipped_updates", r.skipped_updates},
      {"gps_outages", detail::spans(r.gps_outages)},
  };
  if (timing) j["us_per_tick"] = num(r.us_per_tick);
  return j;
}

[[nodiscard]] inline nlohmann::json to_json(const ReplayStats& s) {
  using detail::num;
  nlohmann::json rms = nlohmann::json::array(), lag = nlohmann::json::array();
  for (int c = 0; c < 6; ++c) {
    rms.push_back(num(s.innovation_rms[c]));
    lag.push_back(num(s.innovation_lag1[c]));
  }
  return {{"gps_updates", s.gps_updates},
          {"innovation_rms", rms},
          {"innovation_lag1_autocorr", lag},
          {"velocity_roughness_mps", num(s.velocity_roughness)},
          {"mean_delay_s", num(s.mean_delay)},
          {"final_delay_s", num(s.final_delay)}};
}

[[nodiscard]] inline std::string format_table(const std::vector<RunReport>& reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-9s %6s %9s %9s %9s %9s %9s %9s %9s\n", "method", "seed", "roll_deg",
                "pitch_deg", "yaw_deg", "vel_mps", "pos_m", "delay_s", "tau_mean");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-9s %6llu %9.4f %9.4f %9.4f %9.4f %9.4f %9.5f %9.4f\n", r.method.c_str(),
                  static_cast<unsigned long long>(r.seed), r.roll_rmse_deg, r.pitch_rmse_deg, r.yaw_rmse_deg,
                  r.velocity_rmse, r.position_rmse, r.delay_rmse, r.mean_delay);
    out += line;
  }
  return out;
}

inline void write_estimates_csv(const std::string& path, const RunResult& res) {
  auto f = detail::open_write(path);
  std::fputs("t,q0,q1,q2,q3,rn,re,rd,vn,ve,vd,tau\n", f.get());
  for (const auto& e : res.estimates) {
    const auto& x = e.state;
    detail::write_row(f.get(), {e.t, x.q.q0, x.q.q1, x.q.q2, x.q.q3, x.r.x(), x.r.y(), x.r.z(), x.v.x(), x.v.y(),
                                x.v.z(), e.tau});
  }
}

inline void write_sync_trace_csv(const std::string& path, const RunResult& res) {
  auto f = detail::open_write(path);
  std::fputs("t,z_n,z_e,z_d,v_n,v_e,v_d,tau,p\n", f.get());
  for (const auto& r : res.sync_trace) {
    detail::write_row(f.get(), {r.t, r.obs[0].z, r.obs[1].z, r.obs[2].z, r.obs[0].valid ? 1.0 : 0.0,
                                r.obs[1].valid ? 1.0 : 0.0, r.obs[2].valid ? 1.0 : 0.0, r.tau, r.P});
  }
}

/// Long-format plot data: one (t, series, value) row per sample and series.
inline void write_plot_csv(const std::string& path, const RunResult& res, const TruthView& truth) {
  auto f = detail::open_write(path);
  std::fputs("t,series,value\n", f.get());
  auto row = [&f](double t, const char* name, double v) { std::fprintf(f.get(), "%.17g,%s,%.17g\n", t, name, v); };
  for (const auto& e : res.estimates) {
    const EulerAngles a = quat_to_euler(e.state.q);
    row(e.t, "roll_deg", a.roll * kRadToDeg);
    row(e.t, "pitch_deg", a.pitch * kRadToDeg);
    row(e.t, "yaw_deg", a.yaw * kRadToDeg);
    row(e.t, "vn", e.state.v.x());
    row(e.t, "ve", e.state.v.y());
    row(e.t, "vd", e.state.v.z());
    row(e.t, "rn", e.state.r.x());
    row(e.t, "re", e.state.r.y());
    row(e.t, "rd", e.state.r.z());
    if (!std::isnan(e.tau)) row(e.t, "tau", e.tau);
    if (const TruthSample* s = truth.at(e.t)) {
      const EulerAngles b = quat_to_euler(s->attitude);
      row(e.t, "truth_roll_deg", b.roll * kRadToDeg);
      row(e.t, "truth_pitch_deg", b.pitch * kRadToDeg);
      row(e.t, "truth_yaw_deg", b.yaw * kRadToDeg);
      row(e.t, "truth_vn", s->velocity.x());
      row(e.t, "truth_ve", s->velocity.y());
      row(e.t, "truth_vd", s->velocity.z());
    }
  }
}

// ---------------------------------------------------------------------------
// Top-level operations
// ---------------------------------------------------------------------------

struct ScenarioRun {
  RunResult result;
  RunReport report;
};

[[nodiscard]] inline TruthView truth_view(const SensorLog& log) {
  return {log.truth, log.config.imu_rate, log.imu.gyro_bias, log.imu.accel_bias};
}

[[nodiscard]] inline ScenarioRun run_on_log(const SensorLog& log, Method m, const PipelineConfig& p,
                                            double tau0) {
  ScenarioRun out;
  out.result = run_method(sensor_data(log), m, p, tau0);
  out.report = compute_report(out.result, truth_view(log), log.config, p);
  return out;
}

[[nodiscard]] inline ScenarioRun run_scenario(const RunConfig& cfg, Method m) {
  const SensorLog log = simulate(cfg.scenario);
  const double tau0 = m == Method::Ekf ? kNaN : resolve_initial_delay(cfg.scenario, cfg.pipeline);
  return run_on_log(log, m, cfg.pipeline, tau0);
}

/// Writes the simulator's file set for a log.
inline void write_log(const std::string& dir, const RunConfig& cfg, const SensorLog& log) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir + "/scenario.cfg");
    if (!f) throw IoError("cannot write '" + dir + "/scenario.cfg'");
    f << format_config(cfg);
  }
  write_imu_csv(dir + "/imu.csv", log.imu.samples);
  write_gps_csv(dir + "/gps.csv", log.gps);
  write_truth_csv(dir + "/truth.csv", log.truth);
  write_bias_csv(dir + "/bias.csv", log.imu.gyro_bias, log.imu.accel_bias);
}

struct ReplayOutput {
  RunResult result;
  std::optional<RunReport> report;  // when truth.csv is present
  ReplayStats stats;
  std::size_t skipped_imu_rows = 0;
  std::size_t skipped_gps_rows = 0;
};

[[nodiscard]] inline ReplayOutput replay(const std::string& dir, Method m, std::optional<RunConfig> override_cfg = {}) {
  namespace fs = std::filesystem;
  const RunConfig cfg = override_cfg ? *override_cfg
                        : fs::exists(dir + "/scenario.cfg") ? load_config(dir + "/scenario.cfg")
                                                            : RunConfig{};
  auto imu = read_imu_csv(dir + "/imu.csv");
  auto gps = read_gps_csv(dir + "/gps.csv");
  if (imu.rows.empty()) throw IoError("replay: no valid IMU rows in '" + dir + "/imu.csv'");
  ReplayOutput out;
  out.skipped_imu_rows = imu.skipped;
  out.skipped_gps_rows = gps.skipped;
  SensorData data{cfg.scenario, std::move(imu.rows), std::move(gps.rows)};
  const double tau0 = m == Method::Ekf ? kNaN : resolve_initial_delay(cfg.scenario, cfg.pipeline);
  out.result = run_method(data, m, cfg.pipeline, tau0);
  out.stats = replay_stats(out.result, cfg.pipeline.rmse_start);
  if (fs::exists(dir + "/truth.csv")) {
    const auto truth = read_truth_csv(dir + "/truth.csv");
    TruthView tv{truth.rows, cfg.scenario.imu_rate, std::nullopt, std::nullopt};
    Vec3 bg, ba;
    if (fs::exists(dir + "/bias.csv") && read_bias_csv(dir + "/bias.csv", bg, ba)) {
      tv.gyro_bias = bg;
      tv.accel_bias = ba;
    }
    out.report = compute_report(out.result, tv, cfg.scenario, cfg.pipeline);
  }
  return out;
}

struct MetricSummary {
  double mean = kNaN;
  double stddev = kNaN;
};

struct CompareRow {
  std::string method;
  std::vector<RunReport> runs;
  MetricSummary attitude, pitch, roll, yaw, velocity, position, delay;
};

/// Paired runs: each seed's log is shared by every method.
[[nodiscard]] inline std::vector<CompareRow> compare(const RunConfig& cfg, const std::vector<Method>& methods,
                                                     const std::vector<std::uint64_t>& seeds) {
  if (methods.empty()) throw ConfigError("compare: empty methods list");
  if (seeds.empty()) throw ConfigError("compare: empty seeds list");
  std::vector<std::future<std::vector<RunReport>>> jobs;
  for (const auto seed : seeds) {
    jobs.push_back(std::async(std::launch::async, [cfg, seed, &methods] {
      RunConfig c = cfg;
      c.scenario.seed = seed;
      const SensorLog log = simulate(c.scenario);
      const double tau0 = resolve_initial_delay(c.scenario, c.pipeline);
      std::vector<RunReport> out;
      for (const Method m : methods) out.push_back(run_on_log(log, m, c.pipeline, tau0).report);
      return out;
    }));
  }
  std::vector<CompareRow> rows(methods.size());
  for (std::size_t i = 0; i < methods.size(); ++i) rows[i].method = to_string(methods[i]);
  for (auto& j : jobs) {
    const auto reports = j.get();
    for (std::size_t i = 0; i < reports.size(); ++i) rows[i].runs.push_back(reports[i]);
  }
  auto summarize = [](const std::vector<RunReport>& runs, double RunReport::*field) {
    MetricSummary s;
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs) {
      const double v = r.*field;
      if (std::isnan(v)) continue;
      sum += v;
      sq += v * v;
      ++n;
    }
    if (n == 0) return s;
    s.mean = sum / static_cast<double>(n);
    s.stddev = n > 1 ? std::sqrt(std::max(0.0, (sq - n * s.mean * s.mean) / static_cast<double>(n - 1))) : 0.0;
    return s;
  };
  for (auto& row : rows) {
    row.attitude = summarize(row.runs, &RunReport::attitude_rmse_deg);
    row.pitch = summarize(row.runs, &RunReport::pitch_rmse_deg);
    row.roll = summarize(row.runs, &RunReport::roll_rmse_deg);
    row.yaw = summarize(row.runs, &RunReport::yaw_rmse_deg);
    row.velocity = summarize(row.runs, &RunReport::velocity_rmse);
    row.position = summarize(row.runs, &RunReport::position_rmse);
    row.delay = summarize(row.runs, &RunReport::delay_rmse);
  }
  return rows;
}

[[nodiscard]] inline nlohmann::json to_json(const std::vector<CompareRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  auto ms = [](const MetricSummary& m) { return nlohmann::json{{"mean", detail::num(m.mean)}, {"std", detail::num(m.stddev)}}; };
  for (const auto& r : rows) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& x : r.runs) runs.push_back(to_json(x));
    out.push_back({{"method", r.method},
                   {"attitude_rmse_deg", ms(r.attitude)},
                   {"roll_rmse_deg", ms(r.roll)},
                   {"pitch_rmse_deg", ms(r.pitch)},
                   {"yaw_rmse_deg", ms(r.yaw)},
                   {"velocity_rmse_mps", ms(r.velocity)},
                   {"position_rmse_m", ms(r.position)},
                   {"delay_rmse_s", ms(r.delay)},
                   {"runs", runs}});
  }
  return out;
}

struct SweepRow {
  double addition = 0.0;
  double true_delay = 0.0;
  double proposed_mean = kNaN;
  double aekf_mean = kNaN;
  double proposed_delta = kNaN;  // relative to the zero-addition run
  double aekf_delta = kNaN;
  RunReport proposed;
  RunReport aekf;
};

/// Extra GPS latency on top of the scenario's. The initial delay of both
/// estimators comes from calibrating the unmodified scenario, so the
/// additions have to be found online.
[[nodiscard]] inline std::vector<SweepRow> sweep_delay(const RunConfig& cfg, const std::vector<double>& additions) {
  if (additions.empty()) throw ConfigError("sweep_delay: empty additions");
  const double tau0 = resolve_initial_delay(cfg.scenario, cfg.pipeline);
  std::vector<double> adds = additions;
  if (std::find(adds.begin(), adds.end(), 0.0) == adds.end()) adds.insert(adds.begin(), 0.0);
  std::vector<SweepRow> rows;
  for (const double a : adds) {
    RunConfig c = cfg;
    c.scenario.gps_delay = cfg.scenario.gps_delay + a;
    c.scenario.max_sync_error = std::max(c.scenario.max_sync_error, c.scenario.gps_delay);
    const SensorLog log = simulate(c.scenario);
    SweepRow row;
    row.addition = a;
    row.true_delay = c.scenario.gps_delay;
    row.proposed = run_on_log(log, Method::Proposed, c.pipeline, tau0).report;
    row.aekf = run_on_log(log, Method::Aekf, c.pipeline, tau0).report;
    row.proposed_mean = row.proposed.mean_delay;
    row.aekf_mean = row.aekf.mean_delay;
    rows.push_back(row);
  }
  const auto base = std::find_if(rows.begin(), rows.end(), [](const SweepRow& r) { return r.addition == 0.0; });
  for (auto& r : rows) {
    r.proposed_delta = r.proposed_mean - base->proposed_mean;
    r.aekf_delta = r.aekf_mean - base->aekf_mean;
  }
  return rows;
}

[[nodiscard]] inline nlohmann::json to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"addition_s", r.addition},
                   {"true_delay_s", r.true_delay},
                   {"proposed_mean_delay_s", detail::num(r.proposed_mean)},
                   {"aekf_mean_delay_s", detail::num(r.aekf_mean)},
                   {"proposed_delta_s", detail::num(r.proposed_delta)},
                   {"aekf_delta_s", detail::num(r.aekf_delta)}});
  }
  return out;
}

}  // namespace gpsimu
