#pragma once

/**
 * @file timesync.hpp
 * @brief Separated GPS/IMU time-delay estimation loop.
 *
 * Pipeline, one iteration per GPS sample once the correlation window is full:
 *   1. difference GPS velocity over n samples -> GPS acceleration, tagged at
 *      the centre of the differencing interval
 *   2. linearly resample it onto the forward-acceleration grid
 *   3. pass both series through the same zero-phase smoother
 *   4. per NED axis, normalized cross-correlation peak -> delay observation
 *   5. fuse the three observations with the gain-fusion filter
 *
 * Also here: the FIR whitening filters, the per-sensor delay vector that
 * compensates their group delays, and the Lagrange fractional delay line
 * used to align the IMU stream with the delayed GPS.
 */

#include "gpsimu/mathcore.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

namespace gpsimu {

class CalibrationError : public std::runtime_error {
 public:
  explicit CalibrationError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// GPS acceleration, resampling, smoothing
// ---------------------------------------------------------------------------

struct DifferencedSeries {
  std::vector<Vec3> values;  // values[j] pairs input samples j and j + n
  double group_delay = 0.0;  // n * dt / 2
};

/// a_k = (v_k - v_{k-n}) / (n dt).
[[nodiscard]] inline DifferencedSeries gps_accel_difference(std::span<const Vec3> velocity, int n,
                                                            double dt) {
  if (n < 1 || !(n * dt > 0.0)) throw ConfigError("gps_accel_difference: n * dt must be positive");
  if (velocity.size() < static_cast<std::size_t>(n) + 1) {
    throw ConfigError("gps_accel_difference: need at least n + 1 samples");
  }
  DifferencedSeries out;
  out.group_delay = 0.5 * n * dt;
  out.values.reserve(velocity.size() - n);
  for (std::size_t k = n; k < velocity.size(); ++k) {
    out.values.push_back((velocity[k] - velocity[k - n]) / (n * dt));
  }
  return out;
}

/// Linear interpolation of (times, values) at each grid time; values beyond
/// either end are held.
template <typename T>
[[nodiscard]] std::vector<T> resample_linear(std::span<const double> times, std::span<const T> values,
                                             std::span<const double> grid) {
  if (times.empty() || times.size() != values.size()) {
    throw ConfigError("resample_linear: empty or mismatched input");
  }
  std::vector<T> out;
  out.reserve(grid.size());
  std::size_t j = 0;
  for (double t : grid) {
    if (t <= times.front()) {
      out.push_back(values.front());
      continue;
    }
    if (t >= times.back()) {
      out.push_back(values.back());
      continue;
    }
    while (j + 1 < times.size() && times[j + 1] < t) ++j;
    while (j > 0 && times[j] > t) --j;
    const double u = (t - times[j]) / (times[j + 1] - times[j]);
    out.push_back(values[j] + (values[j + 1] - values[j]) * u);
  }
  return out;
}

/// Hann-shaped smoothing kernel normalized to unit DC gain.
[[nodiscard]] inline std::vector<double> make_smoothing_kernel(int ntaps) {
  if (ntaps < 1 || ntaps % 2 == 0) throw ConfigError("smoothing kernel length must be odd");
  std::vector<double> k(ntaps);
  double sum = 0.0;
  for (int i = 0; i < ntaps; ++i) {
    k[i] = std::sin(kPi * (i + 1) / (ntaps + 1));
    k[i] *= k[i];
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Centred (zero-phase) convolution. Near the edges the kernel is truncated
/// and renormalized so a constant input stays constant.
[[nodiscard]] inline std::vector<double> smooth(std::span<const double> x, std::span<const double> kernel) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto half = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  std::vector<double> y(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      const std::ptrdiff_t j = i + k;
      if (j < 0 || j >= n) continue;
      const double w = kernel[static_cast<std::size_t>(k + half)];
      acc += w * x[j];
      wsum += w;
    }
    y[i] = wsum > 0.0 ? acc / wsum : 0.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Cross-correlation delay observation
// ---------------------------------------------------------------------------

enum class Axis { North = 0, East = 1, Down = 2 };

struct DelayObservation {
  Axis axis = Axis::North;
  double z = 0.0;       // s, positive when GPS lags the forward acceleration
  double peak = 0.0;    // normalized correlation at the peak
  double energy = 0.0;  // smaller mean square of the two series, (m/s^2)^2
  bool valid = false;
};

struct XcorrConfig {
  double max_shift = 1.0;            // s
  double peak_threshold = 0.6;
  double energy_threshold = 0.25;    // (m/s^2)^2
};

/// Normalized correlation of fwd shifted by `lag` samples against gps over
/// their overlap: sum fwd[k - lag] gps[k] / (|fwd| |gps|).
[[nodiscard]] inline double normalized_correlation(std::span<const double> fwd,
                                                   std::span<const double> gps, std::ptrdiff_t lag) {
  const auto n = static_cast<std::ptrdiff_t>(std::min(fwd.size(), gps.size()));
  const std::ptrdiff_t k0 = std::max<std::ptrdiff_t>(0, lag);
  const std::ptrdiff_t k1 = std::min<std::ptrdiff_t>(n, n + lag);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::ptrdiff_t k = k0; k < k1; ++k) {
    const double a = fwd[k - lag], b = gps[k];
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Parabolic vertex offset in [-0.5, 0.5] through (-1, ym), (0, y0), (1, yp).
[[nodiscard]] inline double parabolic_offset(double ym, double y0, double yp) {
  const double den = ym - 2.0 * y0 + yp;
  if (den >= 0.0) return 0.0;  // not a maximum
  return std::clamp(0.5 * (ym - yp) / den, -0.5, 0.5);
}

[[nodiscard]] inline double mean_square(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

[[nodiscard]] inline DelayObservation xcorr_delay(std::span<const double> fwd, std::span<const double> gps,
                                                  double dt, Axis axis = Axis::North,
                                                  const XcorrConfig& cfg = {}) {
  if (fwd.size() != gps.size()) throw ConfigError("xcorr_delay: series lengths differ");
  if (!(dt > 0.0)) throw ConfigError("xcorr_delay: dt must be positive");
  DelayObservation obs;
  obs.axis = axis;
  const auto n = static_cast<std::ptrdiff_t>(fwd.size());
  if (n < 3) return obs;
  obs.energy = std::min(mean_square(fwd), mean_square(gps));
  if (obs.energy <= 0.0) return obs;

  const auto max_lag = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(cfg.max_shift / dt + 1e-9)),
                                                n - 2);
  std::vector<double> r(static_cast<std::size_t>(2 * max_lag + 1));
  for (std::ptrdiff_t lag = -max_lag; lag <= max_lag; ++lag) {
    r[static_cast<std::size_t>(lag + max_lag)] = normalized_correlation(fwd, gps, lag);
  }
  const auto best = static_cast<std::ptrdiff_t>(std::max_element(r.begin(), r.end()) - r.begin());
  double offset = 0.0;
  if (best > 0 && best + 1 < static_cast<std::ptrdiff_t>(r.size())) {
    offset = parabolic_offset(r[best - 1], r[best], r[best + 1]);
  }
  obs.peak = r[static_cast<std::size_t>(best)];
  obs.z = (static_cast<double>(best - max_lag) + offset) * dt;
  obs.valid = obs.peak >= cfg.peak_threshold && obs.energy >= cfg.energy_threshold;
  return obs;
}

/// Wide-window scan of the vertical acceleration of a calibration record.
/// Both series are mean-removed first (accelerometer bias shows up as DC).
[[nodiscard]] inline double offline_calibrate(std::span<const double> imu_accel_down,
                                              std::span<const double> gps_accel_down, double dt,
                                              double max_shift = 6.0, double min_peak = 0.5) {
  if (imu_accel_down.size() != gps_accel_down.size() || imu_accel_down.size() < 3) {
    throw ConfigError("offline_calibrate: series must have equal length >= 3");
  }
  auto centred = [](std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    std::vector<double> y(x.begin(), x.end());
    for (double& v : y) v -= m;
    return y;
  };
  const auto a = centred(imu_accel_down);
  const auto b = centred(gps_accel_down);
  XcorrConfig cfg;
  cfg.max_shift = max_shift;
  cfg.peak_threshold = min_peak;
  cfg.energy_threshold = 0.0;
  const DelayObservation obs = xcorr_delay(a, b, dt, Axis::Down, cfg);
  if (!obs.valid) {
    throw CalibrationError("offline_calibrate: no significant correlation peak (peak " +
                           std::to_string(obs.peak) + "); record again with more vertical motion");
  }
  return obs.z;
}

// ---------------------------------------------------------------------------
// Gain fusion of the three axis observations
// ---------------------------------------------------------------------------

struct GfaConfig {
  double process_noise = 2.5e-3;                 // s^2 per iteration
  std::array<double, 3> obs_noise{2.25, 2.25, 2.25};  // s^2
  double gamma = 1.0 / 3.0;
  int fused = 3;                                 // number of local filters
  double max_step = 1.0;                         // s per iteration
};

struct GfaState {
  double tau = 0.0;  // s
  double P = 0.05;   // s^2
};

/// One reset / local update / global fusion cycle. F, G and H are scalar
/// identities, so each local gain is gamma P / (P + gamma R_i).
[[nodiscard]] inline GfaState gfa_step(const GfaState& s, const std::array<DelayObservation, 3>& obs,
                                       const GfaConfig& cfg = {}) {
  const double tau_bar = s.tau;
  const double p_bar = s.P + cfg.process_noise;
  // sum_i tau_i - (fused - 1) tau_bar, accumulated as corrections so that
  // an all-invalid step returns tau_bar exactly.
  double correction = 0.0;
  double kh_sum = 0.0;
  double krk_sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double r = cfg.obs_noise[i];
    const double k = cfg.gamma * p_bar / (p_bar + cfg.gamma * r);
    const double v = obs[i].valid ? 1.0 : 0.0;
    correction += v * k * (obs[i].z - tau_bar);
    kh_sum += v * k;
    krk_sum += v * k * r * k;
  }
  GfaState out;
  out.tau = tau_bar + correction + (3 - cfg.fused) * tau_bar;
  out.tau = std::clamp(out.tau, tau_bar - cfg.max_step, tau_bar + cfg.max_step);
  const double i_f = 1.0 - kh_sum;
  out.P = i_f * p_bar * i_f + krk_sum;
  return out;
}

// ---------------------------------------------------------------------------
// Whitening filters and delay compensation
// ---------------------------------------------------------------------------

/// Linear-phase low-pass FIR (Hamming-windowed sinc), unit DC gain.
[[nodiscard]] inline std::vector<double> design_lowpass_fir(int ntaps, double cutoff_hz, double sample_rate) {
  if (ntaps < 1 || ntaps % 2 == 0) throw ConfigError("design_lowpass_fir: ntaps must be odd");
  if (ntaps == 1) return {1.0};
  if (!(cutoff_hz > 0.0) || cutoff_hz >= 0.5 * sample_rate) {
    throw ConfigError("design_lowpass_fir: cutoff must be in (0, fs/2)");
  }
  const double fc = cutoff_hz / sample_rate;
  const int m = ntaps - 1;
  std::vector<double> h(ntaps);
  double sum = 0.0;
  for (int i = 0; i < ntaps; ++i) {
    const double x = i - 0.5 * m;
    const double sinc = x == 0.0 ? 2.0 * fc : std::sin(2.0 * kPi * fc * x) / (kPi * x);
    const double w = 0.54 - 0.46 * std::cos(2.0 * kPi * i / m);
    h[i] = sinc * w;
    sum += h[i];
  }
  for (double& v : h) v /= sum;
  return h;
}

/// Group delay of a symmetric FIR, in seconds.
[[nodiscard]] inline double fir_group_delay(std::size_t ntaps, double dt) {
  return 0.5 * static_cast<double>(ntaps - 1) * dt;
}

struct WhitenSpec {
  std::vector<double> accel_taps{1.0};
  std::vector<double> gyro_taps{1.0};
  double dt = 0.001;

  [[nodiscard]] double accel_delay() const { return fir_group_delay(accel_taps.size(), dt); }
  [[nodiscard]] double gyro_delay() const { return fir_group_delay(gyro_taps.size(), dt); }

  [[nodiscard]] static WhitenSpec design(int accel_ntaps, double accel_cutoff, int gyro_ntaps,
                                         double gyro_cutoff, double sample_rate) {
    return {design_lowpass_fir(accel_ntaps, accel_cutoff, sample_rate),
            design_lowpass_fir(gyro_ntaps, gyro_cutoff, sample_rate), 1.0 / sample_rate};
  }
};

/// Causal FIR convolution with zero initial state.
template <typename T>
[[nodiscard]] std::vector<T> whiten(std::span<const T> x, std::span<const double> taps) {
  if (taps.empty()) throw ConfigError("whiten: empty taps");
  std::vector<T> y;
  y.reserve(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    T acc = x[n] * 0.0;
    for (std::size_t k = 0; k < taps.size() && k <= n; ++k) acc += x[n - k] * taps[k];
    y.push_back(acc);
  }
  return y;
}

/// Streaming FIR; the history is primed with the first input.
template <typename T>
class FirFilter {
 public:
  explicit FirFilter(std::vector<double> taps) : taps_(std::move(taps)) {
    if (taps_.empty()) throw ConfigError("FirFilter: empty taps");
  }

  T push(const T& x) {
    if (hist_.empty()) hist_.assign(taps_.size(), x);
    hist_[head_] = x;
    T acc = x * 0.0;
    std::size_t j = head_;
    for (double h : taps_) {
      acc += hist_[j] * h;
      j = j == 0 ? hist_.size() - 1 : j - 1;
    }
    head_ = (head_ + 1) % hist_.size();
    return acc;
  }

 private:
  std::vector<double> taps_;
  std::vector<T> hist_;
  std::size_t head_ = 0;
};

struct DelayVector {
  double accel = 0.0;
  double gyro = 0.0;
  double mag = 0.0;
  bool clamped = false;  // some entry would have been negative
};

/// Delays applied to the whitened accelerometer, whitened gyro and raw
/// magnetometer so that all three end up tau_f + D_f behind real time.
[[nodiscard]] inline DelayVector delay_vector(double tau_f, const WhitenSpec& spec) {
  if (!std::isfinite(tau_f)) throw NumericError("delay_vector: non-finite delay");
  const double df = spec.accel_delay();
  const double dw = spec.gyro_delay();
  DelayVector d{tau_f, tau_f + df - dw, tau_f + df, false};
  for (double* v : {&d.accel, &d.gyro, &d.mag}) {
    if (*v < 0.0) {
      *v = 0.0;
      d.clamped = true;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Fractional delay by Lagrange interpolation
// ---------------------------------------------------------------------------

namespace detail {

/// Lagrange weights for evaluating at `x` from nodes first, first+1, ...
template <std::size_t Count>
std::array<double, Count> lagrange_weights(double x, double first) {
  std::array<double, Count> w{};
  for (std::size_t j = 0; j < Count; ++j) {
    double num = 1.0, den = 1.0;
    const double xj = first + static_cast<double>(j);
    for (std::size_t m = 0; m < Count; ++m) {
      if (m == j) continue;
      const double xm = first + static_cast<double>(m);
      num *= x - xm;
      den *= xj - xm;
    }
    w[j] = num / den;
  }
  return w;
}

}  // namespace detail

/// Ring buffer of equally spaced samples that returns the series at
/// (newest time - delay) by Lagrange interpolation of order `Order`.
template <typename T, std::size_t Order = 3>
class FractionalDelayLine {
 public:
  static constexpr std::size_t kNodes = Order + 1;

  FractionalDelayLine(std::size_t capacity, double dt) : buf_(std::max(capacity, kNodes)), dt_(dt) {
    if (!(dt > 0.0)) throw ConfigError("FractionalDelayLine: dt must be positive");
  }

  void push(const T& x) {
    buf_[head_] = x;
    head_ = (head_ + 1) % buf_.size();
    count_ = std::min(count_ + 1, buf_.size());
  }

  /// Fill the whole history with one value (start-up at rest).
  void prime(const T& x) {
    for (std::size_t i = 0; i < buf_.size(); ++i) push(x);
  }

  /// Sample `back` steps before the newest (0 = newest).
  [[nodiscard]] const T& back(std::size_t b) const {
    if (b >= count_) throw ConfigError("FractionalDelayLine: index beyond history");
    return buf_[(head_ + buf_.size() - 1 - b) % buf_.size()];
  }

  /// Longest delay that can be served with a full interpolation stencil.
  [[nodiscard]] double max_delay() const {
    return count_ < kNodes ? 0.0 : static_cast<double>(count_ - 1 - (kNodes - 1) / 2 - 1) * dt_;
  }

  [[nodiscard]] T at_delay(double delay) const {
    if (!(delay >= 0.0)) throw ConfigError("FractionalDelayLine: negative delay");
    if (count_ < kNodes) throw ConfigError("FractionalDelayLine: not enough samples");
    const double p = delay / dt_;
    const double fl = std::floor(p);
    const auto ip = static_cast<std::size_t>(fl);
    if (p - fl == 0.0) {
      if (ip >= count_) throw ConfigError("FractionalDelayLine: delay exceeds buffered span");
      return back(ip);
    }
    // Stencil centred on the target, shifted back when it would need
    // samples newer than the newest.
    std::ptrdiff_t first = static_cast<std::ptrdiff_t>(ip) - static_cast<std::ptrdiff_t>((Order - 1) / 2);
    first = std::max<std::ptrdiff_t>(first, 0);
    const auto last = static_cast<std::size_t>(first) + Order;
    if (last >= count_) throw ConfigError("FractionalDelayLine: delay exceeds buffered span");
    const auto w = detail::lagrange_weights<kNodes>(p, static_cast<double>(first));
    T acc = back(static_cast<std::size_t>(first)) * w[0];
    for (std::size_t j = 1; j < kNodes; ++j) acc += back(static_cast<std::size_t>(first) + j) * w[j];
    return acc;
  }

  [[nodiscard]] std::size_t size() const { return count_; }
  [[nodiscard]] double dt() const { return dt_; }

 private:
  std::vector<T> buf_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  double dt_;
};

/// Value of an equally spaced series at (last sample time - delay).
template <typename T, std::size_t Order = 3>
[[nodiscard]] T fractional_delay(std::span<const T> series, double dt, double delay) {
  FractionalDelayLine<T, Order> line(series.size(), dt);
  for (const T& x : series) line.push(x);
  return line.at_delay(delay);
}

// ---------------------------------------------------------------------------
// The online loop
// ---------------------------------------------------------------------------

/// Single published value; readers always get a complete copy.
template <typename T>
class Published {
 public:
  explicit Published(T initial = {}) : value_(std::move(initial)) {}
  void store(const T& v) {
    std::lock_guard lock(mu_);
    value_ = v;
  }
  [[nodiscard]] T load() const {
    std::lock_guard lock(mu_);
    return value_;
  }

 private:
  mutable std::mutex mu_;
  T value_;
};

struct SyncConfig {
  double grid_dt = 0.01;   // forward-acceleration working period, s
  double window = 5.0;     // correlation buffer length, s
  int diff_samples = 3;    // GPS velocity differencing span
  int smoothing_taps = 21;
  XcorrConfig xcorr;
  GfaConfig gfa;
  double initial_P = 0.05;
};

struct SyncTraceRow {
  double t = 0.0;
  std::array<DelayObservation, 3> obs{};
  double tau = 0.0;
  double P = 0.0;
};

class TimeSyncLoop {
 public:
  TimeSyncLoop(const SyncConfig& cfg, double initial_tau)
      : cfg_(cfg), kernel_(make_smoothing_kernel(cfg.smoothing_taps)) {
    if (!(cfg.grid_dt > 0.0) || !(cfg.window > 0.0) || cfg.diff_samples < 1) {
      throw ConfigError("SyncConfig: invalid grid, window or differencing span");
    }
    gfa_ = {initial_tau, cfg.initial_P};
    published_.store(gfa_);
  }

  /// Forward acceleration on the working grid, in time order.
  void add_forward_accel(double t, const Vec3& a) {
    fwd_.push_back({t, a});
    trim();
  }

  /// New GPS velocity; returns the trace row when a fusion step ran.
  std::optional<SyncTraceRow> add_gps(double t, const Vec3& velocity, double gps_period) {
    if (!vel_.empty() && t - vel_.back().t > 1.5 * gps_period) {
      // Outage: the differencing and correlation history restart.
      vel_.clear();
      acc_.clear();
    }
    vel_.push_back({t, velocity});
    const auto n = static_cast<std::size_t>(cfg_.diff_samples);
    if (vel_.size() > n) {
      const auto& newest = vel_.back();
      const auto& oldest = vel_[vel_.size() - 1 - n];
      acc_.push_back({0.5 * (newest.t + oldest.t), (newest.v - oldest.v) / (newest.t - oldest.t)});
      while (vel_.size() > n + 1) vel_.pop_front();
    }
    trim();
    return iterate(t);
  }

  [[nodiscard]] GfaState estimate() const { return published_.load(); }
  [[nodiscard]] const SyncConfig& config() const { return cfg_; }

 private:
  struct TimedVec {
    double t;
    Vec3 v;
  };

  std::optional<SyncTraceRow> iterate(double now) {
    if (acc_.size() < 2 || fwd_.empty()) return std::nullopt;
    const double t_end = acc_.back().t;
    const double t_start = t_end - cfg_.window;
    if (acc_.front().t > t_start) return std::nullopt;

    std::vector<double> grid;
    std::vector<Vec3> fwd;
    for (const auto& s : fwd_) {
      if (s.t > t_start && s.t <= t_end) {
        grid.push_back(s.t);
        fwd.push_back(s.v);
      }
    }
    const auto expected = static_cast<std::size_t>(std::floor(cfg_.window / cfg_.grid_dt));
    if (grid.empty() || grid.size() + 2 < expected || grid.front() > t_start + 1.5 * cfg_.grid_dt) {
      return std::nullopt;
    }
    std::vector<double> at;
    std::vector<Vec3> av;
    for (const auto& s : acc_) {
      at.push_back(s.t);
      av.push_back(s.v);
    }
    const auto gps = resample_linear<Vec3>(at, av, grid);

    SyncTraceRow row;
    row.t = now;
    std::vector<double> xf(grid.size()), xg(grid.size());
    for (int axis = 0; axis < 3; ++axis) {
      for (std::size_t k = 0; k < grid.size(); ++k) {
        xf[k] = fwd[k](axis);
        xg[k] = gps[k](axis);
      }
      const auto sf = smooth(xf, kernel_);
      const auto sg = smooth(xg, kernel_);
      row.obs[axis] = xcorr_delay(sf, sg, cfg_.grid_dt, static_cast<Axis>(axis), cfg_.xcorr);
    }
    gfa_ = gfa_step(gfa_, row.obs, cfg_.gfa);
    published_.store(gfa_);
    row.tau = gfa_.tau;
    row.P = gfa_.P;
    return row;
  }

  void trim() {
    const double keep = cfg_.window + 2.0 * cfg_.xcorr.max_shift + 1.0;
    const double newest = std::max(fwd_.empty() ? -1e300 : fwd_.back().t, acc_.empty() ? -1e300 : acc_.back().t);
    while (!fwd_.empty() && fwd_.front().t < newest - keep) fwd_.pop_front();
    while (!acc_.empty() && acc_.front().t < newest - keep) acc_.pop_front();
  }

  SyncConfig cfg_;
  std::vector<double> kernel_;
  std::deque<TimedVec> fwd_;
  std::deque<TimedVec> vel_;
  std::deque<TimedVec> acc_;
  GfaState gfa_;
  Published<GfaState> published_;
};

}  // namespace gpsimu
