#include "gpsimu/ekf16.hpp"
#include "gpsimu/sensor_io.hpp"
#include "gpsimu/simulator.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

using namespace gpsimu;

namespace {

ScenarioConfig noiseless(ScenarioConfig c = {}) {
  c.gyro_noise_var = c.accel_noise_var = c.mag_noise_var = 0.0;
  c.gps_pos_var = c.gps_vel_var = 0.0;
  c.max_gyro_bias = c.max_accel_bias = 0.0;
  return c;
}

double peak_accel(const std::vector<TruthSample>& truth) {
  double peak = 0.0;
  for (const auto& s : truth) peak = std::max(peak, s.acceleration.norm());
  return peak;
}

}  // namespace

TEST(Trajectory, HoverIsStatic) {
  ScenarioConfig c;
  c.dynamics = 0.0;
  c.duration = 10.0;
  const auto truth = generate_trajectory(c);
  for (const auto& s : truth) {
    EXPECT_EQ(s.position, Vec3::Zero());
    EXPECT_EQ(s.velocity, Vec3::Zero());
    EXPECT_EQ(s.angular_rate, Vec3::Zero());
    EXPECT_NEAR(std::abs(quat_to_euler(s.attitude).roll), 0.0, 1e-12);
  }
}

TEST(Trajectory, NegativeDynamicsRejected) {
  ScenarioConfig c;
  c.dynamics = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW((void)generate_trajectory(c), ConfigError);
}

TEST(Trajectory, PeakAccelerationMatchesLowDynamics) {
  ScenarioConfig c;
  c.dynamics = 19.61;
  const double peak = peak_accel(generate_trajectory(c));
  EXPECT_GE(peak, 18.6);
  EXPECT_LE(peak, 20.6);
}

TEST(Trajectory, PeakAccelerationMatchesHighDynamics) {
  ScenarioConfig c;
  c.dynamics = 50.45;
  const double peak = peak_accel(generate_trajectory(c));
  EXPECT_GE(peak, 47.9);
  EXPECT_LE(peak, 53.0);
}

TEST(Trajectory, DerivativesAreConsistent) {
  const Trajectory traj(ScenarioConfig{});
  const double h = 1e-5;
  for (double t : {1.0, 3.3, 6.1, 17.0, 44.4}) {
    const auto a = traj.at(t - h), b = traj.at(t + h), s = traj.at(t);
    EXPECT_LT(((b.position - a.position) / (2 * h) - s.velocity).norm(), 1e-5) << t;
    EXPECT_LT(((b.velocity - a.velocity) / (2 * h) - s.acceleration).norm(), 1e-4) << t;
    // dq/dt = 1/2 q (0, w)
    const Vec4 dq = (b.attitude.vec() - a.attitude.vec()) / (2 * h);
    const Vec4 expect = 0.5 * quat_rate_matrix(s.attitude) * s.angular_rate;
    EXPECT_LT((dq - expect).norm(), 1e-6) << t;
  }
}

TEST(Trajectory, AttitudeChirpGrows) {
  const auto truth = generate_trajectory(ScenarioConfig{});
  double early = 0.0, late = 0.0;
  for (const auto& s : truth) {
    const double r = std::abs(quat_to_euler(s.attitude).roll);
    if (s.t > 8 && s.t < 20) early = std::max(early, r);
    if (s.t > 45) late = std::max(late, r);
  }
  EXPECT_GT(late, 2.0 * early);
}

TEST(SynthesizeImu, StaticZeroNoise) {
  ScenarioConfig c = noiseless();
  c.dynamics = 0.0;
  c.duration = 1.0;
  const auto log = simulate(c);
  for (const auto& m : log.imu.samples) {
    EXPECT_LT((m.accel - Vec3(0, 0, -1)).norm(), 1e-15);
    EXPECT_LT(m.gyro.norm(), 1e-15);
  }
}

TEST(SynthesizeImu, GyroNoiseVarianceMatchesConfig) {
  ScenarioConfig c;
  c.dynamics = 0.0;
  c.duration = 100.0;
  c.max_gyro_bias = 0.0;
  const auto log = simulate(c);
  double s = 0, s2 = 0;
  std::size_t n = 0;
  for (const auto& m : log.imu.samples) {
    s += m.gyro.x();
    s2 += m.gyro.x() * m.gyro.x();
    ++n;
  }
  const double var = s2 / n - (s / n) * (s / n);
  EXPECT_GE(n, 100000u);
  EXPECT_NEAR(var, 0.0017, 0.05 * 0.0017);
}

TEST(SynthesizeImu, BiasesRespectLimits) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    ScenarioConfig c;
    c.seed = seed;
    c.duration = 0.01;
    c.gps_delay = 0.0;
    const auto log = simulate(c);
    EXPECT_LE(log.imu.accel_bias.cwiseAbs().maxCoeff(), 0.1);
    EXPECT_LE(log.imu.gyro_bias.cwiseAbs().maxCoeff(), 0.01);
  }
}

TEST(SynthesizeImu, NoiseIsWhite) {
  ScenarioConfig c;
  c.dynamics = 0.0;
  c.duration = 20.0;
  c.max_gyro_bias = c.max_accel_bias = 0.0;
  const auto log = simulate(c);
  const auto& s = log.imu.samples;
  const double n = static_cast<double>(s.size());
  for (int lag : {1, 2, 5, 17}) {
    double r0 = 0, r = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      r0 += s[k].gyro.y() * s[k].gyro.y();
      if (k >= static_cast<std::size_t>(lag)) r += s[k].gyro.y() * s[k - lag].gyro.y();
    }
    EXPECT_LT(std::abs(r / r0), 3.0 / std::sqrt(n)) << lag;
  }
}

TEST(SynthesizeGps, ZeroDelayZeroNoiseEqualsTruth) {
  ScenarioConfig c = noiseless();
  c.gps_delay = 0.0;
  const auto log = simulate(c);
  const std::size_t step = c.imu_per_gps();
  ASSERT_EQ(log.gps.size(), log.truth.size() / step + 1);
  for (std::size_t j = 0; j < log.gps.size(); ++j) {
    const auto& t = log.truth[j * step];
    EXPECT_NEAR(log.gps[j].t, t.t, 1e-12);
    EXPECT_LT((log.gps[j].position - t.position).norm(), 1e-9);
    EXPECT_LT((log.gps[j].velocity - t.velocity).norm(), 1e-9);
  }
}

TEST(SynthesizeGps, DelayedByTau) {
  ScenarioConfig c = noiseless();
  c.gps_delay = 0.2;
  const auto log = simulate(c);
  for (std::size_t j = 5; j < log.gps.size(); j += 37) {
    const std::size_t k = static_cast<std::size_t>(std::llround((log.gps[j].t - 0.2) * c.imu_rate));
    EXPECT_LT((log.gps[j].position - log.truth[k].position).norm(), 1e-9);
  }
  // A non-multiple of the GPS period works as well.
  c.gps_delay = 0.137;
  const Trajectory traj(c);
  const auto gps = synthesize_gps(traj, c);
  EXPECT_LT((gps[100].position - traj.at(gps[100].t - 0.137).position).norm(), 1e-12);
}

TEST(SynthesizeGps, DropoutWindowIsEmpty) {
  ScenarioConfig c;
  c.dropout_start = 20.0;
  c.dropout_end = 30.0;
  const auto log = simulate(c);
  for (const auto& g : log.gps) EXPECT_FALSE(g.t >= 20.0 && g.t < 30.0);
  ScenarioConfig full;
  EXPECT_EQ(simulate(full).gps.size() - log.gps.size(), 100u);
  // Samples outside the window are unaffected by it.
  const auto ref = simulate(full);
  EXPECT_EQ(log.gps.back().position, ref.gps.back().position);
}

TEST(SynthesizeGps, DelayBeyondLimitsRejected) {
  ScenarioConfig c;
  c.gps_delay = 0.7;
  EXPECT_THROW((void)simulate(c), ConfigError);
  c.max_sync_error = 100.0;
  c.duration = 0.5;
  EXPECT_THROW((void)simulate(c), ConfigError);
}

TEST(Simulate, SeededRunsAreBitwiseIdentical) {
  ScenarioConfig c;
  c.duration = 5.0;
  const auto a = simulate(c), b = simulate(c);
  ASSERT_EQ(a.imu.samples.size(), b.imu.samples.size());
  EXPECT_EQ(std::memcmp(a.imu.samples.data(), b.imu.samples.data(), a.imu.samples.size() * sizeof(ImuSample)), 0);
  ASSERT_EQ(a.gps.size(), b.gps.size());
  for (std::size_t i = 0; i < a.gps.size(); ++i) EXPECT_EQ(a.gps[i].position, b.gps[i].position);
  c.seed = 2;
  EXPECT_NE(simulate(c).imu.samples[10].gyro, a.imu.samples[10].gyro);
}

TEST(Simulate, StrapdownIntegrationRecoversTruth) {
  ScenarioConfig c = noiseless();
  c.duration = 20.0;
  const auto log = simulate(c);
  NavState x;
  x.q = log.truth[0].attitude;
  x.r = log.truth[0].position;
  x.v = log.truth[0].velocity;
  double worst_att = 0.0, worst_vel = 0.0;
  for (std::size_t k = 1; k < log.truth.size(); ++k) {
    x = predict(x, log.imu.samples[k], c.imu_period());
    const Quaternion& t = log.truth[k].attitude;
    const Quaternion d = quat_multiply(t.conjugate(), x.q);
    worst_att = std::max(worst_att, 2.0 * std::asin(std::min(1.0, d.vec().tail<3>().norm())));
    worst_vel = std::max(worst_vel, (x.v - log.truth[k].velocity).norm());
  }
  EXPECT_LT(worst_att, 1e-3);
  EXPECT_LT(worst_vel, 1e-2);
}

TEST(SensorIo, CsvRoundTripIsExact) {
  ScenarioConfig c;
  c.duration = 1.0;
  const auto log = simulate(c);
  const auto dir = std::filesystem::temp_directory_path() / "gpsimu_io_test";
  std::filesystem::create_directories(dir);
  write_imu_csv((dir / "imu.csv").string(), log.imu.samples);
  write_gps_csv((dir / "gps.csv").string(), log.gps);
  write_truth_csv((dir / "truth.csv").string(), log.truth);
  const auto imu = read_imu_csv((dir / "imu.csv").string());
  const auto gps = read_gps_csv((dir / "gps.csv").string());
  const auto truth = read_truth_csv((dir / "truth.csv").string());
  ASSERT_EQ(imu.rows.size(), log.imu.samples.size());
  EXPECT_EQ(imu.skipped, 0u);
  EXPECT_EQ(imu.rows[123].accel, log.imu.samples[123].accel);
  EXPECT_EQ(imu.rows[123].mag, log.imu.samples[123].mag);
  ASSERT_EQ(gps.rows.size(), log.gps.size());
  EXPECT_EQ(gps.rows[4].velocity, log.gps[4].velocity);
  EXPECT_EQ(truth.rows[77].attitude, log.truth[77].attitude);
  std::filesystem::remove_all(dir);
}

TEST(SensorIo, MalformedRowsAreCounted) {
  const auto path = (std::filesystem::temp_directory_path() / "gpsimu_bad.csv").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("t,rn,re,rd,vn,ve,vd\n0,1,2,3,4,5,6\n0.1,1,2,x,4,5,6\n0.2,1,2,3\n0.3,1,2,3,4,5,nan\n0.4,1,2,3,4,5,6\n", f);
    std::fclose(f);
  }
  const auto r = read_gps_csv(path);
  EXPECT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.skipped, 3u);
  std::filesystem::remove(path);
  EXPECT_THROW((void)read_gps_csv(path), IoError);
}
