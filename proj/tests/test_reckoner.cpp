#include "gpsimu/reckoner.hpp"
#include "gpsimu/simulator.hpp"

#include <gtest/gtest.h>

using namespace gpsimu;

namespace {

std::vector<ImuSample> constant_samples(double t0, int n, double dt, const Vec3& gyro, const Vec3& accel) {
  std::vector<ImuSample> s(n);
  for (int k = 0; k < n; ++k) {
    s[k].t = t0 + (k + 1) * dt;
    s[k].gyro = gyro;
    s[k].accel = accel;
  }
  return s;
}

ScenarioConfig noiseless(ScenarioConfig c = {}) {
  c.gyro_noise_var = c.accel_noise_var = c.mag_noise_var = 0.0;
  c.gps_pos_var = c.gps_vel_var = 0.0;
  c.max_gyro_bias = c.max_accel_bias = 0.0;
  return c;
}

NavState from_truth(const TruthSample& t) {
  NavState x;
  x.q = t.attitude;
  x.r = t.position;
  x.v = t.velocity;
  return x;
}

}  // namespace

TEST(ForwardReckon, ZeroSpanReturnsAnchor) {
  NavState x;
  x.r = Vec3(1, 2, 3);
  x.v = Vec3(4, 5, 6);
  const auto s = constant_samples(0.0, 10, 0.001, Vec3(0.1, 0, 0), Vec3(0, 0, -1));
  const ReckonResult r = forward_reckon(x, 0.005, s, 0.001, 0.005);
  EXPECT_EQ(r.state.r, x.r);
  EXPECT_EQ(r.state.v, x.v);
  EXPECT_EQ(r.state.q, x.q);
  EXPECT_TRUE(r.accel.empty());
  EXPECT_FALSE(r.stale);
}

TEST(ForwardReckon, ConstantRateRotation) {
  NavState x;
  const double rate = 1.0;
  const auto s = constant_samples(0.0, 300, 0.001, Vec3(0, 0, rate), Vec3(0, 0, -1));
  const ReckonResult r = forward_reckon(x, 0.0, s, 0.001, 0.3);
  const Quaternion expect = euler_to_quat({0.0, 0.0, 0.3 * rate});
  EXPECT_LT((r.state.q.vec() - expect.vec()).norm(), 1e-4);
  EXPECT_LT(r.state.v.norm(), 1e-9);
  EXPECT_NEAR(r.t, 0.3, 1e-12);
  EXPECT_EQ(r.accel.size(), 300u);
}

TEST(ForwardReckon, SplittingTheIntervalIsIdempotent) {
  ScenarioConfig c = noiseless();
  c.duration = 5.0;
  const auto log = simulate(c);
  const NavState x = from_truth(log.truth[1000]);
  const double t0 = log.truth[1000].t;
  const auto direct = forward_reckon(x, t0, log.imu.samples, c.imu_period(), t0 + 0.3);
  const auto half = forward_reckon(x, t0, log.imu.samples, c.imu_period(), t0 + 0.1);
  const auto rest = forward_reckon(half.state, half.t, log.imu.samples, c.imu_period(), t0 + 0.3);
  EXPECT_LT((direct.state.r - rest.state.r).norm(), 1e-12);
  EXPECT_LT((direct.state.v - rest.state.v).norm(), 1e-12);
  EXPECT_LT((direct.state.q.vec() - rest.state.q.vec()).norm(), 1e-12);
}

TEST(ForwardReckon, HoverForwardAccelerationIsZero) {
  ScenarioConfig c = noiseless();
  c.dynamics = 0.0;
  c.duration = 2.0;
  const auto log = simulate(c);
  const auto r = forward_reckon(from_truth(log.truth[0]), 0.0, log.imu.samples, c.imu_period(), 2.0);
  for (const auto& a : r.accel) ASSERT_LT(a.a.norm(), 1e-9) << a.t;
}

TEST(ForwardReckon, GapMarksStale) {
  auto s = constant_samples(0.0, 100, 0.001, Vec3::Zero(), Vec3(0, 0, -1));
  s.erase(s.begin() + 40, s.begin() + 60);
  const auto r = forward_reckon(NavState{}, 0.0, s, 0.001, 0.1);
  EXPECT_TRUE(r.stale);
  const auto early = forward_reckon(NavState{}, 0.0, s, 0.001, 0.03);
  EXPECT_FALSE(early.stale);
  // Running out of samples before t_end is stale as well.
  EXPECT_TRUE(forward_reckon(NavState{}, 0.0, s, 0.001, 0.2).stale);
}

TEST(ForwardReckon, RecoversTheTimelyStateFromADelayedAnchor) {
  ScenarioConfig c = noiseless();
  c.duration = 30.0;
  const auto log = simulate(c);
  for (std::size_t k = 5000; k < log.truth.size(); k += 3001) {
    const std::size_t lag = 200;  // 0.2 s
    const NavState anchor = from_truth(log.truth[k - lag]);
    const auto r = forward_reckon(anchor, log.truth[k - lag].t, log.imu.samples, c.imu_period(), log.truth[k].t);
    const double stage_one = (anchor.r - log.truth[k].position).norm();
    const double stage_two = (r.state.r - log.truth[k].position).norm();
    EXPECT_LT(stage_two, 5e-3) << k;  // first-order strapdown over 200 steps
    EXPECT_LT(stage_two, 0.01 * stage_one) << k;
  }
}

TEST(AccelDecimator, AveragesBlocks) {
  AccelDecimator d(4);
  std::vector<TimedAccel> out;
  for (int k = 0; k < 10; ++k) {
    if (auto a = d.push({0.001 * k, Vec3::Constant(k)})) out.push_back(*a);
  }
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].t, 0.0015, 1e-15);
  EXPECT_EQ(out[0].a, Vec3::Constant(1.5));
  EXPECT_EQ(out[1].a, Vec3::Constant(5.5));
  EXPECT_THROW(AccelDecimator(0), ConfigError);
}

TEST(Reckoner, StreamingMatchesBatch) {
  ScenarioConfig c = noiseless();
  c.duration = 3.0;
  const auto log = simulate(c);
  Reckoner rk(0.6, c.imu_period());
  EXPECT_FALSE(rk.push(log.imu.samples[0]).has_value());
  for (std::size_t k = 1; k <= 1500; ++k) rk.push(log.imu.samples[k]);
  EXPECT_LE(rk.buffered(), 602u);
  const std::size_t a = 1200;
  rk.reanchor(from_truth(log.truth[a]), log.truth[a].t);
  EXPECT_TRUE(rk.anchored());
  EXPECT_FALSE(rk.stale());
  EXPECT_NEAR(rk.time(), log.truth[1500].t, 1e-12);
  for (std::size_t k = 1501; k <= 2000; ++k) ASSERT_TRUE(rk.push(log.imu.samples[k]).has_value());
  const auto batch = forward_reckon(from_truth(log.truth[a]), log.truth[a].t, log.imu.samples, c.imu_period(),
                                    log.truth[2000].t);
  EXPECT_LT((rk.state().r - batch.state.r).norm(), 1e-12);
  EXPECT_LT((rk.state().q.vec() - batch.state.q.vec()).norm(), 1e-12);
  // An anchor older than the buffer cannot be re-integrated faithfully.
  rk.reanchor(from_truth(log.truth[100]), log.truth[100].t);
  EXPECT_TRUE(rk.stale());
}
