#pragma once

/**
 * @file sensor_io.hpp
 * @brief CSV streams in the simulator's column layout.
 *
 *   imu.csv    t, wx, wy, wz, fx, fy, fz, mx, my, mz
 *   gps.csv    t, rn, re, rd, vn, ve, vd
 *   truth.csv  t, q0, q1, q2, q3, rn, re, rd, vn, ve, vd
 *   bias.csv   bwx, bwy, bwz, bfx, bfy, bfz   (one row; rad/s and g)
 *
 * Values are written with 17 significant digits so a write/read cycle is
 * exact. Readers skip the header and count malformed rows.
 */

#include "gpsimu/simulator.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace gpsimu {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

template <typename T>
struct CsvRead {
  std::vector<T> rows;
  std::size_t skipped = 0;  // malformed rows
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_write(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "w"));
  if (!f) throw IoError("cannot write '" + path + "'");
  return f;
}

inline void write_row(std::FILE* f, std::initializer_list<double> values) {
  bool first = true;
  for (double v : values) {
    std::fprintf(f, first ? "%.17g" : ",%.17g", v);
    first = false;
  }
  std::fputc('\n', f);
}

/// Splits a comma-separated row into exactly `n` finite numbers.
inline bool parse_row(const std::string& line, std::size_t n, std::vector<double>& out) {
  out.clear();
  const char* p = line.data();
  const char* end = p + line.size();
  while (end > p && (end[-1] == '\r' || end[-1] == ' ')) --end;
  while (p <= end) {
    while (p < end && *p == ' ') ++p;
    double v = 0.0;
    auto [q, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || !std::isfinite(v)) return false;
    out.push_back(v);
    while (q < end && *q == ' ') ++q;
    if (q == end) break;
    if (*q != ',') return false;
    p = q + 1;
  }
  return out.size() == n;
}

template <typename T, typename Make>
CsvRead<T> read_csv(const std::string& path, std::size_t ncols, Make make) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  CsvRead<T> out;
  std::string line;
  std::vector<double> v;
  bool first = true;
  while (std::getline(in, line)) {
    const bool header = first && !line.empty() && std::isalpha(static_cast<unsigned char>(line[0]));
    first = false;
    if (header || line.empty()) continue;
    if (!parse_row(line, ncols, v)) {
      ++out.skipped;
      continue;
    }
    out.rows.push_back(make(v));
  }
  return out;
}

}  // namespace detail

inline void write_imu_csv(const std::string& path, const std::vector<ImuSample>& samples) {
  auto f = detail::open_write(path);
  std::fputs("t,wx,wy,wz,fx,fy,fz,mx,my,mz\n", f.get());
  for (const auto& s : samples) {
    detail::write_row(f.get(), {s.t, s.gyro.x(), s.gyro.y(), s.gyro.z(), s.accel.x(), s.accel.y(),
                                s.accel.z(), s.mag.x(), s.mag.y(), s.mag.z()});
  }
}

inline void write_gps_csv(const std::string& path, const std::vector<GpsSample>& samples) {
  auto f = detail::open_write(path);
  std::fputs("t,rn,re,rd,vn,ve,vd\n", f.get());
  for (const auto& s : samples) {
    detail::write_row(f.get(), {s.t, s.position.x(), s.position.y(), s.position.z(), s.velocity.x(),
                                s.velocity.y(), s.velocity.z()});
  }
}

inline void write_truth_csv(const std::string& path, const std::vector<TruthSample>& samples) {
  auto f = detail::open_write(path);
  std::fputs("t,q0,q1,q2,q3,rn,re,rd,vn,ve,vd\n", f.get());
  for (const auto& s : samples) {
    const Quaternion& q = s.attitude;
    detail::write_row(f.get(), {s.t, q.q0, q.q1, q.q2, q.q3, s.position.x(), s.position.y(),
                                s.position.z(), s.velocity.x(), s.velocity.y(), s.velocity.z()});
  }
}

inline void write_bias_csv(const std::string& path, const Vec3& gyro_bias, const Vec3& accel_bias) {
  auto f = detail::open_write(path);
  std::fputs("bwx,bwy,bwz,bfx,bfy,bfz\n", f.get());
  detail::write_row(f.get(), {gyro_bias.x(), gyro_bias.y(), gyro_bias.z(), accel_bias.x(),
                              accel_bias.y(), accel_bias.z()});
}

[[nodiscard]] inline CsvRead<ImuSample> read_imu_csv(const std::string& path) {
  return detail::read_csv<ImuSample>(path, 10, [](const std::vector<double>& v) {
    return ImuSample{v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}, {v[7], v[8], v[9]}};
  });
}

[[nodiscard]] inline CsvRead<GpsSample> read_gps_csv(const std::string& path) {
  return detail::read_csv<GpsSample>(path, 7, [](const std::vector<double>& v) {
    return GpsSample{v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}};
  });
}

[[nodiscard]] inline CsvRead<TruthSample> read_truth_csv(const std::string& path) {
  return detail::read_csv<TruthSample>(path, 11, [](const std::vector<double>& v) {
    TruthSample s;
    s.t = v[0];
    s.attitude = {v[1], v[2], v[3], v[4]};
    s.position = {v[5], v[6], v[7]};
    s.velocity = {v[8], v[9], v[10]};
    return s;
  });
}

/// Returns false when the file holds no valid row.
[[nodiscard]] inline bool read_bias_csv(const std::string& path, Vec3& gyro_bias, Vec3& accel_bias) {
  const auto r = detail::read_csv<std::vector<double>>(path, 6, [](const std::vector<double>& v) { return v; });
  if (r.rows.empty()) return false;
  const auto& v = r.rows.front();
  gyro_bias = {v[0], v[1], v[2]};
  accel_bias = {v[3], v[4], v[5]};
  return true;
}

}  // namespace gpsimu
