// gpsimu: simulate, run and compare the GPS/IMU estimators from the shell.

#include "gpsimu/gpsimu.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

using namespace gpsimu;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string method = "proposed";
  std::string out_dir;
  bool trace = false;
  bool json_out = false;
};

RunConfig load(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) c.scenario.seed = *g.seed;
  return c;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << j.dump(2) << "\n";
}

void emit(const Globals& g, const json& j, const std::string& table) {
  if (g.json_out) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << table;
  }
}

void write_run_outputs(const Globals& g, const ScenarioRun& run, const SensorLog& log) {
  if (g.out_dir.empty()) return;
  std::filesystem::create_directories(g.out_dir);
  write_json(g.out_dir + "/report.json", to_json(run.report));
  write_plot_csv(g.out_dir + "/plot.csv", run.result, truth_view(log));
  if (g.trace) {
    write_estimates_csv(g.out_dir + "/estimates.csv", run.result);
    if (!run.result.sync_trace.empty()) write_sync_trace_csv(g.out_dir + "/sync_trace.csv", run.result);
  }
}

int cmd_simulate(const Globals& g) {
  if (g.out_dir.empty()) throw ConfigError("simulate: --out-dir is required");
  const RunConfig c = load(g);
  const SensorLog log = simulate(c.scenario);
  write_log(g.out_dir, c, log);
  const json j{{"out_dir", g.out_dir},
               {"imu_samples", log.imu.samples.size()},
               {"gps_samples", log.gps.size()},
               {"gyro_bias", detail::vec(log.imu.gyro_bias)},
               {"accel_bias", detail::vec(log.imu.accel_bias)}};
  emit(g, j, "wrote " + std::to_string(log.imu.samples.size()) + " IMU and " + std::to_string(log.gps.size()) +
                 " GPS samples to " + g.out_dir + "\n");
  return 0;
}

int cmd_run(const Globals& g) {
  const RunConfig c = load(g);
  const Method m = parse_method(g.method);
  const SensorLog log = simulate(c.scenario);
  const double tau0 = m == Method::Ekf ? kNaN : resolve_initial_delay(c.scenario, c.pipeline);
  const ScenarioRun run = run_on_log(log, m, c.pipeline, tau0);
  write_run_outputs(g, run, log);
  emit(g, to_json(run.report), format_table({run.report}));
  return 0;
}

int cmd_compare(const Globals& g, const std::vector<std::string>& methods, std::vector<std::uint64_t> seeds) {
  const RunConfig c = load(g);
  std::vector<Method> ms;
  for (const auto& s : methods) ms.push_back(parse_method(s));
  if (seeds.empty()) seeds = {c.scenario.seed};
  const auto rows = compare(c, ms, seeds);
  const json j = to_json(rows);
  if (!g.out_dir.empty()) {
    std::filesystem::create_directories(g.out_dir);
    write_json(g.out_dir + "/compare.json", j);
  }
  std::string table;
  char line[256];
  std::snprintf(line, sizeof line, "%-9s %17s %17s %17s %17s %17s %17s\n", "method", "roll_deg", "pitch_deg",
                "yaw_deg", "vel_mps", "pos_m", "delay_s");
  table += line;
  for (const auto& r : rows) {
    auto cell = [](const MetricSummary& s) {
      char b[32];
      std::snprintf(b, sizeof b, "%8.4f+-%-7.4f", s.mean, s.stddev);
      return std::string(b);
    };
    std::snprintf(line, sizeof line, "%-9s %17s %17s %17s %17s %17s %17s\n", r.method.c_str(), cell(r.roll).c_str(),
                  cell(r.pitch).c_str(), cell(r.yaw).c_str(), cell(r.velocity).c_str(), cell(r.position).c_str(),
                  cell(r.delay).c_str());
    table += line;
  }
  emit(g, j, table);
  return 0;
}

int cmd_sweep(const Globals& g, const std::vector<double>& additions) {
  const RunConfig c = load(g);
  const auto rows = sweep_delay(c, additions);
  const json j = to_json(rows);
  if (!g.out_dir.empty()) {
    std::filesystem::create_directories(g.out_dir);
    write_json(g.out_dir + "/sweep.json", j);
  }
  std::string table = "addition_s  proposed_delta_s  aekf_delta_s\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%10.3f  %16.4f  %12.4f\n", r.addition, r.proposed_delta, r.aekf_delta);
    table += line;
  }
  emit(g, j, table);
  return 0;
}

int cmd_calibrate(const Globals& g, const std::string& log_dir) {
  double tau = 0.0;
  if (log_dir.empty()) {
    const RunConfig c = load(g);
    tau = calibrate_from_record(sensor_data(simulate(calibration_scenario(c.scenario))), c.pipeline);
  } else {
    const RunConfig c = !g.config.empty()                                  ? load(g)
                        : std::filesystem::exists(log_dir + "/scenario.cfg") ? load_config(log_dir + "/scenario.cfg")
                                                                             : RunConfig{};
    SensorData rec{c.scenario, read_imu_csv(log_dir + "/imu.csv").rows, read_gps_csv(log_dir + "/gps.csv").rows};
    tau = calibrate_from_record(rec, c.pipeline);
  }
  char line[64];
  std::snprintf(line, sizeof line, "initial delay %.4f s\n", tau);
  emit(g, json{{"initial_delay_s", tau}}, line);
  return 0;
}

int cmd_replay(const Globals& g, const std::string& log_dir) {
  std::optional<RunConfig> cfg;
  if (!g.config.empty()) cfg = load(g);
  const ReplayOutput out = replay(log_dir, parse_method(g.method), cfg);
  json j{{"stats", to_json(out.stats)},
         {"skipped_imu_rows", out.skipped_imu_rows},
         {"skipped_gps_rows", out.skipped_gps_rows},
         {"gps_outages", detail::spans(out.result.gps_outages)}};
  if (out.report) j["report"] = to_json(*out.report);
  if (!g.out_dir.empty()) {
    std::filesystem::create_directories(g.out_dir);
    write_json(g.out_dir + "/replay.json", j);
    if (g.trace) {
      write_estimates_csv(g.out_dir + "/estimates.csv", out.result);
      if (!out.result.sync_trace.empty()) write_sync_trace_csv(g.out_dir + "/sync_trace.csv", out.result);
    }
  }
  std::string table = out.report ? format_table({*out.report}) : std::string();
  char line[160];
  std::snprintf(line, sizeof line, "gps updates %zu, mean delay %.4f s, skipped rows imu %zu gps %zu, outages %zu\n",
                out.stats.gps_updates, out.stats.mean_delay, out.skipped_imu_rows, out.skipped_gps_rows,
                out.result.gps_outages.size());
  emit(g, j, table + line);
  return 0;
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GPS/IMU fusion with online time-delay estimation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Config file (key = value)");
  app.add_option("--seed", g.seed, "Override the scenario seed");
  app.add_option("--method", g.method, "ekf, aekf or proposed")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for reports and CSV output");
  app.add_flag("--trace", g.trace, "Also write estimate and delay traces");
  app.add_flag("--json", g.json_out, "Print JSON instead of a table");

  auto* simulate_cmd = app.add_subcommand("simulate", "Write a simulated sensor log");
  auto* run_cmd = app.add_subcommand("run", "Run one method on a simulated scenario");
  auto* compare_cmd = app.add_subcommand("compare", "Paired runs over several seeds");
  std::vector<std::string> methods{"ekf", "aekf", "proposed"};
  std::vector<std::uint64_t> seeds;
  compare_cmd->add_option("--methods", methods, "Methods to compare")->delimiter(',')->capture_default_str();
  compare_cmd->add_option("--seeds", seeds, "Seeds (comma separated)")->delimiter(',');
  auto* sweep_cmd = app.add_subcommand("sweep-delay", "Delay recovery for extra GPS latency");
  std::vector<double> additions{0.0, 0.1, 0.2, 0.3};
  sweep_cmd->add_option("--additions", additions, "Extra delays, s")->delimiter(',')->capture_default_str();
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Offline initial-delay calibration");
  std::string log_dir;
  calibrate_cmd->add_option("log", log_dir, "Log directory (default: simulate a calibration record)");
  auto* replay_cmd = app.add_subcommand("replay", "Run a method over a recorded log");
  std::string replay_dir;
  replay_cmd->add_option("log", replay_dir, "Log directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*simulate_cmd) return cmd_simulate(g);
    if (*run_cmd) return cmd_run(g);
    if (*compare_cmd) return cmd_compare(g, methods, seeds);
    if (*sweep_cmd) return cmd_sweep(g, additions);
    if (*calibrate_cmd) return cmd_calibrate(g, log_dir);
    if (*replay_cmd) return cmd_replay(g, replay_dir);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const IoError& e) {
    return fail("io", e.what(), 3);
  } catch (const CalibrationError& e) {
    return fail("calibration", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
