// trsmooth: trajectory-reconstruction benchmark and smoothing CLI.
//
// Subcommands: simulate, smooth, bench, pif, imq-compare. Exit codes:
// 0 success, 1 configuration error, 2 runtime failure.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "trsmooth/bench.hpp"
#include "trsmooth/config.hpp"
#include "trsmooth/csv.hpp"
#include "trsmooth/pif.hpp"
#include "trsmooth/simulator.hpp"
#include "trsmooth/vb.hpp"

namespace fs = std::filesystem;
using namespace trsmooth;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "scenario config (JSON)");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--seed", flags.seed, "override the config seed");
  cmd->add_option("--runs", flags.runs, "override the Monte Carlo run count");
  cmd->add_option("--methods", flags.methods,
                  "comma- or space-separated methods (plain ideal asor asor-imq sor ror)")
      ->delimiter(',');
}

ScenarioConfig resolve_config(const CommonFlags& flags) {
  ScenarioConfig config;
  if (!flags.config_path.empty()) {
    config = load_config(flags.config_path);
  }
  if (flags.seed) {
    config.seed = *flags.seed;
  }
  if (flags.runs) {
    config.runs = *flags.runs;
  }
  if (!flags.methods.empty()) {
    config.methods.clear();
    for (const std::string& name : flags.methods) {
      config.methods.push_back(parse_method(name));
    }
  }
  if (!flags.out_dir.empty()) {
    config.out_dir = flags.out_dir;
  }
  config.validate();
  return config;
}

// ---------------------------------------------------------------------------
// Generic dataset directory (simulate <-> smooth --data)
// ---------------------------------------------------------------------------

void write_dataset(const std::string& dir, const ScenarioConfig& config,
                   const ScenarioData& data) {
  fs::create_directories(dir);
  save_config(config, (fs::path(dir) / "scenario.json").string());
  const MeasurementSet& meas = data.sim.measurements;
  {
    auto out = csv::open_out((fs::path(dir) / "sensors.csv").string());
    out << "index,kind,x_m,y_m,noise_variance,z_offset\n";
    for (int i = 0; i < meas.sensors.size(); ++i) {
      const Sensor& s = meas.sensors.sensors[i];
      out << i << ',' << (s.kind == SensorKind::Range ? "range" : "bearing") << ','
          << csv::fmt(s.position.x()) << ',' << csv::fmt(s.position.y()) << ','
          << csv::fmt(s.noise_variance) << ',' << csv::fmt(s.z_offset) << '\n';
    }
  }
  {
    auto out = csv::open_out((fs::path(dir) / "measurements.csv").string());
    out << 't';
    for (int i = 0; i < meas.sensor_count(); ++i) {
      out << ",y_" << i;
    }
    out << '\n';
    for (int k = 0; k < meas.steps(); ++k) {
      out << meas.times[k];
      for (int i = 0; i < meas.sensor_count(); ++i) {
        out << ',';
        if (meas.mask(k, i)) {
          out << csv::fmt(meas.values(k, i));
        }
      }
      out << '\n';
    }
  }
  {
    auto out = csv::open_out((fs::path(dir) / "truth.csv").string());
    out << "t,x_m,y_m\n";
    for (int k = 0; k < meas.steps(); ++k) {
      const Vec& x = data.states[k + 1];
      out << meas.times[k] << ',' << csv::fmt(x[config.pos_x_index()]) << ','
          << csv::fmt(x[config.pos_y_index()]) << '\n';
    }
  }
  {
    auto out = csv::open_out((fs::path(dir) / "outliers.csv").string());
    out << "t,sensor,magnitude\n";
    for (int k = 0; k < meas.steps(); ++k) {
      for (int i = 0; i < meas.sensor_count(); ++i) {
        if (data.sim.outliers.mask(k, i)) {
          out << meas.times[k] << ',' << i << ','
              << csv::fmt(data.sim.outliers.magnitudes(k, i)) << '\n';
        }
      }
    }
  }
}

struct LoadedDataset {
  MeasurementSet meas;
  std::vector<Vec> truth;  // 2D positions when available
  bool has_truth = false;
  BoolMatrix outlier_mask;  // empty when unavailable
};

LoadedDataset load_dataset(const std::string& dir) {
  LoadedDataset data;
  SensorSuite& suite = data.meas.sensors;
  {
    const std::string path = (fs::path(dir) / "sensors.csv").string();
    auto in = csv::open_in(path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line_no == 1) {
        continue;
      }
      const auto f = csv::split_line(line);
      const std::string context = path + ":" + std::to_string(line_no);
      if (f.size() != 6) {
        throw std::runtime_error(context + ": expected 6 fields");
      }
      Sensor s;
      s.kind = f[1] == "range" ? SensorKind::Range : SensorKind::Bearing;
      s.position = {csv::parse_double(f[2], context), csv::parse_double(f[3], context)};
      s.noise_variance = csv::parse_double(f[4], context);
      s.z_offset = csv::parse_double(f[5], context);
      suite.sensors.push_back(s);
    }
  }
  const int m = suite.size();
  {
    const std::string path = (fs::path(dir) / "measurements.csv").string();
    auto in = csv::open_in(path);
    std::string line;
    int line_no = 0;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line_no == 1) {
        continue;
      }
      rows.push_back(csv::split_line(line));
      if (static_cast<int>(rows.back().size()) != m + 1) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": expected " + std::to_string(m + 1) + " fields");
      }
    }
    const int t_steps = static_cast<int>(rows.size());
    data.meas.values = Mat::Zero(t_steps, m);
    data.meas.mask = BoolMatrix::Constant(t_steps, m, false);
    for (int k = 0; k < t_steps; ++k) {
      data.meas.times.push_back(
          static_cast<int>(csv::parse_long(rows[k][0], "measurements.csv t")));
      for (int i = 0; i < m; ++i) {
        if (!rows[k][i + 1].empty()) {
          data.meas.values(k, i) = csv::parse_double(rows[k][i + 1], "measurements.csv");
          data.meas.mask(k, i) = true;
        }
      }
    }
  }
  const std::string truth_path = (fs::path(dir) / "truth.csv").string();
  if (fs::exists(truth_path)) {
    auto in = csv::open_in(truth_path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line_no == 1) {
        continue;
      }
      const auto f = csv::split_line(line);
      Vec p(2);
      p << csv::parse_double(f[1], truth_path), csv::parse_double(f[2], truth_path);
      data.truth.push_back(p);
    }
    data.has_truth = static_cast<int>(data.truth.size()) == data.meas.steps();
  }
  const std::string outlier_path = (fs::path(dir) / "outliers.csv").string();
  if (fs::exists(outlier_path)) {
    data.outlier_mask = BoolMatrix::Constant(data.meas.steps(), m, false);
    std::map<int, int> step_of_time;
    for (int k = 0; k < data.meas.steps(); ++k) {
      step_of_time[data.meas.times[k]] = k;
    }
    auto in = csv::open_in(outlier_path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line_no == 1) {
        continue;
      }
      const auto f = csv::split_line(line);
      const int t = static_cast<int>(csv::parse_long(f[0], outlier_path));
      const int i = static_cast<int>(csv::parse_long(f[1], outlier_path));
      data.outlier_mask(step_of_time.at(t), i) = true;
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Synthetic range-only localization dataset in the UWB interchange format:
/// 11 anchors, the 4 nearest visible per step, body-shadowing NLoS biasing
/// the nearest anchor while an on/off obstruction (stationary rate
/// 4 * lambda, ~12-step episodes) is engaged. lambda is the resulting
/// fraction of biased readings, saturating at 0.25 (one per visible quad).
void simulate_uwb(const ScenarioConfig& config, const std::string& dir) {
  SensorSuite anchors;
  anchors.pos_x_index = 0;
  anchors.pos_y_index = 1;
  std::vector<int> ids;
  const double ax[] = {0, 6, 12, 0, 12, 0, 6, 12, 3, 9, 6};
  const double ay[] = {0, 0, 0, 5, 5, 10, 10, 10, 5, 5, 5};
  for (int i = 0; i < 11; ++i) {
    Sensor s;
    s.kind = SensorKind::Range;
    s.position = {ax[i], ay[i]};
    s.z_offset = 2.5;
    s.noise_variance = kUwbRangeVariance;
    anchors.sensors.push_back(s);
    ids.push_back(i + 1);
  }
  std::mt19937_64 rng = detail::make_rng(config.seed, 3, 0);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> bias(2.0, 5.0);
  const double stationary = std::min(1.0, 4.0 * config.lambda);
  const double p_off = 1.0 / 12.0;
  const double p_on = stationary >= 1.0
                          ? 1.0
                          : p_off * stationary / (1.0 - stationary);
  bool shadowed = u01(rng) < stationary;

  MeasurementSet meas;
  meas.sensors = anchors;
  meas.values = Mat::Zero(config.t_steps, 11);
  meas.mask = BoolMatrix::Constant(config.t_steps, 11, false);
  std::vector<Vec> truth;
  Vec x(2);
  x << 6.0, 5.0;
  for (int k = 0; k < config.t_steps; ++k) {
    x[0] += std::sqrt(config.rw_q) * unit(rng);
    x[1] += std::sqrt(config.rw_q) * unit(rng);
    truth.push_back(x);
    meas.times.push_back(k);
    shadowed = shadowed ? (u01(rng) >= p_off) : (u01(rng) < p_on);
    std::vector<std::pair<double, int>> dist;
    for (int i = 0; i < 11; ++i) {
      dist.push_back(
          {(Eigen::Vector2d(x[0], x[1]) - anchors.sensors[i].position).norm(), i});
    }
    std::sort(dist.begin(), dist.end());
    for (int v = 0; v < 4; ++v) {
      const int i = dist[v].second;
      double r = anchors.measure_one(x, i) + std::sqrt(kUwbRangeVariance) * unit(rng);
      if (shadowed && v == 0) {
        r += bias(rng);
      }
      meas.values(k, i) = r;
      meas.mask(k, i) = true;
    }
  }
  save_uwb_csv(dir, meas, ids, truth);
  std::printf("wrote UWB dataset (%d steps, 11 anchors) to %s\n", config.t_steps,
              dir.c_str());
}

int cmd_simulate(const CommonFlags& flags, bool uwb) {
  const ScenarioConfig config = resolve_config(flags);
  if (uwb) {
    simulate_uwb(config, config.out_dir);
    return 0;
  }
  if (config.model != ModelKind::CoordinatedTurn) {
    throw ConfigError("simulate: use --uwb for range-only random-walk datasets");
  }
  const ScenarioData data = make_scenario_data(config, 0, 0);
  write_dataset(config.out_dir, config, data);
  std::printf("wrote dataset (T=%d, m=%d, lambda=%g) to %s\n", config.t_steps, config.m,
              config.lambda, config.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// smooth
// ---------------------------------------------------------------------------

int cmd_smooth(const CommonFlags& flags, const std::string& data_dir,
               const std::string& uwb_ranges, const std::string& iter_log_path) {
  ScenarioConfig config;
  if (!flags.config_path.empty()) {
    config = load_config(flags.config_path);
  } else if (!data_dir.empty() && fs::exists(fs::path(data_dir) / "scenario.json")) {
    config = load_config((fs::path(data_dir) / "scenario.json").string());
  }
  if (!flags.methods.empty()) {
    config.methods.clear();
    for (const std::string& name : flags.methods) {
      config.methods.push_back(parse_method(name));
    }
  }
  if (!flags.out_dir.empty()) {
    config.out_dir = flags.out_dir;
  }

  MeasurementSet meas;
  std::vector<Vec> truth;
  bool has_truth = false;
  BoolMatrix outlier_mask;
  DynamicsModel model;
  GaussianBeliefd x0;
  int px = 0, py = 1;

  if (!uwb_ranges.empty()) {
    const UwbDataset data = load_uwb_csv(uwb_ranges);
    meas = data.measurements;
    truth = data.truth;
    has_truth = data.has_truth;
    model = random_walk_model(config.rw_q, 2, config.dt);
    Vec mean = Vec::Zero(2);
    if (has_truth && !truth.empty()) {
      mean = truth.front();
    } else {
      for (const Sensor& s : meas.sensors.sensors) {
        mean += Vec(s.position);
      }
      mean /= std::max(1, meas.sensors.size());
    }
    x0 = {mean, config.vartheta * model.process_noise};
  } else if (!data_dir.empty()) {
    LoadedDataset data = load_dataset(data_dir);
    meas = std::move(data.meas);
    truth = std::move(data.truth);
    has_truth = data.has_truth;
    outlier_mask = std::move(data.outlier_mask);
    meas.sensors.pos_x_index = config.pos_x_index();
    meas.sensors.pos_y_index = config.pos_y_index();
    model = config.make_model();
    x0 = {config.x0_mean(), config.x0_cov()};
    px = config.pos_x_index();
    py = config.pos_y_index();
  } else {
    throw ConfigError("smooth: need --data <dir> or --uwb <ranges.csv>");
  }

  fs::create_directories(config.out_dir);
  std::ofstream iter_log;
  if (!iter_log_path.empty()) {
    iter_log.open(iter_log_path);
    iter_log << "method,iteration,max_state_delta,mean_b_hat,omega_below_half\n";
  }

  nlohmann::json summary;
  for (Method method : config.methods) {
    if (method == Method::Ideal && outlier_mask.size() == 0) {
      std::fprintf(stderr, "skipping ideal: no outlier ground truth in this dataset\n");
      continue;
    }
    SmootherOptions opts = config.smoother_options();
    if (iter_log.is_open()) {
      opts.on_iteration = [&](const VbIterationDiag& d) {
        iter_log << method_name(method) << ',' << d.iteration << ','
                 << csv::fmt(d.max_state_delta) << ',' << csv::fmt(d.mean_b_hat) << ','
                 << csv::fmt(d.omega_below_half) << '\n';
      };
    }
    const SmootherRun run = run_method(method, model, meas.sensors, meas, x0, config.hp,
                                       opts, &outlier_mask);
    const std::string est_path =
        (fs::path(config.out_dir) / ("estimates_" + std::string(method_name(method)) +
                                     ".csv")).string();
    auto out = csv::open_out(est_path);
    out << "t,x_m,y_m\n";
    for (int k = 0; k < meas.steps(); ++k) {
      const Vec& mean = run.trace.steps[k].smoothed.mean;
      out << meas.times[k] << ',' << csv::fmt(mean[px]) << ',' << csv::fmt(mean[py])
          << '\n';
    }
    nlohmann::json entry;
    entry["iterations"] = run.iterations;
    entry["pd_repairs"] = run.pd_repairs;
    if (has_truth) {
      // truth rows are 2-D positions; project the state estimates first.
      std::vector<Vec> est_pos;
      est_pos.reserve(meas.steps());
      for (int k = 0; k < meas.steps(); ++k) {
        Vec p(2);
        p << run.trace.steps[k].smoothed.mean[px], run.trace.steps[k].smoothed.mean[py];
        est_pos.push_back(p);
      }
      entry["rmse"] = rmse(est_pos, truth, 0, 1);
    }
    summary[method_name(method)] = entry;
    std::printf("%-9s iterations=%d%s\n", method_name(method), run.iterations,
                has_truth
                    ? (" rmse=" + std::to_string(entry["rmse"].get<double>())).c_str()
                    : "");
  }
  auto out = csv::open_out((fs::path(config.out_dir) / "smooth_summary.json").string());
  out << summary.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

int cmd_bench(const CommonFlags& flags, const std::string& sweep,
              std::vector<double> lambdas, std::vector<int> sensor_counts) {
  ScenarioConfig config = resolve_config(flags);
  fs::create_directories(config.out_dir);

  if (sweep == "none") {
    const MonteCarloOutput mc = run_monte_carlo(config);
    emit_reports(mc, config.out_dir, config.pos_x_index(), config.pos_y_index());
    for (const auto& [method, agg] : aggregate_results(mc.results)) {
      std::printf("%-9s mean_rmse=%.4f std=%.4f diverged=%d mean_time=%.3fs\n",
                  method_name(method), agg.mean_rmse, agg.std_rmse,
                  agg.divergence_count, agg.mean_time_s);
    }
    return 0;
  }
  if (sweep == "lambda") {
    if (lambdas.empty()) {
      lambdas = {0.2, 0.4, 0.5, 0.6};
    }
    for (double lambda : lambdas) {
      ScenarioConfig point = config;
      point.lambda = lambda;
      const MonteCarloOutput mc = run_monte_carlo(point);
      const std::string dir =
          (fs::path(config.out_dir) / ("lambda_" + csv::fmt_compact(lambda))).string();
      emit_reports(mc, dir, point.pos_x_index(), point.pos_y_index());
      std::printf("lambda=%g:\n", lambda);
      for (const auto& [method, agg] : aggregate_results(mc.results)) {
        std::printf("  %-9s mean_rmse=%.4f diverged=%d\n", method_name(method),
                    agg.mean_rmse, agg.divergence_count);
      }
    }
    return 0;
  }
  if (sweep == "sensors") {
    if (sensor_counts.empty()) {
      sensor_counts = {50, 100, 150, 200};
    }
    for (int m : sensor_counts) {
      ScenarioConfig point = config;
      point.m = m;
      const MonteCarloOutput mc = run_monte_carlo(point);
      const std::string dir =
          (fs::path(config.out_dir) / ("m_" + std::to_string(m))).string();
      emit_reports(mc, dir, point.pos_x_index(), point.pos_y_index());
      std::printf("m=%d:\n", m);
      for (const auto& [method, agg] : aggregate_results(mc.results)) {
        std::printf("  %-9s mean_rmse=%.4f diverged=%d\n", method_name(method),
                    agg.mean_rmse, agg.divergence_count);
      }
    }
    return 0;
  }
  if (sweep == "timing") {
    if (sensor_counts.empty()) {
      sensor_counts = {50, 100, 150, 200};
    }
    const TimingSweepResult result = timing_sweep(config, sensor_counts);
    auto out = csv::open_out((fs::path(config.out_dir) / "timing.csv").string());
    out << "method,m,seconds\n";
    for (const TimingCell& cell : result.cells) {
      out << method_name(cell.method) << ',' << cell.m << ',' << csv::fmt(cell.seconds)
          << '\n';
      std::printf("%-5s m=%-4d %.4fs\n", method_name(cell.method), cell.m, cell.seconds);
    }
    std::printf("asor log-log slope=%.3f r2=%.4f\n", result.asor_slope, result.asor_r2);
    return 0;
  }
  throw ConfigError("bench: unknown --sweep '" + sweep + "'");
}

// ---------------------------------------------------------------------------
// pif
// ---------------------------------------------------------------------------

int cmd_pif(const CommonFlags& flags, std::vector<double> scales) {
  ScenarioConfig config = resolve_config(flags);
  if (scales.empty()) {
    scales = {std::sqrt(10.0), std::sqrt(100.0), std::sqrt(1000.0), std::sqrt(10000.0)};
  }
  std::vector<Method> methods;
  for (Method m : config.methods) {
    if (m != Method::Ideal) {
      methods.push_back(m);
    }
  }
  if (methods.empty()) {
    throw ConfigError("pif: no applicable methods (ideal has no PIF)");
  }
  const auto reports = pif_sweep(config, scales, config.runs, methods);
  fs::create_directories(config.out_dir);
  save_pif_csv(reports, (fs::path(config.out_dir) / "pif.csv").string());
  nlohmann::json summary;
  for (Method m : methods) {
    for (double s : scales) {
      nlohmann::json cell;
      cell["median"] = pif_median(reports, m, s);
      cell["max"] = pif_max(reports, m, s);
      summary[method_name(m)][csv::fmt_compact(s)] = cell;
      std::printf("%-9s sigma=%-8.4g median=%.4g max=%.4g\n", method_name(m), s,
                  pif_median(reports, m, s), pif_max(reports, m, s));
    }
  }
  auto out = csv::open_out((fs::path(config.out_dir) / "pif_summary.json").string());
  out << summary.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// imq-compare
// ---------------------------------------------------------------------------

int cmd_imq_compare(const CommonFlags& flags, std::vector<double> lambdas) {
  ScenarioConfig config = resolve_config(flags);
  if (lambdas.empty()) {
    lambdas = {0.2, 0.4, 0.5, 0.6};
  }
  config.methods = {Method::Asor, Method::AsorImq};
  fs::create_directories(config.out_dir);
  nlohmann::json summary;
  for (double lambda : lambdas) {
    ScenarioConfig point = config;
    point.lambda = lambda;
    const MonteCarloOutput mc = run_monte_carlo(point);
    const std::string dir =
        (fs::path(config.out_dir) / ("lambda_" + csv::fmt_compact(lambda))).string();
    emit_reports(mc, dir, point.pos_x_index(), point.pos_y_index());
    const auto agg = aggregate_results(mc.results);
    const double asor = agg.at(Method::Asor).mean_rmse;
    const double imq = agg.at(Method::AsorImq).mean_rmse;
    nlohmann::json entry;
    entry["asor_mean_rmse"] = asor;
    entry["asor_imq_mean_rmse"] = imq;
    entry["ratio"] = imq / asor;
    entry["asor_divergences"] = agg.at(Method::Asor).divergence_count;
    entry["asor_imq_divergences"] = agg.at(Method::AsorImq).divergence_count;
    summary[csv::fmt_compact(lambda)] = entry;
    std::printf("lambda=%g: asor=%.4f asor-imq=%.4f ratio=%.3f\n", lambda, asor, imq,
                imq / asor);
  }
  auto out = csv::open_out((fs::path(config.out_dir) / "imq_summary.json").string());
  out << summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"outlier-robust trajectory reconstruction toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;
  flags.out_dir = "";

  bool sim_uwb = false;
  CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
  add_common(simulate, flags);
  simulate->add_flag("--uwb", sim_uwb, "emit a range-only dataset in the UWB format");

  std::string data_dir, uwb_ranges, iter_log;
  CLI::App* smooth = app.add_subcommand("smooth", "run smoothers on a dataset");
  add_common(smooth, flags);
  smooth->add_option("--data", data_dir, "dataset directory from 'simulate'");
  smooth->add_option("--uwb", uwb_ranges, "path to a UWB ranges.csv");
  smooth->add_option("--iter-log", iter_log, "stream per-iteration diagnostics to a file");

  std::string sweep = "none";
  std::vector<double> lambdas;
  std::vector<int> sensor_counts;
  CLI::App* bench = app.add_subcommand("bench", "Monte Carlo benchmarks");
  add_common(bench, flags);
  bench->add_option("--sweep", sweep, "none | lambda | sensors | timing");
  bench->add_option("--lambdas", lambdas, "lambda sweep points")->delimiter(',');
  bench->add_option("--sensor-counts", sensor_counts, "sensor sweep points")
      ->delimiter(',');

  std::vector<double> scales;
  CLI::App* pif_cmd = app.add_subcommand("pif", "posterior influence sweep");
  add_common(pif_cmd, flags);
  pif_cmd->add_option("--scales", scales, "corruption scales")->delimiter(',');

  std::vector<double> imq_lambdas;
  CLI::App* imq = app.add_subcommand("imq-compare", "ASOR vs ASOR-IMQ comparison");
  add_common(imq, flags);
  imq->add_option("--lambdas", imq_lambdas, "lambda comparison points")->delimiter(',');

  try {
    app.parse(argc, argv);
    if (flags.out_dir.empty()) {
      flags.out_dir = "out";
    }
    if (simulate->parsed()) {
      return cmd_simulate(flags, sim_uwb);
    }
    if (smooth->parsed()) {
      return cmd_smooth(flags, data_dir, uwb_ranges, iter_log);
    }
    if (bench->parsed()) {
      return cmd_bench(flags, sweep, lambdas, sensor_counts);
    }
    if (pif_cmd->parsed()) {
      return cmd_pif(flags, scales);
    }
    if (imq->parsed()) {
      return cmd_imq_compare(flags, imq_lambdas);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
