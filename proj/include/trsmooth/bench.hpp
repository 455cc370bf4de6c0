#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "trsmooth/config.hpp"
#include "trsmooth/csv.hpp"
#include "trsmooth/simulator.hpp"
#include "trsmooth/vb.hpp"

namespace trsmooth {

namespace detail {

/// Deterministic per-run generator: the master seed plus a stream tag and the
/// run index, independent of scheduling.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t stream, std::uint32_t run) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), stream, run};
  return std::mt19937_64(seq);
}

/// Ordered parallel map: func(i) for i in [0, n), results collected by index.
/// The first worker exception is rethrown after all threads join.
template <typename Func>
void parallel_for(int n, Func&& func) {
  const unsigned hw = std::thread::hardware_concurrency();
  const int workers = std::max(1, std::min<int>(hw == 0 ? 1 : hw, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) {
      func(i);
    }
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          func(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) {
            error = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

}  // namespace detail

/// Position RMSE over the trajectory: sqrt(mean_k ||pos(est_k) - pos(truth_k)||^2).
inline double rmse(const std::vector<Vec>& estimates, const std::vector<Vec>& truth,
                   int px, int py) {
  if (estimates.size() != truth.size()) {
    throw std::invalid_argument("rmse: estimate/truth length mismatch");
  }
  if (estimates.empty()) {
    return 0.0;
  }
  double acc = 0.0;
  for (size_t k = 0; k < estimates.size(); ++k) {
    const double dx = estimates[k][px] - truth[k][px];
    const double dy = estimates[k][py] - truth[k][py];
    acc += dx * dx + dy * dy;
  }
  return std::sqrt(acc / static_cast<double>(estimates.size()));
}

struct RunResult {
  Method method = Method::Plain;
  int run = 0;
  double rmse = 0.0;
  double wall_time_s = 0.0;
  int iterations = 0;
  bool diverged = false;
};

/// One Monte Carlo replicate: sampled trajectory, contaminated measurements
/// and the estimator's prior. truth[1..T] aligns with the measurement steps.
struct ScenarioData {
  std::vector<Vec> states;
  SimulatedMeasurements sim;
  GaussianBeliefd x0;
};

inline ScenarioData make_scenario_data(const ScenarioConfig& config, std::uint32_t stream,
                                       int run) {
  const DynamicsModel model = config.make_model();
  const SensorSuite suite = config.model == ModelKind::CoordinatedTurn
                                ? build_sensor_grid(config.m)
                                : SensorSuite{};
  if (config.model != ModelKind::CoordinatedTurn) {
    throw ConfigError("make_scenario_data: only the coordinated-turn scenario is synthesized here");
  }
  std::mt19937_64 rng = detail::make_rng(config.seed, stream, static_cast<std::uint32_t>(run));
  ScenarioData data;
  data.states = simulate_trajectory(model, config.x0_mean(), config.x0_cov(),
                                    config.t_steps, rng);
  data.sim = simulate_measurements(data.states, suite, config.lambda,
                                   config.sigma_factor, rng);
  data.x0 = {config.x0_mean(), config.x0_cov()};
  return data;
}

struct MonteCarloOutput {
  std::vector<RunResult> results;  // ordered by (run, configured method)
  // Trajectory capture of run 0 for plotting.
  std::vector<int> times0;
  std::vector<Vec> truth0;
  std::vector<std::pair<Method, std::vector<Vec>>> estimates0;
};

/// Run every configured method on `runs` shared per-run datasets. Divergent
/// runs are recorded, not dropped.
inline MonteCarloOutput run_monte_carlo(const ScenarioConfig& config) {
  config.validate();
  const DynamicsModel model = config.make_model();
  const int n_methods = static_cast<int>(config.methods.size());

  MonteCarloOutput out;
  out.results.resize(static_cast<size_t>(config.runs) * n_methods);
  out.estimates0.resize(n_methods);

  detail::parallel_for(config.runs, [&](int run) {
    const ScenarioData data = make_scenario_data(config, 0, run);
    const SensorSuite& suite = data.sim.measurements.sensors;
    const std::vector<Vec> truth(data.states.begin() + 1, data.states.end());

    for (int mi = 0; mi < n_methods; ++mi) {
      const Method method = config.methods[mi];
      RunResult r;
      r.method = method;
      r.run = run;
      const auto start = std::chrono::steady_clock::now();
      try {
        const SmootherRun sr =
            run_method(method, model, suite, data.sim.measurements, data.x0, config.hp,
                       config.smoother_options(), &data.sim.outliers.mask);
        r.iterations = sr.iterations;
        const std::vector<Vec> means = sr.smoothed_means();
        r.rmse = rmse(means, truth, config.pos_x_index(), config.pos_y_index());
        if (!std::isfinite(r.rmse)) {
          r.diverged = true;
        }
        if (run == 0) {
          out.estimates0[mi] = {method, means};
        }
      } catch (const DivergenceError&) {
        r.diverged = true;
        r.rmse = std::numeric_limits<double>::quiet_NaN();
      }
      r.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out.results[static_cast<size_t>(run) * n_methods + mi] = r;
    }
    if (run == 0) {
      out.times0 = data.sim.measurements.times;
      out.truth0 = truth;
    }
  });
  return out;
}

struct MethodAggregate {
  int runs = 0;
  int divergence_count = 0;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
  double mean_time_s = 0.0;
};

/// Aggregate per method in result order; diverged runs are counted but
/// excluded from the means.
inline std::map<Method, MethodAggregate> aggregate_results(
    const std::vector<RunResult>& results) {
  std::map<Method, MethodAggregate> agg;
  for (const RunResult& r : results) {
    MethodAggregate& a = agg[r.method];
    ++a.runs;
    if (r.diverged) {
      ++a.divergence_count;
    } else {
      a.mean_rmse += r.rmse;
      a.mean_time_s += r.wall_time_s;
    }
  }
  for (auto& [method, a] : agg) {
    const int n = a.runs - a.divergence_count;
    if (n > 0) {
      a.mean_rmse /= n;
      a.mean_time_s /= n;
    }
  }
  for (auto& [method, a] : agg) {
    const int n = a.runs - a.divergence_count;
    if (n > 1) {
      double ss = 0.0;
      for (const RunResult& r : results) {
        if (r.method == method && !r.diverged) {
          ss += (r.rmse - a.mean_rmse) * (r.rmse - a.mean_rmse);
        }
      }
      a.std_rmse = std::sqrt(ss / (n - 1));
    }
  }
  return agg;
}

inline void write_runs_csv(const std::vector<RunResult>& results, const std::string& path) {
  auto out = csv::open_out(path);
  out << "method,run,rmse,iterations,diverged,wall_time_s\n";
  for (const RunResult& r : results) {
    out << method_name(r.method) << ',' << r.run << ','
        << (r.diverged ? "nan" : csv::fmt(r.rmse)) << ',' << r.iterations << ','
        << (r.diverged ? 1 : 0) << ',' << csv::fmt(r.wall_time_s) << '\n';
  }
}

inline void write_summary_json(const std::vector<RunResult>& results,
                               const std::string& path) {
  const auto agg = aggregate_results(results);
  nlohmann::json j;
  j["schema"] = "trsmooth-summary/1";
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& [method, a] : agg) {
    nlohmann::json entry;
    entry["runs"] = a.runs;
    entry["divergence_count"] = a.divergence_count;
    entry["mean_rmse"] = a.mean_rmse;
    entry["std_rmse"] = a.std_rmse;
    entry["mean_time_s"] = a.mean_time_s;
    methods[method_name(method)] = entry;
  }
  j["methods"] = methods;
  auto out = csv::open_out(path);
  out << j.dump(2) << '\n';
}

inline void write_trajectory_csv(const MonteCarloOutput& mc, const std::string& path,
                                 int px, int py) {
  auto out = csv::open_out(path);
  out << "t,truth_x,truth_y";
  for (const auto& [method, est] : mc.estimates0) {
    out << ',' << method_name(method) << "_x," << method_name(method) << "_y";
  }
  out << '\n';
  for (size_t k = 0; k < mc.truth0.size(); ++k) {
    out << mc.times0[k] << ',' << csv::fmt(mc.truth0[k][px]) << ','
        << csv::fmt(mc.truth0[k][py]);
    for (const auto& [method, est] : mc.estimates0) {
      if (k < est.size()) {
        out << ',' << csv::fmt(est[k][px]) << ',' << csv::fmt(est[k][py]);
      } else {
        out << ",nan,nan";
      }
    }
    out << '\n';
  }
}

/// Emit runs.csv and summary.json into out_dir.
inline void emit_reports(const std::vector<RunResult>& results, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec && !fs::exists(out_dir)) {
    throw std::runtime_error("emit_reports: cannot create '" + out_dir +
                             "': " + ec.message());
  }
  write_runs_csv(results, (fs::path(out_dir) / "runs.csv").string());
  write_summary_json(results, (fs::path(out_dir) / "summary.json").string());
}

/// Emit the full report set, including the run-0 trajectory for plotting.
inline void emit_reports(const MonteCarloOutput& mc, const std::string& out_dir, int px,
                         int py) {
  emit_reports(mc.results, out_dir);
  if (!mc.truth0.empty()) {
    write_trajectory_csv(mc, (std::filesystem::path(out_dir) / "trajectory_0.csv").string(),
                         px, py);
  }
}

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares fit of log(y) against log(x).
inline LogLogFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("fit_loglog: need >= 2 matching points");
  }
  const int n = static_cast<int>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    const double lx = std::log(xs[i]);
    const double ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    syy += ly * ly;
  }
  LogLogFit fit;
  const double denom = n * sxx - sx * sx;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double mean_y = sy / n;
  for (int i = 0; i < n; ++i) {
    const double ly = std::log(ys[i]);
    const double pred = fit.intercept + fit.slope * std::log(xs[i]);
    ss_res += (ly - pred) * (ly - pred);
    ss_tot += (ly - mean_y) * (ly - mean_y);
  }
  fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

struct TimingCell {
  Method method = Method::Asor;
  int m = 0;
  double seconds = 0.0;
};

struct TimingSweepResult {
  std::vector<TimingCell> cells;
  double asor_slope = 0.0;
  double asor_r2 = 0.0;
};

/// Wall-time scaling in the sensor count. Each cell runs the smoother for a
/// fixed iteration budget on one shared dataset per m, so the comparison
/// measures per-iteration cost. Repetitions of the two methods interleave and
/// the fastest repetition wins: the workload is deterministic, so the minimum
/// is the least-disturbed measurement.
inline TimingSweepResult timing_sweep(const ScenarioConfig& base,
                                      const std::vector<int>& m_values,
                                      int fixed_iters = 10, int reps = 5) {
  TimingSweepResult result;
  std::vector<double> asor_ms;
  std::vector<double> asor_secs;
  const Method methods[] = {Method::Asor, Method::Sor};
  for (int m : m_values) {
    ScenarioConfig config = base;
    config.m = m;
    config.validate();
    const DynamicsModel model = config.make_model();
    const ScenarioData data = make_scenario_data(config, 2, 0);
    const SensorSuite& suite = data.sim.measurements.sensors;
    VbHyperparams hp = config.hp;
    hp.tol = 0.0;
    hp.max_iters = fixed_iters;
    SmootherOptions opts = config.smoother_options();
    opts.keep_history = false;

    std::map<Method, std::vector<double>> times;
    for (int rep = 0; rep < reps; ++rep) {
      for (Method method : methods) {
        const auto start = std::chrono::steady_clock::now();
        run_method(method, model, suite, data.sim.measurements, data.x0, hp, opts);
        times[method].push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count());
      }
    }
    for (Method method : methods) {
      const double best = *std::min_element(times[method].begin(), times[method].end());
      result.cells.push_back({method, m, best});
      if (method == Method::Asor) {
        asor_ms.push_back(static_cast<double>(m));
        asor_secs.push_back(best);
      }
    }
  }
  const LogLogFit fit = fit_loglog(asor_ms, asor_secs);
  result.asor_slope = fit.slope;
  result.asor_r2 = fit.r2;
  return result;
}

}  // namespace trsmooth
