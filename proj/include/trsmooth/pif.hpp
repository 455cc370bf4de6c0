#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "trsmooth/bench.hpp"
#include "trsmooth/config.hpp"
#include "trsmooth/csv.hpp"
#include "trsmooth/gaussian.hpp"
#include "trsmooth/vb.hpp"

namespace trsmooth {

/// One posterior-influence measurement: KL between the smoothed marginal at
/// the corrupted step and the clean-data one.
struct PifReport {
  double corruption_scale = 0.0;
  int corrupted_step = 0;
  double pif_value = 0.0;
  Method method = Method::Plain;
  int run = 0;
};

/// Posterior influence of replacing y_{k_c} with x_corrupt: run the smoother
/// on clean and corrupted data and return KL(corrupted || clean) at k_c.
inline double pif(Method method, const DynamicsModel& model, const SensorSuite& suite,
                  const MeasurementSet& meas, const Vec& x_corrupt, int k_c,
                  const GaussianBeliefd& x0, const VbHyperparams& hp,
                  const SmootherOptions& opts = {}) {
  if (k_c < 0 || k_c >= meas.steps()) {
    throw std::invalid_argument("pif: corrupted step outside the horizon");
  }
  if (method == Method::Ideal) {
    throw std::invalid_argument("pif: the ideal oracle has no corrupted-data posterior");
  }
  const SmootherRun clean = run_method(method, model, suite, meas, x0, hp, opts);
  MeasurementSet corrupted = meas;
  corrupted.values.row(k_c) = x_corrupt;
  const SmootherRun dirty = run_method(method, model, suite, corrupted, x0, hp, opts);
  return gaussian_kl(dirty.trace.steps[k_c].smoothed, clean.trace.steps[k_c].smoothed);
}

/// Monte Carlo PIF sweep. Each run draws a clean dataset (lambda = 0), one
/// uniform corruption step and a unit contamination vector o_i ~ N(0, R_ii);
/// every scale then corrupts all sensors at that step with scale * o. The
/// clean-run posterior is computed once per (run, method) and shared across
/// scales.
inline std::vector<PifReport> pif_sweep(const ScenarioConfig& config,
                                        const std::vector<double>& scales, int runs,
                                        const std::vector<Method>& methods) {
  if (runs < 1) {
    throw std::invalid_argument("pif_sweep: runs must be >= 1");
  }
  ScenarioConfig clean_config = config;
  clean_config.lambda = 0.0;
  clean_config.validate();
  const DynamicsModel model = clean_config.make_model();

  const int cells = static_cast<int>(scales.size()) * static_cast<int>(methods.size());
  std::vector<PifReport> reports(static_cast<size_t>(runs) * cells);

  detail::parallel_for(runs, [&](int run) {
    const ScenarioData data = make_scenario_data(clean_config, 1, run);
    const SensorSuite& suite = data.sim.measurements.sensors;
    const MeasurementSet& meas = data.sim.measurements;
    const int m = suite.size();

    std::mt19937_64 rng = detail::make_rng(clean_config.seed, 101, static_cast<std::uint32_t>(run));
    std::uniform_int_distribution<int> step_dist(0, meas.steps() - 1);
    std::normal_distribution<double> unit(0.0, 1.0);
    const int k_c = step_dist(rng);
    Vec contamination(m);
    for (int i = 0; i < m; ++i) {
      contamination[i] = std::sqrt(suite.sensors[i].noise_variance) * unit(rng);
    }

    size_t slot = static_cast<size_t>(run) * cells;
    for (size_t mi = 0; mi < methods.size(); ++mi) {
      const Method method = methods[mi];
      const SmootherRun clean = run_method(method, model, suite, meas, data.x0,
                                           clean_config.hp, clean_config.smoother_options());
      for (double scale : scales) {
        MeasurementSet corrupted = meas;
        for (int i = 0; i < m; ++i) {
          const double y = meas.values(k_c, i) + scale * contamination[i];
          corrupted.values(k_c, i) = suite.is_angular(i) ? wrap_angle(y) : y;
        }
        const SmootherRun dirty =
            run_method(method, model, suite, corrupted, data.x0, clean_config.hp,
                       clean_config.smoother_options());
        PifReport r;
        r.corruption_scale = scale;
        r.corrupted_step = k_c;
        r.method = method;
        r.run = run;
        r.pif_value = gaussian_kl(dirty.trace.steps[k_c].smoothed,
                                  clean.trace.steps[k_c].smoothed);
        reports[slot++] = r;
      }
    }
  });
  return reports;
}

inline void save_pif_csv(const std::vector<PifReport>& reports, const std::string& path) {
  auto out = csv::open_out(path);
  out << "method,sigma,run,k_c,pif\n";
  for (const PifReport& r : reports) {
    out << method_name(r.method) << ',' << csv::fmt(r.corruption_scale) << ',' << r.run
        << ',' << r.corrupted_step << ',' << csv::fmt(r.pif_value) << '\n';
  }
}

/// Median PIF for one (method, scale) cell of a sweep.
inline double pif_median(const std::vector<PifReport>& reports, Method method,
                         double scale) {
  std::vector<double> vals;
  for (const PifReport& r : reports) {
    if (r.method == method && r.corruption_scale == scale) {
      vals.push_back(r.pif_value);
    }
  }
  if (vals.empty()) {
    throw std::invalid_argument("pif_median: no matching reports");
  }
  std::sort(vals.begin(), vals.end());
  const size_t n = vals.size();
  return n % 2 == 1 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

inline double pif_max(const std::vector<PifReport>& reports, Method method, double scale) {
  double best = -1.0;
  bool found = false;
  for (const PifReport& r : reports) {
    if (r.method == method && r.corruption_scale == scale) {
      best = std::max(best, r.pif_value);
      found = true;
    }
  }
  if (!found) {
    throw std::invalid_argument("pif_max: no matching reports");
  }
  return best;
}

}  // namespace trsmooth
