#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "trsmooth/csv.hpp"
#include "trsmooth/gaussian.hpp"
#include "trsmooth/models.hpp"

namespace trsmooth {

/// Ground truth of the injected contamination: which entries were hit and by
/// how much. Magnitudes are zero wherever the mask is false, so subtracting
/// them recovers the clean measurements exactly.
struct OutlierGroundTruth {
  BoolMatrix mask;  // T x m
  Mat magnitudes;   // T x m
};

struct SimulatedMeasurements {
  MeasurementSet measurements;
  OutlierGroundTruth outliers;
};

/// Interleaved bearing/range grid: the j-th bearing sensor sits at
/// (350(j-1), 350(j mod 2)) and the j-th range sensor at
/// (350(j-1), 350((j+1) mod 2)), j = 1..m/2. Bearings come first in the suite.
inline SensorSuite build_sensor_grid(int m) {
  if (m < 2 || m % 2 != 0) {
    throw std::invalid_argument("build_sensor_grid: m must be even and >= 2");
  }
  const double bearing_var = std::pow(0.2 * M_PI / 180.0, 2);
  const double range_var = 10.0;
  SensorSuite suite;
  suite.pos_x_index = 0;
  suite.pos_y_index = 2;
  for (int j = 1; j <= m / 2; ++j) {
    Sensor s;
    s.kind = SensorKind::Bearing;
    s.position = {350.0 * (j - 1), 350.0 * (j % 2)};
    s.noise_variance = bearing_var;
    suite.sensors.push_back(s);
  }
  for (int j = 1; j <= m / 2; ++j) {
    Sensor s;
    s.kind = SensorKind::Range;
    s.position = {350.0 * (j - 1), 350.0 * ((j + 1) % 2)};
    s.noise_variance = range_var;
    suite.sensors.push_back(s);
  }
  return suite;
}

namespace detail {

/// Symmetric square root via eigendecomposition; tolerates PSD inputs.
inline Mat matrix_sqrt_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrized(m));
  if (eig.info() != Eigen::Success) {
    throw FactorizationError("matrix_sqrt_psd: eigendecomposition failed");
  }
  Vec vals = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * vals.cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

inline Vec mvn_sample(const Vec& mean, const Mat& sqrt_cov, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Vec z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    z[i] = unit(rng);
  }
  return mean + sqrt_cov * z;
}

}  // namespace detail

/// Sample a ground-truth trajectory: x0 ~ N(x0_mean, x0_cov), then
/// x_k = f(x_{k-1}) + q_k. Returns T+1 states including x0.
inline std::vector<Vec> simulate_trajectory(const DynamicsModel& model, const Vec& x0_mean,
                                            const Mat& x0_cov, int t_steps,
                                            std::mt19937_64& rng) {
  if (t_steps < 1) {
    throw std::invalid_argument("simulate_trajectory: T must be >= 1");
  }
  const Mat sqrt_p0 = detail::matrix_sqrt_psd(x0_cov);
  const Mat sqrt_q = detail::matrix_sqrt_psd(model.process_noise);
  std::vector<Vec> states;
  states.reserve(t_steps + 1);
  states.push_back(detail::mvn_sample(x0_mean, sqrt_p0, rng));
  for (int k = 1; k <= t_steps; ++k) {
    states.push_back(
        detail::mvn_sample(model.transition(states.back()), sqrt_q, rng));
  }
  return states;
}

/// Synthesize contaminated measurements for states[1..T]:
///   y = h(x) + r + Lambda * o
/// with r the nominal noise, Lambda ~ Bernoulli(lambda) per sensor per step and
/// o an independent nominal-noise draw scaled by sigma_factor. The outlier draw
/// is consumed from the stream even when Lambda = 0, so datasets generated at
/// different lambda from the same seed share their nominal noise.
inline SimulatedMeasurements simulate_measurements(const std::vector<Vec>& states,
                                                   const SensorSuite& suite,
                                                   double lambda, double sigma_factor,
                                                   std::mt19937_64& rng) {
  if (lambda < 0.0 || lambda > 1.0 || sigma_factor < 0.0) {
    throw std::invalid_argument("simulate_measurements: need lambda in [0,1], sigma >= 0");
  }
  const int t_steps = static_cast<int>(states.size()) - 1;
  const int m = suite.size();
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  SimulatedMeasurements out;
  out.measurements.times.resize(t_steps);
  out.measurements.values = Mat::Zero(t_steps, m);
  out.measurements.mask = BoolMatrix::Constant(t_steps, m, true);
  out.measurements.sensors = suite;
  out.outliers.mask = BoolMatrix::Constant(t_steps, m, false);
  out.outliers.magnitudes = Mat::Zero(t_steps, m);

  for (int k = 0; k < t_steps; ++k) {
    out.measurements.times[k] = k;
    const Vec& x = states[k + 1];
    for (int i = 0; i < m; ++i) {
      const double sd = std::sqrt(suite.sensors[i].noise_variance);
      const double noise = sd * unit(rng);
      const bool hit = uniform(rng) < lambda;
      const double outlier = sigma_factor * sd * unit(rng);
      double y = suite.measure_one(x, i) + noise;
      if (hit) {
        y += outlier;
        out.outliers.mask(k, i) = true;
        out.outliers.magnitudes(k, i) = outlier;
      }
      out.measurements.values(k, i) = suite.is_angular(i) ? wrap_angle(y) : y;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// UWB range-log interchange format
//
//   ranges.csv   t,anchor_id,range_m     one row per visible anchor per step
//   anchors.csv  anchor_id,x_m,y_m,z_m   anchor survey table
//   truth.csv    t,x_m,y_m               optional reference path
// ---------------------------------------------------------------------------

struct UwbDataset {
  MeasurementSet measurements;     // sensors: range-only suite from the anchor table
  std::vector<int> anchor_ids;     // suite order
  std::vector<Vec> truth;          // 2D positions, aligned with measurement steps
  bool has_truth = false;
};

/// Measurement noise variance used for UWB ranges (diagonal R).
inline constexpr double kUwbRangeVariance = 0.1;

/// Load a UWB range log. `ranges_path` points at ranges.csv; anchors.csv and
/// the optional truth.csv are looked up next to it. Anchors absent at a step
/// become masked-out entries.
inline UwbDataset load_uwb_csv(const std::string& ranges_path) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(ranges_path).parent_path();

  UwbDataset data;
  SensorSuite& suite = data.measurements.sensors;
  suite.pos_x_index = 0;
  suite.pos_y_index = 1;

  {
    const std::string path = (dir / "anchors.csv").string();
    auto in = csv::open_in(path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) {
        continue;
      }
      const auto fields = csv::split_line(line);
      const std::string context = path + ":" + std::to_string(line_no);
      if (line_no == 1) {
        if (fields != std::vector<std::string>{"anchor_id", "x_m", "y_m", "z_m"}) {
          throw std::runtime_error(context + ": expected header anchor_id,x_m,y_m,z_m");
        }
        continue;
      }
      if (fields.size() != 4) {
        throw std::runtime_error(context + ": expected 4 fields");
      }
      const int id = static_cast<int>(csv::parse_long(fields[0], context));
      Sensor s;
      s.kind = SensorKind::Range;
      s.position = {csv::parse_double(fields[1], context),
                    csv::parse_double(fields[2], context)};
      s.z_offset = csv::parse_double(fields[3], context);
      s.noise_variance = kUwbRangeVariance;
      data.anchor_ids.push_back(id);
      suite.sensors.push_back(s);
    }
  }
  std::map<int, int> anchor_index;
  for (size_t i = 0; i < data.anchor_ids.size(); ++i) {
    anchor_index[data.anchor_ids[i]] = static_cast<int>(i);
  }

  struct Reading {
    int anchor;
    double range;
  };
  std::map<int, std::vector<Reading>> by_time;
  {
    auto in = csv::open_in(ranges_path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) {
        continue;
      }
      const auto fields = csv::split_line(line);
      const std::string context = ranges_path + ":" + std::to_string(line_no);
      if (line_no == 1) {
        if (fields != std::vector<std::string>{"t", "anchor_id", "range_m"}) {
          throw std::runtime_error(context + ": expected header t,anchor_id,range_m");
        }
        continue;
      }
      if (fields.size() != 3) {
        throw std::runtime_error(context + ": expected 3 fields");
      }
      const int t = static_cast<int>(csv::parse_long(fields[0], context));
      const int id = static_cast<int>(csv::parse_long(fields[1], context));
      const double r = csv::parse_double(fields[2], context);
      auto it = anchor_index.find(id);
      if (it == anchor_index.end()) {
        throw std::runtime_error(context + ": unknown anchor id " + std::to_string(id));
      }
      by_time[t].push_back({it->second, r});
    }
  }

  const int t_steps = static_cast<int>(by_time.size());
  const int m = suite.size();
  data.measurements.values = Mat::Zero(t_steps, m);
  data.measurements.mask = BoolMatrix::Constant(t_steps, m, false);
  data.measurements.times.reserve(t_steps);
  std::map<int, int> step_of_time;
  for (const auto& [t, readings] : by_time) {
    const int k = static_cast<int>(data.measurements.times.size());
    step_of_time[t] = k;
    data.measurements.times.push_back(t);
    for (const Reading& r : readings) {
      data.measurements.values(k, r.anchor) = r.range;
      data.measurements.mask(k, r.anchor) = true;
    }
  }

  const std::string truth_path = (dir / "truth.csv").string();
  if (std::filesystem::exists(truth_path)) {
    data.has_truth = true;
    data.truth.assign(t_steps, Vec::Zero(2));
    auto in = csv::open_in(truth_path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) {
        continue;
      }
      const auto fields = csv::split_line(line);
      const std::string context = truth_path + ":" + std::to_string(line_no);
      if (line_no == 1) {
        if (fields != std::vector<std::string>{"t", "x_m", "y_m"}) {
          throw std::runtime_error(context + ": expected header t,x_m,y_m");
        }
        continue;
      }
      if (fields.size() != 3) {
        throw std::runtime_error(context + ": expected 3 fields");
      }
      const int t = static_cast<int>(csv::parse_long(fields[0], context));
      auto it = step_of_time.find(t);
      if (it == step_of_time.end()) {
        continue;  // truth rows for steps with no readings are ignored
      }
      Vec p(2);
      p << csv::parse_double(fields[1], context), csv::parse_double(fields[2], context);
      data.truth[it->second] = p;
    }
  }
  return data;
}

/// Write a dataset in the UWB interchange format. `truth` may be empty.
inline void save_uwb_csv(const std::string& dir, const MeasurementSet& meas,
                         const std::vector<int>& anchor_ids,
                         const std::vector<Vec>& truth) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    auto out = csv::open_out((fs::path(dir) / "anchors.csv").string());
    out << "anchor_id,x_m,y_m,z_m\n";
    for (int i = 0; i < meas.sensors.size(); ++i) {
      const Sensor& s = meas.sensors.sensors[i];
      out << anchor_ids[i] << ',' << csv::fmt(s.position.x()) << ','
          << csv::fmt(s.position.y()) << ',' << csv::fmt(s.z_offset) << '\n';
    }
  }
  {
    auto out = csv::open_out((fs::path(dir) / "ranges.csv").string());
    out << "t,anchor_id,range_m\n";
    for (int k = 0; k < meas.steps(); ++k) {
      for (int i = 0; i < meas.sensor_count(); ++i) {
        if (meas.mask(k, i)) {
          out << meas.times[k] << ',' << anchor_ids[i] << ','
              << csv::fmt(meas.values(k, i)) << '\n';
        }
      }
    }
  }
  if (!truth.empty()) {
    auto out = csv::open_out((fs::path(dir) / "truth.csv").string());
    out << "t,x_m,y_m\n";
    for (int k = 0; k < meas.steps(); ++k) {
      out << meas.times[k] << ',' << csv::fmt(truth[k][0]) << ','
          << csv::fmt(truth[k][1]) << '\n';
    }
  }
}

}  // namespace trsmooth
