#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "trsmooth/gaussian.hpp"

namespace trsmooth {

/// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * M_PI);
  if (r <= -M_PI) {
    r += 2.0 * M_PI;
  }
  return r;
}

/// Shortest signed angular difference a - b in (-pi, pi].
inline double angle_diff(double a, double b) { return wrap_angle(a - b); }

/// Coordinated-turn state [a, a_dot, b, b_dot, omega]:
/// 2D position (m), velocity (m/s) and turn rate (rad/s).
struct CtState {
  double a = 0.0;
  double a_dot = 0.0;
  double b = 0.0;
  double b_dot = 0.0;
  double omega = 0.0;

  static CtState from_vector(const Vec& x) {
    if (x.size() != 5) {
      throw std::invalid_argument("CtState: expected a 5-dimensional vector");
    }
    return {x[0], x[1], x[2], x[3], x[4]};
  }

  Vec to_vector() const {
    Vec x(5);
    x << a, a_dot, b, b_dot, omega;
    return x;
  }
};

/// Coordinated-turn transition over one step of length dt. The turn rate
/// persists unchanged; the omega -> 0 singularity is handled by the series
/// limits sin(w dt)/w -> dt and (cos(w dt) - 1)/w -> 0 for |w dt| < 1e-9.
inline CtState ct_transition(const CtState& s, double dt) {
  if (dt <= 0.0) {
    throw std::invalid_argument("ct_transition: dt must be positive");
  }
  const double wt = s.omega * dt;
  const double cos_wt = std::cos(wt);
  const double sin_wt = std::sin(wt);
  double sw = dt;   // sin(w dt)/w
  double cw = 0.0;  // (cos(w dt) - 1)/w
  if (std::abs(wt) >= 1e-9) {
    sw = sin_wt / s.omega;
    cw = (cos_wt - 1.0) / s.omega;
  }
  CtState out;
  out.a = s.a + sw * s.a_dot + cw * s.b_dot;
  out.a_dot = cos_wt * s.a_dot - sin_wt * s.b_dot;
  out.b = s.b - cw * s.a_dot + sw * s.b_dot;
  out.b_dot = sin_wt * s.a_dot + cos_wt * s.b_dot;
  out.omega = s.omega;
  return out;
}

inline Vec ct_transition(const Vec& x, double dt) {
  return ct_transition(CtState::from_vector(x), dt).to_vector();
}

/// Block-diagonal coordinated-turn process noise:
/// eta1 * M per position/velocity axis with M = [[dt^3/3, dt^2/2], [dt^2/2, dt]],
/// and eta2 for the turn rate.
inline Mat ct_process_noise(double dt, double eta1, double eta2) {
  if (dt <= 0.0 || eta1 < 0.0 || eta2 < 0.0) {
    throw std::invalid_argument("ct_process_noise: need dt > 0 and eta1, eta2 >= 0");
  }
  Eigen::Matrix2d m;
  m << dt * dt * dt / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt;
  Mat q = Mat::Zero(5, 5);
  q.block<2, 2>(0, 0) = eta1 * m;
  q.block<2, 2>(2, 2) = eta1 * m;
  q(4, 4) = eta2;
  return q;
}

/// Random-walk transition: identity. Process noise is supplied separately.
inline Vec rw_transition(const Vec& x) { return x; }

/// Euclidean range to a sensor, with an optional fixed height offset folded
/// into the distance (UWB anchors mounted above the tag plane).
inline double range_measure(const Eigen::Vector2d& state_xy,
                            const Eigen::Vector2d& sensor_xy, double z_offset = 0.0) {
  const double dx = state_xy.x() - sensor_xy.x();
  const double dy = state_xy.y() - sensor_xy.y();
  return std::sqrt(dx * dx + dy * dy + z_offset * z_offset);
}

/// Four-quadrant bearing from sensor to state, in (-pi, pi].
inline double bearing_measure(const Eigen::Vector2d& state_xy,
                              const Eigen::Vector2d& sensor_xy) {
  const double dx = state_xy.x() - sensor_xy.x();
  const double dy = state_xy.y() - sensor_xy.y();
  if (dx == 0.0 && dy == 0.0) {
    throw std::domain_error("bearing_measure: state and sensor positions coincide");
  }
  return std::atan2(dy, dx);
}

enum class SensorKind { Range, Bearing, Custom };

struct Sensor {
  SensorKind kind = SensorKind::Range;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double noise_variance = 1.0;
  double z_offset = 0.0;
  std::function<double(const Vec&)> custom;  // measurement function when kind == Custom
};

/// Ordered collection of independent scalar sensors; the suite defines the
/// measurement function h and the diagonal of R. `pos_x_index`/`pos_y_index`
/// say where the 2D position lives in the state vector.
struct SensorSuite {
  std::vector<Sensor> sensors;
  int pos_x_index = 0;
  int pos_y_index = 2;

  int size() const { return static_cast<int>(sensors.size()); }

  bool is_angular(int i) const { return sensors[i].kind == SensorKind::Bearing; }

  Eigen::Vector2d position_of(const Vec& state) const {
    return {state[pos_x_index], state[pos_y_index]};
  }

  double measure_one(const Vec& state, int i) const {
    const Sensor& s = sensors[i];
    if (s.kind == SensorKind::Custom) {
      return s.custom(state);
    }
    const Eigen::Vector2d xy = position_of(state);
    return s.kind == SensorKind::Range ? range_measure(xy, s.position, s.z_offset)
                                       : bearing_measure(xy, s.position);
  }

  Vec measure(const Vec& state) const {
    Vec y(size());
    for (int i = 0; i < size(); ++i) {
      y[i] = measure_one(state, i);
    }
    return y;
  }

  Vec noise_diag() const {
    Vec r(size());
    for (int i = 0; i < size(); ++i) {
      r[i] = sensors[i].noise_variance;
    }
    return r;
  }

  void validate() const {
    for (const Sensor& s : sensors) {
      if (s.noise_variance <= 0.0) {
        throw std::invalid_argument("SensorSuite: noise variances must be positive");
      }
    }
  }
};

/// Discrete-time dynamic model x_k = f(x_{k-1}) + q, q ~ N(0, Q).
struct DynamicsModel {
  int state_dim = 0;
  std::function<Vec(const Vec&)> transition;
  Mat process_noise;
  double dt = 1.0;
};

inline DynamicsModel coordinated_turn_model(double dt, double eta1, double eta2) {
  DynamicsModel m;
  m.state_dim = 5;
  m.transition = [dt](const Vec& x) { return ct_transition(x, dt); };
  m.process_noise = ct_process_noise(dt, eta1, eta2);
  m.dt = dt;
  return m;
}

inline DynamicsModel random_walk_model(double q_var = 0.1, int dim = 2, double dt = 1.0) {
  DynamicsModel m;
  m.state_dim = dim;
  m.transition = [](const Vec& x) { return rw_transition(x); };
  m.process_noise = q_var * Mat::Identity(dim, dim);
  m.dt = dt;
  return m;
}

/// Time-indexed multi-sensor measurements. `mask(k, i)` marks whether sensor i
/// reported at step k; values are only meaningful where the mask is true.
struct MeasurementSet {
  std::vector<int> times;
  Mat values;       // T x m
  BoolMatrix mask;  // T x m
  SensorSuite sensors;

  int steps() const { return static_cast<int>(values.rows()); }
  int sensor_count() const { return static_cast<int>(values.cols()); }
};

}  // namespace trsmooth
