#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trsmooth/gaussian.hpp"
#include "trsmooth/models.hpp"

namespace trsmooth {

/// Deterministic sigma-point set: 2n+1 points stored as columns, column 0 is
/// the generating mean. Weights follow the basic unscented transform:
/// w0 = kappa/(n+kappa), wi = 1/(2(n+kappa)).
template <typename Scalar = double>
struct SigmaSet {
  MatrixX<Scalar> points;   // n x (2n+1)
  VectorX<Scalar> weights;  // 2n+1
  Scalar kappa = Scalar(0);

  Eigen::Index dim() const { return points.rows(); }
  Eigen::Index count() const { return points.cols(); }
};

using SigmaSetd = SigmaSet<double>;

template <typename Scalar>
SigmaSet<Scalar> sigma_points(const GaussianBelief<Scalar>& belief, Scalar kappa) {
  const Eigen::Index n = belief.dim();
  if (n <= 0 || Scalar(n) + kappa <= Scalar(0)) {
    throw std::invalid_argument("sigma_points: need n + kappa > 0");
  }
  Eigen::LLT<MatrixX<Scalar>> llt(belief.cov);
  if (llt.info() != Eigen::Success) {
    throw FactorizationError("sigma_points: covariance is not positive definite");
  }
  const MatrixX<Scalar> root = llt.matrixL();
  const Scalar spread = std::sqrt(Scalar(n) + kappa);

  SigmaSet<Scalar> set;
  set.kappa = kappa;
  set.points.resize(n, 2 * n + 1);
  set.points.col(0) = belief.mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    set.points.col(1 + i) = belief.mean + spread * root.col(i);
    set.points.col(1 + n + i) = belief.mean - spread * root.col(i);
  }
  set.weights.resize(2 * n + 1);
  set.weights[0] = kappa / (Scalar(n) + kappa);
  set.weights.tail(2 * n).setConstant(Scalar(1) / (Scalar(2) * (Scalar(n) + kappa)));
  return set;
}

/// sigma_points with one nearest_pd retry on factorization failure. `repairs`
/// counts how often the covariance had to be projected back to PD.
template <typename Scalar>
SigmaSet<Scalar> sigma_points_repaired(const GaussianBelief<Scalar>& belief, Scalar kappa,
                                       int* repairs = nullptr) {
  try {
    return sigma_points(belief, kappa);
  } catch (const FactorizationError&) {
    GaussianBelief<Scalar> fixed = belief;
    fixed.cov = nearest_pd(symmetrized(belief.cov), default_eig_floor(belief.cov));
    if (repairs != nullptr) {
      ++*repairs;
    }
    return sigma_points(fixed, kappa);
  }
}

/// Prediction output: predicted belief (x-, P-) and the cross-covariance L
/// between the previous state and the prediction, consumed by the backward pass.
struct PredictionResult {
  GaussianBeliefd predicted;
  Mat cross_cov;
};

/// Unscented prediction through a transition callable. Q is added to the
/// propagated spread so the predicted covariance matches the model's
/// additive-noise convention.
template <typename F>
PredictionResult ut_predict(const SigmaSetd& sigma, F&& f, const Mat& q) {
  const Eigen::Index n = sigma.dim();
  const Eigen::Index count = sigma.count();
  Mat propagated(n, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    propagated.col(i) = f(Vec(sigma.points.col(i)));
  }
  const Vec mean = propagated * sigma.weights;

  Mat cov = q;
  Mat cross = Mat::Zero(n, n);
  const Vec prior_mean = sigma.points.col(0);
  for (Eigen::Index i = 0; i < count; ++i) {
    const Vec d = propagated.col(i) - mean;
    cov.noalias() += sigma.weights[i] * d * d.transpose();
    cross.noalias() += sigma.weights[i] * (sigma.points.col(i) - prior_mean) * d.transpose();
  }
  return {{mean, symmetrized(cov)}, cross};
}

/// Propagate every sigma point through the suite's measurement function.
/// Returns an m x (2n+1) matrix, one row per sensor.
inline Mat measure_sigma(const SensorSuite& suite, const Mat& points) {
  const Eigen::Index m = suite.size();
  Mat out(m, points.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const Vec x = points.col(i);
    for (Eigen::Index l = 0; l < m; ++l) {
      out(l, i) = suite.measure_one(x, static_cast<int>(l));
    }
  }
  return out;
}

/// Sigma-weighted predicted measurement. Bearing rows use a circular mean
/// referenced to the centre sigma point so the +-pi cut cannot bias the average.
inline Vec sigma_measurement_mean(const SensorSuite& suite, const Mat& measured,
                                  const Vec& weights) {
  const Eigen::Index m = measured.rows();
  Vec v(m);
  for (Eigen::Index l = 0; l < m; ++l) {
    if (suite.is_angular(static_cast<int>(l))) {
      const double ref = measured(l, 0);
      double acc = 0.0;
      for (Eigen::Index i = 0; i < measured.cols(); ++i) {
        acc += weights[i] * angle_diff(measured(l, i), ref);
      }
      v[l] = wrap_angle(ref + acc);
    } else {
      v[l] = measured.row(l).dot(weights);
    }
  }
  return v;
}

/// Serial information-form measurement update. Processes sensors one at a
/// time, accumulating C^-1 (initialized at the identity in the scaled sigma
/// basis) and d, then maps back through the scaled state deviations:
///   x = x- + X C d,  P = X C X^T.
/// `weights` are the per-sensor indicator weights multiplying 1/R^ll; masked
/// sensors are skipped, so an all-masked step returns the prior.
inline GaussianBeliefd serial_update(const GaussianBeliefd& pred, const SigmaSetd& sigma,
                                     const Mat& measured, const Vec& y, const Vec& r_diag,
                                     const Vec& weights, const BoolArray& mask,
                                     const SensorSuite& suite) {
  const Eigen::Index n = sigma.dim();
  const Eigen::Index count = sigma.count();
  const Eigen::Index m = measured.rows();
  if (sigma.weights.minCoeff() < 0.0) {
    throw std::invalid_argument(
        "serial_update: the square-root weighting needs non-negative sigma weights "
        "(kappa >= 0)");
  }
  const Vec sqrt_w = sigma.weights.array().sqrt();
  const Vec v = sigma_measurement_mean(suite, measured, sigma.weights);

  Mat state_dev(n, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    state_dev.col(i) = sqrt_w[i] * (sigma.points.col(i) - pred.mean);
  }

  Mat c_inv = Mat::Identity(count, count);
  Vec d = Vec::Zero(count);
  Vec row(count);
  for (Eigen::Index l = 0; l < m; ++l) {
    if (!mask[l]) {
      continue;
    }
    const bool angular = suite.is_angular(static_cast<int>(l));
    for (Eigen::Index i = 0; i < count; ++i) {
      const double diff =
          angular ? angle_diff(measured(l, i), v[l]) : measured(l, i) - v[l];
      row[i] = sqrt_w[i] * diff;
    }
    const double gain = weights[l] / r_diag[l];
    const double residual = angular ? angle_diff(y[l], v[l]) : y[l] - v[l];
    c_inv.selfadjointView<Eigen::Lower>().rankUpdate(row, gain);
    d.noalias() += (gain * residual) * row;
  }

  const Mat c_full = c_inv.selfadjointView<Eigen::Lower>();
  Eigen::LLT<Mat> llt(c_full);
  if (llt.info() != Eigen::Success) {
    throw FactorizationError("serial_update: information accumulator lost PD");
  }
  GaussianBeliefd posterior;
  posterior.mean = pred.mean + state_dev * llt.solve(d);
  posterior.cov = symmetrized(Mat(state_dev * llt.solve(state_dev.transpose())));
  return posterior;
}

/// Thrown when a pass produces a non-finite state; carries the step index.
struct DivergenceError : std::runtime_error {
  int step;
  explicit DivergenceError(int k)
      : std::runtime_error("filter diverged (non-finite state) at step " +
                           std::to_string(k)),
        step(k) {}
};

struct FilterStep {
  GaussianBeliefd predicted;  // x-, P- for this step
  GaussianBeliefd filtered;   // posterior after the measurement update
  Mat cross_cov;              // L between the previous posterior and this prediction
};

struct FilterTrace {
  std::vector<FilterStep> steps;
  int pd_repairs = 0;
};

/// Inverse multi-quadratic weight (1 + ||r||^2 / c^2)^(-1/2).
inline double imq_weight(const Vec& residual, double c) {
  if (c <= 0.0) {
    throw std::invalid_argument("imq_weight: c must be positive");
  }
  return 1.0 / std::sqrt(1.0 + residual.squaredNorm() / (c * c));
}

/// Forward filtering pass (prediction + serial update per step). `weights` is
/// T x m of indicator weights in (0, 1]. When `imq_c` is set, every step's
/// weight row is replaced by the scalar IMQ weight of the predicted residual;
/// this is the robust bootstrap used on a first pass before any indicator
/// estimates exist.
inline FilterTrace forward_pass(const DynamicsModel& model, const SensorSuite& suite,
                                const MeasurementSet& meas, const Mat& weights,
                                const GaussianBeliefd& x0, double kappa = 0.0,
                                std::optional<double> imq_c = std::nullopt) {
  const int t_steps = meas.steps();
  const Eigen::Index m = suite.size();
  if (weights.rows() != t_steps || weights.cols() != m) {
    throw std::invalid_argument("forward_pass: weights must be T x m");
  }
  const Vec r_diag = suite.noise_diag();

  FilterTrace trace;
  trace.steps.resize(t_steps);
  GaussianBeliefd belief = x0;
  for (int k = 0; k < t_steps; ++k) {
    const SigmaSetd prior_sigma = sigma_points_repaired(belief, kappa, &trace.pd_repairs);
    PredictionResult pr = ut_predict(prior_sigma, model.transition, model.process_noise);
    if (!pr.predicted.mean.allFinite() || !pr.predicted.cov.allFinite()) {
      throw DivergenceError(k);
    }

    // Redraw sigma points from the predicted belief so the scaled deviations
    // reproduce P- (including Q) exactly in the update.
    const SigmaSetd pred_sigma =
        sigma_points_repaired(pr.predicted, kappa, &trace.pd_repairs);
    const Mat measured = measure_sigma(suite, pred_sigma.points);
    const Vec y = meas.values.row(k);
    const BoolArray mask_row = meas.mask.row(k);

    Vec w_row = weights.row(k);
    if (imq_c.has_value()) {
      const Vec v = sigma_measurement_mean(suite, measured, pred_sigma.weights);
      std::vector<double> resid;
      resid.reserve(m);
      for (Eigen::Index l = 0; l < m; ++l) {
        if (!mask_row[l]) {
          continue;
        }
        resid.push_back(suite.is_angular(static_cast<int>(l)) ? angle_diff(y[l], v[l])
                                                              : y[l] - v[l]);
      }
      const double w =
          resid.empty()
              ? 1.0
              : imq_weight(Eigen::Map<const Vec>(resid.data(), resid.size()), *imq_c);
      w_row.setConstant(w);
    }

    belief = serial_update(pr.predicted, pred_sigma, measured, y, r_diag, w_row,
                           mask_row, suite);
    if (!belief.mean.allFinite() || !belief.cov.allFinite()) {
      throw DivergenceError(k);
    }
    trace.steps[k] = {std::move(pr.predicted), belief, std::move(pr.cross_cov)};
  }
  return trace;
}

}  // namespace trsmooth
