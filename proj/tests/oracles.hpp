// Independent reference implementations used only by the test suites. These
// deliberately follow the textbook formulations (explicit gains, batch
// updates) rather than the library's serial information form, so agreement is
// evidence and not tautology.
#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "trsmooth/gaussian.hpp"

namespace oracles {

using trsmooth::GaussianBeliefd;
using trsmooth::Mat;
using trsmooth::Vec;

struct LinearModel {
  Mat A;  // state transition
  Mat Q;  // process noise
  Mat H;  // measurement matrix
  Mat R;  // measurement noise (full)
};

struct KalmanTrace {
  std::vector<GaussianBeliefd> predicted;
  std::vector<GaussianBeliefd> filtered;
};

/// Textbook Kalman filter: predict with (A, Q), update with gain
/// K = P- H^T (H P- H^T + R)^{-1}.
inline KalmanTrace kalman_filter(const LinearModel& model,
                                 const std::vector<Vec>& measurements,
                                 const GaussianBeliefd& x0) {
  KalmanTrace trace;
  GaussianBeliefd belief = x0;
  for (const Vec& y : measurements) {
    GaussianBeliefd pred;
    pred.mean = model.A * belief.mean;
    pred.cov = model.A * belief.cov * model.A.transpose() + model.Q;
    const Mat s = model.H * pred.cov * model.H.transpose() + model.R;
    const Mat k = pred.cov * model.H.transpose() * s.inverse();
    belief.mean = pred.mean + k * (y - model.H * pred.mean);
    belief.cov = pred.cov - k * s * k.transpose();
    trace.predicted.push_back(pred);
    trace.filtered.push_back(belief);
  }
  return trace;
}

/// Textbook RTS recursion: G = P_f A^T (P-_{k+1})^{-1}.
inline std::vector<GaussianBeliefd> rts_smoother(const LinearModel& model,
                                                 const KalmanTrace& trace) {
  const int t = static_cast<int>(trace.filtered.size());
  std::vector<GaussianBeliefd> smoothed(t);
  smoothed[t - 1] = trace.filtered[t - 1];
  for (int k = t - 2; k >= 0; --k) {
    const GaussianBeliefd& f = trace.filtered[k];
    const GaussianBeliefd& p = trace.predicted[k + 1];
    const Mat g = f.cov * model.A.transpose() * p.cov.inverse();
    smoothed[k].mean = f.mean + g * (smoothed[k + 1].mean - p.mean);
    smoothed[k].cov = f.cov + g * (smoothed[k + 1].cov - p.cov) * g.transpose();
  }
  return smoothed;
}

/// Batch weighted unscented update: the usual P_xy (P_yy + R_w)^{-1} gain with
/// the effective noise R_w = R diag(w)^{-1}, restricted to unmasked sensors.
inline GaussianBeliefd batch_unscented_update(const GaussianBeliefd& pred,
                                              const Mat& sigma_points, const Vec& weights,
                                              const Mat& measured, const Vec& y,
                                              const Vec& r_diag, const Vec& w,
                                              const std::vector<bool>& mask) {
  std::vector<int> active;
  for (size_t l = 0; l < mask.size(); ++l) {
    if (mask[l]) {
      active.push_back(static_cast<int>(l));
    }
  }
  if (active.empty()) {
    return pred;
  }
  const int ma = static_cast<int>(active.size());
  const Eigen::Index count = sigma_points.cols();

  Vec v = Vec::Zero(ma);
  for (int j = 0; j < ma; ++j) {
    v[j] = measured.row(active[j]).dot(weights);
  }
  Mat pyy = Mat::Zero(ma, ma);
  Mat pxy = Mat::Zero(pred.mean.size(), ma);
  for (Eigen::Index i = 0; i < count; ++i) {
    Vec dy(ma);
    for (int j = 0; j < ma; ++j) {
      dy[j] = measured(active[j], i) - v[j];
    }
    const Vec dx = sigma_points.col(i) - pred.mean;
    pyy += weights[i] * dy * dy.transpose();
    pxy += weights[i] * dx * dy.transpose();
  }
  Mat r_eff = Mat::Zero(ma, ma);
  Vec ya(ma);
  for (int j = 0; j < ma; ++j) {
    r_eff(j, j) = r_diag[active[j]] / w[active[j]];
    ya[j] = y[active[j]];
  }
  const Mat s = pyy + r_eff;
  const Mat k = pxy * s.inverse();
  GaussianBeliefd post;
  post.mean = pred.mean + k * (ya - v);
  post.cov = pred.cov - k * s * k.transpose();
  return post;
}

inline Mat random_spd(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Mat a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      a(i, j) = unit(rng);
    }
  }
  return scale * (a * a.transpose()) + 0.1 * scale * Mat::Identity(n, n);
}

inline Vec random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> unit(0.0, scale);
  Vec v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = unit(rng);
  }
  return v;
}

}  // namespace oracles
