#pragma once

#include <stdexcept>
#include <vector>

#include "trsmooth/gaussian.hpp"
#include "trsmooth/unscented.hpp"

namespace trsmooth {

struct SmoothedStep {
  GaussianBeliefd filtered;
  GaussianBeliefd predicted;
  GaussianBeliefd smoothed;
  Mat cross_cov;
  Mat gain;  // empty at the final step (no successor)
};

struct SmootherTrace {
  std::vector<SmoothedStep> steps;
  int pd_repairs = 0;

  int size() const { return static_cast<int>(steps.size()); }
};

/// Smoother gain G = L [P-_{k+1}]^{-1}, computed as a solve against the
/// predicted covariance. Retries once with a trace-scaled jitter before
/// giving up on a singular prediction.
inline Mat smoother_gain(const Mat& cross_cov, const Mat& predicted_cov_next) {
  if (!predicted_cov_next.allFinite()) {
    throw FactorizationError("smoother_gain: predicted covariance is not finite");
  }
  Eigen::LLT<Mat> llt(predicted_cov_next);
  if (llt.info() != Eigen::Success) {
    const Eigen::Index n = predicted_cov_next.rows();
    const double jitter = default_eig_floor(predicted_cov_next);
    llt.compute(predicted_cov_next + jitter * Mat::Identity(n, n));
    if (llt.info() != Eigen::Success) {
      throw FactorizationError("smoother_gain: predicted covariance is singular");
    }
  }
  return llt.solve(cross_cov.transpose()).transpose();
}

/// Backward smoothing recursion from k = T-1 down to 0. The final smoothed
/// marginal equals the final filtered one. Every smoothed covariance is
/// symmetrized and eigenvalue-floored (the subtraction form can leave it
/// indefinite); each clip is counted in pd_repairs.
inline SmootherTrace backward_pass(const FilterTrace& trace) {
  const int t_steps = static_cast<int>(trace.steps.size());
  SmootherTrace out;
  out.steps.resize(t_steps);
  if (t_steps == 0) {
    return out;
  }

  const FilterStep& last = trace.steps[t_steps - 1];
  out.steps[t_steps - 1] = {last.filtered, last.predicted, last.filtered,
                            last.cross_cov, Mat()};

  for (int k = t_steps - 2; k >= 0; --k) {
    const FilterStep& step = trace.steps[k];
    const FilterStep& next = trace.steps[k + 1];
    const GaussianBeliefd& smoothed_next = out.steps[k + 1].smoothed;

    const Mat gain = smoother_gain(next.cross_cov, next.predicted.cov);
    GaussianBeliefd smoothed;
    smoothed.mean =
        step.filtered.mean + gain * (smoothed_next.mean - next.predicted.mean);
    Mat cov = step.filtered.cov +
              gain * (smoothed_next.cov - next.predicted.cov) * gain.transpose();
    auto repaired = detail::nearest_pd_ex(Mat(symmetrized(cov)), default_eig_floor(cov));
    if (repaired.second) {
      ++out.pd_repairs;
    }
    smoothed.cov = std::move(repaired.first);
    if (!smoothed.mean.allFinite() || !smoothed.cov.allFinite()) {
      throw DivergenceError(k);
    }
    out.steps[k] = {step.filtered, step.predicted, std::move(smoothed), step.cross_cov,
                    gain};
  }
  return out;
}

}  // namespace trsmooth
