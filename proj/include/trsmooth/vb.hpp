#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "trsmooth/gaussian.hpp"
#include "trsmooth/models.hpp"
#include "trsmooth/smoother.hpp"
#include "trsmooth/unscented.hpp"

namespace trsmooth {

/// Hyperparameters of the hierarchical indicator model.
///   a        Gamma shape of the indicator's outlier branch
///   A, B     Gamma shape/rate of the prior on the rate b_k (A > 1 keeps the
///            b update positive)
///   theta    per-sensor prior probability of a clean reading
///   epsilon  residual indicator weight assigned to rejected measurements
struct VbHyperparams {
  double a = 1.0;
  double A = 2.0;
  double B = 5.0;
  double theta = 0.5;
  double epsilon = 1e-6;
  double tol = 1e-4;
  int max_iters = 50;
  double imq_c = 5.0;
  bool clamp_indicator_upper = true;

  double alpha() const { return a + 0.5; }

  void validate() const {
    if (a <= 0.0 || A <= 1.0 || B <= 0.0) {
      throw std::invalid_argument("VbHyperparams: need a > 0, A > 1, B > 0");
    }
    if (theta <= 0.0 || theta >= 1.0) {
      throw std::invalid_argument("VbHyperparams: theta must lie in (0, 1)");
    }
    if (epsilon <= 0.0 || epsilon >= 1.0) {
      throw std::invalid_argument("VbHyperparams: epsilon must lie in (0, 1)");
    }
    if (max_iters < 1 || tol < 0.0 || imq_c <= 0.0) {
      throw std::invalid_argument("VbHyperparams: bad max_iters/tol/imq_c");
    }
  }
};

/// Per-step, per-sensor variational quantities. Masked (absent) entries hold
/// the neutral values W = 0, beta = b_hat, omega = 1, expect_I = 1.
struct IndicatorState {
  Mat W;         // expected normalized squared residuals
  Mat beta;      // Gamma rates of the outlier branch
  Mat omega;     // posterior probabilities of a clean reading
  Mat expect_I;  // indicator expectations (the weights)
  Vec b_hat;     // per-step learned Gamma rate

  static IndicatorState neutral(int t_steps, int m, double b0) {
    IndicatorState s;
    s.W = Mat::Zero(t_steps, m);
    s.beta = Mat::Constant(t_steps, m, b0);
    s.omega = Mat::Ones(t_steps, m);
    s.expect_I = Mat::Ones(t_steps, m);
    s.b_hat = Vec::Constant(t_steps, b0);
    return s;
  }
};

namespace detail {

inline double log_zeta(double theta, double a, double alpha) {
  return std::log(1.0 / theta - 1.0) + std::lgamma(alpha) - std::lgamma(a);
}

inline double sigmoid_of_neg(double s) {
  if (s >= 0.0) {
    const double e = std::exp(-s);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(s));
}

/// Omega from its logit: omega = sigmoid(-(log_zeta + a ln b - alpha ln beta
/// + W/2)). Saturates cleanly instead of overflowing for large W.
inline double omega_from_logit(double w, double b_hat, double a, double alpha,
                               double lzeta) {
  const double beta = 0.5 * w + b_hat;
  return sigmoid_of_neg(lzeta + a * std::log(b_hat) - alpha * std::log(beta) + 0.5 * w);
}

/// Logit offset of the two-point (I in {epsilon, 1}) indicator posterior for
/// `dim_exponent` pooled residual dimensions (1/2 per scalar sensor).
inline double bernoulli_logit_base(double dim_exponent, double theta, double epsilon) {
  return std::log((1.0 - theta) / theta) + dim_exponent * std::log(epsilon);
}

inline double bernoulli_omega(double w_sum, double logit_base, double epsilon) {
  return sigmoid_of_neg(logit_base + 0.5 * w_sum * (1.0 - epsilon));
}

}  // namespace detail

/// Posterior probability that sensor reading with normalized squared residual
/// W is clean, given the current rate b_hat.
inline double omega(double w, double b_hat, const VbHyperparams& hp) {
  if (w < 0.0 || b_hat <= 0.0) {
    throw std::invalid_argument("omega: need W >= 0 and b_hat > 0");
  }
  return detail::omega_from_logit(w, b_hat, hp.a, hp.alpha(),
                                  detail::log_zeta(hp.theta, hp.a, hp.alpha()));
}

/// Indicator expectation omega + (1 - omega) * alpha / beta, clamped below by
/// epsilon and (by default) above by one. The raw value can exceed one when
/// alpha/beta > 1; the upper clamp keeps weights inside the (0, 1] range the
/// robustness argument relies on, and can be disabled for ablation.
inline double indicator_expectation(double omega_val, double beta, const VbHyperparams& hp) {
  if (omega_val < 0.0 || omega_val > 1.0 || beta <= 0.0) {
    throw std::invalid_argument("indicator_expectation: bad omega/beta");
  }
  double value = omega_val + (1.0 - omega_val) * hp.alpha() / beta;
  value = std::max(value, hp.epsilon);
  if (hp.clamp_indicator_upper) {
    value = std::min(value, 1.0);
  }
  return value;
}

/// Closed-form maximizer of the per-step b objective:
///   b_hat = (A_bar - 1) / B_bar,
///   A_bar = A + sum a (1 - omega_i), B_bar = B + sum (1 - omega_i) alpha/beta_i.
inline double update_b(const Vec& omega_row, const Vec& beta_row, const VbHyperparams& hp) {
  if (omega_row.size() != beta_row.size()) {
    throw std::invalid_argument("update_b: omega/beta size mismatch");
  }
  double a_bar = hp.A;
  double b_bar = hp.B;
  for (Eigen::Index i = 0; i < omega_row.size(); ++i) {
    a_bar += hp.a * (1.0 - omega_row[i]);
    b_bar += (1.0 - omega_row[i]) * hp.alpha() / beta_row[i];
  }
  if (a_bar <= 1.0) {
    throw std::invalid_argument("update_b: A_bar must exceed 1 (require A > 1)");
  }
  return (a_bar - 1.0) / b_bar;
}

/// Expected normalized squared residual W^ii = [(y_i - v_i)^2 + S^ii] / R^ii
/// under the smoothed marginal, evaluated with sigma points pushed through the
/// measurement function. Bearing residuals are wrapped. Masked entries get 0.
inline Vec expected_sq_residual(const GaussianBeliefd& smoothed, const Vec& y,
                                const SensorSuite& suite, double kappa,
                                const BoolArray& mask, int* repairs = nullptr) {
  const int m = suite.size();
  const SigmaSetd sigma = sigma_points_repaired(smoothed, kappa, repairs);
  const Mat measured = measure_sigma(suite, sigma.points);
  const Vec v = sigma_measurement_mean(suite, measured, sigma.weights);

  Vec w = Vec::Zero(m);
  for (int l = 0; l < m; ++l) {
    if (!mask[l]) {
      continue;
    }
    const bool angular = suite.is_angular(l);
    double spread = 0.0;
    for (Eigen::Index i = 0; i < measured.cols(); ++i) {
      const double d =
          angular ? angle_diff(measured(l, i), v[l]) : measured(l, i) - v[l];
      spread += sigma.weights[i] * d * d;
    }
    const double resid = angular ? angle_diff(y[l], v[l]) : y[l] - v[l];
    w[l] = (resid * resid + spread) / suite.sensors[l].noise_variance;
  }
  return w;
}

inline Vec expected_sq_residual(const GaussianBeliefd& smoothed, const Vec& y,
                                const SensorSuite& suite, double kappa) {
  return expected_sq_residual(smoothed, y, suite, kappa,
                              BoolArray::Constant(suite.size(), true));
}

/// Per-iteration diagnostics handed to an optional observer.
struct VbIterationDiag {
  int iteration = 0;
  double max_state_delta = 0.0;
  double mean_b_hat = 0.0;
  double omega_below_half = 0.0;  // fraction of unmasked entries with omega < 1/2
};

/// How the fixed-rate baselines compute omega (their weight is always
/// omega + (1 - omega) * epsilon):
///   GammaPrior  Gamma outlier branch with the rate frozen at sor_b0
///   Bernoulli   exact two-point indicator posterior (I in {epsilon, 1})
enum class SorVariant { GammaPrior, Bernoulli };

struct SmootherOptions {
  double kappa = 0.0;
  bool use_imq = false;         // IMQ weights on the first forward pass
  bool keep_history = true;     // retain per-iteration IndicatorState copies
  double sor_b0 = 1.0;          // fixed rate used by the SOR/ROR baselines
  SorVariant sor_variant = SorVariant::Bernoulli;
  std::function<void(const VbIterationDiag&)> on_iteration;
};

struct SmootherRun {
  SmootherTrace trace;
  IndicatorState indicators;
  std::vector<IndicatorState> history;
  int iterations = 0;
  int pd_repairs = 0;

  std::vector<Vec> smoothed_means() const {
    std::vector<Vec> out;
    out.reserve(trace.steps.size());
    for (const auto& s : trace.steps) {
      out.push_back(s.smoothed.mean);
    }
    return out;
  }
};

namespace detail {

enum class WeightPolicy { Adaptive, FixedRate, ScalarFixedRate };

inline SmootherRun run_vb_smoother(WeightPolicy policy, const DynamicsModel& model,
                                   const SensorSuite& suite, const MeasurementSet& meas,
                                   const GaussianBeliefd& x0, const VbHyperparams& hp,
                                   const SmootherOptions& opts) {
  hp.validate();
  suite.validate();
  const int t_steps = meas.steps();
  const int m = suite.size();
  const double alpha = hp.alpha();
  const double lzeta = log_zeta(hp.theta, hp.a, alpha);
  const double lz_bern = bernoulli_logit_base(0.5, hp.theta, hp.epsilon);
  const double b0 =
      policy == WeightPolicy::Adaptive ? (hp.A - 1.0) / hp.B : opts.sor_b0;

  SmootherRun run;
  run.indicators = IndicatorState::neutral(t_steps, m, b0);
  Mat weights = Mat::Ones(t_steps, m);
  std::vector<Vec> prev_means(t_steps);
  Vec prev_b_hat = run.indicators.b_hat;

  for (int iter = 1; iter <= hp.max_iters; ++iter) {
    const bool imq_pass = opts.use_imq && iter == 1;
    FilterTrace ftrace =
        forward_pass(model, suite, meas, weights, x0, opts.kappa,
                     imq_pass ? std::optional<double>(hp.imq_c) : std::nullopt);
    run.pd_repairs += ftrace.pd_repairs;
    run.trace = backward_pass(ftrace);
    run.pd_repairs += run.trace.pd_repairs;
    run.iterations = iter;

    IndicatorState& ind = run.indicators;
    int unmasked = 0;
    int suspicious = 0;
    for (int k = 0; k < t_steps; ++k) {
      const BoolArray mask_row = meas.mask.row(k);
      const Vec w_row =
          expected_sq_residual(run.trace.steps[k].smoothed, meas.values.row(k), suite,
                               opts.kappa, mask_row, &run.pd_repairs);
      ind.W.row(k) = w_row;

      if (policy == WeightPolicy::ScalarFixedRate) {
        // One indicator per step: collapse the residuals of the visible sensors
        // and accept/reject the whole vector.
        double w_sum = 0.0;
        int m_eff = 0;
        for (int l = 0; l < m; ++l) {
          if (mask_row[l]) {
            w_sum += w_row[l];
            ++m_eff;
          }
        }
        double step_weight = 1.0;
        double om = 1.0;
        double beta_s = b0;
        if (m_eff > 0) {
          beta_s = 0.5 * w_sum + b0;
          if (opts.sor_variant == SorVariant::GammaPrior) {
            const double alpha_s = hp.a + 0.5 * m_eff;
            const double lz_s = log_zeta(hp.theta, hp.a, alpha_s);
            om = omega_from_logit(w_sum, b0, hp.a, alpha_s, lz_s);
          } else {
            om = bernoulli_omega(
                w_sum, bernoulli_logit_base(0.5 * m_eff, hp.theta, hp.epsilon),
                hp.epsilon);
          }
          step_weight =
              std::clamp(om + (1.0 - om) * hp.epsilon, hp.epsilon, 1.0);
          unmasked += m_eff;
          if (om < 0.5) {
            suspicious += m_eff;
          }
        }
        for (int l = 0; l < m; ++l) {
          const bool present = mask_row[l];
          ind.beta(k, l) = present ? beta_s : b0;
          ind.omega(k, l) = present ? om : 1.0;
          ind.expect_I(k, l) = present ? step_weight : 1.0;
        }
        ind.b_hat[k] = b0;
        continue;
      }

      std::vector<double> om_packed, beta_packed;
      om_packed.reserve(m);
      beta_packed.reserve(m);
      for (int l = 0; l < m; ++l) {
        if (!mask_row[l]) {
          ind.beta(k, l) = ind.b_hat[k];
          ind.omega(k, l) = 1.0;
          ind.expect_I(k, l) = 1.0;
          continue;
        }
        const double beta = 0.5 * w_row[l] + ind.b_hat[k];
        double om;
        if (policy == WeightPolicy::Adaptive ||
            opts.sor_variant == SorVariant::GammaPrior) {
          om = omega_from_logit(w_row[l], ind.b_hat[k], hp.a, alpha, lzeta);
        } else {
          om = bernoulli_omega(w_row[l], lz_bern, hp.epsilon);
        }
        ind.beta(k, l) = beta;
        ind.omega(k, l) = om;
        om_packed.push_back(om);
        beta_packed.push_back(beta);
        ++unmasked;
        if (om < 0.5) {
          ++suspicious;
        }
      }
      if (policy == WeightPolicy::Adaptive && !om_packed.empty()) {
        ind.b_hat[k] = update_b(
            Eigen::Map<const Vec>(om_packed.data(), om_packed.size()),
            Eigen::Map<const Vec>(beta_packed.data(), beta_packed.size()), hp);
      }
      for (int l = 0; l < m; ++l) {
        if (!mask_row[l]) {
          continue;
        }
        const double om = ind.omega(k, l);
        if (policy == WeightPolicy::Adaptive) {
          // Adaptive weight: the indicator posterior mean, Gamma branch kept.
          ind.expect_I(k, l) = indicator_expectation(om, ind.beta(k, l), hp);
        } else {
          // Selective baseline: reject toward epsilon, no rate learning.
          ind.expect_I(k, l) =
              std::clamp(om + (1.0 - om) * hp.epsilon, hp.epsilon, 1.0);
        }
      }
    }
    weights = ind.expect_I;
    if (opts.keep_history) {
      run.history.push_back(ind);
    }

    // Convergence tracks the smoothed state and, for the adaptive smoother,
    // the learned rate: the rate settles slower than the state, and stopping
    // before it does would leave the indicator quantities off their VB fixed
    // point.
    double delta = std::numeric_limits<double>::infinity();
    if (iter > 1) {
      delta = 0.0;
      for (int k = 0; k < t_steps; ++k) {
        const Vec& mean = run.trace.steps[k].smoothed.mean;
        delta = std::max(delta,
                         (mean - prev_means[k]).norm() / (1.0 + mean.norm()));
        delta = std::max(delta, std::abs(ind.b_hat[k] - prev_b_hat[k]) /
                                    (1.0 + std::abs(ind.b_hat[k])));
      }
    }
    for (int k = 0; k < t_steps; ++k) {
      prev_means[k] = run.trace.steps[k].smoothed.mean;
    }
    prev_b_hat = ind.b_hat;
    if (opts.on_iteration) {
      VbIterationDiag diag;
      diag.iteration = iter;
      diag.max_state_delta = delta;
      diag.mean_b_hat = t_steps > 0 ? ind.b_hat.mean() : b0;
      diag.omega_below_half =
          unmasked > 0 ? static_cast<double>(suspicious) / unmasked : 0.0;
      opts.on_iteration(diag);
    }
    if (delta < hp.tol) {
      break;
    }
  }
  return run;
}

}  // namespace detail

/// Adaptive selective smoother: VB loop alternating the unscented RTS pass
/// with per-sensor indicator posteriors and per-step learning of the Gamma
/// rate b_hat.
inline SmootherRun run_asor(const DynamicsModel& model, const SensorSuite& suite,
                            const MeasurementSet& meas, const GaussianBeliefd& x0,
                            const VbHyperparams& hp, const SmootherOptions& opts = {}) {
  return detail::run_vb_smoother(detail::WeightPolicy::Adaptive, model, suite, meas, x0,
                                 hp, opts);
}

/// Selective baseline: the same VB loop with the rate held at sor_b0 and
/// weights omega + (1 - omega) * epsilon (no rate adaptation).
inline SmootherRun run_sor(const DynamicsModel& model, const SensorSuite& suite,
                           const MeasurementSet& meas, const GaussianBeliefd& x0,
                           const VbHyperparams& hp, const SmootherOptions& opts = {}) {
  return detail::run_vb_smoother(detail::WeightPolicy::FixedRate, model, suite, meas, x0,
                                 hp, opts);
}

/// Whole-vector baseline: a single indicator per time step computed from the
/// summed normalized squared residual; either keeps or rejects the entire
/// measurement vector.
inline SmootherRun run_ror(const DynamicsModel& model, const SensorSuite& suite,
                           const MeasurementSet& meas, const GaussianBeliefd& x0,
                           const VbHyperparams& hp, const SmootherOptions& opts = {}) {
  return detail::run_vb_smoother(detail::WeightPolicy::ScalarFixedRate, model, suite,
                                 meas, x0, hp, opts);
}

/// Plain unscented RTS smoother: unit weights, a single forward/backward pass.
inline SmootherRun run_plain(const DynamicsModel& model, const SensorSuite& suite,
                             const MeasurementSet& meas, const GaussianBeliefd& x0,
                             double kappa = 0.0) {
  const int t_steps = meas.steps();
  const int m = suite.size();
  SmootherRun run;
  FilterTrace ftrace =
      forward_pass(model, suite, meas, Mat::Ones(t_steps, m), x0, kappa);
  run.pd_repairs += ftrace.pd_repairs;
  run.trace = backward_pass(ftrace);
  run.pd_repairs += run.trace.pd_repairs;
  run.iterations = 1;
  run.indicators = IndicatorState::neutral(t_steps, m, 1.0);
  return run;
}

/// Oracle baseline: masks every contaminated entry using the ground-truth
/// outlier mask, then runs the plain smoother once.
inline SmootherRun run_ideal(const DynamicsModel& model, const SensorSuite& suite,
                             const MeasurementSet& meas, const BoolMatrix& outlier_mask,
                             const GaussianBeliefd& x0, double kappa = 0.0) {
  MeasurementSet cleaned = meas;
  cleaned.mask = meas.mask && !outlier_mask;
  return run_plain(model, suite, cleaned, x0, kappa);
}

/// Smoother selector used by the benchmark harness and the CLI.
enum class Method { Plain, Ideal, Asor, AsorImq, Sor, Ror };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Plain:
      return "plain";
    case Method::Ideal:
      return "ideal";
    case Method::Asor:
      return "asor";
    case Method::AsorImq:
      return "asor-imq";
    case Method::Sor:
      return "sor";
    case Method::Ror:
      return "ror";
  }
  return "unknown";
}

inline Method parse_method(const std::string& name) {
  if (name == "plain") return Method::Plain;
  if (name == "ideal") return Method::Ideal;
  if (name == "asor") return Method::Asor;
  if (name == "asor-imq") return Method::AsorImq;
  if (name == "sor") return Method::Sor;
  if (name == "ror") return Method::Ror;
  throw std::invalid_argument("unknown method '" + name + "'");
}

/// Run one method. `outlier_mask` is required for the ideal oracle only.
inline SmootherRun run_method(Method method, const DynamicsModel& model,
                              const SensorSuite& suite, const MeasurementSet& meas,
                              const GaussianBeliefd& x0, const VbHyperparams& hp,
                              const SmootherOptions& opts = {},
                              const BoolMatrix* outlier_mask = nullptr) {
  switch (method) {
    case Method::Plain:
      return run_plain(model, suite, meas, x0, opts.kappa);
    case Method::Ideal:
      if (outlier_mask == nullptr) {
        throw std::invalid_argument("run_method: ideal needs the outlier ground truth");
      }
      return run_ideal(model, suite, meas, *outlier_mask, x0, opts.kappa);
    case Method::Asor:
      return run_asor(model, suite, meas, x0, hp, opts);
    case Method::AsorImq: {
      SmootherOptions imq = opts;
      imq.use_imq = true;
      return run_asor(model, suite, meas, x0, hp, imq);
    }
    case Method::Sor:
      return run_sor(model, suite, meas, x0, hp, opts);
    case Method::Ror:
      return run_ror(model, suite, meas, x0, hp, opts);
  }
  throw std::logic_error("run_method: unhandled method");
}

}  // namespace trsmooth
