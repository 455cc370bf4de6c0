#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "trsmooth/simulator.hpp"
#include "trsmooth/vb.hpp"

using namespace trsmooth;

namespace {

VbHyperparams default_hp() { return VbHyperparams{}; }

/// Grid-search maximizer of the per-step b objective
///   sum_i (1 - omega_i) [a ln b - b alpha/beta_i] + (A - 1) ln b - B b
/// over (0, 10 b_hat], used as the independent check of update_b.
double grid_maximize_b(const Vec& omega_row, const Vec& beta_row, const VbHyperparams& hp,
                       double b_hat, int grid = 10000) {
  double best_b = 0.0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int g = 1; g <= grid; ++g) {
    const double b = 10.0 * b_hat * g / grid;
    double val = (hp.A - 1.0) * std::log(b) - hp.B * b;
    for (Eigen::Index i = 0; i < omega_row.size(); ++i) {
      val += (1.0 - omega_row[i]) *
             (hp.a * std::log(b) - b * hp.alpha() / beta_row[i]);
    }
    if (val > best_val) {
      best_val = val;
      best_b = b;
    }
  }
  return best_b;
}

/// Small contaminated tracking scenario shared by the smoother tests.
struct Scenario {
  DynamicsModel model;
  SensorSuite suite;
  std::vector<Vec> states;
  SimulatedMeasurements sim;
  GaussianBeliefd x0;

  Scenario(int t_steps, int m, double lambda, double sigma, unsigned seed) {
    model = coordinated_turn_model(1.0, 0.1, 1.75e-4);
    suite = build_sensor_grid(m);
    Vec mean(5);
    mean << 0, 10, 0, -5, M_PI / 180;
    const Mat p0 = 10.0 * model.process_noise;
    std::mt19937_64 rng(seed);
    states = simulate_trajectory(model, mean, p0, t_steps, rng);
    sim = simulate_measurements(states, suite, lambda, sigma, rng);
    x0 = {mean, p0};
  }

  double rmse_of(const SmootherRun& run) const {
    double acc = 0.0;
    for (size_t k = 0; k < run.trace.steps.size(); ++k) {
      const Vec& est = run.trace.steps[k].smoothed.mean;
      const Vec& truth = states[k + 1];
      acc += std::pow(est[0] - truth[0], 2) + std::pow(est[2] - truth[2], 2);
    }
    return std::sqrt(acc / run.trace.steps.size());
  }
};

}  // namespace

TEST_CASE("omega drops to zero for huge residuals and stays finite") {
  const VbHyperparams hp = default_hp();
  CHECK(omega(1e6, 1.0, hp) < 1e-10);
  CHECK(omega(1e308, 1.0, hp) == 0.0);
}

TEST_CASE("omega worked value at W = 0") {
  VbHyperparams hp = default_hp();
  // zeta = Gamma(1.5)/Gamma(1) = sqrt(pi)/2, beta = 1: omega = 1/(1 + sqrt(pi)/2).
  const double expected = 1.0 / (1.0 + std::sqrt(M_PI) / 2.0);
  CHECK(omega(0.0, 1.0, hp) == doctest::Approx(expected).epsilon(1e-10));
  CHECK(omega(0.0, 1.0, hp) == doctest::Approx(0.5302).epsilon(1e-3));
}

TEST_CASE("omega approaches one when the prior excludes outliers") {
  VbHyperparams hp = default_hp();
  hp.theta = 1.0 - 1e-12;
  CHECK(omega(50.0, 1.0, hp) > 0.999);
}

TEST_CASE("omega is strictly decreasing in W beyond the analytic threshold") {
  // d(logit)/dW = (1 - alpha/beta)/2 with beta = W/2 + b, so omega rises on
  // W < 2(alpha - b) when b < alpha and falls strictly after that.
  const VbHyperparams hp = default_hp();
  for (double b : {0.3, 1.0, 5.0}) {
    const double w0 = std::max(0.25, 2.0 * (hp.alpha() - b) + 0.25);
    double prev = omega(w0, b, hp);
    for (double w = w0 * 1.3; w < 2000.0; w *= 1.7) {
      const double cur = omega(w, b, hp);
      CHECK(cur < prev);
      prev = cur;
    }
    // The toe below the threshold is a small bump, not a rejection regime.
    if (b < hp.alpha()) {
      CHECK(omega(0.0, b, hp) < omega(2.0 * (hp.alpha() - b), b, hp));
    }
  }
}

TEST_CASE("indicator_expectation endpoints and clamping") {
  VbHyperparams hp = default_hp();
  CHECK(indicator_expectation(1.0, 2.0, hp) == 1.0);
  CHECK(indicator_expectation(0.0, 3.0, hp) == doctest::Approx(hp.alpha() / 3.0));
  // The raw value 0.5302 + 0.4698 * 1.5 = 1.2349 exceeds one and is clamped.
  CHECK(indicator_expectation(0.5302, 1.0, hp) == 1.0);
  hp.clamp_indicator_upper = false;
  CHECK(indicator_expectation(0.5302, 1.0, hp) == doctest::Approx(1.2349).epsilon(1e-3));
  hp.clamp_indicator_upper = true;
  CHECK(indicator_expectation(0.0, 1e12, hp) == hp.epsilon);
}

TEST_CASE("update_b closed form") {
  VbHyperparams hp = default_hp();
  // All clean: the sums vanish and b reverts to the prior mode (A-1)/B.
  CHECK(update_b(Vec::Ones(7), Vec::Ones(7), hp) ==
        doctest::Approx((hp.A - 1.0) / hp.B));
  // Worked two-sensor example at a = 1, A = 2, B = 1:
  // A_bar = 4, B_bar = 1 + 1.5 + 0.75 = 3.25.
  hp.a = 1.0;
  hp.A = 2.0;
  hp.B = 1.0;
  Vec om(2), beta(2);
  om << 0.0, 0.0;
  beta << 1.0, 2.0;
  CHECK(update_b(om, beta, hp) == doctest::Approx(3.0 / 3.25).epsilon(1e-12));
}

TEST_CASE("update_b maximizes the per-step objective (grid oracle)") {
  VbHyperparams hp = default_hp();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> ub(0.1, 8.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 10);
    Vec om(m), beta(m);
    for (int i = 0; i < m; ++i) {
      om[i] = u01(rng);
      beta[i] = ub(rng);
    }
    const double b_hat = update_b(om, beta, hp);
    const double b_grid = grid_maximize_b(om, beta, hp, b_hat);
    CHECK(std::abs(b_grid - b_hat) <= 10.0 * b_hat / 10000.0 + 1e-12);
  }
}

TEST_CASE("expected_sq_residual basics") {
  SensorSuite suite;
  suite.pos_x_index = 0;
  suite.pos_y_index = 1;
  suite.sensors.push_back({SensorKind::Range, {0, 0}, 10.0});

  // Deterministic state: spread vanishes, so W = residual^2 / R.
  GaussianBeliefd sharp{Vec::Zero(2), Mat::Zero(2, 2)};
  sharp.mean << 3, 4;
  Vec y(1);
  y << 5.0;  // exactly h(mean)
  const Vec w0 = expected_sq_residual(sharp, y, suite, 0.0);
  CHECK(w0[0] == doctest::Approx(0.0).epsilon(1e-6));

  y << 5.0 + std::sqrt(10.0);
  const Vec w1 = expected_sq_residual(sharp, y, suite, 0.0);
  CHECK(w1[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("expected_sq_residual matches a sampling estimate") {
  // 10^6-draw Monte Carlo of <(y - h(x))^2>/R for a linear sensor.
  SensorSuite suite;
  suite.pos_x_index = 0;
  suite.pos_y_index = 1;
  Sensor s;
  s.kind = SensorKind::Custom;
  s.noise_variance = 2.0;
  s.custom = [](const Vec& x) { return 0.7 * x[0] - 1.3 * x[1]; };
  suite.sensors.push_back(s);

  std::mt19937_64 rng(123);
  GaussianBeliefd belief{oracles::random_vec(2, rng), oracles::random_spd(2, rng)};
  Vec y(1);
  y << 2.5;

  const Vec w = expected_sq_residual(belief, y, suite, 0.0);

  const int samples = 1000000;
  std::normal_distribution<double> unit(0.0, 1.0);
  const Mat l = Eigen::LLT<Mat>(belief.cov).matrixL();
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < samples; ++i) {
    Vec z(2);
    z << unit(rng), unit(rng);
    const Vec x = belief.mean + l * z;
    const double r = y[0] - s.custom(x);
    acc += r * r;
    acc2 += r * r * r * r;
  }
  const double mc = acc / samples / s.noise_variance;
  const double var = (acc2 / samples - std::pow(acc / samples, 2)) /
                     std::pow(s.noise_variance, 2);
  const double se = std::sqrt(var / samples);
  CHECK(std::abs(w[0] - mc) < 3.0 * se);
}

TEST_CASE("imq_weight influence is bounded") {
  Vec r(2);
  r << 3.0, 4.0;
  CHECK(imq_weight(Vec::Zero(2), 5.0) == 1.0);
  CHECK(imq_weight(r, 5.0) == doctest::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("run_asor on clean data stays close to the plain smoother") {
  // With the prior matched to the no-outlier regime (theta near one), every
  // weight sits at or near its clamp and the adaptive smoother coincides with
  // the plain pass.
  Scenario sc(40, 2, 0.0, 0.0, 424);
  VbHyperparams hp = default_hp();
  hp.theta = 0.9999;
  const SmootherRun asor = run_asor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp);
  const SmootherRun plain = run_plain(sc.model, sc.suite, sc.sim.measurements, sc.x0);
  CHECK(asor.indicators.expect_I.minCoeff() > 0.9);
  CHECK(std::abs(sc.rmse_of(asor) - sc.rmse_of(plain)) < 1e-3);
  // No outliers: b reverts to the prior mode at every step.
  CHECK((asor.indicators.b_hat.array() - (hp.A - 1.0) / hp.B).abs().maxCoeff() < 0.2);
  CHECK(asor.iterations <= 5);
}

TEST_CASE("weights stay inside [epsilon, 1] through every iteration") {
  Scenario sc(40, 6, 0.4, std::sqrt(1000.0), 77);
  VbHyperparams hp = default_hp();
  SmootherOptions opts;
  opts.keep_history = true;
  const SmootherRun run = run_asor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp, opts);
  CHECK(!run.history.empty());
  for (const IndicatorState& ind : run.history) {
    CHECK(ind.expect_I.minCoeff() >= hp.epsilon);
    CHECK(ind.expect_I.maxCoeff() <= 1.0);
  }
}

TEST_CASE("redescending influence: weight * sqrt(W) eventually non-increasing") {
  const VbHyperparams hp = default_hp();
  const double b_hat = 1.0;
  double prev = std::numeric_limits<double>::infinity();
  bool decreasing_tail = true;
  for (double w = 10.0; w < 1e6; w *= 1.5) {
    const double om = omega(w, b_hat, hp);
    const double weight = indicator_expectation(om, 0.5 * w + b_hat, hp);
    const double influence = weight * std::sqrt(w);
    if (influence > prev + 1e-12) {
      decreasing_tail = false;
    }
    prev = influence;
  }
  CHECK(decreasing_tail);
}

TEST_CASE("VB fixed point: converged indicators are self-consistent") {
  Scenario sc(30, 4, 0.3, std::sqrt(1000.0), 99);
  VbHyperparams hp = default_hp();
  hp.tol = 1e-6;
  hp.max_iters = 80;
  const SmootherRun run = run_asor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp);
  REQUIRE(run.iterations < 80);

  // Recompute W, beta, omega, b, <I> from the final trace and compare.
  const IndicatorState& ind = run.indicators;
  double max_change = 0.0;
  for (int k = 0; k < 30; ++k) {
    const Vec w_row = expected_sq_residual(run.trace.steps[k].smoothed,
                                           sc.sim.measurements.values.row(k), sc.suite,
                                           0.0, sc.sim.measurements.mask.row(k));
    Vec om(4), beta(4);
    for (int l = 0; l < 4; ++l) {
      beta[l] = 0.5 * w_row[l] + ind.b_hat[k];
      om[l] = omega(w_row[l], ind.b_hat[k], hp);
      max_change = std::max(max_change, std::abs(om[l] - ind.omega(k, l)));
      max_change = std::max(max_change, std::abs(w_row[l] - ind.W(k, l)) /
                                            std::max(1.0, ind.W(k, l)));
    }
    const double b_new = update_b(om, beta, hp);
    max_change = std::max(max_change, std::abs(b_new - ind.b_hat[k]));
    for (int l = 0; l < 4; ++l) {
      const double i_new = indicator_expectation(om[l], beta[l], hp);
      max_change = std::max(max_change, std::abs(i_new - ind.expect_I(k, l)));
    }
  }
  CHECK(max_change < 10.0 * hp.tol);
}

TEST_CASE("run_sor with theta near one reduces to the plain smoother") {
  Scenario sc(25, 4, 0.0, 0.0, 5);
  VbHyperparams hp = default_hp();
  hp.theta = 1.0 - 1e-9;
  const SmootherRun sor = run_sor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp);
  const SmootherRun plain = run_plain(sc.model, sc.suite, sc.sim.measurements, sc.x0);
  for (int k = 0; k < 25; ++k) {
    CHECK((sor.trace.steps[k].smoothed.mean - plain.trace.steps[k].smoothed.mean).norm() <
          1e-4);
  }
  CHECK(sor.indicators.omega.minCoeff() > 0.999);
}

TEST_CASE("run_sor drops a hopeless sensor's weight to epsilon") {
  Scenario sc(30, 4, 0.0, 0.0, 21);
  // A gross fault on one range sensor at a few steps.
  sc.sim.measurements.values(10, 3) += 300.0;
  sc.sim.measurements.values(11, 3) += 300.0;
  const VbHyperparams hp = default_hp();
  const SmootherRun sor = run_sor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp);
  CHECK(sor.indicators.omega(10, 3) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sor.indicators.expect_I(10, 3) == doctest::Approx(hp.epsilon).epsilon(1e-6));
  CHECK(sor.indicators.expect_I(11, 3) == doctest::Approx(hp.epsilon).epsilon(1e-6));
  // Clean sensors keep (essentially) full weight.
  CHECK(sor.indicators.expect_I(10, 0) > 0.9);
}

TEST_CASE("run_ror equals run_sor on single-sensor problems") {
  DynamicsModel model = random_walk_model(0.1);
  SensorSuite suite;
  suite.pos_x_index = 0;
  suite.pos_y_index = 1;
  suite.sensors.push_back({SensorKind::Range, {10, 0}, 1.0});
  std::mt19937_64 rng(8);
  const int t_steps = 30;
  std::vector<Vec> states =
      simulate_trajectory(model, Vec::Zero(2), Mat::Identity(2, 2), t_steps, rng);
  SimulatedMeasurements sim =
      simulate_measurements(states, suite, 0.2, std::sqrt(100.0), rng);
  GaussianBeliefd x0{Vec::Zero(2), Mat::Identity(2, 2)};
  const VbHyperparams hp = default_hp();
  const SmootherRun sor = run_sor(model, suite, sim.measurements, x0, hp);
  const SmootherRun ror = run_ror(model, suite, sim.measurements, x0, hp);
  REQUIRE(sor.iterations == ror.iterations);
  for (int k = 0; k < t_steps; ++k) {
    CHECK((sor.trace.steps[k].smoothed.mean - ror.trace.steps[k].smoothed.mean).norm() <
          1e-12);
    CHECK(std::abs(sor.indicators.expect_I(k, 0) - ror.indicators.expect_I(k, 0)) <
          1e-12);
  }
}

TEST_CASE("run_ror downweights whole vectors and loses to run_asor") {
  // One corrupted sensor out of many: rejecting the entire vector throws away
  // the clean information.
  double asor_total = 0.0, ror_total = 0.0;
  for (unsigned seed : {11u, 12u, 13u}) {
    Scenario sc(40, 10, 0.0, 0.0, seed);
    // Corrupt a single range sensor hard at a third of the steps.
    std::mt19937_64 rng(seed * 7 + 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 40; ++k) {
      if (u(rng) < 0.33) {
        sc.sim.measurements.values(k, 7) += 300.0;
      }
    }
    const VbHyperparams hp = default_hp();
    asor_total += sc.rmse_of(run_asor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp));
    ror_total += sc.rmse_of(run_ror(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp));
  }
  CHECK(asor_total < ror_total);
}

TEST_CASE("run_ideal with an empty mask is the plain smoother") {
  Scenario sc(20, 4, 0.0, 0.0, 3);
  const BoolMatrix no_outliers = BoolMatrix::Constant(20, 4, false);
  const SmootherRun ideal =
      run_ideal(sc.model, sc.suite, sc.sim.measurements, no_outliers, sc.x0);
  const SmootherRun plain = run_plain(sc.model, sc.suite, sc.sim.measurements, sc.x0);
  for (int k = 0; k < 20; ++k) {
    CHECK((ideal.trace.steps[k].smoothed.mean - plain.trace.steps[k].smoothed.mean)
              .norm() == 0.0);
  }
}

TEST_CASE("run_ideal skips fully contaminated steps") {
  Scenario sc(20, 4, 0.0, 0.0, 3);
  BoolMatrix outliers = BoolMatrix::Constant(20, 4, false);
  outliers.row(10).setConstant(true);
  const SmootherRun ideal =
      run_ideal(sc.model, sc.suite, sc.sim.measurements, outliers, sc.x0);
  const auto& step = ideal.trace.steps[10];
  CHECK((step.filtered.mean - step.predicted.mean).norm() == 0.0);
}

TEST_CASE("contaminated scenario: adaptive smoother beats the baselines") {
  double asor = 0.0, sor = 0.0, ror = 0.0, ideal = 0.0;
  const int reps = 4;
  for (unsigned seed = 100; seed < 100 + reps; ++seed) {
    Scenario sc(60, 10, 0.4, std::sqrt(1000.0), seed);
    const VbHyperparams hp = default_hp();
    asor += sc.rmse_of(run_asor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp));
    sor += sc.rmse_of(run_sor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp));
    ror += sc.rmse_of(run_ror(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp));
    ideal += sc.rmse_of(run_ideal(sc.model, sc.suite, sc.sim.measurements,
                                  sc.sim.outliers.mask, sc.x0));
  }
  CHECK(ideal <= asor);
  CHECK(asor < sor);
  CHECK(sor < ror);
}

TEST_CASE("SOR and ASOR agree in the no-outlier regime") {
  // With lambda = 0 both selective smoothers keep essentially full weights,
  // so their RMSE ratio over 50 Monte Carlo runs stays within 10%.
  double asor_sum = 0.0, sor_sum = 0.0;
  const VbHyperparams hp = default_hp();
  for (unsigned seed = 500; seed < 550; ++seed) {
    Scenario sc(50, 8, 0.0, 0.0, seed);
    asor_sum += sc.rmse_of(run_asor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp));
    sor_sum += sc.rmse_of(run_sor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp));
  }
  const double ratio = asor_sum / sor_sum;
  CHECK(ratio > 0.9);
  CHECK(ratio < 1.1);
}

TEST_CASE("iteration diagnostics are delivered") {
  Scenario sc(20, 4, 0.3, std::sqrt(1000.0), 17);
  VbHyperparams hp = default_hp();
  int calls = 0;
  double last_delta = -1.0;
  SmootherOptions opts;
  opts.on_iteration = [&](const VbIterationDiag& d) {
    ++calls;
    CHECK(d.iteration == calls);
    CHECK(d.mean_b_hat > 0.0);
    CHECK(d.omega_below_half >= 0.0);
    CHECK(d.omega_below_half <= 1.0);
    last_delta = d.max_state_delta;
  };
  const SmootherRun run = run_asor(sc.model, sc.suite, sc.sim.measurements, sc.x0, hp, opts);
  CHECK(calls == run.iterations);
  CHECK(last_delta < hp.tol);
}

TEST_CASE("divergence reports the offending step") {
  // A transition that explodes produces non-finite predictions quickly.
  DynamicsModel model;
  model.state_dim = 1;
  model.transition = [](const Vec& x) { return Vec(1e160 * x); };
  model.process_noise = Mat::Identity(1, 1);
  SensorSuite suite;
  suite.pos_x_index = 0;
  suite.pos_y_index = 0;
  Sensor s;
  s.kind = SensorKind::Custom;
  s.noise_variance = 1.0;
  s.custom = [](const Vec& x) { return x[0]; };
  suite.sensors.push_back(s);
  MeasurementSet meas;
  meas.values = Mat::Ones(6, 1);
  meas.mask = BoolMatrix::Constant(6, 1, true);
  meas.times = {0, 1, 2, 3, 4, 5};
  GaussianBeliefd x0{Vec::Ones(1), Mat::Identity(1, 1)};
  try {
    forward_pass(model, suite, meas, Mat::Ones(6, 1), x0);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step >= 0);
    CHECK(e.step < 6);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}
