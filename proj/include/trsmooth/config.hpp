#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "trsmooth/models.hpp"
#include "trsmooth/vb.hpp"

namespace trsmooth {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ModelKind { CoordinatedTurn, RandomWalk };

inline const char* model_kind_name(ModelKind k) {
  return k == ModelKind::CoordinatedTurn ? "coordinated-turn" : "random-walk";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "coordinated-turn") return ModelKind::CoordinatedTurn;
  if (s == "random-walk") return ModelKind::RandomWalk;
  throw ConfigError("unknown model '" + s + "'");
}

/// Scenario description: model, contamination, estimator hyperparameters and
/// benchmark bookkeeping. Defaults reproduce the standard tracking benchmark
/// (T = 100, m = 50, lambda = 0.4, sigma = sqrt(1000)).
struct ScenarioConfig {
  ModelKind model = ModelKind::CoordinatedTurn;
  int t_steps = 100;
  int m = 50;
  double dt = 1.0;
  double eta1 = 0.1;
  double eta2 = 1.75e-4;
  double vartheta = 10.0;
  double lambda = 0.4;
  double sigma_factor = std::sqrt(1000.0);
  double kappa = 0.0;
  double rw_q = 0.1;
  VbHyperparams hp;
  double sor_b0 = 1.0;
  SorVariant sor_variant = SorVariant::Bernoulli;
  std::vector<Method> methods = {Method::Ideal, Method::Asor, Method::Sor, Method::Ror};
  int runs = 50;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  void validate() const {
    if (t_steps < 1) throw ConfigError("config: T must be >= 1");
    if (m < 1) throw ConfigError("config: m must be >= 1");
    if (model == ModelKind::CoordinatedTurn && (m < 2 || m % 2 != 0)) {
      throw ConfigError("config: the coordinated-turn sensor grid needs even m >= 2");
    }
    if (dt <= 0.0) throw ConfigError("config: dt must be positive");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("config: lambda must be in [0,1]");
    if (sigma_factor < 0.0) throw ConfigError("config: sigma_factor must be >= 0");
    if (vartheta < 0.0) throw ConfigError("config: vartheta must be >= 0");
    if (runs < 1) throw ConfigError("config: runs must be >= 1");
    if (methods.empty()) throw ConfigError("config: methods must be non-empty");
    if (sor_b0 <= 0.0) throw ConfigError("config: sor_b0 must be positive");
    try {
      hp.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  DynamicsModel make_model() const {
    return model == ModelKind::CoordinatedTurn
               ? coordinated_turn_model(dt, eta1, eta2)
               : random_walk_model(rw_q, 2, dt);
  }

  /// Prior mean for the tracking scenario; random-walk priors come from the
  /// dataset instead.
  Vec x0_mean() const {
    if (model == ModelKind::CoordinatedTurn) {
      Vec x(5);
      x << 0.0, 10.0, 0.0, -5.0, M_PI / 180.0;
      return x;
    }
    return Vec::Zero(2);
  }

  Mat x0_cov() const { return vartheta * make_model().process_noise; }

  int pos_x_index() const { return 0; }
  int pos_y_index() const { return model == ModelKind::CoordinatedTurn ? 2 : 1; }

  SmootherOptions smoother_options() const {
    SmootherOptions opts;
    opts.kappa = kappa;
    opts.sor_b0 = sor_b0;
    opts.sor_variant = sor_variant;
    opts.keep_history = false;
    return opts;
  }
};

namespace detail {

inline nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["model"] = model_kind_name(c.model);
  j["T"] = c.t_steps;
  j["m"] = c.m;
  j["dt"] = c.dt;
  j["eta1"] = c.eta1;
  j["eta2"] = c.eta2;
  j["vartheta"] = c.vartheta;
  j["lambda"] = c.lambda;
  j["sigma_factor"] = c.sigma_factor;
  j["kappa"] = c.kappa;
  j["rw_q"] = c.rw_q;
  j["sor_b0"] = c.sor_b0;
  j["sor_variant"] = c.sor_variant == SorVariant::GammaPrior ? "gamma-prior" : "bernoulli";
  j["runs"] = c.runs;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  nlohmann::json hp;
  hp["a"] = c.hp.a;
  hp["A"] = c.hp.A;
  hp["B"] = c.hp.B;
  hp["theta"] = c.hp.theta;
  hp["epsilon"] = c.hp.epsilon;
  hp["tol"] = c.hp.tol;
  hp["max_iters"] = c.hp.max_iters;
  hp["imq_c"] = c.hp.imq_c;
  hp["clamp_indicator_upper"] = c.hp.clamp_indicator_upper;
  j["hyperparams"] = hp;
  std::vector<std::string> names;
  names.reserve(c.methods.size());
  for (Method m : c.methods) {
    names.emplace_back(method_name(m));
  }
  j["methods"] = names;
  return j;
}

inline ScenarioConfig from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  try {
    if (j.contains("model")) c.model = parse_model_kind(j.at("model").get<std::string>());
    c.t_steps = j.value("T", c.t_steps);
    c.m = j.value("m", c.m);
    c.dt = j.value("dt", c.dt);
    c.eta1 = j.value("eta1", c.eta1);
    c.eta2 = j.value("eta2", c.eta2);
    c.vartheta = j.value("vartheta", c.vartheta);
    c.lambda = j.value("lambda", c.lambda);
    c.sigma_factor = j.value("sigma_factor", c.sigma_factor);
    c.kappa = j.value("kappa", c.kappa);
    c.rw_q = j.value("rw_q", c.rw_q);
    c.sor_b0 = j.value("sor_b0", c.sor_b0);
    if (j.contains("sor_variant")) {
      const std::string v = j.at("sor_variant").get<std::string>();
      if (v == "gamma-prior") {
        c.sor_variant = SorVariant::GammaPrior;
      } else if (v == "bernoulli") {
        c.sor_variant = SorVariant::Bernoulli;
      } else {
        throw ConfigError("config: unknown sor_variant '" + v + "'");
      }
    }
    c.runs = j.value("runs", c.runs);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("hyperparams")) {
      const auto& hp = j.at("hyperparams");
      c.hp.a = hp.value("a", c.hp.a);
      c.hp.A = hp.value("A", c.hp.A);
      c.hp.B = hp.value("B", c.hp.B);
      c.hp.theta = hp.value("theta", c.hp.theta);
      c.hp.epsilon = hp.value("epsilon", c.hp.epsilon);
      c.hp.tol = hp.value("tol", c.hp.tol);
      c.hp.max_iters = hp.value("max_iters", c.hp.max_iters);
      c.hp.imq_c = hp.value("imq_c", c.hp.imq_c);
      c.hp.clamp_indicator_upper =
          hp.value("clamp_indicator_upper", c.hp.clamp_indicator_upper);
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& name : j.at("methods")) {
        c.methods.push_back(parse_method(name.get<std::string>()));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

}  // namespace detail

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file '" + path + "'");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  ScenarioConfig c = detail::from_json(j);
  c.validate();
  return c;
}

inline void save_config(const ScenarioConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot write config file '" + path + "'");
  }
  out << detail::to_json(c).dump(2) << '\n';
}

}  // namespace trsmooth
