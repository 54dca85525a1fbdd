#include "bme/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bme {

namespace {

using nlohmann::json;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what());
  }
}

void expect_keys(const json& j, std::initializer_list<const char*> allowed,
                 const char* context) {
  if (!j.is_object()) {
    throw SchemaMismatch(std::string(context) + ": expected an object");
  }
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw SchemaMismatch(std::string(context) + ": unknown key \"" +
                           item.key() + "\"");
    }
  }
}

double num_or(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number()) {
    throw SchemaMismatch(std::string(key) + " must be a number");
  }
  return v.get<double>();
}

int int_or(const json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) {
    throw SchemaMismatch(std::string(key) + " must be an integer");
  }
  return v.get<int>();
}

std::uint64_t seed_or(const json& j, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !v.is_number_integer()) {
    throw SchemaMismatch(std::string(key) + " must be a nonnegative integer");
  }
  const auto s = v.get<std::int64_t>();
  if (s < 0) throw SchemaMismatch(std::string(key) + " must be nonnegative");
  return static_cast<std::uint64_t>(s);
}

std::string str_at(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_string()) {
    throw SchemaMismatch(std::string(key) + " must be a string");
  }
  return v.get<std::string>();
}

GrowthPattern pattern_from(const std::string& name) {
  if (name == "sigmoid") return GrowthPattern::Sigmoid;
  if (name == "log" || name == "logarithmic") return GrowthPattern::Logarithmic;
  if (name == "exp" || name == "exponential") return GrowthPattern::Exponential;
  throw SchemaMismatch("unknown growth pattern \"" + name +
                       "\"; expected sigmoid, log or exp");
}

GrowthSpec growth_from(const json& j, const char* context) {
  expect_keys(j, {"pattern", "scale", "rate", "midpoint", "baseline", "noise_std"},
              context);
  GrowthSpec g;
  if (j.contains("pattern")) g.pattern = pattern_from(str_at(j, "pattern"));
  g.scale = num_or(j, "scale", g.scale);
  g.rate = num_or(j, "rate", g.rate);
  g.midpoint = num_or(j, "midpoint", g.midpoint);
  g.baseline = num_or(j, "baseline", g.baseline);
  g.noise_std = num_or(j, "noise_std", g.noise_std);
  return g;
}

void check_schema_version(const json& j) {
  if (!j.contains("schema_version")) {
    throw SchemaMismatch("missing schema_version");
  }
  if (!j.at("schema_version").is_number_integer() ||
      j.at("schema_version").get<int>() != 1) {
    throw SchemaMismatch("unsupported schema_version; this build reads version 1");
  }
}

ScenarioSpec scenario_from(const json& j, const std::string& base_dir) {
  expect_keys(j,
              {"schema_version", "name", "seed", "horizon_total", "mpc_horizon",
               "controller", "growth", "series_csv", "forecast_noise_std", "ar",
               "initial", "references", "weights", "bounds", "pid", "game",
               "solver"},
              "scenario");
  ScenarioSpec s;
  if (j.contains("name")) s.name = str_at(j, "name");
  s.seed = seed_or(j, "seed", s.seed);
  s.horizon_total = int_or(j, "horizon_total", s.horizon_total);
  s.mpc_horizon = int_or(j, "mpc_horizon", s.mpc_horizon);
  if (j.contains("controller")) {
    s.controller = controller_from_name(str_at(j, "controller"));
  }

  if (j.contains("growth") && j.contains("series_csv")) {
    throw BadSpec("scenario: growth and series_csv are mutually exclusive");
  }
  if (j.contains("growth")) {
    const json& g = j.at("growth");
    expect_keys(g, {"nodes", "consumers", "unit_demand", "income_per_consumer"},
                "growth");
    SeriesSpec series;
    if (g.contains("nodes")) series.nodes = growth_from(g.at("nodes"), "growth.nodes");
    if (!g.contains("consumers")) {
      throw SchemaMismatch("growth: consumers curve is required");
    }
    series.consumers = growth_from(g.at("consumers"), "growth.consumers");
    series.unit_demand = num_or(g, "unit_demand", series.unit_demand);
    series.income_per_consumer =
        num_or(g, "income_per_consumer", series.income_per_consumer);
    s.growth = series;
  } else if (j.contains("series_csv")) {
    const json& sc = j.at("series_csv");
    std::string raw_path;
    double unit_demand = 1.0;
    double income_per_consumer = 0.05;
    if (sc.is_string()) {
      raw_path = sc.get<std::string>();
    } else {
      expect_keys(sc, {"path", "unit_demand", "income_per_consumer"}, "series_csv");
      raw_path = str_at(sc, "path");
      unit_demand = num_or(sc, "unit_demand", unit_demand);
      income_per_consumer = num_or(sc, "income_per_consumer", income_per_consumer);
    }
    std::filesystem::path p(raw_path);
    if (p.is_relative() && !base_dir.empty()) {
      p = std::filesystem::path(base_dir) / p;
    }
    s.series = load_timeseries_csv(p.string(), unit_demand, income_per_consumer);
  } else {
    throw BadSpec("scenario: provide either growth or series_csv");
  }

  s.forecast_noise_std = num_or(j, "forecast_noise_std", s.forecast_noise_std);
  if (j.contains("ar")) {
    const json& ar = j.at("ar");
    expect_keys(ar, {"differences", "order"}, "ar");
    s.ar_differences = int_or(ar, "differences", s.ar_differences);
    s.ar_order = int_or(ar, "order", s.ar_order);
  }
  if (j.contains("initial")) {
    const json& init = j.at("initial");
    expect_keys(init, {"supply", "reserve_usd", "reserve_tok"}, "initial");
    s.supply0 = num_or(init, "supply", s.supply0);
    s.reserve_usd0 = num_or(init, "reserve_usd", s.reserve_usd0);
    s.reserve_tok0 = num_or(init, "reserve_tok", s.reserve_tok0);
  }
  if (j.contains("references")) {
    const json& refs = j.at("references");
    expect_keys(refs, {"price", "buyback", "pay"}, "references");
    s.price_ref = num_or(refs, "price", s.price_ref);
    s.buyback_ref = num_or(refs, "buyback", s.buyback_ref);
    s.pay_ref = num_or(refs, "pay", s.pay_ref);
  }
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    expect_keys(w, {"beta_price", "beta_buyback", "beta_pay", "beta_supply"},
                "weights");
    s.weights.beta_price = num_or(w, "beta_price", s.weights.beta_price);
    s.weights.beta_buyback = num_or(w, "beta_buyback", s.weights.beta_buyback);
    s.weights.beta_pay = num_or(w, "beta_pay", s.weights.beta_pay);
    s.weights.beta_supply = num_or(w, "beta_supply", s.weights.beta_supply);
  }
  if (j.contains("bounds")) {
    const json& b = j.at("bounds");
    expect_keys(b,
                {"reserve_usd_min", "supply_min", "reserve_tok_min", "price_min",
                 "price_guard", "effective_price_min"},
                "bounds");
    s.bounds.reserve_usd_min = num_or(b, "reserve_usd_min", s.bounds.reserve_usd_min);
    s.bounds.supply_min = num_or(b, "supply_min", s.bounds.supply_min);
    s.bounds.reserve_tok_min = num_or(b, "reserve_tok_min", s.bounds.reserve_tok_min);
    s.bounds.price_min = num_or(b, "price_min", s.bounds.price_min);
    s.bounds.price_guard = num_or(b, "price_guard", s.bounds.price_guard);
    s.bounds.effective_price_min =
        num_or(b, "effective_price_min", s.bounds.effective_price_min);
  }
  if (j.contains("pid")) {
    const json& p = j.at("pid");
    expect_keys(p, {"kp", "ki", "kd", "actuation_scale", "integral_bound"}, "pid");
    s.pid.gains.kp = num_or(p, "kp", s.pid.gains.kp);
    s.pid.gains.ki = num_or(p, "ki", s.pid.gains.ki);
    s.pid.gains.kd = num_or(p, "kd", s.pid.gains.kd);
    s.pid.actuation_scale = num_or(p, "actuation_scale", s.pid.actuation_scale);
    s.pid.integral_bound = num_or(p, "integral_bound", s.pid.integral_bound);
  }
  if (j.contains("game")) {
    const json& g = j.at("game");
    expect_keys(g, {"gamma", "price_guard", "mc_samples", "demand_std", "mc_seed"},
                "game");
    s.game.gamma = num_or(g, "gamma", s.game.gamma);
    s.game.price_guard = num_or(g, "price_guard", s.game.price_guard);
    s.game.mc_samples = int_or(g, "mc_samples", s.game.mc_samples);
    s.game.demand_std = num_or(g, "demand_std", s.game.demand_std);
    s.game.mc_seed = seed_or(g, "mc_seed", s.game.mc_seed);
  }
  if (j.contains("solver")) {
    const json& o = j.at("solver");
    expect_keys(o,
                {"max_iterations", "cost_tolerance", "constraint_tolerance",
                 "penalty_init", "penalty_growth", "regularization_init",
                 "max_outer_iterations"},
                "solver");
    s.solver.max_iterations = int_or(o, "max_iterations", s.solver.max_iterations);
    s.solver.cost_tolerance = num_or(o, "cost_tolerance", s.solver.cost_tolerance);
    s.solver.constraint_tolerance =
        num_or(o, "constraint_tolerance", s.solver.constraint_tolerance);
    s.solver.penalty_init = num_or(o, "penalty_init", s.solver.penalty_init);
    s.solver.penalty_growth = num_or(o, "penalty_growth", s.solver.penalty_growth);
    s.solver.regularization_init =
        num_or(o, "regularization_init", s.solver.regularization_init);
    s.solver.max_outer_iterations =
        int_or(o, "max_outer_iterations", s.solver.max_outer_iterations);
  }

  if (s.horizon_total < 1) throw BadSpec("scenario: horizon_total must be >= 1");
  if (s.mpc_horizon < 1) throw BadSpec("scenario: mpc_horizon must be >= 1");
  if (!(s.supply0 > 0.0)) throw BadSpec("scenario: initial supply must be positive");
  return s;
}

}  // namespace

ScenarioSpec scenario_from_json(const std::string& text,
                                const std::string& base_dir) {
  const json j = parse(text);
  check_schema_version(j);
  return scenario_from(j, base_dir);
}

ScenarioSpec load_scenario(const std::string& path) {
  return scenario_from_json(slurp(path),
                            std::filesystem::path(path).parent_path().string());
}

ExperimentConfig experiment_from_json(const std::string& text,
                                      const std::string& base_dir) {
  const json j = parse(text);
  check_schema_version(j);
  expect_keys(j, {"schema_version", "name", "controllers", "scenarios"},
              "experiment");
  ExperimentConfig cfg;
  if (j.contains("name")) cfg.name = str_at(j, "name");
  if (!j.contains("controllers") || !j.at("controllers").is_array() ||
      j.at("controllers").empty()) {
    throw SchemaMismatch("experiment: controllers must be a nonempty array");
  }
  for (const auto& c : j.at("controllers")) {
    if (!c.is_string()) {
      throw SchemaMismatch("experiment: controllers entries must be strings");
    }
    cfg.controllers.push_back(controller_from_name(c.get<std::string>()));
  }
  if (!j.contains("scenarios") || !j.at("scenarios").is_array() ||
      j.at("scenarios").empty()) {
    throw SchemaMismatch("experiment: scenarios must be a nonempty array");
  }
  for (const auto& sj : j.at("scenarios")) {
    cfg.scenarios.push_back(scenario_from(sj, base_dir));
  }
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  return experiment_from_json(slurp(path),
                              std::filesystem::path(path).parent_path().string());
}

}  // namespace bme
