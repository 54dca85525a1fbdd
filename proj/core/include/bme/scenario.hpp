#pragma once

#include <string>

#include "bme/experiment.hpp"

namespace bme {

/// Parses a scenario config (schema_version 1). Relative series_csv paths
/// resolve against base_dir. ParseError for malformed JSON, SchemaMismatch
/// for unknown keys or wrong shapes, BadSpec for inconsistent values.
ScenarioSpec scenario_from_json(const std::string& text,
                                const std::string& base_dir = "");
ScenarioSpec load_scenario(const std::string& path);

/// Experiment config: a name, a controller list and inline scenarios.
ExperimentConfig experiment_from_json(const std::string& text,
                                      const std::string& base_dir = "");
ExperimentConfig load_experiment(const std::string& path);

}  // namespace bme
