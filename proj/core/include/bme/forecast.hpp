#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bme/errors.hpp"

namespace bme {

enum class GrowthPattern { Sigmoid, Logarithmic, Exponential };

struct GrowthSpec {
  GrowthPattern pattern = GrowthPattern::Sigmoid;
  /// Carrying capacity (sigmoid), amplitude (logarithmic) or level at t = 0
  /// (exponential), each on top of the baseline.
  double scale = 1000.0;
  /// Steepness (sigmoid), time dilation (logarithmic) or continuous growth
  /// rate; sigmoid and exponential decline when negative.
  double rate = 0.1;
  /// Inflection time; sigmoid only.
  double midpoint = 50.0;
  /// Additive floor of the mean curve.
  double baseline = 0.0;
  double noise_std = 0.0;
};

/// Noise-free curve value at time t.
double growth_mean(const GrowthSpec& spec, double t);

/// Mean curve plus seeded Gaussian noise, floored at zero.
std::vector<double> generate_growth(const GrowthSpec& spec, int n,
                                    std::uint64_t seed);

struct TimeSeries {
  std::vector<double> nodes;
  std::vector<double> consumers;
  std::vector<double> demand;
  std::vector<double> income;
};

struct SeriesSpec {
  GrowthSpec nodes;
  GrowthSpec consumers;
  /// Dollars of token demand per consumer per step.
  double unit_demand = 1.0;
  /// Dollars of protocol income per consumer per step.
  double income_per_consumer = 0.05;
};

/// Draws node and consumer adoption curves and derives demand and income.
TimeSeries synthesize_series(const SeriesSpec& spec, int n, std::uint64_t seed);

/// Columns t,nodes,consumers with optional demand and income columns; missing
/// ones are derived using the given per-consumer factors. The t column must
/// count 0,1,2,...
TimeSeries load_timeseries_csv(const std::string& path, double unit_demand,
                               double income_per_consumer);

struct ArModel {
  int differences = 0;
  int order = 0;
  double intercept = 0.0;
  std::vector<double> coeffs;
  double residual_std = 0.0;
  double intercept_se = 0.0;
  std::vector<double> coeff_se;
  int observations = 0;
};

/// Least-squares AR(p) fit on the d-times differenced series. Throws
/// TooShort when fewer than p + 2 regression rows remain and RankDeficient
/// when the regressors are collinear.
ArModel fit_ar(const std::vector<double>& series, int d, int p);

struct ArForecast {
  std::vector<double> mean;
  /// Standard deviation of the h-step-ahead error; starts at residual_std
  /// and is non-decreasing in the horizon.
  std::vector<double> std_dev;
};

/// Iterates the fitted recurrence on the level series (the differencing is
/// folded into the companion coefficients) and propagates the innovation
/// variance through the impulse response.
ArForecast ar_predict(const ArModel& model, const std::vector<double>& history,
                      int horizon);

}  // namespace bme
