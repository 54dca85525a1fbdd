#pragma once

#include <vector>

#include "bme/errors.hpp"

namespace bme {

/// Mean squared deviation of realized prices from their references.
double tracking_mse(const std::vector<double>& prices,
                    const std::vector<double>& price_refs);

/// Sample standard deviation (n-1 denominator) of one-step log returns.
/// Needs at least three prices, all positive.
double price_volatility(const std::vector<double>& prices);

/// Dollars moved by the controller: buybacks plus payouts valued at the
/// prevailing price.
double control_effort(const std::vector<double>& buybacks,
                      const std::vector<double>& payouts,
                      const std::vector<double>& prices);

struct WilcoxonResult {
  /// min(w_plus, w_minus), the conventional test statistic.
  double statistic = 0.0;
  double w_plus = 0.0;
  double w_minus = 0.0;
  /// Pairs remaining after zero differences are dropped.
  int n_used = 0;
  /// Two-sided p-value; exact enumeration up to n_used = 20, normal
  /// approximation with tie correction and continuity correction beyond.
  double p_value = 1.0;
  bool exact = false;
};

/// Paired two-sided Wilcoxon signed-rank test of first vs second. Zero
/// differences are discarded; ties in |difference| get averaged ranks.
/// Throws TooFewPairs when fewer than five informative pairs remain.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& first,
                                    const std::vector<double>& second);

}  // namespace bme
