#include "bme/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bme {

double tracking_mse(const std::vector<double>& prices,
                    const std::vector<double>& price_refs) {
  if (prices.size() != price_refs.size()) {
    throw LengthMismatch("tracking_mse: " + std::to_string(prices.size()) +
                         " prices vs " + std::to_string(price_refs.size()) +
                         " references");
  }
  if (prices.empty()) throw TooShort("tracking_mse: empty series");
  double acc = 0.0;
  for (std::size_t i = 0; i < prices.size(); ++i) {
    const double e = prices[i] - price_refs[i];
    acc += e * e;
  }
  return acc / static_cast<double>(prices.size());
}

double price_volatility(const std::vector<double>& prices) {
  if (prices.size() < 3) {
    throw TooShort("price_volatility: need at least 3 prices, got " +
                   std::to_string(prices.size()));
  }
  std::vector<double> returns(prices.size() - 1);
  for (std::size_t i = 0; i + 1 < prices.size(); ++i) {
    if (prices[i] <= 0.0 || prices[i + 1] <= 0.0) {
      throw NonPositivePrice("price_volatility: prices must be positive");
    }
    returns[i] = std::log(prices[i + 1] / prices[i]);
  }
  const double mean =
      std::accumulate(returns.begin(), returns.end(), 0.0) / returns.size();
  double ss = 0.0;
  for (double r : returns) ss += (r - mean) * (r - mean);
  return std::sqrt(ss / (returns.size() - 1));
}

double control_effort(const std::vector<double>& buybacks,
                      const std::vector<double>& payouts,
                      const std::vector<double>& prices) {
  if (buybacks.size() != payouts.size() || prices.size() < buybacks.size()) {
    throw LengthMismatch("control_effort: mismatched control/price lengths");
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < buybacks.size(); ++t) {
    acc += std::abs(buybacks[t]) + prices[t] * std::abs(payouts[t]);
  }
  return acc;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& first,
                                    const std::vector<double>& second) {
  if (first.size() != second.size()) {
    throw LengthMismatch("wilcoxon: sample sizes differ");
  }
  std::vector<double> diffs;
  diffs.reserve(first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    const double d = first[i] - second[i];
    if (d != 0.0) diffs.push_back(d);
  }
  const int n = static_cast<int>(diffs.size());
  if (n < 5) {
    throw TooFewPairs("wilcoxon: need at least 5 nonzero differences, got " +
                      std::to_string(n));
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(diffs[a]) < std::abs(diffs[b]);
  });

  // Average ranks over tie groups; doubled ranks stay integral, which the
  // exact enumeration below relies on.
  std::vector<int> rank2(n, 0);
  std::vector<double> tie_sizes;
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
    const int avg2 = (i + 1) + j;  // 2 * average of ranks i+1 .. j
    for (int k = i; k < j; ++k) rank2[order[k]] = avg2;
    if (j - i > 1) tie_sizes.push_back(j - i);
    i = j;
  }

  WilcoxonResult res;
  res.n_used = n;
  long long w_plus2 = 0;
  long long total2 = 0;
  for (int i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0.0) w_plus2 += rank2[i];
  }
  res.w_plus = 0.5 * w_plus2;
  res.w_minus = 0.5 * (total2 - w_plus2);
  res.statistic = std::min(res.w_plus, res.w_minus);

  if (n <= 20) {
    // Subset-sum count over doubled ranks: ways[s] = #subsets with sum s.
    std::vector<double> ways(total2 + 1, 0.0);
    ways[0] = 1.0;
    for (int i = 0; i < n; ++i) {
      for (long long s = total2; s >= rank2[i]; --s) {
        ways[s] += ways[s - rank2[i]];
      }
    }
    const double all = std::ldexp(1.0, n);
    double below = 0.0;
    double above = 0.0;
    for (long long s = 0; s <= total2; ++s) {
      if (s <= w_plus2) below += ways[s];
      if (s >= w_plus2) above += ways[s];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(below, above) / all);
    res.exact = true;
  } else {
    const double mean = n * (n + 1) / 4.0;
    double tie_corr = 0.0;
    for (double t : tie_sizes) tie_corr += (t * t * t - t);
    const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_corr / 48.0;
    const double dev = res.w_plus - mean;
    const double z =
        (dev - (dev > 0 ? 0.5 : dev < 0 ? -0.5 : 0.0)) / std::sqrt(var);
    res.p_value = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
    res.exact = false;
  }
  return res;
}

}  // namespace bme
