#include "bme/forecast.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "bme/csv.hpp"
#include "bme/rng.hpp"

namespace bme {

double growth_mean(const GrowthSpec& spec, double t) {
  switch (spec.pattern) {
    case GrowthPattern::Sigmoid:
      return spec.baseline +
             spec.scale / (1.0 + std::exp(-spec.rate * (t - spec.midpoint)));
    case GrowthPattern::Logarithmic:
      return spec.baseline + spec.scale * std::log1p(spec.rate * t);
    case GrowthPattern::Exponential:
      return spec.baseline + spec.scale * std::exp(spec.rate * t);
  }
  throw DomainError("growth_mean: unknown pattern");
}

std::vector<double> generate_growth(const GrowthSpec& spec, int n,
                                    std::uint64_t seed) {
  if (n < 0) throw DomainError("generate_growth: negative length");
  Rng rng(seed);
  std::vector<double> out(n);
  for (int t = 0; t < n; ++t) {
    out[t] = std::max(0.0, growth_mean(spec, t) + rng.normal(0.0, spec.noise_std));
  }
  return out;
}

TimeSeries synthesize_series(const SeriesSpec& spec, int n, std::uint64_t seed) {
  TimeSeries s;
  s.nodes = generate_growth(spec.nodes, n, derive_seed(seed, 1));
  s.consumers = generate_growth(spec.consumers, n, derive_seed(seed, 2));
  s.demand.resize(n);
  s.income.resize(n);
  for (int t = 0; t < n; ++t) {
    s.demand[t] = spec.unit_demand * s.consumers[t];
    s.income[t] = spec.income_per_consumer * s.consumers[t];
  }
  return s;
}

TimeSeries load_timeseries_csv(const std::string& path, double unit_demand,
                               double income_per_consumer) {
  const csv::Table table = csv::read_file(path);
  const auto& h = table.header;
  if (h.size() < 3 || h[0] != "t" || h[1] != "nodes" || h[2] != "consumers") {
    throw SchemaMismatch(path + ": expected header t,nodes,consumers[,demand][,income]");
  }
  int demand_col = -1;
  int income_col = -1;
  for (std::size_t i = 3; i < h.size(); ++i) {
    if (h[i] == "demand") {
      demand_col = static_cast<int>(i);
    } else if (h[i] == "income") {
      income_col = static_cast<int>(i);
    } else {
      throw SchemaMismatch(path + ": unexpected column " + h[i]);
    }
  }

  const auto values = [&table](int col) {
    std::vector<double> v(table.rows.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = table.rows[i][col];
    return v;
  };

  TimeSeries s;
  const std::vector<double> t_col = values(0);
  const std::vector<double> consumers = values(2);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (t_col[i] != static_cast<double>(i)) {
      throw SchemaMismatch(path + ": t column must count 0,1,2,...");
    }
  }
  s.nodes = values(1);
  s.consumers = consumers;
  if (demand_col >= 0) s.demand = values(demand_col);
  if (income_col >= 0) s.income = values(income_col);
  if (demand_col < 0) {
    s.demand.resize(consumers.size());
    for (std::size_t i = 0; i < consumers.size(); ++i) {
      s.demand[i] = unit_demand * consumers[i];
    }
  }
  if (income_col < 0) {
    s.income.resize(consumers.size());
    for (std::size_t i = 0; i < consumers.size(); ++i) {
      s.income[i] = income_per_consumer * consumers[i];
    }
  }
  return s;
}

namespace {

std::vector<double> difference(std::vector<double> y, int d) {
  for (int k = 0; k < d && !y.empty(); ++k) {
    for (std::size_t i = y.size(); i-- > 1;) y[i] -= y[i - 1];
    y.erase(y.begin());
  }
  return y;
}

/// Coefficients a of the level recurrence y_t = c + sum a_k y_{t-k} implied
/// by an AR(p) on the d-th difference: phi(L)(1-L)^d y = c + eps.
std::vector<double> companion_coeffs(const ArModel& m) {
  // poly = phi(L) * (1-L)^d as 1 - a_1 L - ... - a_{p+d} L^{p+d}
  std::vector<double> poly{1.0};
  for (int k = 0; k < m.differences; ++k) {
    std::vector<double> next(poly.size() + 1, 0.0);
    for (std::size_t i = 0; i < poly.size(); ++i) {
      next[i] += poly[i];
      next[i + 1] -= poly[i];
    }
    poly = std::move(next);
  }
  std::vector<double> phi{1.0};
  for (double c : m.coeffs) phi.push_back(-c);
  std::vector<double> full(poly.size() + phi.size() - 1, 0.0);
  for (std::size_t i = 0; i < poly.size(); ++i) {
    for (std::size_t j = 0; j < phi.size(); ++j) full[i + j] += poly[i] * phi[j];
  }
  std::vector<double> a(full.size() - 1);
  for (std::size_t k = 1; k < full.size(); ++k) a[k - 1] = -full[k];
  return a;
}

}  // namespace

ArModel fit_ar(const std::vector<double>& series, int d, int p) {
  if (d < 0 || p < 0) throw DomainError("fit_ar: d and p must be nonnegative");
  const std::vector<double> w = difference(series, d);
  const int n = static_cast<int>(w.size());
  const int rows = n - p;
  if (rows < p + 2) {
    throw TooShort("fit_ar: " + std::to_string(series.size()) +
                   " points leave " + std::to_string(std::max(rows, 0)) +
                   " rows for an AR(" + std::to_string(p) + ") fit");
  }

  Eigen::MatrixXd X(rows, p + 1);
  Eigen::VectorXd y(rows);
  for (int i = 0; i < rows; ++i) {
    X(i, 0) = 1.0;
    for (int j = 1; j <= p; ++j) X(i, j) = w[p + i - j];
    y[i] = w[p + i];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < p + 1) {
    throw RankDeficient("fit_ar: collinear regressors (rank " +
                        std::to_string(qr.rank()) + " of " +
                        std::to_string(p + 1) + ")");
  }
  const Eigen::VectorXd beta = qr.solve(y);
  const double ssr = (y - X * beta).squaredNorm();
  const int dof = rows - p - 1;

  ArModel m;
  m.differences = d;
  m.order = p;
  m.intercept = beta[0];
  m.coeffs.assign(beta.data() + 1, beta.data() + p + 1);
  m.residual_std = std::sqrt(ssr / dof);
  m.observations = rows;
  const Eigen::MatrixXd xtx_inv =
      (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(p + 1, p + 1));
  m.intercept_se = m.residual_std * std::sqrt(xtx_inv(0, 0));
  m.coeff_se.resize(p);
  for (int j = 1; j <= p; ++j) {
    m.coeff_se[j - 1] = m.residual_std * std::sqrt(xtx_inv(j, j));
  }
  return m;
}

ArForecast ar_predict(const ArModel& model, const std::vector<double>& history,
                      int horizon) {
  if (horizon < 0) throw DomainError("ar_predict: negative horizon");
  const int lags = model.order + model.differences;
  if (static_cast<int>(history.size()) < lags || history.empty()) {
    throw TooShort("ar_predict: need at least " + std::to_string(std::max(lags, 1)) +
                   " history points, got " + std::to_string(history.size()));
  }
  const auto a = companion_coeffs(model);

  ArForecast f;
  f.mean.reserve(horizon);
  f.std_dev.reserve(horizon);
  std::vector<double> level(history.end() - std::max(lags, 1), history.end());
  for (int h = 0; h < horizon; ++h) {
    double next = model.intercept;
    for (std::size_t k = 0; k < a.size(); ++k) {
      next += a[k] * level[level.size() - 1 - k];
    }
    f.mean.push_back(next);
    level.push_back(next);
  }

  // psi weights: psi_0 = 1, psi_j = sum_k a_k psi_{j-k}.
  std::vector<double> psi{1.0};
  double var_acc = 1.0;
  for (int h = 0; h < horizon; ++h) {
    f.std_dev.push_back(model.residual_std * std::sqrt(var_acc));
    double next = 0.0;
    for (std::size_t k = 1; k <= a.size() && k <= psi.size(); ++k) {
      next += a[k - 1] * psi[psi.size() - k];
    }
    psi.push_back(next);
    var_acc += next * next;
  }
  return f;
}

}  // namespace bme
