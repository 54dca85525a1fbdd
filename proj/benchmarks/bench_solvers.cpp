// Timing for the pieces that dominate closed-loop runs: one dynamics step,
// a full linearization, the QP, and the three trajectory solvers on a
// representative 20-step window.

#include <benchmark/benchmark.h>

#include "bme/game.hpp"
#include "bme/trajopt.hpp"

namespace {

bme::OCProblem window_problem(int horizon) {
  bme::OCProblem ocp;
  ocp.initial_state = {1000.0, 500.0, 300.0, 2.0};
  ocp.horizon = horizon;
  for (int t = 0; t <= horizon; ++t) {
    const double growth = 1.0 + 0.01 * t;
    ocp.forecasts.push_back({2000.0 * growth, 40.0 * growth});
  }
  ocp.refs.price_ref.assign(horizon + 1, 2.0);
  ocp.refs.buyback_ref.assign(horizon, 0.0);
  ocp.refs.pay_ref.assign(horizon, 0.0);
  ocp.weights.beta_price = 1.0;
  ocp.weights.beta_buyback = 1e-6;
  ocp.weights.beta_pay = 1e-6;
  return ocp;
}

void bench_economy_step(benchmark::State& state) {
  const bme::EconomyState x{1000.0, 500.0, 300.0, 2.0};
  const bme::ControlInput u{10.0, 5.0, 0.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(bme::step(x, u, 40.0, 2050.0));
  }
}
BENCHMARK(bench_economy_step);

void bench_linearize_window(benchmark::State& state) {
  const bme::OCProblem ocp = window_problem(20);
  const bme::ControlProblem p = bme::make_control_problem(ocp);
  const std::vector<bme::Vec> us = bme::vanilla_initial_controls(ocp);
  const std::vector<bme::Vec> xs = bme::rollout(p, us);
  for (auto _ : state) {
    for (int t = 0; t < p.horizon; ++t) {
      benchmark::DoNotOptimize(p.linearize(t, xs[t], us[t]));
    }
  }
}
BENCHMARK(bench_linearize_window);

void bench_qp_solve(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  bme::Mat h = bme::Mat::Identity(n, n);
  for (int i = 0; i + 1 < n; ++i) h(i, i + 1) = h(i + 1, i) = 0.25;
  const bme::Vec g = bme::Vec::Constant(n, -1.0);
  bme::Mat ai = bme::Mat::Zero(2 * n, n);
  bme::Vec bi = bme::Vec::Zero(2 * n);
  for (int i = 0; i < n; ++i) {
    ai(2 * i, i) = 1.0;
    bi(2 * i) = 0.5;
    ai(2 * i + 1, i) = -1.0;
    bi(2 * i + 1) = 0.5;
  }
  const bme::Mat ae(0, n);
  const bme::Vec be(0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bme::qp_solve(h, g, ae, be, ai, bi, {}));
  }
}
BENCHMARK(bench_qp_solve)->Arg(20)->Arg(60)->Arg(120);

void bench_ilqr_window(benchmark::State& state) {
  const bme::OCProblem ocp = window_problem(static_cast<int>(state.range(0)));
  bme::SolveOptions opts;
  opts.max_iterations = 60;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bme::ilqr_solve(ocp, opts));
  }
}
BENCHMARK(bench_ilqr_window)->Arg(10)->Arg(20)->Arg(40);

void bench_al_ilqr_window(benchmark::State& state) {
  bme::OCProblem ocp = window_problem(static_cast<int>(state.range(0)));
  ocp.bounds.reserve_usd_min = 100.0;
  bme::SolveOptions opts;
  opts.max_iterations = 60;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bme::al_ilqr_solve(ocp, opts));
  }
}
BENCHMARK(bench_al_ilqr_window)->Arg(10)->Arg(20);

void bench_scp_window(benchmark::State& state) {
  bme::OCProblem ocp = window_problem(static_cast<int>(state.range(0)));
  ocp.bounds.reserve_usd_min = 100.0;
  bme::SolveOptions opts;
  opts.max_iterations = 60;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bme::scp_solve(ocp, opts));
  }
}
BENCHMARK(bench_scp_window)->Arg(10)->Arg(20);

void bench_bilevel_window(benchmark::State& state) {
  const bme::OCProblem ocp = window_problem(static_cast<int>(state.range(0)));
  bme::GameParams params;
  params.gamma = 0.9;
  bme::SolveOptions opts;
  opts.max_iterations = 60;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bme::bilevel_solve(ocp, params, opts));
  }
}
BENCHMARK(bench_bilevel_window)->Arg(5)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
