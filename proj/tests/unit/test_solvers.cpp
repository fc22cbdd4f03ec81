// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0

#include "flowstraight/solvers.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace flowstraight;
using Catch::Approx;

namespace {

Batch scalar(double v) { return Batch::Constant(1, 1, v); }

const Method kFixed[] = {Method::Euler, Method::Heun, Method::Rk4};

/// Reference flow for dx/dt = x: RK4 with 10^6 steps per unit time.
Batch rk4_reference(const Batch& x, double from, double to) {
  if (from == to) return x;
  const auto f = AnalyticField::exponential(1.0);
  const int n = std::max(1, static_cast<int>(std::llround(1e6 * std::abs(to - from))));
  auto spec = SolverSpec::fixed(Method::Rk4, n, from, to);
  spec.keep_trajectory = false;
  return solve(f, x, spec).final_state();
}

struct Quadratic {
  Batch operator()(const Batch& x, double) const { return x.cwiseProduct(x); }
};

}  // namespace

TEST_CASE("euler N = 1 on dx/dt = x") {
  const auto f = AnalyticField::exponential(1.0);
  const auto rep = measure_gte(f, scalar(1.0), SolverSpec::fixed(Method::Euler, 1), oracle_for(f));
  REQUIRE(rep.run.final_state()(0, 0) == 2.0);
  REQUIRE(rep.gte == Approx(std::numbers::e - 2.0).epsilon(1e-14));
  REQUIRE(rep.gte == Approx(0.71828).margin(1e-5));
}

TEST_CASE("heun N = 1 on dx/dt = x") {
  const auto f = AnalyticField::exponential(1.0);
  const auto rep = measure_gte(f, scalar(1.0), SolverSpec::fixed(Method::Heun, 1), oracle_for(f));
  // k1 = 1, k2 = f(1 + 1) = 2, x = 1 + (1 + 2) / 2.
  REQUIRE(rep.run.final_state()(0, 0) == 2.5);
  REQUIRE(rep.gte == Approx(std::numbers::e - 2.5).epsilon(1e-13));
}

TEST_CASE("every method is exact on a constant field") {
  Vector c(3);
  c << 0.3, -1.7, 2.5;
  const auto f = AnalyticField::constant_velocity(c);
  Rng rng(1);
  const Batch x = rng.normal_batch(4, 3);
  for (double b : {1.0, -0.6, 3.2}) {
    const Batch exact = x + replicate_row((b - 0.2) * c, 4);
    for (Method m : kFixed)
      for (int n : {1, 2, 7, 64}) {
        const Batch y = solve(f, x, SolverSpec::fixed(m, n, 0.2, b)).final_state();
        REQUIRE((y - exact).cwiseAbs().maxCoeff() < 1e-13);
      }
    const Batch y = solve(f, x, SolverSpec::rk45(1e-6, 0.2, b)).final_state();
    REQUIRE((y - exact).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("fixed-step NFE accounting and trajectory shape") {
  const auto f = AnalyticField::rotation(1.0);
  Rng rng(2);
  const Batch x = rng.normal_batch(3, 2);
  for (Method m : kFixed)
    for (int n : {1, 5, 33}) {
      const auto run = solve(f, x, SolverSpec::fixed(m, n, 0.0, 1.0));
      REQUIRE(run.nfe == static_cast<std::uint64_t>(stages(m) * n));
      REQUIRE(run.times.size() == static_cast<std::size_t>(n + 1));
      REQUIRE(run.times.front() == 0.0);
      REQUIRE(run.times.back() == 1.0);
      for (std::size_t i = 0; i + 1 < run.times.size(); ++i) REQUIRE(run.times[i] < run.times[i + 1]);
      REQUIRE(run.cumulative_nfe.back() == run.nfe);
      REQUIRE(run.accepted == static_cast<std::uint64_t>(n));
    }
  REQUIRE(stages(Method::Euler) == 1);
  REQUIRE(stages(Method::Heun) == 2);
  REQUIRE(stages(Method::Rk4) == 4);
}

TEST_CASE("segmented solve with K = 1 equals a plain solve") {
  const auto f = AnalyticField::exponential(0.7);
  Rng rng(3);
  const Batch x = rng.normal_batch(4, 2);
  for (Method m : kFixed) {
    const auto spec = SolverSpec::fixed(m, 9);
    const auto a = solve(f, x, spec);
    const auto b = solve_segmented(f, x, make_segmentation(1), spec);
    REQUIRE(a.times == b.times);
    REQUIRE(a.nfe == b.nfe);
    REQUIRE((a.final_state().array() == b.final_state().array()).all());
  }
}

TEST_CASE("segmented solve: constant field is exact, NFE sums, trajectory continuous") {
  Vector c(2);
  c << 1.5, -0.5;
  const auto f = AnalyticField::constant_velocity(c);
  const Batch x = Batch::Zero(2, 2);
  const auto run = solve_segmented(f, x, make_segmentation(4), SolverSpec::fixed(Method::Euler, 1));
  REQUIRE((run.final_state() - replicate_row(c, 2)).cwiseAbs().maxCoeff() < 1e-15);
  REQUIRE(run.nfe == 4);
  REQUIRE(run.times == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});

  const auto g = AnalyticField::exponential(1.0);
  const auto seg = solve_segmented(g, scalar(1.0), make_segmentation(3), SolverSpec::fixed(Method::Heun, 5));
  REQUIRE(seg.nfe == 30);
  for (std::size_t i = 0; i + 1 < seg.times.size(); ++i) REQUIRE(seg.times[i] < seg.times[i + 1]);
}

TEST_CASE("segmented heun at total NFE 8: restarted segment errors decrease with K") {
  const auto f = AnalyticField::exponential(1.0);
  // Check the reference against the closed form first.
  REQUIRE(rk4_reference(scalar(1.0), 0.0, 1.0)(0, 0) == Approx(std::numbers::e).epsilon(1e-13));
  std::vector<double> sums;
  for (int k : {1, 2, 4}) {
    const auto rows =
        segment_scaling(f, rk4_reference, scalar(1.0), 0.0, 1.0, SolverSpec::fixed(Method::Heun, 4 / k), {k});
    REQUIRE(rows[0].nfe == 8);
    sums.push_back(rows[0].error_sum);
  }
  REQUIRE(sums[0] > sums[1]);
  REQUIRE(sums[1] > sums[2]);
  // Pinned against the 10^6-step reference; they agree with the exact sums
  // sum_k e^{t_k} (e^{dt} - (1 + h + h^2/2)^{steps}).
  REQUIRE(sums[0] == Approx(0.0234261384566038).epsilon(1e-9));
  REQUIRE(sums[1] == Approx(0.0188581225508575).epsilon(1e-9));
  REQUIRE(sums[2] == Approx(0.0167905679588922).epsilon(1e-9));
}

TEST_CASE("oracle equal to the solver gives GTE 0") {
  const auto f = AnalyticField::rotation(3.0);
  Rng rng(4);
  const Batch x = rng.normal_batch(5, 2);
  for (Method m : kFixed) {
    const auto rep = measure_gte(f, x, SolverSpec::fixed(m, 12), FineGridOracle{m, 12});
    REQUIRE(rep.gte == 0.0);
    for (double l : rep.lte) REQUIRE(l == 0.0);
  }
}

TEST_CASE("GTE ratios per doubling: euler about 2, rk4 about 16") {
  const auto f = AnalyticField::exponential(1.0);
  const auto oracle = oracle_for(f);
  auto gte = [&](Method m, int n) { return measure_gte(f, scalar(1.0), SolverSpec::fixed(m, n), oracle).gte; };
  REQUIRE(gte(Method::Euler, 10) == Approx(0.124539368359045).epsilon(1e-12));
  const double r1 = gte(Method::Euler, 10) / gte(Method::Euler, 20);
  const double r2 = gte(Method::Euler, 20) / gte(Method::Euler, 40);
  REQUIRE(r1 == Approx(2.0).epsilon(0.1));
  REQUIRE(r2 == Approx(2.0).epsilon(0.1));
  REQUIRE(gte(Method::Rk4, 5) / gte(Method::Rk4, 10) == Approx(16.0).epsilon(0.2));
}

TEST_CASE("empirical order of the fixed-step methods") {
  const auto f = AnalyticField::exponential(1.0);
  const std::vector<int> ns{10, 20, 40, 80};
  const auto euler = empirical_order(f, scalar(1.0), SolverSpec::fixed(Method::Euler, 1), ns, oracle_for(f));
  const auto heun = empirical_order(f, scalar(1.0), SolverSpec::fixed(Method::Heun, 1), ns, oracle_for(f));
  const auto rk4 = empirical_order(f, scalar(1.0), SolverSpec::fixed(Method::Rk4, 1), {5, 10, 20, 40}, oracle_for(f));
  REQUIRE(euler.order >= 0.9);
  REQUIRE(euler.order <= 1.1);
  REQUIRE(heun.order >= 1.8);
  REQUIRE(heun.order <= 2.2);
  REQUIRE(rk4.order >= 3.7);
  REQUIRE(rk4.order <= 4.3);
  REQUIRE(euler.reliable);
  REQUIRE(rk4.reliable);
}

TEST_CASE("empirical order validates its step family and flags the round-off floor") {
  const auto f = AnalyticField::exponential(1.0);
  const auto base = SolverSpec::fixed(Method::Euler, 1);
  REQUIRE_THROWS_AS(empirical_order(f, scalar(1.0), base, {10, 20}, oracle_for(f)), ConfigError);
  REQUIRE_THROWS_AS(empirical_order(f, scalar(1.0), base, {10, 20, 30}, oracle_for(f)), ConfigError);
  Vector c(1);
  c << 2.0;
  const auto k = AnalyticField::constant_velocity(c);
  const auto fit = empirical_order(k, scalar(1.0), base, {4, 8, 16}, oracle_for(k));
  REQUIRE_FALSE(fit.reliable);
  REQUIRE_FALSE(fit.warning.empty());
}

TEST_CASE("learned fields need a fine-grid oracle") {
  nn::MlpSpec spec;
  spec.dim = 2;
  spec.hidden = {4};
  spec.time_frequencies = 1;
  Rng rng(1);
  io::Checkpoint ck;
  ck.spec = spec;
  ck.params = nn::init_params(nn::Mlp(spec), rng);
  const FieldKind learned(LearnedField::from(ck));
  REQUIRE_THROWS_AS(oracle_for(learned), ConfigError);
  REQUIRE(std::holds_alternative<FineGridOracle>(oracle_for(learned, FineGridOracle{})));
  REQUIRE(describe(oracle_for(learned, FineGridOracle{})) == "euler-480");
}

TEST_CASE("rk45 meets its tolerance on the exponential and rotation fields") {
  for (double tol : {1e-4, 1e-6, 1e-8}) {
    const auto e = AnalyticField::exponential(1.0);
    const auto re = solve(e, scalar(1.0), SolverSpec::rk45(tol));
    REQUIRE(std::abs(re.final_state()(0, 0) - std::numbers::e) <= 10 * tol * std::numbers::e);
    const auto r = AnalyticField::rotation(2.0 * std::numbers::pi);
    Batch x(1, 2);
    x << 1.0, 0.0;
    const auto rr = solve(r, x, SolverSpec::rk45(tol));
    REQUIRE((rr.final_state() - r.flow(x, 0.0, 1.0)).norm() <= 10 * tol);
    REQUIRE(rr.times.back() == 1.0);
    REQUIRE(rr.accepted == rr.step_sizes.size());
    REQUIRE(rr.nfe > 0);
  }
}

TEST_CASE("rk45 step underflow raises a stiffness error with the partial run") {
  const auto f = AnalyticField::exponential(40.0);
  auto spec = SolverSpec::rk45(1e-12);
  spec.min_step = 0.05;
  spec.initial_step = 0.5;
  try {
    solve(f, scalar(1.0), spec);
    FAIL("expected a stiffness error");
  } catch (const StiffnessError& e) {
    REQUIRE_FALSE(e.partial.states.empty());
    REQUIRE(e.partial.nfe > 0);
  }
}

TEST_CASE("non-finite states raise a divergence error with the partial run") {
  const Quadratic f;
  try {
    solve(f, scalar(1.0), SolverSpec::fixed(Method::Euler, 200, 0.0, 3.0));
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    REQUIRE(e.partial.times.size() >= 2);
    REQUIRE(e.partial.times.back() < 3.0);
  }
  REQUIRE_THROWS_AS(solve(AnalyticField::exponential(1.0), scalar(std::nan("")), SolverSpec::fixed(Method::Euler, 1)),
                    DomainError);
}

TEST_CASE("solving forward then backward returns to the start") {
  Eigen::Matrix2d a;
  a << -0.5, 1.2, -0.8, 0.1;
  Vector c(2);
  c << 0.3, 0.4;
  const std::vector<AnalyticField> fields{AnalyticField::exponential(1.0), AnalyticField::rotation(2.5),
                                          AnalyticField::linear(a), AnalyticField::constant_velocity(c)};
  Rng rng(5);
  for (const auto& f : fields) {
    const Batch x = f.kind == AnalyticField::Kind::Exponential ? rng.normal_batch(4, 1) : rng.normal_batch(4, 2);
    const Batch y = solve(f, x, SolverSpec::fixed(Method::Rk4, 200, 0.0, 1.0)).final_state();
    const Batch z = solve(f, y, SolverSpec::fixed(Method::Rk4, 200, 1.0, 0.0)).final_state();
    REQUIRE((z - x).norm() <= 1e-6 * x.norm());
  }
}

TEST_CASE("GTE never exceeds the Lipschitz bound built from measured LTE") {
  for (double lambda : {-1.0, 0.5, 1.0}) {
    const auto f = AnalyticField::exponential(lambda);
    for (int n : {10, 40, 160}) {
      const auto rep = measure_gte(f, scalar(1.0), SolverSpec::fixed(Method::Euler, n), oracle_for(f));
      const double bound = gte_bound(rep, std::abs(lambda));
      REQUIRE(rep.gte <= 1.05 * bound);
      REQUIRE(rep.gte > 0.0);
    }
  }
  // With M = 0 the bound is the plain LTE sum.
  const auto f = AnalyticField::exponential(1.0);
  const auto rep = measure_gte(f, scalar(1.0), SolverSpec::fixed(Method::Euler, 8), oracle_for(f));
  double sum = 0;
  for (double l : rep.lte) sum += l;
  REQUIRE(gte_bound(rep, 0.0) == Approx(sum).epsilon(1e-14));
}

TEST_CASE("segment scaling slope is close to 1 - p") {
  const auto f = AnalyticField::exponential(1.0);
  const FlowMap exact = [&](const Batch& x, double a, double b) { return f.flow(x, a, b); };
  const std::vector<int> ks{1, 2, 4, 8};
  for (auto [m, p] : {std::pair{Method::Heun, 2}, std::pair{Method::Rk4, 4}}) {
    const auto rows = segment_scaling(f, exact, scalar(1.0), 0.0, 1.0, SolverSpec::fixed(m, 2), ks);
    std::vector<double> kk, err;
    for (const auto& r : rows) {
      kk.push_back(r.segments);
      err.push_back(r.error_rate);
      REQUIRE(r.nfe == static_cast<std::uint64_t>(stages(m) * 2 * r.segments));
    }
    REQUIRE(std::abs(loglog_slope(kk, err) - (1 - p)) <= 0.3);
  }
}

TEST_CASE("solver spec validation") {
  REQUIRE_THROWS_AS(SolverSpec::fixed(Method::Euler, 0).validate(), ConfigError);
  REQUIRE_THROWS_AS(SolverSpec::fixed(Method::Euler, 1, 0.5, 0.5).validate(), ConfigError);
  REQUIRE_THROWS_AS(SolverSpec::rk45(0.0).validate(), ConfigError);
  REQUIRE(parse_method("rk4") == Method::Rk4);
  REQUIRE_THROWS_AS(parse_method("leapfrog"), ConfigError);
  REQUIRE(SolverSpec::fixed(Method::Euler, 10).describe() == "euler(N=10)[0;1]");
}

TEST_CASE("solver run CSV columns") {
  const auto f = AnalyticField::exponential(1.0);
  const auto rep = measure_gte(f, scalar(1.0), SolverSpec::fixed(Method::Heun, 4), oracle_for(f));
  const auto csv = solver_run_csv(rep.run, &rep);
  REQUIRE(csv.header == std::vector<std::string>{"t", "x0", "h", "lte", "cumulative_nfe"});
  REQUIRE(csv.rows.size() == 5);
  const auto h = csv.numeric_column("h");
  const auto nfe = csv.numeric_column("cumulative_nfe");
  REQUIRE(h[0] == 0.25);
  REQUIRE(h[4] == 0.0);
  REQUIRE(nfe[4] == 8.0);
  REQUIRE(csv.numeric_column("lte")[1] == Approx(rep.lte[1]).epsilon(1e-15));
}
