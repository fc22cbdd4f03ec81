// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Explicit one-step ODE solvers over any VectorField, instrumented with NFE
// counts, step sizes and truncation-error measurements.
//
// Every method advances x_{i+1} = x_i + h_i A(x_i, t_i, h_i; v). NFE counts
// one evaluation of the field on the whole batch; fixed-step methods use
// exactly stages * N evaluations. Batches integrate in lockstep, and adaptive
// step control takes the worst error norm over the batch.

#pragma once

#include "flowstraight/core.hpp"
#include "flowstraight/field.hpp"
#include "flowstraight/io/csv.hpp"
#include "flowstraight/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace flowstraight {

enum class Method { Euler, Heun, Rk4, Rk45 };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Euler: return "euler";
    case Method::Heun: return "heun";
    case Method::Rk4: return "rk4";
    case Method::Rk45: return "rk45";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "euler") return Method::Euler;
  if (s == "heun") return Method::Heun;
  if (s == "rk4") return Method::Rk4;
  if (s == "rk45") return Method::Rk45;
  throw ConfigError("unknown solver method '" + std::string(s) + "' (euler|heun|rk4|rk45)");
}

/// Field evaluations per step for fixed-step methods.
inline int stages(Method m) {
  switch (m) {
    case Method::Euler: return 1;
    case Method::Heun: return 2;
    case Method::Rk4: return 4;
    case Method::Rk45: return 6;
  }
  return 0;
}

inline int order(Method m) {
  switch (m) {
    case Method::Euler: return 1;
    case Method::Heun: return 2;
    case Method::Rk4: return 4;
    case Method::Rk45: return 5;
  }
  return 0;
}

struct SolverSpec {
  Method method = Method::Euler;
  int steps = 1;              ///< fixed-step methods
  double atol = 1e-6;         ///< adaptive only
  double rtol = 1e-6;
  double initial_step = 0.0;  ///< 0 picks one automatically
  double min_step = 1e-12;
  double max_step = 0.0;      ///< 0 means unbounded
  double a = 0.0;
  double b = 1.0;
  bool keep_trajectory = true;
  bool check_finite = true;   ///< throw on non-finite states

  bool adaptive() const { return method == Method::Rk45; }

  void validate() const {
    if (!std::isfinite(a) || !std::isfinite(b) || a == b)
      throw ConfigError("solver: interval endpoints must be finite and distinct");
    if (!adaptive() && steps < 1) throw ConfigError("solver: step count must be >= 1");
    if (adaptive()) {
      if (!(atol > 0.0) || !(rtol > 0.0)) throw ConfigError("solver: tolerances must be > 0");
      if (!(min_step > 0.0)) throw ConfigError("solver: min_step must be > 0");
      if (initial_step < 0.0 || max_step < 0.0) throw ConfigError("solver: step bounds must be >= 0");
    }
  }

  SolverSpec on(double from, double to) const {
    SolverSpec s = *this;
    s.a = from;
    s.b = to;
    return s;
  }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(method);
    if (adaptive()) os << "(atol=" << atol << ";rtol=" << rtol << ")";
    else os << "(N=" << steps << ")";
    os << "[" << a << ";" << b << "]";
    return os.str();
  }

  static SolverSpec fixed(Method m, int n, double a = 0.0, double b = 1.0) {
    SolverSpec s;
    s.method = m;
    s.steps = n;
    s.a = a;
    s.b = b;
    return s;
  }

  static SolverSpec rk45(double tol, double a = 0.0, double b = 1.0) {
    SolverSpec s;
    s.method = Method::Rk45;
    s.atol = tol;
    s.rtol = tol;
    s.a = a;
    s.b = b;
    return s;
  }
};

struct SolverRun {
  std::vector<double> times;                 ///< strictly monotone, a first and b last
  std::vector<Batch> states;                 ///< aligned with times (endpoints only unless kept)
  std::vector<std::uint64_t> cumulative_nfe; ///< aligned with times
  std::vector<double> step_sizes;            ///< one per accepted step
  std::uint64_t nfe = 0;
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;

  const Batch& final_state() const { return states.back(); }
  const Batch& initial_state() const { return states.front(); }
};

/// Adaptive step fell below the minimum; carries the trajectory so far.
struct StiffnessError : NumericError {
  StiffnessError(const std::string& msg, SolverRun run) : NumericError(msg), partial(std::move(run)) {}
  SolverRun partial;
};

/// A state became non-finite; carries the trajectory so far.
struct DivergenceError : NumericError {
  DivergenceError(const std::string& msg, SolverRun run) : NumericError(msg), partial(std::move(run)) {}
  DivergenceError(const std::string& msg) : NumericError(msg) {}
  SolverRun partial;
};

namespace detail {

template <VectorField F>
struct CountingField {
  const F& field;
  std::uint64_t* nfe;
  Batch operator()(const Batch& x, double t) const {
    ++*nfe;
    return field(x, t);
  }
};

template <class F>
Batch fixed_step(Method m, const F& f, const Batch& x, double t, double t_next) {
  const double h = t_next - t;
  switch (m) {
    case Method::Euler:
      return x + h * f(x, t);
    case Method::Heun: {
      const Batch k1 = f(x, t);
      const Batch k2 = f(x + h * k1, t_next);
      return x + (0.5 * h) * (k1 + k2);
    }
    case Method::Rk4: {
      const double tm = t + 0.5 * h;
      const Batch k1 = f(x, t);
      const Batch k2 = f(x + (0.5 * h) * k1, tm);
      const Batch k3 = f(x + (0.5 * h) * k2, tm);
      const Batch k4 = f(x + h * k3, t_next);
      return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    case Method::Rk45:
      break;
  }
  throw std::logic_error("fixed_step called with an adaptive method");
}

inline bool rows_finite(const Batch& x) { return x.allFinite(); }

// Dormand-Prince 5(4) tableau.
struct Dopri {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                          a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

/// Worst per-point RMS of err / (atol + rtol * max(|y|, |y_new|)); rows that
/// are not finite are ignored when `skip_nonfinite` is set.
inline double error_norm(const Batch& err, const Batch& y, const Batch& y_new, double atol, double rtol,
                         bool skip_nonfinite) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < err.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index d = 0; d < err.cols(); ++d) {
      const double scale = atol + rtol * std::max(std::abs(y(i, d)), std::abs(y_new(i, d)));
      const double r = err(i, d) / scale;
      acc += r * r;
    }
    const double rms = std::sqrt(acc / static_cast<double>(err.cols()));
    if (!std::isfinite(rms)) {
      if (skip_nonfinite) continue;
      return std::numeric_limits<double>::infinity();
    }
    worst = std::max(worst, rms);
  }
  return worst;
}

inline void record(SolverRun& run, const SolverSpec& spec, double t, const Batch& x) {
  if (spec.keep_trajectory) {
    run.times.push_back(t);
    run.states.push_back(x);
    run.cumulative_nfe.push_back(run.nfe);
  }
}

inline void finish(SolverRun& run, const SolverSpec& spec, const Batch& x) {
  if (!spec.keep_trajectory) {
    run.times.push_back(spec.b);
    run.states.push_back(x);
    run.cumulative_nfe.push_back(run.nfe);
  }
}

template <class F>
void solve_adaptive(const F& f, Batch x, const SolverSpec& spec, SolverRun& run) {
  using D = Dopri;
  const double span = spec.b - spec.a;
  const double dir = span > 0 ? 1.0 : -1.0;
  const double max_step = spec.max_step > 0.0 ? spec.max_step : std::abs(span);
  constexpr double safety = 0.9, fac_min = 0.2, fac_max = 5.0, beta = 0.04, alpha = 0.2 - 0.75 * beta;

  double t = spec.a;
  Batch k1 = f(x, t);

  double h = spec.initial_step;
  if (h <= 0.0) {
    // Initial step from the scale of the state and its derivative.
    const Batch zero = Batch::Zero(x.rows(), x.cols());
    const double d0 = error_norm(x, zero, x, spec.atol, spec.rtol, !spec.check_finite);
    const double d1 = error_norm(k1, zero, x, spec.atol, spec.rtol, !spec.check_finite);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, std::abs(span));
    const Batch x1 = x + (dir * h0) * k1;
    const Batch k = f(x1, t + dir * h0);
    const double d2 = error_norm(k - k1, zero, x, spec.atol, spec.rtol, !spec.check_finite) / h0;
    const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
  }
  h = std::min(h, max_step);

  double err_prev = 1e-4;
  bool last_rejected = false;
  const double lo = std::min(spec.a, spec.b), hi = std::max(spec.a, spec.b);
  auto clamp_t = [&](double s) { return std::clamp(s, lo, hi); };

  while (dir * (spec.b - t) > 0.0) {
    if (h < spec.min_step) {
      finish(run, spec, x);
      throw StiffnessError("rk45: step size " + std::to_string(h) + " fell below min_step at t = " +
                               std::to_string(t),
                           run);
    }
    bool final_step = false;
    if (h >= std::abs(spec.b - t)) {
      h = std::abs(spec.b - t);
      final_step = true;
    }
    const double hs = dir * h;
    const double t_new = final_step ? spec.b : t + hs;
    const Batch k2 = f(x + hs * (D::a21 * k1), clamp_t(t + D::c2 * hs));
    const Batch k3 = f(x + hs * (D::a31 * k1 + D::a32 * k2), clamp_t(t + D::c3 * hs));
    const Batch k4 = f(x + hs * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3), clamp_t(t + D::c4 * hs));
    const Batch k5 =
        f(x + hs * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 + D::a54 * k4), clamp_t(t + D::c5 * hs));
    const Batch k6 =
        f(x + hs * (D::a61 * k1 + D::a62 * k2 + D::a63 * k3 + D::a64 * k4 + D::a65 * k5), t_new);
    Batch x_new = x + hs * (D::a71 * k1 + D::a73 * k3 + D::a74 * k4 + D::a75 * k5 + D::a76 * k6);
    const Batch k7 = f(x_new, t_new);
    const Batch err = hs * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 + D::e6 * k6 + D::e7 * k7);
    const double en = error_norm(err, x, x_new, spec.atol, spec.rtol, !spec.check_finite);

    if (en <= 1.0) {
      if (spec.check_finite && !rows_finite(x_new)) {
        finish(run, spec, x);
        throw DivergenceError("rk45: non-finite state at t = " + std::to_string(t_new), run);
      }
      t = t_new;
      x = std::move(x_new);
      k1 = k7;  // first-same-as-last
      ++run.accepted;
      run.step_sizes.push_back(hs);
      record(run, spec, t, x);
      double fac = en == 0.0 ? fac_max : safety * std::pow(en, -alpha) * std::pow(err_prev, beta);
      fac = std::clamp(fac, fac_min, fac_max);
      if (last_rejected) fac = std::min(fac, 1.0);
      err_prev = std::max(en, 1e-4);
      last_rejected = false;
      h = std::min(h * fac, max_step);
    } else {
      ++run.rejected;
      last_rejected = true;
      const double fac = std::isfinite(en) ? std::max(fac_min, safety * std::pow(en, -0.2)) : fac_min;
      h *= fac;
    }
  }
  finish(run, spec, x);
}

}  // namespace detail

/// Integrate dx/dt = v(x, t) from spec.a to spec.b starting at x_init.
template <VectorField F>
SolverRun solve(const F& field, const Batch& x_init, const SolverSpec& spec) {
  spec.validate();
  if (!x_init.allFinite()) throw DomainError("solve: initial state is not finite");
  SolverRun run;
  detail::CountingField<F> f{field, &run.nfe};
  run.times.push_back(spec.a);
  run.states.push_back(x_init);
  run.cumulative_nfe.push_back(0);
  if (spec.adaptive()) {
    detail::solve_adaptive(f, x_init, spec, run);
    return run;
  }
  Batch x = x_init;
  const int n = spec.steps;
  double t = spec.a;
  for (int i = 1; i <= n; ++i) {
    const double t_next = i == n ? spec.b : spec.a + (spec.b - spec.a) * (double(i) / n);
    x = detail::fixed_step(spec.method, f, x, t, t_next);
    if (spec.check_finite && !detail::rows_finite(x)) {
      detail::finish(run, spec, x);
      throw DivergenceError("solve: non-finite state at t = " + std::to_string(t_next), run);
    }
    run.step_sizes.push_back(t_next - t);
    ++run.accepted;
    t = t_next;
    if (i < n) detail::record(run, spec, t, x);
  }
  if (spec.keep_trajectory) {
    run.times.push_back(spec.b);
    run.states.push_back(x);
    run.cumulative_nfe.push_back(run.nfe);
  } else {
    detail::finish(run, spec, x);
  }
  return run;
}

/// Solve each segment with `per_segment` (its interval is replaced by the
/// segment's), chaining the end state of one into the next.
template <VectorField F>
SolverRun solve_segmented(const F& field, const Batch& x_init, const TimeSegmentation& seg,
                          const SolverSpec& per_segment) {
  SolverRun out;
  Batch x = x_init;
  for (int k = 0; k < seg.segments(); ++k) {
    const auto [ta, tb] = seg.segment(k);
    SolverRun part = solve(field, x, per_segment.on(ta, tb));
    const std::size_t skip = k == 0 ? 0 : 1;
    for (std::size_t i = skip; i < part.times.size(); ++i) {
      out.times.push_back(part.times[i]);
      out.states.push_back(part.states[i]);
      out.cumulative_nfe.push_back(out.nfe + part.cumulative_nfe[i]);
    }
    out.step_sizes.insert(out.step_sizes.end(), part.step_sizes.begin(), part.step_sizes.end());
    out.nfe += part.nfe;
    out.accepted += part.accepted;
    out.rejected += part.rejected;
    x = part.final_state();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Truncation errors.

struct ClosedFormOracle {
  FlowMap flow;
  std::string name = "closed_form";
};

/// Reference solve with `steps` steps over the full interval; sub-intervals get
/// a proportional share (at least one step).
struct FineGridOracle {
  Method method = Method::Euler;
  int steps = 480;
};

using Oracle = std::variant<ClosedFormOracle, FineGridOracle>;

inline std::string describe(const Oracle& o) {
  if (const auto* c = std::get_if<ClosedFormOracle>(&o)) return c->name;
  const auto& f = std::get<FineGridOracle>(o);
  return to_string(f.method) + "-" + std::to_string(f.steps);
}

/// Resolve an oracle for `field`: learned fields need a fine-grid spec.
inline Oracle oracle_for(const FieldKind& field, std::optional<FineGridOracle> fine = std::nullopt) {
  if (fine) return *fine;
  if (auto flow = field.closed_form()) return ClosedFormOracle{*flow};
  throw ConfigError("no oracle available: learned fields require a fine-grid oracle spec");
}

template <VectorField F>
Batch oracle_flow(const F& field, const Oracle& oracle, const Batch& x, double from, double to,
                  double full_length) {
  if (const auto* c = std::get_if<ClosedFormOracle>(&oracle)) return c->flow(x, from, to);
  const auto& fine = std::get<FineGridOracle>(oracle);
  const double frac = std::abs(to - from) / std::abs(full_length);
  const int n = std::max(1, static_cast<int>(std::llround(fine.steps * frac)));
  SolverSpec s = SolverSpec::fixed(fine.method, n, from, to);
  s.keep_trajectory = false;
  return solve(field, x, s).final_state();
}

/// Mean over rows of the per-row Euclidean distance.
inline double mean_row_distance(const Batch& a, const Batch& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "distance: shape mismatch");
  if (a.rows() == 0) return 0.0;
  return (a - b).rowwise().norm().mean();
}

struct TruncationReport {
  std::vector<double> step_times;  ///< t_i at the start of each step
  std::vector<double> step_sizes;
  std::vector<double> lte;         ///< ||x_hat(t_i + h_i; x_i) - x_{i+1}||, mean over points
  double gte = 0.0;                ///< mean over points of ||x(b) - x_b||
  Vector gte_per_point;
  std::string oracle;
  SolverRun run;
};

template <VectorField F>
TruncationReport measure_gte(const F& field, const Batch& x_init, SolverSpec spec, const Oracle& oracle) {
  spec.keep_trajectory = true;
  TruncationReport rep;
  rep.oracle = describe(oracle);
  rep.run = solve(field, x_init, spec);
  const double length = spec.b - spec.a;
  const auto& run = rep.run;
  for (std::size_t i = 0; i + 1 < run.times.size(); ++i) {
    const Batch ref = oracle_flow(field, oracle, run.states[i], run.times[i], run.times[i + 1], length);
    rep.step_times.push_back(run.times[i]);
    rep.step_sizes.push_back(run.times[i + 1] - run.times[i]);
    rep.lte.push_back(mean_row_distance(ref, run.states[i + 1]));
  }
  const Batch exact = oracle_flow(field, oracle, x_init, spec.a, spec.b, length);
  rep.gte_per_point = (exact - run.final_state()).rowwise().norm();
  rep.gte = rep.gte_per_point.size() ? rep.gte_per_point.mean() : 0.0;
  return rep;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require_shape(x.size() == y.size() && x.size() >= 2, "loglog_slope: need >= 2 matching points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

struct OrderFit {
  double order = 0.0;
  std::vector<double> step_sizes;
  std::vector<double> errors;
  bool reliable = true;
  std::string warning;
};

/// Convergence order p from the slope of log GTE against log h.
template <VectorField F>
OrderFit empirical_order(const F& field, const Batch& x_init, const SolverSpec& base,
                         const std::vector<int>& step_counts, const Oracle& oracle) {
  if (step_counts.size() < 3) throw ConfigError("empirical_order: need at least 3 step counts");
  const auto [mn, mx] = std::minmax_element(step_counts.begin(), step_counts.end());
  if (*mx < 4 * *mn) throw ConfigError("empirical_order: step counts must span at least 4x in h");
  OrderFit fit;
  const double scale = 1.0 + x_init.cwiseAbs().maxCoeff();
  for (int n : step_counts) {
    SolverSpec s = base;
    s.steps = n;
    const auto rep = measure_gte(field, x_init, s, oracle);
    fit.step_sizes.push_back(std::abs(base.b - base.a) / n);
    fit.errors.push_back(rep.gte);
    if (rep.gte < 1e-12 * scale) {
      fit.reliable = false;
      fit.warning = "GTE at the round-off floor for N = " + std::to_string(n) + "; fit unreliable";
    }
  }
  std::vector<double> errs = fit.errors;
  for (double& e : errs) e = std::max(e, std::numeric_limits<double>::min());
  fit.order = loglog_slope(fit.step_sizes, errs);
  return fit;
}

/// GTE upper bound from measured per-step LTE and a constant Lipschitz bound M:
/// the integral of tau(t) exp(M (c - t)) over [a, c], with tau piecewise
/// constant at lte_i / h_i on each step.
inline double gte_bound(const TruncationReport& rep, double lipschitz) {
  const double c = rep.step_times.empty() ? 0.0 : rep.step_times.back() + rep.step_sizes.back();
  double bound = 0.0;
  for (std::size_t i = 0; i < rep.lte.size(); ++i) {
    const double t0 = rep.step_times[i], h = rep.step_sizes[i];
    if (!(h > 0.0)) throw ConfigError("gte_bound: forward integration required");
    const double t1 = t0 + h;
    const double tau = rep.lte[i] / h;
    const double weight = lipschitz > 0.0
                              ? (std::exp(lipschitz * (c - t0)) - std::exp(lipschitz * (c - t1))) / lipschitz
                              : h;
    bound += tau * weight;
  }
  return bound;
}

struct SegmentScalingRow {
  int segments = 1;
  std::uint64_t nfe = 0;
  double error_sum = 0.0;   ///< sum of per-segment endpoint errors
  double error_rate = 0.0;  ///< sum of per-segment errors per unit segment length
};

/// Segment each interval uniformly into K pieces, start every segment from
/// the exact state, and solve it with `per_segment` steps. Only error made
/// within a segment is counted.
template <VectorField F>
std::vector<SegmentScalingRow> segment_scaling(const F& field, const FlowMap& exact, const Batch& x_init,
                                               double a, double b, const SolverSpec& per_segment,
                                               const std::vector<int>& ks) {
  std::vector<SegmentScalingRow> rows;
  for (int k : ks) {
    const auto seg = make_segmentation(k, a, b);
    SegmentScalingRow row;
    row.segments = k;
    for (int s = 0; s < k; ++s) {
      const auto [ta, tb] = seg.segment(s);
      const Batch start = exact(x_init, a, ta);
      SolverSpec spec = per_segment.on(ta, tb);
      spec.keep_trajectory = false;
      const auto run = solve(field, start, spec);
      const double e = mean_row_distance(exact(x_init, a, tb), run.final_state());
      row.nfe += run.nfe;
      row.error_sum += e;
      row.error_rate += e / (tb - ta);
    }
    rows.push_back(row);
  }
  return rows;
}

/// Trajectory CSV: t, state components, h, lte, cumulative_nfe. h and lte
/// describe the step leaving each row and are 0 on the final row.
inline io::CsvTable solver_run_csv(const SolverRun& run, const TruncationReport* rep = nullptr) {
  io::CsvTable t;
  const Eigen::Index points = run.states.front().rows(), dim = run.states.front().cols();
  t.header.push_back("t");
  for (Eigen::Index p = 0; p < points; ++p)
    for (Eigen::Index d = 0; d < dim; ++d)
      t.header.push_back(points == 1 ? "x" + std::to_string(d)
                                     : "p" + std::to_string(p) + "_x" + std::to_string(d));
  t.header.insert(t.header.end(), {"h", "lte", "cumulative_nfe"});
  const bool full = run.states.size() == run.step_sizes.size() + 1;
  for (std::size_t i = 0; i < run.times.size(); ++i) {
    std::vector<double> row{run.times[i]};
    for (Eigen::Index p = 0; p < points; ++p)
      for (Eigen::Index d = 0; d < dim; ++d) row.push_back(run.states[i](p, d));
    const bool has_step = full && i < run.step_sizes.size();
    row.push_back(has_step ? run.step_sizes[i] : 0.0);
    row.push_back(has_step && rep && i < rep->lte.size() ? rep->lte[i] : 0.0);
    row.push_back(static_cast<double>(run.cumulative_nfe[i]));
    t.add_row(row);
  }
  return t;
}

}  // namespace flowstraight
