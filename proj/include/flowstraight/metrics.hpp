// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Diagnostics: straightness and sequential straightness, GTE-vs-NFE curves,
// empirical Lipschitz curves, target/gradient variance, sample distances.

#pragma once

#include "flowstraight/core.hpp"
#include "flowstraight/field.hpp"
#include "flowstraight/io/csv.hpp"
#include "flowstraight/nn/mlp.hpp"
#include "flowstraight/segmentation.hpp"
#include "flowstraight/seqrf.hpp"
#include "flowstraight/solvers.hpp"
#include "flowstraight/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flowstraight {

// ---------------------------------------------------------------------------
// Straightness.

struct StraightnessReport {
  double value = 0.0;
  double std_error = 0.0;
  std::vector<double> curve_t;      ///< bin centres
  std::vector<double> curve_value;  ///< mean squared deviation per unit time in each bin
  bool flipped = false;             ///< curve_t reported as 1 - t
  TimeSegmentation segmentation;
  std::string solver;
  std::uint64_t n = 0;

  /// Curve with the time axis reversed (t -> 1 - t), bins in increasing order.
  StraightnessReport flip() const {
    StraightnessReport r = *this;
    r.flipped = !flipped;
    std::reverse(r.curve_t.begin(), r.curve_t.end());
    std::reverse(r.curve_value.begin(), r.curve_value.end());
    for (double& t : r.curve_t) t = 1.0 - t;
    return r;
  }

  io::CsvTable csv(const std::string& metric, const std::string& field_id, std::uint64_t seed) const {
    io::CsvTable t;
    io::stamp_report(t, metric, field_id, solver, seed, n);
    t.meta("segments", std::to_string(segmentation.segments()));
    t.meta("value", io::format_double(value));
    t.meta("std_error", io::format_double(std_error));
    t.meta("time_axis", flipped ? "flipped" : "noise_to_data");
    t.header = {"t", "contribution"};
    for (std::size_t i = 0; i < curve_t.size(); ++i) t.add_row({curve_t[i], curve_value[i]});
    return t;
  }
};

/// Straightness of one trajectory given as successive states (rows):
/// sum_i h_i ||chord - (z_{i+1} - z_i) / h_i||^2, chord = (z_end - z_start) / (t_end - t_start).
inline double straightness_of_trajectory(const std::vector<double>& times, const Batch& states) {
  require_shape(times.size() >= 2 && static_cast<Eigen::Index>(times.size()) == states.rows(),
                "straightness: need one state per time and at least two times");
  const double span = times.back() - times.front();
  const Eigen::RowVectorXd chord = (states.row(states.rows() - 1) - states.row(0)) / span;
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    const double h = times[i + 1] - times[i];
    const Eigen::RowVectorXd fd =
        (states.row(static_cast<Eigen::Index>(i) + 1) - states.row(static_cast<Eigen::Index>(i))) / h;
    s += std::abs(h) * (chord - fd).squaredNorm();
  }
  return s;
}

namespace detail {

struct CurveAccumulator {
  double a = 0.0, b = 1.0;
  std::vector<double> sum;
  explicit CurveAccumulator(int bins, double lo = 0.0, double hi = 1.0)
      : a(lo), b(hi), sum(static_cast<std::size_t>(bins), 0.0) {}
  int bins() const { return static_cast<int>(sum.size()); }
  double width() const { return (b - a) / bins(); }
  int bin_of(double t) const {
    const int i = static_cast<int>(std::floor((t - a) / width()));
    return std::clamp(i, 0, bins() - 1);
  }
  double centre(int i) const { return a + (i + 0.5) * width(); }
};

/// Per-row straightness of a batched run; adds h * deviation^2 into curve bins.
inline Vector run_straightness(const SolverRun& run, CurveAccumulator& curve) {
  const auto& ts = run.times;
  const Eigen::Index n = run.states.front().rows();
  const double span = ts.back() - ts.front();
  const Batch chord = (run.states.back() - run.states.front()) / span;
  Vector s = Vector::Zero(n);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const double h = ts[i + 1] - ts[i];
    const Vector dev = (chord - (run.states[i + 1] - run.states[i]) / h).rowwise().squaredNorm();
    s += std::abs(h) * dev;
    curve.sum[static_cast<std::size_t>(curve.bin_of(0.5 * (ts[i] + ts[i + 1])))] += std::abs(h) * dev.sum();
  }
  return s;
}

inline void mean_and_se(const Vector& v, double scale, double& mean, double& se) {
  const double n = static_cast<double>(v.size());
  mean = scale * v.mean();
  se = v.size() > 1 ? scale * std::sqrt((v.array() - v.mean()).square().sum() / (n - 1) / n) : 0.0;
}

}  // namespace detail

/// Mean straightness over solver trajectories started from n noise draws.
template <VectorField F>
StraightnessReport straightness(const F& field, const ToyDistribution& source, Eigen::Index n,
                                SolverSpec spec, Rng& rng, int bins = 20) {
  if (n < 1) throw ConfigError("straightness: n must be >= 1");
  spec.keep_trajectory = true;
  const Batch x0 = source.sample(n, rng);
  detail::CurveAccumulator curve(bins, spec.a, spec.b);
  const auto run = solve(field, x0, spec);
  const Vector s = detail::run_straightness(run, curve);
  StraightnessReport rep;
  detail::mean_and_se(s, 1.0, rep.value, rep.std_error);
  rep.segmentation = TimeSegmentation({spec.a, spec.b});
  rep.solver = spec.describe();
  rep.n = static_cast<std::uint64_t>(n);
  for (int i = 0; i < curve.bins(); ++i) {
    rep.curve_t.push_back(curve.centre(i));
    rep.curve_value.push_back(curve.sum[static_cast<std::size_t>(i)] / (static_cast<double>(n) * curve.width()));
  }
  return rep;
}

/// Sequential straightness: each of n trajectories picks a segment k uniformly,
/// starts at the interpolant point (1 - t_k) X0 + t_k X1, and is solved across
/// the segment with `per_segment`. S_seq = K * mean per-trajectory straightness.
/// Draw order: X0 batch, X1 batch, then segment indices.
template <VectorField F>
StraightnessReport sequential_straightness(const F& field, const TimeSegmentation& seg,
                                           const IndependentCoupling& coupling, Eigen::Index n,
                                           const SolverSpec& per_segment, Rng& rng, int bins = 20) {
  if (n < 1) throw ConfigError("sequential straightness: n must be >= 1");
  const Batch x0 = coupling.source.sample(n, rng);
  const Batch x1 = coupling.target.sample(n, rng);
  const int k_count = seg.segments();
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(k_count));
  for (Eigen::Index i = 0; i < n; ++i)
    members[rng.index(static_cast<std::uint64_t>(k_count))].push_back(i);

  detail::CurveAccumulator curve(bins, seg.start(), seg.end());
  std::vector<double> covering(static_cast<std::size_t>(bins), 0.0);
  Vector s = Vector::Zero(n);
  for (int k = 0; k < k_count; ++k) {
    const auto& idx = members[static_cast<std::size_t>(k)];
    const auto [ta, tb] = seg.segment(k);
    for (int b = 0; b < bins; ++b) {
      const double c = curve.centre(b);
      if (seg.locate(c) == k) covering[static_cast<std::size_t>(b)] += static_cast<double>(idx.size());
    }
    if (idx.empty()) continue;
    Batch start(static_cast<Eigen::Index>(idx.size()), x0.cols());
    for (std::size_t j = 0; j < idx.size(); ++j)
      start.row(static_cast<Eigen::Index>(j)) = (1.0 - ta) * x0.row(idx[j]) + ta * x1.row(idx[j]);
    SolverSpec spec = per_segment.on(ta, tb);
    spec.keep_trajectory = true;
    const auto run = solve(field, start, spec);
    const Vector sk = detail::run_straightness(run, curve);
    for (std::size_t j = 0; j < idx.size(); ++j) s(idx[j]) = sk(static_cast<Eigen::Index>(j));
  }
  StraightnessReport rep;
  detail::mean_and_se(s, static_cast<double>(k_count), rep.value, rep.std_error);
  rep.segmentation = seg;
  rep.solver = per_segment.describe();
  rep.n = static_cast<std::uint64_t>(n);
  for (int b = 0; b < bins; ++b) {
    const double c = covering[static_cast<std::size_t>(b)];
    rep.curve_t.push_back(curve.centre(b));
    rep.curve_value.push_back(c > 0 ? curve.sum[static_cast<std::size_t>(b)] / (c * curve.width()) : 0.0);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// GTE against NFE.

struct GteCurve {
  std::vector<std::uint64_t> nfe;
  std::vector<double> gte;
  std::vector<double> std_error;
  std::string method;
  std::string oracle;
  std::uint64_t n = 0;

  io::CsvTable csv(const std::string& field_id, std::uint64_t seed) const {
    io::CsvTable t;
    io::stamp_report(t, "gte_curve", field_id, method, seed, n);
    t.meta("oracle", oracle);
    t.header = {"nfe", "gte", "std_error"};
    for (std::size_t i = 0; i < nfe.size(); ++i) t.add_row({static_cast<double>(nfe[i]), gte[i], std_error[i]});
    return t;
  }
};

/// Mean endpoint distance between a few-step solve at each NFE and the
/// oracle's solution from the same noise draws. NFE must be a multiple of the
/// method's stage count.
template <VectorField F>
GteCurve gte_curve(const F& field, const ToyDistribution& source, const std::vector<int>& nfes, Method method,
                   const Oracle& oracle, Eigen::Index n, Rng& rng, double a = 0.0, double b = 1.0) {
  if (n < 1) throw ConfigError("gte_curve: n must be >= 1");
  if (method == Method::Rk45) throw ConfigError("gte_curve: fixed-step method required");
  GteCurve c;
  c.method = to_string(method);
  c.oracle = describe(oracle);
  c.n = static_cast<std::uint64_t>(n);
  const Batch x0 = source.sample(n, rng);
  const Batch exact = oracle_flow(field, oracle, x0, a, b, b - a);
  for (int nfe : nfes) {
    if (nfe < 1 || nfe % stages(method) != 0)
      throw ConfigError("gte_curve: NFE " + std::to_string(nfe) + " is not a positive multiple of " +
                        std::to_string(stages(method)));
    SolverSpec s = SolverSpec::fixed(method, nfe / stages(method), a, b);
    s.keep_trajectory = false;
    const auto run = solve(field, x0, s);
    const Vector d = (run.final_state() - exact).rowwise().norm();
    double m = 0, se = 0;
    detail::mean_and_se(d, 1.0, m, se);
    c.nfe.push_back(run.nfe);
    c.gte.push_back(m);
    c.std_error.push_back(se);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Lipschitz and field-norm curves.

struct LipschitzCurve {
  std::vector<double> t;
  std::vector<double> lipschitz;       ///< max finite-difference ratio (a lower bound)
  std::vector<double> field_norm_sq;   ///< mean ||v(x_t, t)||^2
  std::uint64_t probes = 0;
  double perturbation = 0.0;

  io::CsvTable csv(const std::string& field_id, std::uint64_t seed) const {
    io::CsvTable tab;
    io::stamp_report(tab, "lipschitz", field_id, "none", seed, probes);
    tab.meta("perturbation", io::format_double(perturbation));
    tab.header = {"t", "lipschitz", "field_norm_sq"};
    for (std::size_t i = 0; i < t.size(); ++i) tab.add_row({t[i], lipschitz[i], field_norm_sq[i]});
    return tab;
  }
};

/// Probe points are interpolant draws x_t from the coupling; each gets one
/// random direction of length `perturbation`.
template <VectorField F>
LipschitzCurve lipschitz_estimate(const F& field, const IndependentCoupling& probe, const std::vector<double>& t_grid,
                                  Eigen::Index n_probes, double perturbation, Rng& rng) {
  if (!(perturbation > 0.0)) throw ConfigError("lipschitz: perturbation scale must be > 0");
  if (n_probes < 1) throw ConfigError("lipschitz: need at least one probe");
  LipschitzCurve c;
  c.probes = static_cast<std::uint64_t>(n_probes);
  c.perturbation = perturbation;
  for (double t : t_grid) {
    const auto s = sample_interpolant(Coupling(probe), n_probes, t, rng);
    Batch dir = rng.normal_batch(n_probes, s.xt.cols());
    for (Eigen::Index i = 0; i < n_probes; ++i) {
      const double nrm = dir.row(i).norm();
      dir.row(i) *= nrm > 0 ? perturbation / nrm : 0.0;
      if (nrm == 0) dir(i, 0) = perturbation;
    }
    const Batch v = field(s.xt, t);
    const Batch vp = field(Batch(s.xt + dir), t);
    const Vector ratio = (vp - v).rowwise().norm() / perturbation;
    c.t.push_back(t);
    c.lipschitz.push_back(ratio.maxCoeff());
    c.field_norm_sq.push_back(v.rowwise().squaredNorm().mean());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Target and gradient variance.

struct VarianceBinning {
  int t_bins = 4;
  int x_cells = 6;        ///< per dimension over [-extent, extent]
  double extent = 3.0;
  std::uint64_t samples = 200000;
  std::uint64_t min_per_bin = 30;

  void validate() const {
    if (t_bins < 1 || x_cells < 1 || !(extent > 0.0) || samples < 1 || min_per_bin < 2)
      throw ConfigError("variance binning: invalid parameters");
  }
};

struct VarianceBin {
  std::uint64_t key = 0;
  double t_centre = 0.0;
  Vector x_centre;
  std::uint64_t count = 0;
  double target_variance = 0.0;  ///< E||u - u_bar||^2 within the bin
  double trace = std::numeric_limits<double>::quiet_NaN();  ///< Tr Cov of the per-draw gradient at the centre
};

struct GradientVarianceReport {
  std::vector<VarianceBin> bins;  ///< bins with at least min_per_bin draws, by key
  double aggregate_target_variance = 0.0;  ///< mean over reported bins
  double aggregate_trace = std::numeric_limits<double>::quiet_NaN();
  bool wide_ci_warning = false;
  std::string coupling;

  io::CsvTable csv(const std::string& field_id, std::uint64_t seed, std::uint64_t n) const {
    io::CsvTable t;
    io::stamp_report(t, "gradient_variance", field_id, coupling, seed, n);
    t.meta("aggregate_target_variance", io::format_double(aggregate_target_variance));
    t.meta("aggregate_trace", io::format_double(aggregate_trace));
    t.header = {"bin", "t", "count", "target_variance", "trace"};
    const std::size_t d = bins.empty() ? 0 : static_cast<std::size_t>(bins.front().x_centre.size());
    for (std::size_t j = 0; j < d; ++j) t.header.push_back("x" + std::to_string(j));
    for (const auto& b : bins) {
      std::vector<double> row{static_cast<double>(b.key), b.t_centre, static_cast<double>(b.count),
                              b.target_variance, b.trace};
      for (Eigen::Index j = 0; j < b.x_centre.size(); ++j) row.push_back(b.x_centre(j));
      t.add_row(row);
    }
    return t;
  }
};

/// Regression draws (x, t, target) from a coupling: independent pairs with
/// target x1 - x0, or stored pairs with the segment-slope target.
inline RegressionBatch regression_draws(const Coupling& coupling, Eigen::Index n, Rng& rng) {
  if (const auto* ind = std::get_if<IndependentCoupling>(&coupling))
    return independent_batch(*ind, static_cast<int>(n), rng);
  const auto& joint = std::get<JointCoupling>(coupling);
  PairSampler sampler(joint.pairs);
  return stage2_batch(sampler, Stage2Mode::Reflow, static_cast<int>(n), rng);
}

/// Within (x, t) bins: the variance of the regression target and, given a
/// network, the trace of the covariance of the per-draw loss gradient
/// 2 J^T (v - u) evaluated at the bin centre.
inline GradientVarianceReport gradient_variance(const Coupling& coupling, const VarianceBinning& cfg, Rng& rng,
                                                const nn::Mlp* net = nullptr, const ParamVector* params = nullptr,
                                                const std::optional<ParamVector>& trainable = std::nullopt) {
  cfg.validate();
  const RegressionBatch draws = regression_draws(coupling, static_cast<Eigen::Index>(cfg.samples), rng);
  const auto d = draws.x.cols();
  const double w = 2.0 * cfg.extent / cfg.x_cells;
  std::map<std::uint64_t, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < draws.x.rows(); ++i) {
    std::uint64_t key = static_cast<std::uint64_t>(std::min(cfg.t_bins - 1, static_cast<int>(draws.t(i) * cfg.t_bins)));
    bool inside = true;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double c = std::floor((draws.x(i, j) + cfg.extent) / w);
      if (c < 0 || c >= cfg.x_cells) {
        inside = false;
        break;
      }
      key = key * static_cast<std::uint64_t>(cfg.x_cells) + static_cast<std::uint64_t>(c);
    }
    if (inside) members[key].push_back(i);
  }
  GradientVarianceReport rep;
  rep.coupling = std::holds_alternative<IndependentCoupling>(coupling) ? "independent" : "joint";
  std::size_t occupied = 0;
  double trace_sum = 0.0;
  for (const auto& [key, idx] : members) {
    ++occupied;
    if (idx.size() < cfg.min_per_bin) continue;
    VarianceBin b;
    b.key = key;
    b.count = idx.size();
    std::uint64_t rest = key;
    b.x_centre.resize(d);
    for (Eigen::Index j = d; j-- > 0;) {
      b.x_centre(j) = -cfg.extent + (static_cast<double>(rest % static_cast<std::uint64_t>(cfg.x_cells)) + 0.5) * w;
      rest /= static_cast<std::uint64_t>(cfg.x_cells);
    }
    b.t_centre = (static_cast<double>(rest) + 0.5) / cfg.t_bins;
    Batch u(static_cast<Eigen::Index>(idx.size()), d);
    for (std::size_t m = 0; m < idx.size(); ++m) u.row(static_cast<Eigen::Index>(m)) = draws.target.row(idx[m]);
    const Eigen::RowVectorXd ubar = u.colwise().mean();
    const double denom = static_cast<double>(idx.size()) - 1.0;
    b.target_variance = (u.rowwise() - ubar).squaredNorm() / denom;
    if (net && params) {
      Eigen::MatrixXd jac = nn::output_jacobian(*net, *params, b.x_centre, b.t_centre);  // D x P
      if (trainable) jac = jac * trainable->asDiagonal();
      // g_m - g_bar = -2 J^T (u_m - u_bar)
      const Eigen::MatrixXd centred = (u.rowwise() - ubar);
      b.trace = 4.0 * (centred * jac).squaredNorm() / denom;
      trace_sum += b.trace;
    }
    rep.bins.push_back(std::move(b));
  }
  if (!rep.bins.empty()) {
    double acc = 0;
    for (const auto& b : rep.bins) acc += b.target_variance;
    rep.aggregate_target_variance = acc / static_cast<double>(rep.bins.size());
    if (net && params) rep.aggregate_trace = trace_sum / static_cast<double>(rep.bins.size());
  }
  rep.wide_ci_warning = rep.bins.empty() || 2 * rep.bins.size() < occupied;
  return rep;
}

struct MatchedVariance {
  std::size_t bins = 0;
  double target_variance_a = 0.0, target_variance_b = 0.0;
  double trace_a = 0.0, trace_b = 0.0;
};

/// Means over the bins reported by both a and b.
inline MatchedVariance matched_aggregate(const GradientVarianceReport& a, const GradientVarianceReport& b) {
  MatchedVariance m;
  std::map<std::uint64_t, const VarianceBin*> in_b;
  for (const auto& bin : b.bins) in_b[bin.key] = &bin;
  for (const auto& bin : a.bins) {
    const auto it = in_b.find(bin.key);
    if (it == in_b.end()) continue;
    ++m.bins;
    m.target_variance_a += bin.target_variance;
    m.target_variance_b += it->second->target_variance;
    m.trace_a += bin.trace;
    m.trace_b += it->second->trace;
  }
  if (m.bins) {
    const double n = static_cast<double>(m.bins);
    m.target_variance_a /= n;
    m.target_variance_b /= n;
    m.trace_a /= n;
    m.trace_b /= n;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Sample distances.

/// Minimum-cost perfect assignment on a square cost matrix (shortest
/// augmenting paths with potentials, O(n^3)). Returns assignment[row] = col.
inline std::vector<Eigen::Index> min_cost_assignment(const Eigen::MatrixXd& cost) {
  require_shape(cost.rows() == cost.cols(), "assignment: cost matrix must be square");
  const Eigen::Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(u);
  std::vector<Eigen::Index> p(static_cast<std::size_t>(n) + 1, 0), way(p);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Eigen::Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[ju];
        if (cur < minv[ju]) {
          minv[ju] = cur;
          way[ju] = j0;
        }
        if (minv[ju] < delta) {
          delta = minv[ju];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) {
          u[static_cast<std::size_t>(p[ju])] += delta;
          v[ju] -= delta;
        } else {
          minv[ju] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Eigen::Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Eigen::Index> assignment(static_cast<std::size_t>(n));
  for (Eigen::Index j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assignment;
}

inline constexpr Eigen::Index kMaxExactW2 = 2048;

/// Exact 2-Wasserstein distance between equal-size empirical measures.
inline double exact_w2(const Batch& a, const Batch& b) {
  require_shape(a.cols() == b.cols(), "w2: dimension mismatch");
  if (a.rows() != b.rows()) throw ConfigError("w2: exact assignment needs equal sample sizes");
  if (a.rows() > kMaxExactW2) throw ConfigError("w2: exact assignment limited to n <= 2048");
  if (a.rows() == 0) return 0.0;
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  const auto asg = min_cost_assignment(cost);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += cost(i, asg[static_cast<std::size_t>(i)]);
  return std::sqrt(std::max(0.0, total / static_cast<double>(n)));
}

/// Energy distance 2 E||X - Y|| - E||X - X'|| - E||Y - Y'|| (V-statistics).
inline double energy_distance(const Batch& a, const Batch& b) {
  require_shape(a.cols() == b.cols() && a.rows() > 0 && b.rows() > 0, "energy distance: non-empty conforming samples required");
  auto mean_dist = [](const Batch& p, const Batch& q) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < q.rows(); ++j) acc += (p.row(i) - q.row(j)).norm();
    return acc / (static_cast<double>(p.rows()) * static_cast<double>(q.rows()));
  };
  return std::max(0.0, 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b));
}

struct DistanceReport {
  std::optional<double> w2;
  std::string w2_error;  ///< why the exact path was skipped
  double energy = 0.0;
  Vector mean_a, mean_b, var_a, var_b;
  std::uint64_t n_a = 0, n_b = 0;

  io::CsvTable csv(const std::string& field_id, const std::string& solver, std::uint64_t seed) const {
    io::CsvTable t;
    io::stamp_report(t, "sample_distance", field_id, solver, seed, n_a);
    t.meta("n_b", std::to_string(n_b));
    t.header = {"quantity", "value"};
    t.add_row(std::vector<std::string>{"w2", w2 ? io::format_double(*w2) : "nan"});
    t.add_row(std::vector<std::string>{"energy", io::format_double(energy)});
    for (Eigen::Index j = 0; j < mean_a.size(); ++j) {
      t.add_row(std::vector<std::string>{"mean_a_x" + std::to_string(j), io::format_double(mean_a(j))});
      t.add_row(std::vector<std::string>{"mean_b_x" + std::to_string(j), io::format_double(mean_b(j))});
      t.add_row(std::vector<std::string>{"var_a_x" + std::to_string(j), io::format_double(var_a(j))});
      t.add_row(std::vector<std::string>{"var_b_x" + std::to_string(j), io::format_double(var_b(j))});
    }
    return t;
  }
};

inline DistanceReport sample_distance(const Batch& a, const Batch& b) {
  require_shape(a.cols() == b.cols(), "sample distance: dimension mismatch");
  require_shape(a.rows() > 0 && b.rows() > 0, "sample distance: empty sample");
  DistanceReport r;
  r.n_a = static_cast<std::uint64_t>(a.rows());
  r.n_b = static_cast<std::uint64_t>(b.rows());
  try {
    r.w2 = exact_w2(a, b);
  } catch (const ConfigError& e) {
    r.w2_error = e.what();
  }
  r.energy = energy_distance(a, b);
  r.mean_a = a.colwise().mean().transpose();
  r.mean_b = b.colwise().mean().transpose();
  r.var_a = (a.rowwise() - a.colwise().mean()).colwise().squaredNorm().transpose() / static_cast<double>(a.rows());
  r.var_b = (b.rowwise() - b.colwise().mean()).colwise().squaredNorm().transpose() / static_cast<double>(b.rows());
  return r;
}

}  // namespace flowstraight
