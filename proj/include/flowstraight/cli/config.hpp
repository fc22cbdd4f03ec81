// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a JSON document validated in full before any work
// starts. Unknown keys are rejected at every level.

#pragma once

#include "flowstraight/core.hpp"
#include "flowstraight/field.hpp"
#include "flowstraight/metrics.hpp"
#include "flowstraight/seqrf.hpp"
#include "flowstraight/solvers.hpp"
#include "flowstraight/toy.hpp"
#include "flowstraight/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace flowstraight::cli {

using nlohmann::json;

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

template <class T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

inline Vector vector_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty number array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": expected numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Batch batch_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected an array of points");
  const Vector first = vector_of(j[0], where);
  Batch b(static_cast<Eigen::Index>(j.size()), first.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector r = vector_of(j[i], where);
    if (r.size() != first.size()) throw ConfigError(where + ": points differ in dimension");
    b.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return b;
}

}  // namespace detail

inline ToyDistribution parse_distribution(const json& j, const std::string& where) {
  using detail::get_or;
  const auto kind = detail::require<std::string>(j, "kind", where);
  if (kind == "gaussian") {
    detail::check_keys(j, {"kind", "mean", "dim", "sigma"}, where);
    GaussianIso g;
    if (j.contains("mean")) g.mean = detail::vector_of(j["mean"], where + ".mean");
    else g.mean = Vector::Zero(get_or<int>(j, "dim", 2, where));
    g.sigma = get_or<double>(j, "sigma", 1.0, where);
    return ToyDistribution(g);
  }
  if (kind == "eight_gaussians") {
    detail::check_keys(j, {"kind", "radius", "sigma"}, where);
    return ToyDistribution(EightGaussianRing{get_or<double>(j, "radius", 4.0, where), get_or<double>(j, "sigma", 0.1, where)});
  }
  if (kind == "two_moons") {
    detail::check_keys(j, {"kind", "noise"}, where);
    return ToyDistribution(TwoMoons{get_or<double>(j, "noise", 0.05, where)});
  }
  if (kind == "checkerboard") {
    detail::check_keys(j, {"kind", "cells", "extent"}, where);
    return ToyDistribution(Checkerboard{get_or<int>(j, "cells", 4, where), get_or<double>(j, "extent", 2.0, where)});
  }
  if (kind == "point_mass") {
    detail::check_keys(j, {"kind", "location"}, where);
    return ToyDistribution(PointMass{detail::vector_of(detail::require<json>(j, "location", where), where + ".location")});
  }
  throw ConfigError(where + ": unknown distribution kind '" + kind + "'");
}

inline SolverSpec parse_solver(const json& j, const std::string& where, bool* distilled = nullptr) {
  detail::check_keys(j, {"method", "steps", "atol", "rtol", "tol", "initial_step", "min_step", "max_step"}, where);
  using detail::get_or;
  const auto method = get_or<std::string>(j, "method", "euler", where);
  SolverSpec s;
  if (method == "distilled") {
    if (!distilled) throw ConfigError(where + ": 'distilled' is only valid for sampling");
    *distilled = true;
    s = SolverSpec::fixed(Method::Euler, 1);
    return s;
  }
  if (distilled) *distilled = false;
  s.method = parse_method(method);
  s.steps = get_or<int>(j, "steps", 1, where);
  const double tol = get_or<double>(j, "tol", 1e-6, where);
  s.atol = get_or<double>(j, "atol", tol, where);
  s.rtol = get_or<double>(j, "rtol", tol, where);
  s.initial_step = get_or<double>(j, "initial_step", 0.0, where);
  s.min_step = get_or<double>(j, "min_step", 1e-12, where);
  s.max_step = get_or<double>(j, "max_step", 0.0, where);
  s.validate();
  return s;
}

inline TrainConfig parse_train(const json& j, const std::string& where, TrainConfig base = {}) {
  using detail::get_or;
  base.batch_size = get_or<int>(j, "batch_size", base.batch_size, where);
  base.steps = get_or<std::uint64_t>(j, "steps", base.steps, where);
  base.lr = get_or<double>(j, "lr", base.lr, where);
  base.beta1 = get_or<double>(j, "beta1", base.beta1, where);
  base.beta2 = get_or<double>(j, "beta2", base.beta2, where);
  base.ema_decay = get_or<double>(j, "ema_decay", base.ema_decay, where);
  base.ema_warmup = get_or<bool>(j, "ema_warmup", base.ema_warmup, where);
  base.log_every = get_or<std::uint64_t>(j, "log_every", base.log_every, where);
  base.record_wall_time = get_or<bool>(j, "record_wall_time", base.record_wall_time, where);
  base.validate();
  return base;
}

/// A non-learned field named in the config (learned fields come from --checkpoint).
inline FieldKind parse_field(const json& j, const std::string& where) {
  const auto kind = detail::require<std::string>(j, "kind", where);
  using detail::get_or;
  if (kind == "exponential") {
    detail::check_keys(j, {"kind", "rate"}, where);
    return FieldKind(AnalyticField::exponential(get_or<double>(j, "rate", 1.0, where)));
  }
  if (kind == "rotation") {
    detail::check_keys(j, {"kind", "rate"}, where);
    return FieldKind(AnalyticField::rotation(get_or<double>(j, "rate", 1.0, where)));
  }
  if (kind == "constant") {
    detail::check_keys(j, {"kind", "velocity"}, where);
    return FieldKind(AnalyticField::constant_velocity(detail::vector_of(detail::require<json>(j, "velocity", where), where)));
  }
  if (kind == "linear") {
    detail::check_keys(j, {"kind", "matrix"}, where);
    const Batch m = detail::batch_of(detail::require<json>(j, "matrix", where), where + ".matrix");
    return FieldKind(AnalyticField::linear(Eigen::MatrixXd(m)));
  }
  if (kind == "conditional_straight") {
    detail::check_keys(j, {"kind", "x0", "x1"}, where);
    ConditionalStraight c{detail::vector_of(detail::require<json>(j, "x0", where), where + ".x0"),
                          detail::vector_of(detail::require<json>(j, "x1", where), where + ".x1")};
    if (c.x0.size() != c.x1.size()) throw ConfigError(where + ": x0 and x1 differ in dimension");
    return FieldKind(c);
  }
  if (kind == "gaussian_oracle") {
    detail::check_keys(j, {"kind", "mean0", "sigma0", "mean1", "sigma1"}, where);
    return FieldKind(GaussianOracle::isotropic(detail::vector_of(detail::require<json>(j, "mean0", where), where),
                                               get_or<double>(j, "sigma0", 1.0, where),
                                               detail::vector_of(detail::require<json>(j, "mean1", where), where),
                                               get_or<double>(j, "sigma1", 1.0, where)));
  }
  throw ConfigError(where + ": unknown field kind '" + kind + "'");
}

struct Stage2Config {
  Stage2Mode mode = Stage2Mode::Reflow;
  TrainConfig train;
  bool cold_start = false;
  std::uint64_t pairs_per_segment = 10000;
  SolverSpec pair_solver = SolverSpec::fixed(Method::Euler, 60);  ///< steps over the whole [0, 1]
};

struct MetricsConfig {
  std::vector<std::string> set{"straightness", "sequential_straightness", "gte", "lipschitz", "distance"};
  std::uint64_t n = 1024;
  std::vector<int> nfe{1, 2, 4, 8};
  Method gte_method = Method::Euler;
  FineGridOracle oracle{Method::Euler, 480};
  std::vector<double> lipschitz_t{0.05, 0.25, 0.5, 0.75, 0.95};
  std::uint64_t probes = 1000;
  double perturbation = 1e-3;
  VarianceBinning variance;
  int bins = 20;
  bool flip_time_axis = false;
};

struct IvpConfig {
  FieldKind field = FieldKind(AnalyticField::exponential(1.0));
  Batch x0;
  double a = 0.0, b = 1.0;
};

struct RecipeConfig {
  std::string kind;  ///< gte_trend | straightness_trend | fewstep_trend | variance_trend | lipschitz
  std::vector<int> ks{2};
};

inline constexpr std::initializer_list<const char*> kMetricNames = {
    "straightness", "sequential_straightness", "gte", "lipschitz", "distance", "variance"};

struct RunConfig {
  json raw;
  std::string hash;
  std::optional<ToyDistribution> source, target;
  nn::MlpSpec model;
  TrainConfig train;
  Stage2Config stage2;
  int k = 1;
  SolverSpec solver = SolverSpec::fixed(Method::Euler, 100);
  bool distilled = false;
  MetricsConfig metrics;
  std::optional<FieldKind> field;
  std::optional<IvpConfig> ivp;
  std::optional<RecipeConfig> recipe;
  std::uint64_t seed = 0;
  std::string output_dir = "run";

  IndependentCoupling coupling() const {
    if (!source || !target) throw ConfigError("config: data.source and data.target are required");
    return {*source, *target};
  }
  SamplerSpec sampler() const { return distilled ? SamplerSpec::distilled() : SamplerSpec::solver(solver); }
};

inline RunConfig parse_config(const json& j) {
  using detail::get_or;
  detail::check_keys(j, {"data", "model", "train", "segmentation", "solver", "metrics", "seed", "output_dir", "field",
                         "ivp", "recipe"},
                     "config");
  RunConfig c;
  c.raw = j;
  const auto dumped = j.dump();
  c.hash = hex64(fnv1a64(dumped.data(), dumped.size()));
  c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
  c.output_dir = get_or<std::string>(j, "output_dir", "run", "config");

  if (j.contains("data")) {
    const auto& d = j["data"];
    detail::check_keys(d, {"source", "target"}, "data");
    c.source = parse_distribution(detail::require<json>(d, "source", "data"), "data.source");
    c.target = parse_distribution(detail::require<json>(d, "target", "data"), "data.target");
    if (c.source->dim() != c.target->dim()) throw ConfigError("data: source and target dimensions differ");
    c.model.dim = c.source->dim();
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::check_keys(m, {"dim", "hidden", "time_frequencies", "max_frequency"}, "model");
    c.model.dim = get_or<int>(m, "dim", c.model.dim, "model");
    c.model.hidden = get_or<std::vector<int>>(m, "hidden", c.model.hidden, "model");
    c.model.time_frequencies = get_or<int>(m, "time_frequencies", c.model.time_frequencies, "model");
    c.model.max_frequency = get_or<double>(m, "max_frequency", c.model.max_frequency, "model");
  }
  c.model.validate();
  if (c.source && c.model.dim != c.source->dim()) throw ConfigError("model.dim does not match the data dimension");

  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_keys(t, {"batch_size", "steps", "lr", "beta1", "beta2", "ema_decay", "ema_warmup", "log_every",
                           "record_wall_time", "stage2"},
                       "train");
    c.train = parse_train(t, "train");
    c.stage2.train = c.train;
    if (t.contains("stage2")) {
      const auto& s = t["stage2"];
      detail::check_keys(s, {"mode", "batch_size", "steps", "lr", "beta1", "beta2", "ema_decay", "ema_warmup",
                             "log_every", "record_wall_time", "cold_start", "pairs_per_segment", "pair_solver"},
                         "train.stage2");
      c.stage2.mode = parse_stage2_mode(get_or<std::string>(s, "mode", "reflow", "train.stage2"));
      c.stage2.train = parse_train(s, "train.stage2", c.train);
      c.stage2.cold_start = get_or<bool>(s, "cold_start", false, "train.stage2");
      c.stage2.pairs_per_segment = get_or<std::uint64_t>(s, "pairs_per_segment", 10000, "train.stage2");
      if (c.stage2.pairs_per_segment < 1) throw ConfigError("train.stage2.pairs_per_segment must be >= 1");
      if (s.contains("pair_solver")) c.stage2.pair_solver = parse_solver(s["pair_solver"], "train.stage2.pair_solver");
    }
  }
  c.train.seed = c.seed;
  c.stage2.train.seed = c.seed + 1;

  if (j.contains("segmentation")) {
    detail::check_keys(j["segmentation"], {"k"}, "segmentation");
    c.k = get_or<int>(j["segmentation"], "k", 1, "segmentation");
  }
  make_segmentation(c.k);
  if (j.contains("solver")) c.solver = parse_solver(j["solver"], "solver", &c.distilled);

  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    detail::check_keys(m, {"set", "n", "nfe", "gte_method", "oracle", "lipschitz_t", "probes", "perturbation",
                           "variance", "bins", "flip_time_axis"},
                       "metrics");
    auto& mc = c.metrics;
    mc.set = get_or<std::vector<std::string>>(m, "set", mc.set, "metrics");
    for (const auto& name : mc.set) {
      bool known = false;
      for (const char* k : kMetricNames) known = known || name == k;
      if (!known) throw ConfigError("metrics.set: unknown metric '" + name + "'");
    }
    mc.n = get_or<std::uint64_t>(m, "n", mc.n, "metrics");
    if (mc.n < 1) throw ConfigError("metrics.n must be >= 1");
    mc.nfe = get_or<std::vector<int>>(m, "nfe", mc.nfe, "metrics");
    mc.gte_method = parse_method(get_or<std::string>(m, "gte_method", "euler", "metrics"));
    if (m.contains("oracle")) {
      detail::check_keys(m["oracle"], {"method", "steps"}, "metrics.oracle");
      mc.oracle.method = parse_method(get_or<std::string>(m["oracle"], "method", "euler", "metrics.oracle"));
      mc.oracle.steps = get_or<int>(m["oracle"], "steps", 480, "metrics.oracle");
      if (mc.oracle.steps < 1 || mc.oracle.method == Method::Rk45) throw ConfigError("metrics.oracle: fixed-step method with steps >= 1 required");
    }
    mc.lipschitz_t = get_or<std::vector<double>>(m, "lipschitz_t", mc.lipschitz_t, "metrics");
    mc.probes = get_or<std::uint64_t>(m, "probes", mc.probes, "metrics");
    mc.perturbation = get_or<double>(m, "perturbation", mc.perturbation, "metrics");
    mc.bins = get_or<int>(m, "bins", mc.bins, "metrics");
    if (mc.bins < 1) throw ConfigError("metrics.bins must be >= 1");
    mc.flip_time_axis = get_or<bool>(m, "flip_time_axis", false, "metrics");
    if (m.contains("variance")) {
      const auto& v = m["variance"];
      detail::check_keys(v, {"t_bins", "x_cells", "extent", "samples", "min_per_bin"}, "metrics.variance");
      mc.variance.t_bins = get_or<int>(v, "t_bins", mc.variance.t_bins, "metrics.variance");
      mc.variance.x_cells = get_or<int>(v, "x_cells", mc.variance.x_cells, "metrics.variance");
      mc.variance.extent = get_or<double>(v, "extent", mc.variance.extent, "metrics.variance");
      mc.variance.samples = get_or<std::uint64_t>(v, "samples", mc.variance.samples, "metrics.variance");
      mc.variance.min_per_bin = get_or<std::uint64_t>(v, "min_per_bin", mc.variance.min_per_bin, "metrics.variance");
      mc.variance.validate();
    }
  }
  if (j.contains("field")) c.field = parse_field(j["field"], "field");
  if (j.contains("ivp")) {
    const auto& v = j["ivp"];
    detail::check_keys(v, {"field", "x0", "a", "b"}, "ivp");
    IvpConfig ivp;
    ivp.field = parse_field(detail::require<json>(v, "field", "ivp"), "ivp.field");
    ivp.x0 = detail::batch_of(detail::require<json>(v, "x0", "ivp"), "ivp.x0");
    ivp.a = get_or<double>(v, "a", 0.0, "ivp");
    ivp.b = get_or<double>(v, "b", 1.0, "ivp");
    c.ivp = std::move(ivp);
  }
  if (j.contains("recipe")) {
    const auto& r = j["recipe"];
    detail::check_keys(r, {"kind", "ks"}, "recipe");
    RecipeConfig rc;
    rc.kind = detail::require<std::string>(r, "kind", "recipe");
    rc.ks = get_or<std::vector<int>>(r, "ks", rc.ks, "recipe");
    for (int k : rc.ks) make_segmentation(k);
    static const std::set<std::string> kinds{"gte_trend", "straightness_trend", "fewstep_trend", "variance_trend",
                                             "lipschitz"};
    if (!kinds.count(rc.kind)) throw ConfigError("recipe.kind: unknown recipe '" + rc.kind + "'");
    c.recipe = std::move(rc);
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto text = io::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace flowstraight::cli
