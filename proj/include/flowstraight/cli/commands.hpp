// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations. Each writes a run directory: a copy of the
// config, its outputs, and finally manifest.json.

#pragma once

#include "flowstraight/cli/config.hpp"
#include "flowstraight/cli/pipeline.hpp"
#include "flowstraight/io/checkpoint.hpp"
#include "flowstraight/io/csv.hpp"
#include "flowstraight/io/manifest.hpp"
#include "flowstraight/io/pairs.hpp"
#include "flowstraight/metrics.hpp"
#include "flowstraight/parallel.hpp"
#include "flowstraight/seqrf.hpp"
#include "flowstraight/solvers.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flowstraight::cli {

namespace fs = std::filesystem;

/// Command-line overrides; unset fields leave the config untouched.
struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<int> k;
  std::optional<std::vector<int>> nfe;
  std::optional<std::string> solver;
  std::optional<double> tol;
  std::optional<std::string> pairs;
};

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4 };

inline RunConfig resolve(const Options& opt) {
  if (opt.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_config(opt.config);
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.train.seed = cfg.seed;
  }
  if (opt.out) cfg.output_dir = *opt.out;
  if (opt.k) {
    make_segmentation(*opt.k);
    cfg.k = *opt.k;
  }
  if (opt.solver) {
    if (*opt.solver == "distilled") {
      cfg.distilled = true;
    } else {
      cfg.distilled = false;
      cfg.solver.method = parse_method(*opt.solver);
    }
  }
  if (opt.tol) {
    if (!(*opt.tol > 0.0)) throw ConfigError("--tol must be > 0");
    cfg.solver.atol = cfg.solver.rtol = *opt.tol;
  }
  if (opt.nfe) {
    if (opt.nfe->empty()) throw ConfigError("--nfe needs at least one value");
    for (int v : *opt.nfe)
      if (v < 1) throw ConfigError("--nfe values must be >= 1");
    cfg.metrics.nfe = *opt.nfe;
  }
  cfg.solver.validate();
  return cfg;
}

/// Accumulates outputs of one run directory; finalize() writes the manifest last.
class RunWriter {
 public:
  RunWriter(const RunConfig& cfg, std::string command) : dir_(cfg.output_dir) {
    fs::create_directories(dir_);
    if (fs::exists(dir_ / io::kManifestName)) fs::remove(dir_ / io::kManifestName);
    manifest_.command = std::move(command);
    manifest_.config_hash = cfg.hash;
    manifest_.seed = cfg.seed;
    manifest_.run_id = manifest_.command + "-" + cfg.hash.substr(0, 8) + "-" + std::to_string(cfg.seed);
    manifest_.started = io::utc_timestamp();
    manifest_.threads = thread_count();
    write("config.json", cfg.raw.dump(2) + "\n");
  }

  const fs::path& dir() const { return dir_; }
  void input(const fs::path& p) { manifest_.add_input(p); }

  void write(const std::string& rel, std::string_view bytes) {
    io::write_file_atomic(dir_ / rel, bytes);
    manifest_.add_output(dir_, rel);
  }
  void csv(const std::string& rel, const io::CsvTable& t) { write(rel, t.str()); }
  void checkpoint(const std::string& rel, const io::Checkpoint& ck) { write(rel, io::encode_checkpoint(ck)); }

  fs::path finalize() {
    manifest_.finished = io::utc_timestamp();
    manifest_.write(dir_);
    return dir_;
  }

 private:
  fs::path dir_;
  io::RunManifest manifest_;
};

inline io::Checkpoint require_checkpoint(const Options& opt, RunWriter& w) {
  if (!opt.checkpoint) throw ConfigError("--checkpoint is required for this command");
  auto ck = io::load_checkpoint(*opt.checkpoint);
  w.input(*opt.checkpoint);
  return ck;
}

/// The field to evaluate: --checkpoint if given, else the config's field section.
inline FieldKind resolve_field(const Options& opt, const RunConfig& cfg, RunWriter& w) {
  if (opt.checkpoint) return FieldKind(LearnedField::from(require_checkpoint(opt, w)));
  if (cfg.field) return *cfg.field;
  throw ConfigError("need --checkpoint or a 'field' section in the config");
}

/// Noise source for a field of dimension `dim` (0: any dimension).
inline ToyDistribution noise_for(const RunConfig& cfg, int dim) {
  if (cfg.source) {
    if (dim != 0 && cfg.source->dim() != dim) throw ConfigError("data.source dimension does not match the field");
    return *cfg.source;
  }
  return ToyDistribution(GaussianIso{Vector::Zero(dim == 0 ? cfg.model.dim : dim), 1.0});
}

/// State dimension a field accepts; 0 when it acts on any dimension.
inline int field_dim(const FieldKind& f) {
  return std::visit(
      [](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, LearnedField>) return v.net->dim();
        else if constexpr (std::is_same_v<T, GaussianOracle>) return v.dim();
        else if constexpr (std::is_same_v<T, ConditionalStraight>) return static_cast<int>(v.x0.size());
        else {
          if (v.kind == AnalyticField::Kind::Constant) return static_cast<int>(v.constant.size());
          if (v.kind == AnalyticField::Kind::Linear) return static_cast<int>(v.matrix.rows());
          if (v.kind == AnalyticField::Kind::Rotation) return 2;
          return 0;
        }
      },
      f.variant());
}

/// Per-segment sampler: with --nfe the first value is split evenly over the K segments.
inline SamplerSpec sampler_for(const RunConfig& cfg, const Options& opt) {
  if (cfg.distilled) return SamplerSpec::distilled();
  SolverSpec s = cfg.solver;
  if (opt.nfe && !s.adaptive()) {
    const int per = stages(s.method) * cfg.k;
    if (opt.nfe->front() % per != 0)
      throw ConfigError("--nfe " + std::to_string(opt.nfe->front()) + " is not a multiple of stages x K = " +
                        std::to_string(per));
    s.steps = opt.nfe->front() / per;
  }
  return SamplerSpec::solver(s);
}

inline io::CsvTable samples_csv(const Batch& x, const std::string& field_id, const std::string& solver, std::uint64_t seed,
                                std::uint64_t nfe) {
  io::CsvTable t;
  io::stamp_report(t, "samples", field_id, solver, seed, static_cast<std::uint64_t>(x.rows()));
  t.meta("nfe", std::to_string(nfe));
  for (Eigen::Index d = 0; d < x.cols(); ++d) t.header.push_back("x" + std::to_string(d));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> row(x.row(i).data(), x.row(i).data() + x.cols());
    t.add_row(row);
  }
  return t;
}

// ---------------------------------------------------------------------------

inline fs::path cmd_train(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  RunWriter w(cfg, "train");
  std::vector<LossRecord> hist;
  const auto ck = run_stage1(cfg, &hist);
  w.checkpoint("stage1.fsck", ck);
  w.csv("loss.csv", loss_csv(hist));
  return w.finalize();
}

inline fs::path cmd_reflow(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  RunWriter w(cfg, "reflow");
  const auto base = require_checkpoint(opt, w);
  const auto pairs = make_pairs(cfg, base, cfg.k);
  w.write("pairs.fspd", io::encode_pairs(*pairs));
  std::vector<LossRecord> hist;
  const auto ck = run_stage2(cfg, base, pairs, Stage2Mode::Reflow, &hist);
  w.checkpoint("seqrf.fsck", ck);
  w.csv("loss.csv", loss_csv(hist, cfg.k));
  return w.finalize();
}

inline fs::path cmd_distill(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  RunWriter w(cfg, "distill");
  const auto base = require_checkpoint(opt, w);
  std::shared_ptr<const PairDataset> pairs;
  if (opt.pairs) {
    pairs = std::make_shared<const PairDataset>(io::load_pairs(*opt.pairs));
    w.input(*opt.pairs);
  } else {
    pairs = make_pairs(cfg, base, cfg.k, SeedStream::Distill);
    w.write("pairs.fspd", io::encode_pairs(*pairs));
  }
  std::vector<LossRecord> hist;
  const auto ck = run_stage2(cfg, base, pairs, Stage2Mode::Distill, &hist);
  w.checkpoint("distilled.fsck", ck);
  w.csv("loss.csv", loss_csv(hist, pairs->segmentation.segments()));
  return w.finalize();
}

inline fs::path cmd_sample(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  RunWriter w(cfg, "sample");
  const FieldKind field = resolve_field(opt, cfg, w);
  const SamplerSpec how = sampler_for(cfg, opt);
  Rng rng(derived_seed(cfg.seed, SeedStream::Metrics));
  const auto res = sample(field, make_segmentation(cfg.k), how, noise_for(cfg, field_dim(field)),
                          static_cast<Eigen::Index>(cfg.metrics.n), rng);
  auto t = samples_csv(res.x, field.id(), how.describe(), cfg.seed, res.nfe);
  t.meta("segments", std::to_string(cfg.k));
  w.csv("samples.csv", t);
  return w.finalize();
}

inline bool wants(const RunConfig& cfg, const std::string& metric) {
  return std::find(cfg.metrics.set.begin(), cfg.metrics.set.end(), metric) != cfg.metrics.set.end();
}

inline fs::path cmd_eval(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  RunWriter w(cfg, "eval");
  const FieldKind field = resolve_field(opt, cfg, w);
  const int dim = field_dim(field);
  const ToyDistribution noise = noise_for(cfg, dim);
  const auto& mc = cfg.metrics;
  const auto n = static_cast<Eigen::Index>(mc.n);
  const std::string id = field.id();
  std::uint64_t stream = 0;
  auto rng_for = [&] { return Rng(derived_seed(cfg.seed, SeedStream::Metrics, ++stream)); };
  const auto seg = make_segmentation(cfg.k);

  if (wants(cfg, "straightness")) {
    Rng rng = rng_for();
    auto rep = straightness(field, noise, n, cfg.solver, rng, mc.bins);
    if (mc.flip_time_axis) rep = rep.flip();
    w.csv("straightness.csv", rep.csv("straightness", id, cfg.seed));
  }
  if (wants(cfg, "sequential_straightness")) {
    Rng rng = rng_for();
    SolverSpec per = cfg.solver;
    if (!per.adaptive()) per.steps = std::max(1, per.steps / cfg.k);
    auto rep = sequential_straightness(field, seg, cfg.coupling(), n, per, rng, mc.bins);
    if (mc.flip_time_axis) rep = rep.flip();
    w.csv("sequential_straightness.csv", rep.csv("sequential_straightness", id, cfg.seed));
  }
  if (wants(cfg, "gte")) {
    Rng rng = rng_for();
    Oracle oracle = mc.oracle;
    const auto curve = gte_curve(field, noise, mc.nfe, mc.gte_method, oracle, n, rng);
    w.csv("gte_curve.csv", curve.csv(id, cfg.seed));
  }
  if (wants(cfg, "lipschitz")) {
    Rng rng = rng_for();
    const auto curve = lipschitz_estimate(field, cfg.coupling(), mc.lipschitz_t, static_cast<Eigen::Index>(mc.probes),
                                          mc.perturbation, rng);
    w.csv("lipschitz.csv", curve.csv(id, cfg.seed));
  }
  if (wants(cfg, "distance")) {
    Rng rng = rng_for();
    const SamplerSpec how = sampler_for(cfg, opt);
    const auto res = sample(field, seg, how, noise, n, rng);
    Rng ref_rng(derived_seed(cfg.seed, SeedStream::Reference));
    const Batch reference = cfg.coupling().target.sample(n, ref_rng);
    w.csv("distance.csv", sample_distance(res.x, reference).csv(id, how.describe(), cfg.seed));
  }
  if (wants(cfg, "variance")) {
    Rng rng = rng_for();
    const auto ind = gradient_variance(Coupling(cfg.coupling()), mc.variance, rng);
    w.csv("variance_independent.csv", ind.csv(id, cfg.seed, mc.variance.samples));
    if (opt.pairs) {
      auto pairs = std::make_shared<const PairDataset>(io::load_pairs(*opt.pairs));
      w.input(*opt.pairs);
      Rng rng2 = rng_for();
      const auto joint = gradient_variance(Coupling(JointCoupling{pairs}), mc.variance, rng2);
      w.csv("variance_joint.csv", joint.csv(id, cfg.seed, mc.variance.samples));
    }
  }
  return w.finalize();
}

/// Solve the config's IVP; writes the trajectory with per-step LTE, a GTE
/// summary, and, with --nfe, a convergence table over step counts.
inline fs::path cmd_solve(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  if (!cfg.ivp) throw ConfigError("solve needs an 'ivp' section");
  RunWriter w(cfg, "solve");
  const auto& ivp = *cfg.ivp;
  if (const int d = field_dim(ivp.field); d != 0 && d != ivp.x0.cols()) throw ConfigError("ivp.x0 dimension does not match the field");
  SolverSpec spec = cfg.solver.on(ivp.a, ivp.b);
  const Oracle oracle = oracle_for(ivp.field);
  const auto rep = measure_gte(ivp.field, ivp.x0, spec, oracle);
  auto traj = solver_run_csv(rep.run, &rep);
  io::stamp_report(traj, "trajectory", ivp.field.id(), spec.describe(), cfg.seed,
                   static_cast<std::uint64_t>(ivp.x0.rows()));
  w.csv("trajectory.csv", traj);

  io::CsvTable summary;
  io::stamp_report(summary, "gte", ivp.field.id(), spec.describe(), cfg.seed, static_cast<std::uint64_t>(ivp.x0.rows()));
  summary.meta("oracle", rep.oracle);
  summary.header = {"nfe", "accepted", "rejected", "gte"};
  summary.add_row({static_cast<double>(rep.run.nfe), static_cast<double>(rep.run.accepted),
                   static_cast<double>(rep.run.rejected), rep.gte});
  w.csv("summary.csv", summary);

  if (opt.nfe) {
    if (spec.adaptive()) throw ConfigError("--nfe needs a fixed-step solver");
    io::CsvTable conv;
    io::stamp_report(conv, "convergence", ivp.field.id(), to_string(spec.method), cfg.seed,
                     static_cast<std::uint64_t>(ivp.x0.rows()));
    conv.header = {"nfe", "steps", "h", "gte"};
    for (int nfe : *opt.nfe) {
      if (nfe % stages(spec.method) != 0)
        throw ConfigError("--nfe " + std::to_string(nfe) + " is not a multiple of the stage count");
      SolverSpec s = spec;
      s.steps = nfe / stages(spec.method);
      const auto r = measure_gte(ivp.field, ivp.x0, s, oracle);
      conv.add_row({static_cast<double>(r.run.nfe), static_cast<double>(s.steps), (ivp.b - ivp.a) / s.steps, r.gte});
    }
    w.csv("convergence.csv", conv);
  }
  return w.finalize();
}

// ---------------------------------------------------------------------------
// Recipes: end-to-end trend reproductions at desk scale.

inline fs::path cmd_recipe(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  if (!cfg.recipe) throw ConfigError("recipe needs a 'recipe' section");
  const auto& rc = *cfg.recipe;
  RunWriter w(cfg, "recipe:" + rc.kind);
  std::vector<LossRecord> hist;
  const auto stage1 = run_stage1(cfg, &hist);
  w.checkpoint("stage1.fsck", stage1);
  w.csv("stage1_loss.csv", loss_csv(hist));
  const auto& mc = cfg.metrics;
  const auto n = static_cast<Eigen::Index>(mc.n);
  const auto coupling = cfg.coupling();
  const auto f1 = LearnedField::from(stage1);

  std::vector<std::pair<int, io::Checkpoint>> seqrf;
  auto seqrf_model = [&](int k) -> const io::Checkpoint& {
    for (const auto& [kk, ck] : seqrf)
      if (kk == k) return ck;
    const auto pairs = make_pairs(cfg, stage1, k);
    seqrf.emplace_back(k, run_stage2(cfg, stage1, pairs, Stage2Mode::Reflow));
    w.checkpoint("seqrf_k" + std::to_string(k) + ".fsck", seqrf.back().second);
    return seqrf.back().second;
  };

  io::CsvTable out;
  io::stamp_report(out, rc.kind, f1.id, cfg.solver.describe(), cfg.seed, mc.n);
  if (rc.kind == "gte_trend") {
    out.header = {"nfe", "baseline"};
    for (int k : rc.ks) out.header.push_back("seqrf_k" + std::to_string(k));
    std::vector<GteCurve> curves;
    auto curve_of = [&](const LearnedField& f) {
      Rng rng(derived_seed(cfg.seed, SeedStream::Metrics));
      return gte_curve(f, coupling.source, mc.nfe, mc.gte_method, Oracle(mc.oracle), n, rng);
    };
    curves.push_back(curve_of(f1));
    for (int k : rc.ks) curves.push_back(curve_of(LearnedField::from(seqrf_model(k))));
    out.meta("oracle", curves.front().oracle);
    for (std::size_t i = 0; i < mc.nfe.size(); ++i) {
      std::vector<double> row{static_cast<double>(curves.front().nfe[i])};
      for (const auto& c : curves) row.push_back(c.gte[i]);
      out.add_row(row);
    }
  } else if (rc.kind == "straightness_trend") {
    out.header = {"k", "stage1", "seqrf"};
    for (int k : rc.ks) {
      SolverSpec per = cfg.solver;
      if (!per.adaptive()) per.steps = std::max(1, per.steps / k);
      auto s_of = [&](const LearnedField& f) {
        Rng rng(derived_seed(cfg.seed, SeedStream::Metrics, static_cast<std::uint64_t>(k)));
        return sequential_straightness(f, make_segmentation(k), coupling, n, per, rng, mc.bins).value;
      };
      out.add_row({static_cast<double>(k), s_of(f1), s_of(LearnedField::from(seqrf_model(k)))});
    }
  } else if (rc.kind == "fewstep_trend") {
    out.header = {"k", "stage1_euler_w2", "distilled_w2"};
    Rng ref_rng(derived_seed(cfg.seed, SeedStream::Reference));
    const Batch reference = coupling.target.sample(n, ref_rng);
    for (int k : rc.ks) {
      const auto& model = seqrf_model(k);
      const auto pairs = make_pairs(cfg, model, k, SeedStream::Distill);
      const auto distilled = run_stage2(cfg, model, pairs, Stage2Mode::Distill);
      w.checkpoint("distilled_k" + std::to_string(k) + ".fsck", distilled);
      Rng r1(derived_seed(cfg.seed, SeedStream::Metrics, static_cast<std::uint64_t>(k)));
      Rng r2 = r1;
      const auto base = sample(f1, make_segmentation(1), SamplerSpec::solver(SolverSpec::fixed(Method::Euler, k)),
                               coupling.source, n, r1);
      const auto dist = sample(LearnedField::from(distilled), make_segmentation(k), SamplerSpec::distilled(),
                               coupling.source, n, r2);
      out.add_row({static_cast<double>(k), exact_w2(base.x, reference), exact_w2(dist.x, reference)});
    }
  } else if (rc.kind == "variance_trend") {
    out.header = {"k", "bins", "independent", "joint"};
    for (int k : rc.ks) {
      const auto pairs = make_pairs(cfg, stage1, k);
      Rng r1(derived_seed(cfg.seed, SeedStream::Metrics, static_cast<std::uint64_t>(k)));
      Rng r2(derived_seed(cfg.seed, SeedStream::Metrics, 100 + static_cast<std::uint64_t>(k)));
      const auto ind = gradient_variance(Coupling(coupling), mc.variance, r1);
      const auto joint = gradient_variance(Coupling(JointCoupling{pairs}), mc.variance, r2);
      const auto m = matched_aggregate(ind, joint);
      out.add_row({static_cast<double>(k), static_cast<double>(m.bins), m.target_variance_a, m.target_variance_b});
    }
  } else if (rc.kind == "lipschitz") {
    out.header = {"t", "stage1_lipschitz", "stage1_norm_sq"};
    std::vector<LipschitzCurve> curves;
    auto curve_of = [&](const LearnedField& f) {
      Rng rng(derived_seed(cfg.seed, SeedStream::Metrics));
      return lipschitz_estimate(f, coupling, mc.lipschitz_t, static_cast<Eigen::Index>(mc.probes), mc.perturbation, rng);
    };
    curves.push_back(curve_of(f1));
    for (int k : rc.ks) {
      out.header.push_back("seqrf_k" + std::to_string(k) + "_lipschitz");
      out.header.push_back("seqrf_k" + std::to_string(k) + "_norm_sq");
      curves.push_back(curve_of(LearnedField::from(seqrf_model(k))));
    }
    for (std::size_t i = 0; i < mc.lipschitz_t.size(); ++i) {
      std::vector<double> row{mc.lipschitz_t[i]};
      for (const auto& c : curves) {
        row.push_back(c.lipschitz[i]);
        row.push_back(c.field_norm_sq[i]);
      }
      out.add_row(row);
    }
  }
  w.csv(rc.kind + ".csv", out);
  return w.finalize();
}

/// Map an exception to the documented exit code.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e)) return kData;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kInternal;
}

}  // namespace flowstraight::cli
