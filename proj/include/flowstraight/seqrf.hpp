// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Sequential reflow: pair generation by partial solves over each time
// segment, the segment-slope regression (reflow and distillation), and
// segment-by-segment sampling.

#pragma once

#include "flowstraight/core.hpp"
#include "flowstraight/field.hpp"
#include "flowstraight/io/checkpoint.hpp"
#include "flowstraight/parallel.hpp"
#include "flowstraight/segmentation.hpp"
#include "flowstraight/solvers.hpp"
#include "flowstraight/training.hpp"

#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace flowstraight {

/// Build pairs for every segment k: x_src = (1 - t_k) x0 + t_k x1 from fresh
/// independent (x0, x1), and x_dst = the field's solve from t_k to t_{k+1}.
/// Rows whose solve turns non-finite are dropped; more than 1% dropped fails.
/// total_nfe counts evaluations per sample: rows times evaluations per solve.
template <VectorField F>
PairDataset generate_pairs(const F& field, std::uint64_t generator_hash, const TimeSegmentation& seg,
                           std::uint64_t per_segment_n, const SolverSpec& solver,
                           const IndependentCoupling& coupling, Rng& rng, Eigen::Index chunk = 1024) {
  if (per_segment_n < 1) throw ConfigError("generate_pairs: per_segment_n must be >= 1");
  if (chunk < 1) throw ConfigError("generate_pairs: chunk must be >= 1");
  const int dim = coupling.source.dim();
  if (coupling.target.dim() != dim) throw ConfigError("generate_pairs: source and target dimensions differ");
  PairDataset out;
  out.segmentation = seg;
  out.generator_hash = generator_hash;
  out.solver_spec = solver.describe();
  const auto n = static_cast<Eigen::Index>(per_segment_n);
  const auto total = n * seg.segments();
  out.src.resize(total, dim);
  out.dst.resize(total, dim);
  out.segment.reserve(static_cast<std::size_t>(total));
  Eigen::Index kept = 0;
  for (int k = 0; k < seg.segments(); ++k) {
    const auto [ta, tb] = seg.segment(k);
    const Batch x0 = coupling.source.sample(n, rng);
    const Batch x1 = coupling.target.sample(n, rng);
    const Batch src = (1.0 - ta) * x0 + ta * x1;
    SolverSpec spec = solver.on(ta, tb);
    spec.keep_trajectory = false;
    spec.check_finite = false;
    const auto chunks = static_cast<std::size_t>((n + chunk - 1) / chunk);
    std::vector<Batch> dst(chunks);
    std::vector<std::uint64_t> nfe(chunks, 0);
    parallel_tasks(chunks, [&](std::size_t c) {
      const Eigen::Index lo = static_cast<Eigen::Index>(c) * chunk, m = std::min(chunk, n - lo);
      const auto run = solve(field, Batch(src.middleRows(lo, m)), spec);
      dst[c] = run.final_state();
      nfe[c] = run.nfe * static_cast<std::uint64_t>(m);
    });
    for (std::size_t c = 0; c < chunks; ++c) {
      out.total_nfe += nfe[c];
      const Eigen::Index lo = static_cast<Eigen::Index>(c) * chunk;
      for (Eigen::Index i = 0; i < dst[c].rows(); ++i) {
        if (!dst[c].row(i).allFinite() || !src.row(lo + i).allFinite()) {
          ++out.dropped;
          continue;
        }
        out.src.row(kept) = src.row(lo + i);
        out.dst.row(kept) = dst[c].row(i);
        out.segment.push_back(static_cast<std::uint32_t>(k));
        ++kept;
      }
    }
  }
  if (static_cast<double>(out.dropped) > 0.01 * static_cast<double>(total))
    throw DataError("generate_pairs: " + std::to_string(out.dropped) + " of " + std::to_string(total) +
                    " solves diverged (more than 1%)");
  out.src.conservativeResize(kept, dim);
  out.dst.conservativeResize(kept, dim);
  return out;
}

inline PairDataset generate_pairs(const io::Checkpoint& generator, const TimeSegmentation& seg,
                                  std::uint64_t per_segment_n, const SolverSpec& solver,
                                  const IndependentCoupling& coupling, Rng& rng) {
  const auto field = LearnedField::from(generator);
  return generate_pairs(field, io::checkpoint_hash(generator), seg, per_segment_n, solver, coupling, rng);
}

/// Draws pair indices: a segment uniformly, then the next record of that
/// segment's shuffled order. Each segment reshuffles when exhausted.
class PairSampler {
 public:
  explicit PairSampler(std::shared_ptr<const PairDataset> pairs) : pairs_(std::move(pairs)) {
    if (!pairs_ || pairs_->empty()) throw DataError("pair sampler: empty pair dataset");
    order_.resize(static_cast<std::size_t>(pairs_->segmentation.segments()));
    for (std::size_t i = 0; i < pairs_->segment.size(); ++i)
      order_.at(pairs_->segment[i]).push_back(static_cast<Eigen::Index>(i));
    for (std::size_t k = 0; k < order_.size(); ++k)
      if (!order_[k].empty()) nonempty_.push_back(k);
    pos_.assign(order_.size(), 0);
  }

  const PairDataset& pairs() const { return *pairs_; }

  Eigen::Index next(Rng& rng) {
    const std::size_t k = nonempty_[rng.index(nonempty_.size())];
    auto& ord = order_[k];
    if (pos_[k] == 0) shuffle(ord, rng);
    const Eigen::Index j = ord[pos_[k]];
    pos_[k] = (pos_[k] + 1) % ord.size();
    return j;
  }

 private:
  static void shuffle(std::vector<Eigen::Index>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
  }

  std::shared_ptr<const PairDataset> pairs_;
  std::vector<std::vector<Eigen::Index>> order_;
  std::vector<std::size_t> nonempty_;
  std::vector<std::size_t> pos_;
};

enum class Stage2Mode { Reflow, Distill };

inline std::string to_string(Stage2Mode m) { return m == Stage2Mode::Reflow ? "reflow" : "distill"; }

inline Stage2Mode parse_stage2_mode(std::string_view s) {
  if (s == "reflow") return Stage2Mode::Reflow;
  if (s == "distill") return Stage2Mode::Distill;
  throw ConfigError("unknown stage-2 mode '" + std::string(s) + "' (reflow|distill)");
}

/// Regression rows for pairs at interpolation fractions r:
/// x_s = (1 - r) x_src + r x_dst at s = t_src + r (t_dst - t_src), target the segment slope.
inline RegressionBatch segment_rows(const std::vector<ReflowPair>& pairs, const Vector& r) {
  require_shape(!pairs.empty() && r.size() == static_cast<Eigen::Index>(pairs.size()),
                "segment rows: one fraction per pair required");
  const auto d = pairs.front().x_src.size();
  RegressionBatch b;
  const auto n = static_cast<Eigen::Index>(pairs.size());
  b.x.resize(n, d);
  b.t.resize(n);
  b.target.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    require_shape(p.x_src.size() == d && p.x_dst.size() == d, "segment rows: pair dimensions differ");
    if (!(r(i) >= 0.0 && r(i) <= 1.0)) throw DomainError("segment rows: r outside [0, 1]");
    b.target.row(i) = p.slope();
    b.x.row(i) = (1.0 - r(i)) * p.x_src + r(i) * p.x_dst;
    b.t(i) = p.t_src + r(i) * (p.t_dst - p.t_src);
    b.segment.push_back(static_cast<std::uint32_t>(p.segment));
  }
  return b;
}

inline LossGrad seqrf_loss(const nn::Mlp& net, const ParamVector& params, const std::vector<ReflowPair>& pairs,
                           const Vector& r) {
  return regression_loss(net, params, segment_rows(pairs, r));
}

inline LossGrad seqrf_loss(const nn::Mlp& net, const ParamVector& params, const ReflowPair& pair, double r) {
  return seqrf_loss(net, params, std::vector<ReflowPair>{pair}, Vector::Constant(1, r));
}

/// The segment-slope loss with time pinned to the segment start.
inline LossGrad distill_loss(const nn::Mlp& net, const ParamVector& params, const std::vector<ReflowPair>& pairs) {
  return seqrf_loss(net, params, pairs, Vector::Zero(static_cast<Eigen::Index>(pairs.size())));
}

inline LossGrad distill_loss(const nn::Mlp& net, const ParamVector& params, const ReflowPair& pair) {
  return seqrf_loss(net, params, pair, 0.0);
}

/// One stage-2 batch: pairs per PairSampler, r ~ U[0, 1] (reflow) or 0 (distill).
inline RegressionBatch stage2_batch(PairSampler& sampler, Stage2Mode mode, int n, Rng& rng) {
  std::vector<ReflowPair> rows;
  rows.reserve(static_cast<std::size_t>(n));
  Vector r(n);
  for (int i = 0; i < n; ++i) {
    rows.push_back(sampler.pairs().record(sampler.next(rng)));
    r(i) = mode == Stage2Mode::Reflow ? rng.uniform() : 0.0;
  }
  return segment_rows(rows, r);
}

/// Fine-tune from the base checkpoint's evaluation parameters (or from a
/// fresh initialisation with `cold_start`) on the pair dataset.
inline TrainResult train_stage2(const io::Checkpoint& base, std::shared_ptr<const PairDataset> pairs, Stage2Mode mode,
                                const TrainConfig& cfg, bool cold_start = false) {
  cfg.validate();
  if (!pairs || pairs->empty()) throw DataError("train_stage2: empty pair dataset");
  pairs->validate();
  if (pairs->dim() != base.spec.dim) throw ConfigError("train_stage2: pair dimension does not match the model");
  Rng rng(cfg.seed);
  io::Checkpoint start;
  if (cold_start) {
    start = initial_checkpoint(base.spec, cfg, rng);
  } else {
    start.spec = base.spec;
    start.params = base.eval_params();
    start.ema = nn::EmaState::from(start.params, cfg.ema_decay, cfg.ema_warmup);
    start.adam = nn::AdamState::fresh(start.params.size(), cfg.lr, cfg.beta1, cfg.beta2);
  }
  PairSampler sampler(pairs);
  const int k = pairs->segmentation.segments();
  return train_loop(
      std::move(start), cfg, [&](Rng& r) { return stage2_batch(sampler, mode, cfg.batch_size, r); }, rng, k);
}

/// How to cross each segment when sampling: a solver spec per segment, or a
/// single Euler step (distilled models).
struct SamplerSpec {
  std::optional<SolverSpec> per_segment;

  static SamplerSpec distilled() { return {}; }
  static SamplerSpec solver(SolverSpec s) { return {std::move(s)}; }
  bool is_distilled() const { return !per_segment.has_value(); }
  SolverSpec segment_spec() const {
    if (per_segment) return *per_segment;
    return SolverSpec::fixed(Method::Euler, 1);
  }
  std::string describe() const { return per_segment ? per_segment->describe() : "distilled(euler-1)"; }
};

struct SampleResult {
  Batch x;
  std::uint64_t nfe = 0;  ///< evaluations of the field on the batch
};

template <VectorField F>
SampleResult sample_from(const F& field, const TimeSegmentation& seg, const SamplerSpec& how, const Batch& x_init) {
  SolverSpec s = how.segment_spec();
  s.keep_trajectory = false;
  const auto run = solve_segmented(field, x_init, seg, s);
  return {run.final_state(), run.nfe};
}

/// Draw n noise points from `source` and carry them to the data end.
template <VectorField F>
SampleResult sample(const F& field, const TimeSegmentation& seg, const SamplerSpec& how,
                    const ToyDistribution& source, Eigen::Index n, Rng& rng) {
  if (n < 1) throw ConfigError("sample: n must be >= 1");
  return sample_from(field, seg, how, source.sample(n, rng));
}

}  // namespace flowstraight
