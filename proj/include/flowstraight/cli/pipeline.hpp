// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Stage drivers shared by the subcommands and the recipes. Every stage draws
// from its own seed derived from the run seed, so stages can be re-run in
// isolation with identical results.

#pragma once

#include "flowstraight/cli/config.hpp"
#include "flowstraight/io/checkpoint.hpp"
#include "flowstraight/metrics.hpp"
#include "flowstraight/seqrf.hpp"
#include "flowstraight/training.hpp"

#include <memory>

namespace flowstraight::cli {

enum class SeedStream : std::uint64_t { Pairs = 1000, Stage2 = 2000, Distill = 3000, Metrics = 4000, Reference = 5000 };

inline std::uint64_t derived_seed(std::uint64_t seed, SeedStream stream, std::uint64_t k = 0) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream) + k));
}

inline io::Checkpoint run_stage1(const RunConfig& cfg, std::vector<LossRecord>* history = nullptr) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  auto res = train_stage1(tc, cfg.coupling(), cfg.model);
  if (history) *history = std::move(res.history);
  return std::move(res.checkpoint);
}

/// Per-segment pair solver: the configured step count covers [0, 1], so each
/// of K segments gets ceil(steps / K).
inline SolverSpec pair_solver_for(const RunConfig& cfg, int k) {
  SolverSpec s = cfg.stage2.pair_solver;
  if (!s.adaptive()) s.steps = std::max(1, (s.steps + k - 1) / k);
  return s;
}

inline std::shared_ptr<const PairDataset> make_pairs(const RunConfig& cfg, const io::Checkpoint& generator, int k,
                                                     SeedStream stream = SeedStream::Pairs) {
  Rng rng(derived_seed(cfg.seed, stream, static_cast<std::uint64_t>(k)));
  return std::make_shared<const PairDataset>(generate_pairs(generator, make_segmentation(k), cfg.stage2.pairs_per_segment,
                                                            pair_solver_for(cfg, k), cfg.coupling(), rng));
}

inline io::Checkpoint run_stage2(const RunConfig& cfg, const io::Checkpoint& base,
                                 std::shared_ptr<const PairDataset> pairs, Stage2Mode mode,
                                 std::vector<LossRecord>* history = nullptr) {
  TrainConfig tc = cfg.stage2.train;
  const auto k = static_cast<std::uint64_t>(pairs->segmentation.segments());
  tc.seed = derived_seed(cfg.seed, mode == Stage2Mode::Reflow ? SeedStream::Stage2 : SeedStream::Distill, k);
  auto res = train_stage2(base, std::move(pairs), mode, tc, cfg.stage2.cold_start);
  if (history) *history = std::move(res.history);
  return std::move(res.checkpoint);
}

}  // namespace flowstraight::cli
