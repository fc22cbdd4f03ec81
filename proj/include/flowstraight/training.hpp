// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Velocity regression: the rectified-flow loss, a generic training loop shared
// by both stages, and the FM/CFM gradient-agreement check.

#pragma once

#include "flowstraight/core.hpp"
#include "flowstraight/field.hpp"
#include "flowstraight/io/checkpoint.hpp"
#include "flowstraight/io/csv.hpp"
#include "flowstraight/nn/adam.hpp"
#include "flowstraight/nn/ema.hpp"
#include "flowstraight/nn/mlp.hpp"
#include "flowstraight/segmentation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace flowstraight {

struct TrainConfig {
  int batch_size = 256;
  std::uint64_t steps = 5000;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double ema_decay = 0.999;
  bool ema_warmup = true;
  std::uint64_t seed = 0;
  std::uint64_t log_every = 1;
  bool record_wall_time = false;  ///< off keeps loss CSVs byte-reproducible
  int max_consecutive_skips = 10;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (log_every < 1) throw ConfigError("train: log_every must be >= 1");
    if (max_consecutive_skips < 1) throw ConfigError("train: max_consecutive_skips must be >= 1");
    nn::AdamState::fresh(0, lr, beta1, beta2);
    nn::EmaState::from(ParamVector(), ema_decay, ema_warmup);
  }
};

struct LossRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
  std::vector<double> segment_loss;  ///< stage 2: mean loss per segment in this batch (NaN if absent)
};

inline io::CsvTable loss_csv(const std::vector<LossRecord>& history, int segments = 0) {
  io::CsvTable t;
  t.header = {"step", "loss", "grad_norm", "seconds"};
  for (int k = 0; k < segments; ++k) t.header.push_back("loss_seg" + std::to_string(k));
  for (const auto& r : history) {
    std::vector<double> row{static_cast<double>(r.step), r.loss, r.grad_norm, r.seconds};
    for (int k = 0; k < segments; ++k)
      row.push_back(static_cast<std::size_t>(k) < r.segment_loss.size() ? r.segment_loss[static_cast<std::size_t>(k)]
                                                                         : std::nan(""));
    t.add_row(row);
  }
  return t;
}

/// Inputs and targets of one regression batch: fit v(x_i, t_i) to target_i.
struct RegressionBatch {
  Batch x;
  Vector t;
  Batch target;
  std::vector<std::uint32_t> segment;  ///< optional, for per-segment loss tracking
};

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
  Vector per_sample;  ///< squared residual norm of each row
};

/// Mean over rows of ||v(x_i, t_i) - target_i||^2 (summed over dimensions)
/// and its parameter gradient.
inline LossGrad regression_loss(const nn::Mlp& net, const ParamVector& params, const RegressionBatch& b) {
  require_shape(b.x.rows() == b.target.rows() && b.x.cols() == b.target.cols(),
                "regression loss: inputs and targets must conform");
  require_shape(b.t.size() == b.x.rows(), "regression loss: one time per row required");
  for (Eigen::Index i = 0; i < b.t.size(); ++i)
    if (!(b.t(i) >= 0.0 && b.t(i) <= 1.0)) throw DomainError("regression loss: time outside [0, 1]");
  nn::ForwardCache cache;
  const Batch v = nn::forward(net, params, b.x, b.t, &cache);
  const Batch resid = v - b.target;
  LossGrad out;
  out.per_sample = resid.rowwise().squaredNorm();
  const double n = static_cast<double>(b.x.rows());
  out.loss = out.per_sample.sum() / n;
  out.grad = nn::backward(net, params, cache, (2.0 / n) * resid);
  return out;
}

/// Rectified-flow loss on pairs (x0, x1) at per-row times t: regress
/// v((1 - t) x0 + t x1, t) onto x1 - x0.
inline LossGrad cfm_loss(const nn::Mlp& net, const ParamVector& params, const Batch& x0, const Batch& x1,
                         const Vector& t) {
  require_shape(x0.rows() == x1.rows() && x0.cols() == x1.cols(), "cfm_loss: x0 and x1 must conform");
  require_shape(t.size() == x0.rows(), "cfm_loss: one time per pair required");
  RegressionBatch b;
  b.x = (1.0 - t.array()).matrix().asDiagonal() * x0 + t.asDiagonal() * x1;
  b.t = t;
  b.target = x1 - x0;
  return regression_loss(net, params, b);
}

/// Same loss for any field, without gradients.
template <VectorField F>
double field_cfm_loss(const F& field, const Batch& x0, const Batch& x1, const Vector& t) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const Batch xt = (1.0 - t(i)) * x0.row(i) + t(i) * x1.row(i);
    acc += (field(xt, t(i)) - (x1.row(i) - x0.row(i))).squaredNorm();
  }
  return acc / static_cast<double>(x0.rows());
}

/// Fresh checkpoint: zero-output network, EMA shadow equal to the parameters.
inline io::Checkpoint initial_checkpoint(const nn::MlpSpec& spec, const TrainConfig& cfg, Rng& rng) {
  spec.validate();
  const nn::Mlp net(spec);
  io::Checkpoint ck;
  ck.spec = spec;
  ck.params = nn::init_params(net, rng);
  ck.ema = nn::EmaState::from(ck.params, cfg.ema_decay, cfg.ema_warmup);
  ck.adam = nn::AdamState::fresh(net.param_count(), cfg.lr, cfg.beta1, cfg.beta2);
  return ck;
}

struct TrainResult {
  io::Checkpoint checkpoint;
  std::vector<LossRecord> history;
  std::uint64_t skipped = 0;
};

/// Training stopped after too many consecutive non-finite batches; carries the
/// last finite state.
struct TrainingDiverged : NumericError {
  TrainingDiverged(const std::string& msg, TrainResult r) : NumericError(msg), partial(std::move(r)) {}
  TrainResult partial;
};

using BatchSource = std::function<RegressionBatch(Rng&)>;

/// Adam + EMA loop. Batches whose loss or gradient is not finite are skipped;
/// too many in a row aborts with the last finite checkpoint.
inline TrainResult train_loop(io::Checkpoint start, const TrainConfig& cfg, const BatchSource& next_batch,
                              Rng& rng, int segments = 0) {
  cfg.validate();
  const nn::Mlp net(start.spec);
  TrainResult res;
  res.checkpoint = std::move(start);
  auto& ck = res.checkpoint;
  if (!ck.ema) ck.ema = nn::EmaState::from(ck.params, cfg.ema_decay, cfg.ema_warmup);
  if (!ck.adam) ck.adam = nn::AdamState::fresh(net.param_count(), cfg.lr, cfg.beta1, cfg.beta2);
  const auto t_begin = std::chrono::steady_clock::now();
  int consecutive = 0;
  for (std::uint64_t i = 0; i < cfg.steps; ++i) {
    const RegressionBatch b = next_batch(rng);
    LossGrad lg = regression_loss(net, ck.params, b);
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
      ++res.skipped;
      if (++consecutive >= cfg.max_consecutive_skips)
        throw TrainingDiverged("training diverged: " + std::to_string(consecutive) +
                                   " consecutive non-finite batches at step " + std::to_string(ck.step),
                               std::move(res));
      continue;
    }
    consecutive = 0;
    nn::adam_step(ck.params, lg.grad, *ck.adam);
    nn::ema_update(*ck.ema, ck.params, ck.step);
    if (ck.step % cfg.log_every == 0) {
      LossRecord r;
      r.step = ck.step;
      r.loss = lg.loss;
      r.grad_norm = lg.grad.norm();
      if (cfg.record_wall_time)
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
      if (segments > 0 && b.segment.size() == static_cast<std::size_t>(b.x.rows())) {
        std::vector<double> sum(static_cast<std::size_t>(segments), 0.0), cnt(sum);
        for (std::size_t j = 0; j < b.segment.size(); ++j) {
          sum[b.segment[j]] += lg.per_sample(static_cast<Eigen::Index>(j));
          cnt[b.segment[j]] += 1.0;
        }
        for (std::size_t k = 0; k < sum.size(); ++k)
          r.segment_loss.push_back(cnt[k] > 0 ? sum[k] / cnt[k] : std::nan(""));
      }
      res.history.push_back(std::move(r));
    }
    ++ck.step;
  }
  return res;
}

/// Stage-1 batch: independent (x0, x1), t ~ U[0, 1] per row, target x1 - x0.
inline RegressionBatch independent_batch(const IndependentCoupling& c, int n, Rng& rng) {
  RegressionBatch b;
  const Batch x0 = c.source.sample(n, rng);
  const Batch x1 = c.target.sample(n, rng);
  require_shape(x0.cols() == x1.cols(), "coupling: source and target dimensions differ");
  b.t = rng.uniform_vector(n);
  b.x = (1.0 - b.t.array()).matrix().asDiagonal() * x0 + b.t.asDiagonal() * x1;
  b.target = x1 - x0;
  return b;
}

/// Stage 1. With `steps == 0` the initial checkpoint is returned unchanged.
inline TrainResult train_stage1(const TrainConfig& cfg, const IndependentCoupling& coupling,
                                const nn::MlpSpec& spec, std::optional<io::Checkpoint> init = std::nullopt) {
  cfg.validate();
  if (coupling.source.dim() != spec.dim || coupling.target.dim() != spec.dim)
    throw ConfigError("train: model dimension does not match the data");
  Rng rng(cfg.seed);
  io::Checkpoint start = init ? std::move(*init) : initial_checkpoint(spec, cfg, rng);
  return train_loop(std::move(start), cfg,
                    [&](Rng& r) { return independent_batch(coupling, cfg.batch_size, r); }, rng);
}

// ---------------------------------------------------------------------------
// FM/CFM gradient agreement.

enum class CheckStatus { Pass, Fail, Inconclusive };

inline std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "pass";
    case CheckStatus::Fail: return "fail";
    case CheckStatus::Inconclusive: return "inconclusive";
  }
  return "?";
}

struct GradientCheckReport {
  CheckStatus status = CheckStatus::Inconclusive;
  std::uint64_t n_mc = 0;
  ParamVector grad_fm;        ///< MC mean gradient, marginal target
  ParamVector grad_cfm;       ///< MC mean gradient, conditional target
  ParamVector diff_se;        ///< standard error of the per-sample difference
  std::size_t outside_band = 0;
  std::size_t active = 0;     ///< coordinates not frozen
  double fraction_outside = 0.0;
  double loss_fm = 0.0;
  double loss_cfm = 0.0;
  double constant_c = 0.0;    ///< loss_cfm - loss_fm
  double constant_c_se = 0.0;
  double resolution = 0.0;    ///< median of 3 SE / |grad_fm| over active coordinates
};

/// Integral over t in [0, 1] of the summed conditional variance of the
/// oracle's target: the expected gap between the CFM and FM losses.
inline double oracle_loss_gap(const GaussianOracle& g, int nodes = 2000) {
  double acc = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double t = (i + 0.5) / nodes;
    acc += g.conditional_variance(t).sum();
  }
  return acc / nodes;
}

/// Compare Monte-Carlo gradients of the FM loss (target: the oracle's marginal
/// velocity) and the CFM loss (target x1 - x0) over one shared (x0, x1, t)
/// stream. `trainable` masks coordinates (0 = frozen).
inline GradientCheckReport fm_cfm_gradient_check(const nn::Mlp& net, const ParamVector& params,
                                                 const GaussianOracle& oracle, std::uint64_t n_mc, Rng& rng,
                                                 const std::optional<ParamVector>& trainable = std::nullopt,
                                                 std::uint64_t chunk = 4096) {
  oracle.validate();
  require_shape(net.dim() == oracle.dim(), "gradient check: network and oracle dimensions differ");
  const Eigen::Index p = net.param_count();
  if (trainable) require_shape(trainable->size() == p, "gradient check: mask size mismatch");
  GradientCheckReport rep;
  rep.n_mc = n_mc;
  ParamVector sum_fm = ParamVector::Zero(p), sum_cfm = ParamVector::Zero(p);
  ParamVector sum_d = ParamVector::Zero(p), sum_d2 = ParamVector::Zero(p);
  double sum_gap = 0.0, sum_gap2 = 0.0, sum_lfm = 0.0, sum_lcfm = 0.0;
  const int d = oracle.dim();
  const Vector sd0 = oracle.var0.cwiseSqrt(), sd1 = oracle.var1.cwiseSqrt();
  for (std::uint64_t done = 0; done < n_mc;) {
    const auto m = static_cast<Eigen::Index>(std::min<std::uint64_t>(chunk, n_mc - done));
    Batch x0(m, d), x1(m, d);
    for (Eigen::Index i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) x0(i, j) = oracle.mean0(j) + sd0(j) * rng.normal();
    for (Eigen::Index i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) x1(i, j) = oracle.mean1(j) + sd1(j) * rng.normal();
    const Vector t = rng.uniform_vector(m);
    const Batch xt = (1.0 - t.array()).matrix().asDiagonal() * x0 + t.asDiagonal() * x1;
    Batch u(m, d);
    for (Eigen::Index i = 0; i < m; ++i) u.row(i) = oracle(xt.row(i), t(i));
    const Batch cond = x1 - x0;
    nn::ForwardCache cache;
    const Batch v = nn::forward(net, params, xt, t, &cache);
    Eigen::MatrixXd g_fm = nn::per_sample_backward(net, params, cache, 2.0 * (v - u));
    Eigen::MatrixXd g_cfm = nn::per_sample_backward(net, params, cache, 2.0 * (v - cond));
    if (trainable) {
      g_fm = g_fm * trainable->asDiagonal();
      g_cfm = g_cfm * trainable->asDiagonal();
    }
    const Eigen::MatrixXd diff = g_cfm - g_fm;
    sum_fm += g_fm.colwise().sum().transpose();
    sum_cfm += g_cfm.colwise().sum().transpose();
    sum_d += diff.colwise().sum().transpose();
    sum_d2 += diff.cwiseAbs2().colwise().sum().transpose();
    const Vector lfm = (v - u).rowwise().squaredNorm();
    const Vector lcfm = (v - cond).rowwise().squaredNorm();
    const Vector gap = lcfm - lfm;
    sum_lfm += lfm.sum();
    sum_lcfm += lcfm.sum();
    sum_gap += gap.sum();
    sum_gap2 += gap.squaredNorm();
    done += static_cast<std::uint64_t>(m);
  }
  const double n = static_cast<double>(n_mc);
  rep.grad_fm = sum_fm / n;
  rep.grad_cfm = sum_cfm / n;
  const ParamVector mean_d = sum_d / n;
  rep.diff_se = ParamVector(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = n > 1 ? std::max(0.0, (sum_d2(j) - n * mean_d(j) * mean_d(j)) / (n - 1)) : 0.0;
    rep.diff_se(j) = std::sqrt(var / n);
  }
  rep.loss_fm = sum_lfm / n;
  rep.loss_cfm = sum_lcfm / n;
  rep.constant_c = sum_gap / n;
  rep.constant_c_se =
      n > 1 ? std::sqrt(std::max(0.0, (sum_gap2 - n * rep.constant_c * rep.constant_c) / (n - 1)) / n) : 0.0;

  std::vector<double> ratios;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (trainable && (*trainable)(j) == 0.0) continue;
    ++rep.active;
    if (std::abs(mean_d(j)) > 3.0 * rep.diff_se(j)) ++rep.outside_band;
    const double g = std::abs(rep.grad_fm(j));
    ratios.push_back(g > 0.0 ? 3.0 * rep.diff_se(j) / g : (rep.diff_se(j) > 0.0 ? HUGE_VAL : 0.0));
  }
  rep.fraction_outside = rep.active ? static_cast<double>(rep.outside_band) / static_cast<double>(rep.active) : 0.0;
  if (!ratios.empty()) {
    std::nth_element(ratios.begin(), ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2), ratios.end());
    rep.resolution = ratios[ratios.size() / 2];
  }
  if (n_mc < 1000 || !(rep.resolution <= 1.0)) rep.status = CheckStatus::Inconclusive;
  else rep.status = rep.fraction_outside <= 0.01 ? CheckStatus::Pass : CheckStatus::Fail;
  return rep;
}

/// Trainable mask: 0 on every parameter of the listed layers, 1 elsewhere.
inline ParamVector freeze_mask(const nn::Mlp& net, const std::vector<std::size_t>& frozen_layers) {
  ParamVector mask = ParamVector::Ones(net.param_count());
  for (std::size_t l : frozen_layers) {
    const auto& s = net.layers().at(l);
    mask.segment(s.weight_offset, static_cast<Eigen::Index>(s.in) * s.out).setZero();
    mask.segment(s.bias_offset, s.out).setZero();
  }
  return mask;
}

}  // namespace flowstraight
