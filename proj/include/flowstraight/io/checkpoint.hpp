// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// "FSCK" checkpoint container. Byte layout is documented in FORMATS.md.

#pragma once

#include "flowstraight/io/binary.hpp"
#include "flowstraight/nn/adam.hpp"
#include "flowstraight/nn/ema.hpp"
#include "flowstraight/nn/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace flowstraight::io {

inline constexpr std::string_view kCheckpointMagic = "FSCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nn::MlpSpec spec;
  ParamVector params;
  std::optional<nn::EmaState> ema;
  std::optional<nn::AdamState> adam;
  std::uint64_t step = 0;

  nn::Mlp network() const { return nn::Mlp(spec); }

  /// Parameters used for evaluation and sampling: the EMA shadow when present.
  const ParamVector& eval_params() const { return ema ? ema->shadow : params; }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  const nn::Mlp net(ck.spec);
  require_shape(ck.params.size() == net.param_count(), "checkpoint: parameter count mismatch");
  BinaryWriter w(kCheckpointMagic, kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.spec.dim));
  w.u32(static_cast<std::uint32_t>(ck.spec.activation));
  w.u32(static_cast<std::uint32_t>(ck.spec.time_frequencies));
  w.f64(ck.spec.max_frequency);
  w.u32(static_cast<std::uint32_t>(ck.spec.hidden.size()));
  for (int h : ck.spec.hidden) w.u32(static_cast<std::uint32_t>(h));
  w.u64(ck.step);
  const auto n = static_cast<std::size_t>(ck.params.size());
  w.u64(n);
  w.f64s(ck.params.data(), n);
  w.u8(ck.ema ? 1 : 0);
  if (ck.ema) {
    require_shape(ck.ema->shadow.size() == ck.params.size(), "checkpoint: EMA shape mismatch");
    w.f64(ck.ema->decay);
    w.u8(ck.ema->warmup ? 1 : 0);
    w.f64s(ck.ema->shadow.data(), n);
  }
  w.u8(ck.adam ? 1 : 0);
  if (ck.adam) {
    require_shape(ck.adam->m.size() == ck.params.size() && ck.adam->v.size() == ck.params.size(),
                  "checkpoint: Adam moment shape mismatch");
    w.u64(ck.adam->step);
    w.f64(ck.adam->lr);
    w.f64(ck.adam->beta1);
    w.f64(ck.adam->beta2);
    w.f64(ck.adam->eps);
    w.f64s(ck.adam->m.data(), n);
    w.f64s(ck.adam->v.data(), n);
  }
  return w.finish();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  BinaryReader r(bytes, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  Checkpoint ck;
  ck.spec.dim = static_cast<int>(r.u32());
  ck.spec.activation = static_cast<nn::Activation>(r.u32());
  ck.spec.time_frequencies = static_cast<int>(r.u32());
  ck.spec.max_frequency = r.f64();
  const auto layers = r.u32();
  if (layers > 1024) throw IntegrityError("checkpoint: implausible layer count");
  ck.spec.hidden.clear();
  for (std::uint32_t i = 0; i < layers; ++i) ck.spec.hidden.push_back(static_cast<int>(r.u32()));
  ck.step = r.u64();
  try {
    ck.spec.validate();
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("checkpoint: invalid architecture: ") + e.what());
  }
  const nn::Mlp net(ck.spec);
  const auto n = r.u64();
  if (n != static_cast<std::uint64_t>(net.param_count()))
    throw IntegrityError("checkpoint: parameter count does not match the stored architecture");
  ck.params.resize(static_cast<Eigen::Index>(n));
  r.f64s(ck.params.data(), n);
  if (r.u8()) {
    nn::EmaState ema;
    ema.decay = r.f64();
    ema.warmup = r.u8() != 0;
    ema.shadow.resize(static_cast<Eigen::Index>(n));
    r.f64s(ema.shadow.data(), n);
    ck.ema = std::move(ema);
  }
  if (r.u8()) {
    nn::AdamState adam;
    adam.step = r.u64();
    adam.lr = r.f64();
    adam.beta1 = r.f64();
    adam.beta2 = r.f64();
    adam.eps = r.f64();
    adam.m.resize(static_cast<Eigen::Index>(n));
    adam.v.resize(static_cast<Eigen::Index>(n));
    r.f64s(adam.m.data(), n);
    r.f64s(adam.v.data(), n);
    ck.adam = std::move(adam);
  }
  r.expect_end();
  if (!ck.params.allFinite() || (ck.ema && !ck.ema->shadow.allFinite()))
    throw IntegrityError("checkpoint: non-finite parameter values");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

/// Content hash of the encoded checkpoint; identifies generator fields.
inline std::uint64_t checkpoint_hash(const Checkpoint& ck) {
  return content_hash(encode_checkpoint(ck));
}

}  // namespace flowstraight::io
