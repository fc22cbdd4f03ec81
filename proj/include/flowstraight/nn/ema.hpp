// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "flowstraight/core.hpp"

#include <algorithm>
#include <cstdint>

namespace flowstraight::nn {

struct EmaState {
  ParamVector shadow;
  double decay = 0.999;
  bool warmup = true;

  static EmaState from(const ParamVector& params, double decay, bool warmup) {
    EmaState s{params, decay, warmup};
    s.validate();
    return s;
  }

  void validate() const {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema: decay must lie in [0, 1)");
  }
};

/// Effective averaging rate at `step`: min((1 + step) / (10 + step), decay) under warm-up.
inline double ema_rate(double decay, bool warmup, std::uint64_t step) {
  if (!warmup) return decay;
  const double s = static_cast<double>(step);
  return std::min((1.0 + s) / (10.0 + s), decay);
}

inline void ema_update(EmaState& ema, const ParamVector& params, std::uint64_t step) {
  ema.validate();
  require_shape(ema.shadow.size() == params.size(), "ema: shadow shape does not match parameters");
  const double r = ema_rate(ema.decay, ema.warmup, step);
  ema.shadow = r * ema.shadow + (1.0 - r) * params;
}

}  // namespace flowstraight::nn
