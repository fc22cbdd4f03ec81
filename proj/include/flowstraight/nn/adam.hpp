// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "flowstraight/core.hpp"

#include <cmath>
#include <cstdint>

namespace flowstraight::nn {

struct AdamState {
  ParamVector m;
  ParamVector v;
  std::uint64_t step = 0;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState fresh(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8) {
    AdamState s;
    s.m = ParamVector::Zero(n);
    s.v = ParamVector::Zero(n);
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.validate();
    return s;
  }

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
  }
};

/// One bias-corrected Adam update. A non-finite gradient leaves both the
/// parameters and the state untouched and throws NumericError.
inline void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state) {
  require_shape(grads.size() == params.size() && state.m.size() == params.size() &&
                    state.v.size() == params.size(),
                "adam: gradient/moment shapes do not match parameters");
  if (!grads.allFinite()) throw NumericError("adam: non-finite gradient, update rejected");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double m_hat = state.m(i) / c1;
    const double v_hat = state.v(i) / c2;
    params(i) -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace flowstraight::nn
