// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Time-conditioned multilayer perceptron v(x, t) with hand-written reverse
// mode. Parameters live in one flat vector so optimizer state, EMA shadows and
// checkpoints are all plain vectors of the same length.
//
// Layout per dense layer: weight matrix (out x in, row-major) followed by the
// bias (out). Layers are stored input to output.

#pragma once

#include "flowstraight/core.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace flowstraight::nn {

enum class Activation : std::uint32_t { Silu = 1 };

struct MlpSpec {
  int dim = 2;                  ///< data dimension D
  std::vector<int> hidden{64, 64};
  int time_frequencies = 16;    ///< 0 feeds raw t as a single extra input
  double max_frequency = 20.0;  ///< highest angular frequency of the embedding
  Activation activation = Activation::Silu;

  int embedding_width() const { return time_frequencies > 0 ? 2 * time_frequencies : 1; }
  int input_width() const { return dim + embedding_width(); }

  void validate() const {
    if (dim < 1) throw ConfigError("model: data dimension must be >= 1");
    if (time_frequencies < 0) throw ConfigError("model: time_frequencies must be >= 0");
    if (!(max_frequency > 0.0) || !std::isfinite(max_frequency))
      throw ConfigError("model: max_frequency must be positive");
    for (int w : hidden)
      if (w < 1) throw ConfigError("model: hidden widths must be >= 1");
    if (activation != Activation::Silu) throw ConfigError("model: unknown activation");
  }

  std::string describe() const {
    std::ostringstream os;
    os << input_width();
    for (int w : hidden) os << '-' << w;
    os << '-' << dim;
    return os.str();
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct LayerShape {
  int in = 0;
  int out = 0;
  Eigen::Index weight_offset = 0;
  Eigen::Index bias_offset = 0;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Activations retained by forward() for a subsequent backward().
struct ForwardCache {
  std::vector<Batch> inputs;  ///< inputs[l] feeds layer l; inputs[0] is the embedded input
  std::vector<Batch> pre;     ///< pre-activation of every hidden layer
};

class Mlp {
 public:
  Mlp() : Mlp(MlpSpec{}) {}

  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::vector<int> widths{spec_.input_width()};
    widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
    widths.push_back(spec_.dim);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      LayerShape s;
      s.in = widths[l];
      s.out = widths[l + 1];
      s.weight_offset = offset;
      offset += static_cast<Eigen::Index>(s.in) * s.out;
      s.bias_offset = offset;
      offset += s.out;
      layers_.push_back(s);
    }
    param_count_ = offset;
    frequencies_.resize(spec_.time_frequencies);
    for (int k = 0; k < spec_.time_frequencies; ++k) {
      const double frac = spec_.time_frequencies > 1 ? double(k) / (spec_.time_frequencies - 1) : 0.0;
      frequencies_[k] = std::pow(spec_.max_frequency, frac);
    }
  }

  const MlpSpec& spec() const { return spec_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  Eigen::Index param_count() const { return param_count_; }
  int dim() const { return spec_.dim; }

  /// Concatenate x with the time embedding of each row's t.
  Batch embed(const Batch& x, const Vector& t) const {
    require_shape(x.cols() == spec_.dim, "forward: expected points of dimension " +
                                             std::to_string(spec_.dim) + ", got " +
                                             std::to_string(x.cols()));
    require_shape(t.size() == x.rows(), "forward: one time per point required");
    Batch h(x.rows(), spec_.input_width());
    h.leftCols(spec_.dim) = x;
    const int f = spec_.time_frequencies;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (f == 0) {
        h(i, spec_.dim) = t(i);
        continue;
      }
      for (int k = 0; k < f; ++k) {
        h(i, spec_.dim + k) = std::sin(frequencies_[k] * t(i));
        h(i, spec_.dim + f + k) = std::cos(frequencies_[k] * t(i));
      }
    }
    return h;
  }

  auto weight(const ParamVector& theta, std::size_t l) const {
    const auto& s = layers_[l];
    return Eigen::Map<const RowMatrix>(theta.data() + s.weight_offset, s.out, s.in);
  }
  auto bias(const ParamVector& theta, std::size_t l) const {
    const auto& s = layers_[l];
    return Eigen::Map<const Eigen::RowVectorXd>(theta.data() + s.bias_offset, s.out);
  }

 private:
  MlpSpec spec_;
  std::vector<LayerShape> layers_;
  Eigen::Index param_count_ = 0;
  std::vector<double> frequencies_;
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline void silu_inplace(Batch& z) {
  z = z.unaryExpr([](double v) { return v * sigmoid(v); });
}

inline Batch silu_grad(const Batch& z) {
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

inline void check_params(const Mlp& net, const ParamVector& theta) {
  require_shape(theta.size() == net.param_count(),
                "parameter vector has " + std::to_string(theta.size()) + " entries, network needs " +
                    std::to_string(net.param_count()));
}

}  // namespace detail

/// Fan-in scaled Gaussian weights and zero biases. With `zero_final` the
/// output layer starts at zero, so the initial field is identically zero.
inline ParamVector init_params(const Mlp& net, Rng& rng, bool zero_final = true) {
  ParamVector theta = ParamVector::Zero(net.param_count());
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    if (zero_final && l + 1 == layers.size()) break;
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.in));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(s.in) * s.out; ++i)
      theta(s.weight_offset + i) = scale * rng.normal();
  }
  return theta;
}

/// v(x, t_i) for every row i. Fills `cache` when given.
inline Batch forward(const Mlp& net, const ParamVector& theta, const Batch& x, const Vector& t,
                     ForwardCache* cache = nullptr) {
  detail::check_params(net, theta);
  Batch h = net.embed(x, t);
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Batch z = h * net.weight(theta, l).transpose();
    z.rowwise() += net.bias(theta, l);
    if (cache) cache->inputs.push_back(std::move(h));
    if (l + 1 == layers.size()) return z;
    if (cache) cache->pre.push_back(z);
    detail::silu_inplace(z);
    h = std::move(z);
  }
  return h;  // unreachable: there is always an output layer
}

inline Batch forward(const Mlp& net, const ParamVector& theta, const Batch& x, double t) {
  return forward(net, theta, x, Vector::Constant(x.rows(), t));
}

/// Gradient of sum_i <upstream_i, v(x_i, t_i)> with respect to every parameter.
inline ParamVector backward(const Mlp& net, const ParamVector& theta, const ForwardCache& cache,
                            const Batch& upstream) {
  detail::check_params(net, theta);
  const auto& layers = net.layers();
  require_shape(cache.inputs.size() == layers.size(), "backward: cache does not match network");
  require_shape(upstream.rows() == cache.inputs[0].rows() && upstream.cols() == net.dim(),
                "backward: upstream gradient must match the output shape");
  ParamVector grad(net.param_count());
  Batch delta = upstream;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& s = layers[l];
    Eigen::Map<RowMatrix> gw(grad.data() + s.weight_offset, s.out, s.in);
    gw.noalias() = delta.transpose() * cache.inputs[l];
    grad.segment(s.bias_offset, s.out) = delta.colwise().sum().transpose();
    if (l == 0) break;
    Batch back = delta * net.weight(theta, l);
    delta = back.cwiseProduct(detail::silu_grad(cache.pre[l - 1]));
  }
  return grad;
}

/// Per-row gradients: row i is the gradient of <upstream_i, v(x_i, t_i)>.
inline Eigen::MatrixXd per_sample_backward(const Mlp& net, const ParamVector& theta,
                                           const ForwardCache& cache, const Batch& upstream) {
  detail::check_params(net, theta);
  const auto& layers = net.layers();
  require_shape(cache.inputs.size() == layers.size(), "backward: cache does not match network");
  require_shape(upstream.rows() == cache.inputs[0].rows() && upstream.cols() == net.dim(),
                "backward: upstream gradient must match the output shape");
  const Eigen::Index n = upstream.rows();
  Eigen::MatrixXd grads(n, net.param_count());
  Batch delta = upstream;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& s = layers[l];
    const Batch& in = cache.inputs[l];
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int o = 0; o < s.out; ++o) {
        const double d = delta(i, o);
        for (int j = 0; j < s.in; ++j) grads(i, s.weight_offset + o * s.in + j) = d * in(i, j);
        grads(i, s.bias_offset + o) = d;
      }
    }
    if (l == 0) break;
    Batch back = delta * net.weight(theta, l);
    delta = back.cwiseProduct(detail::silu_grad(cache.pre[l - 1]));
  }
  return grads;
}

/// Jacobian dv/dtheta at a single point, one row per output coordinate.
inline Eigen::MatrixXd output_jacobian(const Mlp& net, const ParamVector& theta, const Vector& x,
                                       double t) {
  Batch xb = replicate_row(x, net.dim());
  ForwardCache cache;
  forward(net, theta, xb, Vector::Constant(net.dim(), t), &cache);
  Batch eye = Batch::Identity(net.dim(), net.dim());
  return per_sample_backward(net, theta, cache, eye);
}

}  // namespace flowstraight::nn
