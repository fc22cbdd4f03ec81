// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluable vector fields v(x, t). Time convention everywhere: t = 0 is the
// noise end, t = 1 the data end, and sampling integrates 0 -> 1.

#pragma once

#include "flowstraight/core.hpp"
#include "flowstraight/io/checkpoint.hpp"
#include "flowstraight/nn/mlp.hpp"
#include "flowstraight/segmentation.hpp"
#include "flowstraight/toy.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <concepts>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>

namespace flowstraight {

template <class F>
concept VectorField = requires(const F& f, const Batch& x, double t) {
  { f(x, t) } -> std::convertible_to<Batch>;
};

/// Exact solution map x(to) given x(from); rows are independent points.
using FlowMap = std::function<Batch(const Batch& x, double from, double to)>;

namespace detail {
inline void check_flow_time(double t, const char* who) {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError(std::string(who) + ": time " + std::to_string(t) + " outside [0, 1]");
}
}  // namespace detail

struct LearnedField {
  std::shared_ptr<const nn::Mlp> net;
  ParamVector params;
  std::string id;  ///< content hash of the source checkpoint

  static LearnedField from(const io::Checkpoint& ck) {
    return LearnedField{std::make_shared<const nn::Mlp>(ck.spec), ck.eval_params(),
                        hex64(io::checkpoint_hash(ck))};
  }

  Batch operator()(const Batch& x, double t) const {
    detail::check_flow_time(t, "learned field");
    return nn::forward(*net, params, x, t);
  }
};

/// Exact marginal velocity E[x1 - x0 | x_t = x] of the linear interpolant
/// between independent Gaussians with diagonal covariances.
struct GaussianOracle {
  Vector mean0, var0;
  Vector mean1, var1;

  static GaussianOracle isotropic(const Vector& mean0, double sigma0, const Vector& mean1,
                                  double sigma1) {
    GaussianOracle g{mean0, Vector::Constant(mean0.size(), sigma0 * sigma0), mean1,
                     Vector::Constant(mean1.size(), sigma1 * sigma1)};
    g.validate();
    return g;
  }

  int dim() const { return static_cast<int>(mean0.size()); }

  /// The source covariance must be positive definite; the target may be a point mass.
  void validate() const {
    if (mean0.size() < 1 || mean0.size() != var0.size() || mean1.size() != mean0.size() ||
        var1.size() != mean0.size())
      throw ConfigError("gaussian oracle: mean/covariance dimensions disagree");
    for (Eigen::Index d = 0; d < var0.size(); ++d) {
      if (!(var0(d) > 0.0)) throw ConfigError("gaussian oracle: source covariance is not positive definite");
      if (!(var1(d) >= 0.0)) throw ConfigError("gaussian oracle: target covariance is not positive semidefinite");
    }
  }

  Vector marginal_mean(double t) const { return (1.0 - t) * mean0 + t * mean1; }
  Vector marginal_var(double t) const {
    return (1.0 - t) * (1.0 - t) * var0 + t * t * var1;
  }

  /// Regression slope of x1 - x0 on x_t, per dimension.
  Vector gain(double t) const {
    const Vector vt = marginal_var(t);
    for (Eigen::Index d = 0; d < vt.size(); ++d)
      if (!(vt(d) > 0.0)) throw DomainError("gaussian oracle: degenerate marginal at t = " + std::to_string(t));
    return ((t * var1 - (1.0 - t) * var0).array() / vt.array()).matrix();
  }

  /// Var[x1 - x0 | x_t], per dimension: the irreducible conditional-target floor.
  Vector conditional_variance(double t) const {
    const Vector vt = marginal_var(t);
    const Vector cov = t * var1 - (1.0 - t) * var0;
    return (var0 + var1).array() - cov.array().square() / vt.array();
  }

  Batch operator()(const Batch& x, double t) const {
    detail::check_flow_time(t, "gaussian oracle");
    require_shape(x.cols() == dim(), "gaussian oracle: dimension mismatch");
    const Vector k = gain(t);
    const Vector m = marginal_mean(t);
    const Vector drift = mean1 - mean0;
    Batch out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index d = 0; d < x.cols(); ++d) out(i, d) = drift(d) + k(d) * (x(i, d) - m(d));
    return out;
  }

  /// The oracle flow is affine: x(to) = m_to + sqrt(V_to / V_from) (x(from) - m_from).
  Batch flow(const Batch& x, double from, double to) const {
    const Vector mf = marginal_mean(from), mt = marginal_mean(to);
    const Vector vf = marginal_var(from), vt = marginal_var(to);
    Batch out(x.rows(), x.cols());
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      const double scale = std::sqrt(vt(d) / vf(d));
      for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, d) = mt(d) + scale * (x(i, d) - mf(d));
    }
    return out;
  }
};

/// Straight-line field of one conditional pair: constant velocity x1 - x0.
struct ConditionalStraight {
  Vector x0, x1;

  Batch operator()(const Batch& x, double t) const {
    detail::check_flow_time(t, "conditional straight field");
    require_shape(x.cols() == x0.size(), "conditional straight field: dimension mismatch");
    return replicate_row(x1 - x0, x.rows());
  }
};

/// Closed-form test fields for solver validation.
struct AnalyticField {
  enum class Kind { Exponential, Rotation, Constant, Linear };
  Kind kind = Kind::Exponential;
  double rate = 1.0;        ///< lambda for Exponential, angular speed for Rotation
  Vector constant;          ///< Constant velocity
  Eigen::MatrixXd matrix;   ///< Linear: v = A x

  static AnalyticField exponential(double lambda) { return {Kind::Exponential, lambda, {}, {}}; }
  static AnalyticField rotation(double omega) { return {Kind::Rotation, omega, {}, {}}; }
  static AnalyticField constant_velocity(const Vector& c) { return {Kind::Constant, 0.0, c, {}}; }
  static AnalyticField linear(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw ConfigError("linear field: matrix must be square");
    return {Kind::Linear, 0.0, {}, a};
  }

  Batch operator()(const Batch& x, double t) const {
    if (!std::isfinite(t)) throw DomainError("analytic field: non-finite time");
    switch (kind) {
      case Kind::Exponential:
        return rate * x;
      case Kind::Rotation: {
        require_shape(x.cols() == 2, "rotation field is two-dimensional");
        Batch out(x.rows(), 2);
        out.col(0) = -rate * x.col(1);
        out.col(1) = rate * x.col(0);
        return out;
      }
      case Kind::Constant:
        require_shape(x.cols() == constant.size(), "constant field: dimension mismatch");
        return replicate_row(constant, x.rows());
      case Kind::Linear:
        require_shape(x.cols() == matrix.cols(), "linear field: dimension mismatch");
        return x * matrix.transpose();
    }
    return x;
  }

  Batch flow(const Batch& x, double from, double to) const {
    const double dt = to - from;
    switch (kind) {
      case Kind::Exponential:
        return std::exp(rate * dt) * x;
      case Kind::Rotation: {
        const double c = std::cos(rate * dt), s = std::sin(rate * dt);
        Batch out(x.rows(), 2);
        out.col(0) = c * x.col(0) - s * x.col(1);
        out.col(1) = s * x.col(0) + c * x.col(1);
        return out;
      }
      case Kind::Constant:
        return x + replicate_row(dt * constant, x.rows());
      case Kind::Linear: {
        const Eigen::MatrixXd e = (dt * matrix).exp();
        return x * e.transpose();
      }
    }
    return x;
  }

  /// Global Lipschitz constant (spectral norm of the Jacobian).
  double lipschitz() const {
    switch (kind) {
      case Kind::Exponential:
      case Kind::Rotation:
        return std::abs(rate);
      case Kind::Constant:
        return 0.0;
      case Kind::Linear:
        return Eigen::JacobiSVD<Eigen::MatrixXd>(matrix).singularValues()(0);
    }
    return 0.0;
  }
};

class FieldKind {
 public:
  using Variant = std::variant<LearnedField, GaussianOracle, ConditionalStraight, AnalyticField>;

  FieldKind(Variant v) : v_(std::move(v)) {  // NOLINT: implicit by intent
    if (auto* g = std::get_if<GaussianOracle>(&v_)) g->validate();
  }
  template <class T>
    requires(!std::same_as<std::decay_t<T>, FieldKind> && !std::same_as<std::decay_t<T>, Variant> &&
             std::constructible_from<Variant, T>)
  FieldKind(T&& f) : FieldKind(Variant(std::forward<T>(f))) {}  // NOLINT: implicit by intent

  const Variant& variant() const { return v_; }

  Batch operator()(const Batch& x, double t) const {
    return std::visit([&](const auto& f) { return f(x, t); }, v_);
  }

  /// Exact flow when the field admits one (everything but learned fields).
  std::optional<FlowMap> closed_form() const {
    if (const auto* a = std::get_if<AnalyticField>(&v_)) {
      return FlowMap([f = *a](const Batch& x, double from, double to) { return f.flow(x, from, to); });
    }
    if (const auto* g = std::get_if<GaussianOracle>(&v_)) {
      return FlowMap([f = *g](const Batch& x, double from, double to) { return f.flow(x, from, to); });
    }
    if (const auto* c = std::get_if<ConditionalStraight>(&v_)) {
      return FlowMap([v = Vector(c->x1 - c->x0)](const Batch& x, double from, double to) {
        return Batch(x + replicate_row((to - from) * v, x.rows()));
      });
    }
    return std::nullopt;
  }

  std::string describe() const {
    std::ostringstream os;
    std::visit(
        [&](const auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, LearnedField>) os << "learned:" << f.id;
          else if constexpr (std::is_same_v<T, GaussianOracle>) os << "gaussian_oracle(dim=" << f.dim() << ")";
          else if constexpr (std::is_same_v<T, ConditionalStraight>) os << "conditional_straight";
          else os << "analytic:" << static_cast<int>(f.kind) << "(rate=" << f.rate << ")";
        },
        v_);
    return os.str();
  }

  /// Identifier recorded in reports: checkpoint hash for learned fields.
  std::string id() const {
    if (const auto* l = std::get_if<LearnedField>(&v_)) return l->id;
    const auto d = describe();
    return hex64(fnv1a64(d.data(), d.size()));
  }

 private:
  Variant v_;
};

inline Batch eval_field(const FieldKind& field, const Batch& x, double t) { return field(x, t); }

/// Velocity of the Gaussian conditional path from N(0, I) to N(x1, sigma_min^2 I)
/// with mean t x1 and scale 1 - (1 - sigma_min) t. At sigma_min = 0 and on the
/// straight interpolant it equals x1 - x0.
inline Batch conditional_ot_field(const Batch& x_t, double t, const Batch& x1, double sigma_min) {
  require_shape(x_t.rows() == x1.rows() && x_t.cols() == x1.cols(),
                "conditional_ot_field: x_t and x1 must conform");
  if (!(sigma_min >= 0.0)) throw DomainError("conditional_ot_field: sigma_min must be >= 0");
  const double denom = 1.0 - (1.0 - sigma_min) * t;
  if (!(denom > 0.0)) throw DomainError("conditional_ot_field: non-positive denominator at t = " + std::to_string(t));
  return (x1 - (1.0 - sigma_min) * x_t) / denom;
}

struct IndependentCoupling {
  ToyDistribution source;
  ToyDistribution target;
};

struct JointCoupling {
  std::shared_ptr<const PairDataset> pairs;
};

using Coupling = std::variant<IndependentCoupling, JointCoupling>;

struct InterpolantSample {
  Batch x0, x1, xt;
};

/// Endpoint pairs drawn per the coupling, and x_t = (1 - t) x0 + t x1.
inline InterpolantSample sample_interpolant(const Coupling& coupling, Eigen::Index n, double t, Rng& rng) {
  if (n < 1) throw ConfigError("sample_interpolant: n must be >= 1");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("sample_interpolant: t outside [0, 1]");
  InterpolantSample s;
  if (const auto* ind = std::get_if<IndependentCoupling>(&coupling)) {
    s.x0 = ind->source.sample(n, rng);
    s.x1 = ind->target.sample(n, rng);
    require_shape(s.x0.cols() == s.x1.cols(), "coupling: source and target dimensions differ");
  } else {
    const auto& joint = std::get<JointCoupling>(coupling);
    if (!joint.pairs || joint.pairs->empty()) throw DataError("joint coupling: empty pair dataset");
    const auto& p = *joint.pairs;
    s.x0.resize(n, p.dim());
    s.x1.resize(n, p.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto j = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(p.size())));
      s.x0.row(i) = p.src.row(j);
      s.x1.row(i) = p.dst.row(j);
    }
  }
  s.xt = (1.0 - t) * s.x0 + t * s.x1;
  return s;
}

}  // namespace flowstraight
