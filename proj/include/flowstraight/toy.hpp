// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Seed-deterministic 2-D toy distributions and isotropic Gaussians.

#pragma once

#include "flowstraight/core.hpp"

#include <concepts>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace flowstraight {

struct GaussianIso {
  Vector mean = Vector::Zero(2);
  double sigma = 1.0;
};

/// Eight isotropic modes on a circle, at angles 2*pi*k/8.
struct EightGaussianRing {
  double radius = 4.0;
  double sigma = 0.1;
};

/// Two interleaved half circles, centred at the origin.
struct TwoMoons {
  double noise = 0.05;
};

/// Uniform density over the dark squares of a cells x cells board on
/// [-extent, extent]^2. A square (i, j) is dark when i + j is even.
struct Checkerboard {
  int cells = 4;
  double extent = 2.0;
};

/// Degenerate source used by conditional-pair fixtures.
struct PointMass {
  Vector location = Vector::Zero(2);
};

class ToyDistribution {
 public:
  using Kind = std::variant<GaussianIso, EightGaussianRing, TwoMoons, Checkerboard, PointMass>;

  ToyDistribution() : kind_(GaussianIso{}) {}
  ToyDistribution(Kind kind) : kind_(std::move(kind)) { validate(); }  // NOLINT: implicit by intent
  template <class T>
    requires(!std::same_as<std::decay_t<T>, ToyDistribution> && !std::same_as<std::decay_t<T>, Kind> &&
             std::constructible_from<Kind, T>)
  ToyDistribution(T&& d) : ToyDistribution(Kind(std::forward<T>(d))) {}  // NOLINT: implicit by intent

  const Kind& kind() const { return kind_; }

  int dim() const {
    return std::visit(
        [](const auto& d) -> int {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, GaussianIso>) return static_cast<int>(d.mean.size());
          else if constexpr (std::is_same_v<T, PointMass>) return static_cast<int>(d.location.size());
          else return 2;
        },
        kind_);
  }

  void validate() const {
    std::visit(
        [](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, GaussianIso>) {
            if (d.mean.size() < 1) throw ConfigError("gaussian: mean must have dimension >= 1");
            if (!(d.sigma > 0.0)) throw ConfigError("gaussian: sigma must be > 0");
          } else if constexpr (std::is_same_v<T, EightGaussianRing>) {
            if (!(d.sigma > 0.0)) throw ConfigError("eight_gaussians: sigma must be > 0");
            if (!(d.radius > 0.0)) throw ConfigError("eight_gaussians: radius must be > 0");
          } else if constexpr (std::is_same_v<T, TwoMoons>) {
            if (!(d.noise > 0.0)) throw ConfigError("two_moons: noise must be > 0");
          } else if constexpr (std::is_same_v<T, Checkerboard>) {
            if (d.cells < 1) throw ConfigError("checkerboard: cells must be >= 1");
            if (!(d.extent > 0.0)) throw ConfigError("checkerboard: extent must be > 0");
          } else {
            if (d.location.size() < 1) throw ConfigError("point_mass: location must be non-empty");
          }
        },
        kind_);
  }

  Batch sample(Eigen::Index n, Rng& rng) const {
    if (n < 1) throw ConfigError("sample_distribution: n must be >= 1");
    Batch out(n, dim());
    std::visit([&](const auto& d) { fill(d, out, rng); }, kind_);
    return out;
  }

  std::string describe() const {
    std::ostringstream os;
    std::visit(
        [&](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, GaussianIso>) {
            os << "gaussian(dim=" << d.mean.size() << ",sigma=" << d.sigma << ")";
          } else if constexpr (std::is_same_v<T, EightGaussianRing>) {
            os << "eight_gaussians(r=" << d.radius << ",sigma=" << d.sigma << ")";
          } else if constexpr (std::is_same_v<T, TwoMoons>) {
            os << "two_moons(noise=" << d.noise << ")";
          } else if constexpr (std::is_same_v<T, Checkerboard>) {
            os << "checkerboard(cells=" << d.cells << ",extent=" << d.extent << ")";
          } else {
            os << "point_mass(dim=" << d.location.size() << ")";
          }
        },
        kind_);
    return os.str();
  }

  /// Mode centres of the eight-Gaussian ring.
  static std::vector<Vector> ring_modes(double radius) {
    std::vector<Vector> modes;
    for (int k = 0; k < 8; ++k) {
      const double a = 2.0 * std::numbers::pi * k / 8.0;
      Vector m(2);
      m << radius * std::cos(a), radius * std::sin(a);
      modes.push_back(m);
    }
    return modes;
  }

 private:
  static void fill(const GaussianIso& d, Batch& out, Rng& rng) {
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = d.mean(j) + d.sigma * rng.normal();
  }

  static void fill(const EightGaussianRing& d, Batch& out, Rng& rng) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(rng.index(8)) / 8.0;
      out(i, 0) = d.radius * std::cos(a) + d.sigma * rng.normal();
      out(i, 1) = d.radius * std::sin(a) + d.sigma * rng.normal();
    }
  }

  static void fill(const TwoMoons& d, Batch& out, Rng& rng) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const bool inner = rng.uniform() < 0.5;
      const double a = std::numbers::pi * rng.uniform();
      double x = inner ? 1.0 - std::cos(a) : std::cos(a);
      double y = inner ? 0.5 - std::sin(a) : std::sin(a);
      out(i, 0) = x - 0.5 + d.noise * rng.normal();
      out(i, 1) = y - 0.25 + d.noise * rng.normal();
    }
  }

  static void fill(const Checkerboard& d, Batch& out, Rng& rng) {
    std::vector<std::pair<int, int>> dark;
    for (int i = 0; i < d.cells; ++i)
      for (int j = 0; j < d.cells; ++j)
        if ((i + j) % 2 == 0) dark.emplace_back(i, j);
    const double width = 2.0 * d.extent / d.cells;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const auto [i, j] = dark[rng.index(dark.size())];
      out(r, 0) = -d.extent + (i + rng.uniform()) * width;
      out(r, 1) = -d.extent + (j + rng.uniform()) * width;
    }
  }

  static void fill(const PointMass& d, Batch& out, Rng&) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = d.location.transpose();
  }

  Kind kind_;
};

inline Batch sample_distribution(const ToyDistribution& dist, Eigen::Index n, Rng& rng) {
  return dist.sample(n, rng);
}

}  // namespace flowstraight
