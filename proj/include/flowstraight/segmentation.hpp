// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Time segmentations and the reflow pair records built on them.

#pragma once

#include "flowstraight/core.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace flowstraight {

/// Boundaries a = t_0 < t_1 < ... < t_K = b.
class TimeSegmentation {
 public:
  TimeSegmentation() : boundaries_{0.0, 1.0} {}

  explicit TimeSegmentation(std::vector<double> boundaries) : boundaries_(std::move(boundaries)) {
    if (boundaries_.size() < 2) throw ConfigError("segmentation: need at least one segment");
    for (std::size_t i = 0; i + 1 < boundaries_.size(); ++i)
      if (!(boundaries_[i] < boundaries_[i + 1]))
        throw ConfigError("segmentation: boundaries must be strictly increasing");
  }

  int segments() const { return static_cast<int>(boundaries_.size()) - 1; }
  double start() const { return boundaries_.front(); }
  double end() const { return boundaries_.back(); }
  const std::vector<double>& boundaries() const { return boundaries_; }
  std::pair<double, double> segment(int k) const {
    return {boundaries_.at(static_cast<std::size_t>(k)), boundaries_.at(static_cast<std::size_t>(k) + 1)};
  }
  /// Index of the segment containing t (right-closed on the last segment).
  int locate(double t) const {
    for (int k = 0; k + 1 < segments(); ++k)
      if (t < boundaries_[static_cast<std::size_t>(k) + 1]) return k;
    return segments() - 1;
  }

  friend bool operator==(const TimeSegmentation&, const TimeSegmentation&) = default;

 private:
  std::vector<double> boundaries_;
};

/// Uniform segmentation t_k = a + (k / K)(b - a).
inline TimeSegmentation make_segmentation(int k, double a = 0.0, double b = 1.0) {
  if (k < 1) throw ConfigError("segmentation: K must be >= 1");
  if (!(a < b)) throw ConfigError("segmentation: interval must satisfy a < b");
  std::vector<double> t(static_cast<std::size_t>(k) + 1);
  for (int i = 0; i <= k; ++i) t[static_cast<std::size_t>(i)] = a + (double(i) / k) * (b - a);
  t.back() = b;
  return TimeSegmentation(std::move(t));
}

struct ReflowPair {
  Vector x_src;
  Vector x_dst;
  double t_src = 0.0;
  double t_dst = 1.0;
  int segment = 0;

  /// Constant velocity that carries x_src to x_dst across the segment.
  Vector slope() const {
    if (!(t_dst != t_src)) throw DomainError("reflow pair: degenerate segment (t_dst == t_src)");
    return (x_dst - x_src) / (t_dst - t_src);
  }
};

/// Solver-generated pairs, stored column-wise: src/dst rows align with `segment`.
struct PairDataset {
  TimeSegmentation segmentation;
  std::uint64_t generator_hash = 0;
  std::string solver_spec;
  Batch src;
  Batch dst;
  std::vector<std::uint32_t> segment;
  std::uint64_t total_nfe = 0;
  std::uint64_t dropped = 0;

  Eigen::Index size() const { return src.rows(); }
  bool empty() const { return size() == 0; }
  int dim() const { return static_cast<int>(src.cols()); }

  std::vector<std::uint64_t> per_segment_counts() const {
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(segmentation.segments()), 0);
    for (auto k : segment) ++counts.at(k);
    return counts;
  }

  ReflowPair record(Eigen::Index i) const {
    const int k = static_cast<int>(segment.at(static_cast<std::size_t>(i)));
    const auto [a, b] = segmentation.segment(k);
    return ReflowPair{src.row(i).transpose(), dst.row(i).transpose(), a, b, k};
  }

  void validate() const {
    if (src.rows() != dst.rows() || src.cols() != dst.cols() ||
        static_cast<std::size_t>(src.rows()) != segment.size())
      throw DataError("pair dataset: record arrays disagree in length");
    for (auto k : segment)
      if (k >= static_cast<std::uint32_t>(segmentation.segments()))
        throw DataError("pair dataset: segment index out of range");
    if (!src.allFinite() || !dst.allFinite()) throw DataError("pair dataset: non-finite record");
  }
};

}  // namespace flowstraight
