// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// "FSPD" pair-dataset container. Byte layout is documented in FORMATS.md.

#pragma once

#include "flowstraight/io/binary.hpp"
#include "flowstraight/io/csv.hpp"
#include "flowstraight/segmentation.hpp"

#include <cmath>
#include <filesystem>
#include <string>

namespace flowstraight::io {

inline constexpr std::string_view kPairsMagic = "FSPD";
inline constexpr std::uint32_t kPairsVersion = 1;

inline std::string encode_pairs(const PairDataset& p) {
  p.validate();
  BinaryWriter w(kPairsMagic, kPairsVersion);
  const auto& b = p.segmentation.boundaries();
  w.u32(static_cast<std::uint32_t>(p.segmentation.segments()));
  w.f64s(b.data(), b.size());
  w.str(p.solver_spec);
  w.u64(p.generator_hash);
  w.u64(p.total_nfe);
  w.u64(p.dropped);
  w.u32(static_cast<std::uint32_t>(p.src.cols()));
  w.u64(static_cast<std::uint64_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    w.u32(p.segment[static_cast<std::size_t>(i)]);
    for (Eigen::Index d = 0; d < p.src.cols(); ++d) w.f64(p.src(i, d));
    for (Eigen::Index d = 0; d < p.dst.cols(); ++d) w.f64(p.dst(i, d));
  }
  return w.finish();
}

inline PairDataset decode_pairs(std::string_view bytes) {
  BinaryReader r(bytes, kPairsMagic, kPairsVersion, "pair dataset");
  PairDataset p;
  const auto k = r.u32();
  if (k < 1 || k > (1u << 20)) throw IntegrityError("pair dataset: implausible segment count");
  std::vector<double> b(static_cast<std::size_t>(k) + 1);
  r.f64s(b.data(), b.size());
  try {
    p.segmentation = TimeSegmentation(std::move(b));
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("pair dataset: invalid segmentation: ") + e.what());
  }
  p.solver_spec = r.str();
  p.generator_hash = r.u64();
  p.total_nfe = r.u64();
  p.dropped = r.u64();
  const auto dim = r.u32();
  const auto n = r.u64();
  if (dim < 1 || dim > 4096) throw IntegrityError("pair dataset: implausible dimension");
  if (n > bytes.size() / (4 + 16 * static_cast<std::uint64_t>(dim)))
    throw IntegrityError("pair dataset: record count exceeds file size");
  p.src.resize(static_cast<Eigen::Index>(n), dim);
  p.dst.resize(static_cast<Eigen::Index>(n), dim);
  p.segment.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    p.segment[static_cast<std::size_t>(i)] = r.u32();
    for (Eigen::Index d = 0; d < dim; ++d) p.src(i, d) = r.f64();
    for (Eigen::Index d = 0; d < dim; ++d) p.dst(i, d) = r.f64();
  }
  r.expect_end();
  try {
    p.validate();
  } catch (const DataError& e) {
    throw IntegrityError(e.what());
  }
  return p;
}

inline void save_pairs(const std::filesystem::path& path, const PairDataset& p) {
  write_file_atomic(path, encode_pairs(p));
}

inline PairDataset load_pairs(const std::filesystem::path& path) { return decode_pairs(read_file(path)); }

/// One row per record: segment, t_src, t_dst, src coordinates, dst coordinates.
inline CsvTable pairs_csv(const PairDataset& p) {
  CsvTable t;
  t.meta("metric", "pairs");
  t.meta("generator", hex64(p.generator_hash));
  t.meta("solver", p.solver_spec);
  t.meta("n", std::to_string(p.size()));
  t.meta("segments", std::to_string(p.segmentation.segments()));
  t.meta("total_nfe", std::to_string(p.total_nfe));
  t.meta("dropped", std::to_string(p.dropped));
  t.header = {"segment", "t_src", "t_dst"};
  for (int d = 0; d < p.dim(); ++d) t.header.push_back("src_x" + std::to_string(d));
  for (int d = 0; d < p.dim(); ++d) t.header.push_back("dst_x" + std::to_string(d));
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const int k = static_cast<int>(p.segment[static_cast<std::size_t>(i)]);
    const auto [a, b] = p.segmentation.segment(k);
    std::vector<double> row{static_cast<double>(k), a, b};
    for (int d = 0; d < p.dim(); ++d) row.push_back(p.src(i, d));
    for (int d = 0; d < p.dim(); ++d) row.push_back(p.dst(i, d));
    t.add_row(row);
  }
  return t;
}

}  // namespace flowstraight::io
