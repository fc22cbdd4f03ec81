// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Report CSVs: one "# key=value ..." metadata line, a header row, then data.
// Numbers are printed with 17 significant digits so they round-trip exactly.

#pragma once

#include "flowstraight/core.hpp"
#include "flowstraight/io/binary.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace flowstraight::io {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::pair<std::string, std::string>> metadata;  ///< in emission order
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void meta(std::string key, std::string value) { metadata.emplace_back(std::move(key), std::move(value)); }

  void add_row(const std::vector<double>& values) {
    std::vector<std::string> r;
    r.reserve(values.size());
    for (double v : values) r.push_back(format_double(v));
    rows.push_back(std::move(r));
  }
  void add_row(std::vector<std::string> cells) { rows.push_back(std::move(cells)); }

  std::string metadata_value(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return v;
    return {};
  }

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("csv: no column named " + name);
  }

  std::vector<double> numeric_column(const std::string& name) const {
    const auto c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) {
      const std::string& cell = r.at(c);
      if (cell.empty()) {
        out.push_back(std::nan(""));
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end != cell.c_str() + cell.size()) throw DataError("csv: non-numeric cell '" + cell + "' in " + name);
      out.push_back(v);
    }
    return out;
  }

  std::string str() const {
    std::ostringstream os;
    if (!metadata.empty()) {
      os << '#';
      for (const auto& [k, v] : metadata) os << ' ' << k << '=' << v;
      os << '\n';
    }
    write_line(os, header);
    for (const auto& r : rows) write_line(os, r);
    return os.str();
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, str()); }

  static CsvTable parse(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        std::istringstream ms(line.substr(1));
        std::string tok;
        while (ms >> tok) {
          const auto eq = tok.find('=');
          if (eq == std::string::npos) continue;
          t.meta(tok.substr(0, eq), tok.substr(eq + 1));
        }
        continue;
      }
      auto cells = split(line);
      if (!have_header) {
        t.header = std::move(cells);
        have_header = true;
      } else {
        if (cells.size() != t.header.size()) throw DataError("csv: row width differs from header");
        t.rows.push_back(std::move(cells));
      }
    }
    if (!have_header) throw DataError("csv: missing header row");
    return t;
  }

  static CsvTable load(const std::filesystem::path& path) { return parse(read_file(path)); }

 private:
  static void write_line(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  }
  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  }
};

/// Standard metadata block for metric reports.
inline void stamp_report(CsvTable& t, const std::string& metric, const std::string& field_id,
                         const std::string& solver, std::uint64_t seed, std::uint64_t n) {
  t.meta("metric", metric);
  t.meta("field", field_id);
  t.meta("solver", solver);
  t.meta("seed", std::to_string(seed));
  t.meta("n", std::to_string(n));
}

}  // namespace flowstraight::io
