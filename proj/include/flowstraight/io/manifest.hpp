// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Run manifests: the last file written into a run directory. Lists every
// output with its content hash so each CSV traces back to its inputs.

#pragma once

#include "flowstraight/io/binary.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#ifndef FLOWSTRAIGHT_VERSION
#define FLOWSTRAIGHT_VERSION "0.1.0"
#endif

namespace flowstraight::io {

inline constexpr const char* kManifestName = "manifest.json";

struct FileEntry {
  std::string path;  ///< relative to the run directory for outputs
  std::string hash;  ///< FNV-1a 64 of the content, hex
  std::uint64_t bytes = 0;

  friend bool operator==(const FileEntry&, const FileEntry&) = default;
};

inline FileEntry file_entry(const std::filesystem::path& file, const std::string& recorded_as) {
  const auto bytes = read_file(file);
  return {recorded_as, hex64(content_hash(bytes)), bytes.size()};
}

struct RunManifest {
  std::string run_id;
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<FileEntry> inputs;
  std::vector<FileEntry> outputs;
  std::string started;
  std::string finished;
  std::string code_version = FLOWSTRAIGHT_VERSION;
  int threads = 1;

  /// Record an output already written inside `run_dir`.
  void add_output(const std::filesystem::path& run_dir, const std::string& relative) {
    outputs.push_back(file_entry(run_dir / relative, relative));
  }
  void add_input(const std::filesystem::path& file) { inputs.push_back(file_entry(file, file.string())); }

  nlohmann::ordered_json to_json() const {
    auto files = [](const std::vector<FileEntry>& v) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& f : v) arr.push_back({{"path", f.path}, {"hash", f.hash}, {"bytes", f.bytes}});
      return arr;
    };
    return {{"run_id", run_id},       {"command", command},       {"config_hash", config_hash},
            {"seed", seed},           {"inputs", files(inputs)},  {"outputs", files(outputs)},
            {"started", started},     {"finished", finished},     {"code_version", code_version},
            {"threads", threads}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
      m.run_id = j.at("run_id").get<std::string>();
      m.command = j.at("command").get<std::string>();
      m.config_hash = j.at("config_hash").get<std::string>();
      m.seed = j.at("seed").get<std::uint64_t>();
      for (const auto* key : {"inputs", "outputs"})
        for (const auto& f : j.at(key))
          (std::string(key) == "inputs" ? m.inputs : m.outputs)
              .push_back({f.at("path").get<std::string>(), f.at("hash").get<std::string>(),
                          f.at("bytes").get<std::uint64_t>()});
      m.started = j.at("started").get<std::string>();
      m.finished = j.at("finished").get<std::string>();
      m.code_version = j.at("code_version").get<std::string>();
      m.threads = j.at("threads").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("manifest: ") + e.what());
    }
    return m;
  }

  /// Written atomically, after every output exists.
  void write(const std::filesystem::path& run_dir) const {
    write_file_atomic(run_dir / kManifestName, to_json().dump(2) + "\n");
  }

  static RunManifest load(const std::filesystem::path& run_dir) {
    const auto text = read_file(run_dir / kManifestName);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("manifest: not valid JSON: ") + e.what());
    }
    return from_json(j);
  }

  /// Every listed output exists with the recorded size and hash.
  void verify(const std::filesystem::path& run_dir) const {
    for (const auto& f : outputs) {
      const auto p = run_dir / f.path;
      if (!std::filesystem::exists(p)) throw IntegrityError("manifest: missing output " + f.path);
      if (file_entry(p, f.path) != f) throw IntegrityError("manifest: output changed since recorded: " + f.path);
    }
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace flowstraight::io
