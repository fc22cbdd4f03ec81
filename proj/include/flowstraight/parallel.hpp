// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Fixed-partition task parallelism. Work is split into tasks whose boundaries
// do not depend on the thread count, so results are identical for any
// FLOWSTRAIGHT_THREADS setting.

#pragma once

#include "flowstraight/core.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace flowstraight {

/// Worker cap: FLOWSTRAIGHT_THREADS if set (>= 1), else the hardware count.
inline int thread_count() {
  if (const char* env = std::getenv("FLOWSTRAIGHT_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("FLOWSTRAIGHT_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<int>(std::min<long>(v, 256));
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Run fn(i) for i in [0, tasks). The first exception (lowest task index) is rethrown.
template <class Fn>
void parallel_tasks(std::size_t tasks, Fn&& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), tasks);
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(tasks);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace flowstraight
