/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace babverify {

/// Serial is the reference path; parallel must produce identical results
/// because every work item writes only its own output slot.
enum class ExecutionPolicy { serial, parallel };

/// Runs fn(i) for i in [0, n). Exceptions thrown by work items are captured
/// and the first one (lowest index is not guaranteed) is rethrown after the
/// loop, so OpenMP never sees an exception escape a parallel region.
template <typename Fn>
void parallel_for(std::size_t n, ExecutionPolicy policy, Fn&& fn) {
  if (policy == ExecutionPolicy::serial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

inline int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace babverify
