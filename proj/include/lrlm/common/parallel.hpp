// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace lrlm {

/// Worker cap: LRLM_THREADS if set and positive, otherwise hardware concurrency.
std::size_t max_threads();

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Each index runs
/// exactly once; the first exception thrown by any worker is rethrown.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace lrlm
