// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace lrlm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumeric = 2;

/// Runs one command line (without the program name). Human-readable output
/// goes to `out`, diagnostics to `err`. Every successful run writes
/// report.json into its run directory: --run-dir when given, otherwise
/// <--runs-root>/<timestamp>-<seed>/.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lrlm::cli
