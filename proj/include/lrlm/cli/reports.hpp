// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON documents and aligned text tables for planner reports.

#pragma once

#include <string>

#include "lrlm/costmodel/costmodel.hpp"
#include "lrlm/distsim/distsim.hpp"
#include "lrlm/io/config.hpp"

namespace lrlm::cli {

using io::Json;

Json to_json(const costmodel::ParamReport& r);
Json to_json(const costmodel::MemoryReport& r);
Json to_json(const costmodel::WorkloadReport& r);
Json to_json(const distsim::PipelinePlan& p);
Json to_json(const distsim::ShardPlan& p);
Json to_json(const distsim::OffloadReport& r);
Json to_json(const distsim::FederatedReport& r);

/// Module / Size / Amount (M) / Storage (GB, 16-bit) / Percentage table.
std::string params_table(const costmodel::ParamReport& r);
std::string memory_table(const costmodel::MemoryReport& r);

}  // namespace lrlm::cli
