// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "lrlm/transformer/model.hpp"

namespace lrlm::lowrank {

/// Replaces every targeted linear layer of `model` with its rank-r truncated
/// SVD factors. Matrices are decomposed on up to `workers` threads; each
/// result depends only on its own matrix, so the output is bit-identical for
/// any worker count. A failing matrix aborts the whole call and is named in
/// the error.
template <typename T>
transformer::Model<T> decompose_model(const transformer::Model<T>& model, std::size_t rank, std::size_t workers,
                                      const std::vector<transformer::MatrixId>& targets = {
                                          transformer::kBlockMatrices.begin(), transformer::kBlockMatrices.end()});

}  // namespace lrlm::lowrank
