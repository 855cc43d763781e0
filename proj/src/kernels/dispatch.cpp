// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "lrlm/kernels/kernels.hpp"

namespace lrlm::kernels {
namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* select_default() {
  if (const char* env = std::getenv("LRLM_SIMD")) {
    if (const KernelTable* t = find_table(env)) return t;
  }
  const auto tables = available_tables();
  return tables.back();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{select_default()};
  return table;
}

}  // namespace

std::vector<const KernelTable*> available_tables() {
  std::vector<const KernelTable*> out{&scalar_table()};
  if (const KernelTable* t = detail::avx2_table(); t != nullptr && cpu_has_avx2_fma()) out.push_back(t);
  if (const KernelTable* t = detail::neon_table(); t != nullptr) out.push_back(t);
  return out;
}

const KernelTable* find_table(std::string_view name) {
  for (const KernelTable* t : available_tables()) {
    if (name == t->name) return t;
  }
  return nullptr;
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void set_active(const KernelTable& table) { slot().store(&table, std::memory_order_relaxed); }

}  // namespace lrlm::kernels
