// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/trainer/adamw.hpp"

#include <cmath>

#include "lrlm/common/error.hpp"

namespace lrlm::trainer {

void AdamWConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adamw: lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("adamw: betas must lie in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adamw: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("adamw: weight_decay must be non-negative");
}

template <typename T>
void AdamWState::step(std::vector<transformer::ParamRef<T>>& params, const transformer::Gradients<T>& grads,
                      const AdamWConfig& cfg) {
  cfg.validate();
  for (const auto& p : params) {
    if (!p.trainable) continue;
    const auto it = grads.find(p.name);
    if (it == grads.end()) throw ConfigError("adamw: no gradient for trainable tensor " + p.name);
    if (!it->second.same_shape(*p.value)) throw ShapeError("adamw: gradient shape differs for " + p.name);
    for (T g : it->second.values()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError(p.name, "non-finite gradient");
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps_));
  for (auto& p : params) {
    if (!p.trainable) continue;
    const auto& g = grads.at(p.name);
    auto [it, fresh] = slots_.try_emplace(p.name);
    Slot& s = it->second;
    const std::size_t count = p.value->size();
    if (fresh || s.master.size() != count) {
      s.m.assign(count, 0.0);
      s.v.assign(count, 0.0);
      s.master.assign(p.value->data(), p.value->data() + count);
    }
    T* w = p.value->data();
    const T* gd = g.data();
    for (std::size_t i = 0; i < count; ++i) {
      const double gi = gd[i];
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * gi;
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      s.master[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * s.master[i]);
      w[i] = static_cast<T>(s.master[i]);
    }
  }
}

std::size_t AdamWState::state_bytes() const {
  std::size_t total = 0;
  for (const auto& [name, s] : slots_) total += (s.m.size() + s.v.size() + s.master.size()) * sizeof(double);
  return total;
}

template void AdamWState::step(std::vector<transformer::ParamRef<float>>&, const transformer::Gradients<float>&,
                               const AdamWConfig&);
template void AdamWState::step(std::vector<transformer::ParamRef<double>>&, const transformer::Gradients<double>&,
                               const AdamWConfig&);

}  // namespace lrlm::trainer
