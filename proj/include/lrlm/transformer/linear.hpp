// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Interchangeable implementations of one linear map y = W x, applied to
// token-major inputs (rows are tokens).

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "lrlm/linalg/grid.hpp"
#include "lrlm/lowrank/lowrank.hpp"
#include "lrlm/quant/quant.hpp"
#include "lrlm/transformer/config.hpp"

namespace lrlm::transformer {

using linalg::Grid;

template <typename T>
using Gradients = std::map<std::string, Grid<T>>;

/// Destination for parameter gradients. Frozen names receive nothing.
template <typename T>
struct GradSink {
  Gradients<T> grads;
  const std::set<std::string>* frozen = nullptr;

  bool wants(const std::string& name) const { return frozen == nullptr || frozen->count(name) == 0; }

  /// Zero-initialised on first use.
  Grid<T>& slot(const std::string& name, std::size_t rows, std::size_t cols);
};

/// A named dense tensor owned by a layer. `trainable` is false for parts that
/// are frozen by construction (LoRA and blend bases).
template <typename T>
struct ParamRef {
  std::string name;
  Grid<T>* value = nullptr;
  bool trainable = true;
};

template <typename T>
class LinearLayer {
 public:
  explicit LinearLayer(std::string name) : name_(std::move(name)) {}
  virtual ~LinearLayer() = default;

  const std::string& name() const noexcept { return name_; }

  virtual LinearKind kind() const noexcept = 0;
  virtual LayerSpec spec() const = 0;
  virtual std::size_t fan_in() const noexcept = 0;
  virtual std::size_t fan_out() const noexcept = 0;

  /// x is rows x fan_in; returns rows x fan_out.
  virtual Grid<T> forward(const Grid<T>& x) const = 0;

  /// Accumulates parameter gradients for dy (rows x fan_out) into sink and
  /// returns dx (rows x fan_in).
  virtual Grid<T> backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const = 0;

  /// Dense tensors of this layer (quantized codes are not included).
  virtual void parameters(std::vector<ParamRef<T>>& out) = 0;

  /// Stored weights, counting quantized codes as one parameter each.
  virtual std::size_t param_count() const noexcept = 0;

  /// Multiply-adds times two per input row.
  virtual double flops_per_row() const noexcept = 0;

  /// Training step, for layers whose behaviour depends on it.
  virtual void set_step(std::size_t) {}

  /// Effective dense weight (fan_out x fan_in).
  virtual Grid<T> effective_weight() const = 0;

  virtual std::unique_ptr<LinearLayer<T>> clone() const = 0;
  virtual std::unique_ptr<LinearLayer<float>> to_float() const = 0;
  virtual std::unique_ptr<LinearLayer<double>> to_double() const = 0;

 protected:
  void check_input(const Grid<T>& x) const;

 private:
  std::string name_;
};

template <typename T>
class DenseLinear final : public LinearLayer<T> {
 public:
  DenseLinear(std::string name, Grid<T> weight);

  const Grid<T>& weight() const noexcept { return weight_; }
  Grid<T>& weight() noexcept { return weight_; }

  LinearKind kind() const noexcept override { return LinearKind::kDense; }
  LayerSpec spec() const override { return {}; }
  std::size_t fan_in() const noexcept override { return weight_.cols(); }
  std::size_t fan_out() const noexcept override { return weight_.rows(); }
  Grid<T> forward(const Grid<T>& x) const override;
  Grid<T> backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const override;
  void parameters(std::vector<ParamRef<T>>& out) override;
  std::size_t param_count() const noexcept override { return weight_.size(); }
  double flops_per_row() const noexcept override { return 2.0 * static_cast<double>(weight_.size()); }
  Grid<T> effective_weight() const override { return weight_; }
  std::unique_ptr<LinearLayer<T>> clone() const override;
  std::unique_ptr<LinearLayer<float>> to_float() const override;
  std::unique_ptr<LinearLayer<double>> to_double() const override;

 private:
  Grid<T> weight_;
};

template <typename T>
class LowRankLinear final : public LinearLayer<T> {
 public:
  LowRankLinear(std::string name, lowrank::LowRankFactors<T> factors);

  const lowrank::LowRankFactors<T>& factors() const noexcept { return f_; }

  LinearKind kind() const noexcept override { return LinearKind::kLowRank; }
  LayerSpec spec() const override;
  std::size_t fan_in() const noexcept override { return f_.fan_in(); }
  std::size_t fan_out() const noexcept override { return f_.fan_out(); }
  Grid<T> forward(const Grid<T>& x) const override;
  Grid<T> backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const override;
  void parameters(std::vector<ParamRef<T>>& out) override;
  std::size_t param_count() const noexcept override { return f_.param_count(); }
  double flops_per_row() const noexcept override { return 2.0 * static_cast<double>(f_.param_count()); }
  Grid<T> effective_weight() const override { return f_.product(); }
  std::unique_ptr<LinearLayer<T>> clone() const override;
  std::unique_ptr<LinearLayer<float>> to_float() const override;
  std::unique_ptr<LinearLayer<double>> to_double() const override;

 private:
  lowrank::LowRankFactors<T> f_;
};

template <typename T>
class QuantLinear final : public LinearLayer<T> {
 public:
  QuantLinear(std::string name, quant::QuantizedMatrix q);

  const quant::QuantizedMatrix& matrix() const noexcept { return q_; }

  LinearKind kind() const noexcept override { return LinearKind::kQuantized; }
  LayerSpec spec() const override;
  std::size_t fan_in() const noexcept override { return q_.cols(); }
  std::size_t fan_out() const noexcept override { return q_.rows(); }
  Grid<T> forward(const Grid<T>& x) const override;
  Grid<T> backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const override;
  void parameters(std::vector<ParamRef<T>>&) override {}
  std::size_t param_count() const noexcept override { return q_.rows() * q_.cols(); }
  double flops_per_row() const noexcept override { return 2.0 * static_cast<double>(q_.rows() * q_.cols()); }
  Grid<T> effective_weight() const override;
  std::unique_ptr<LinearLayer<T>> clone() const override;
  std::unique_ptr<LinearLayer<float>> to_float() const override;
  std::unique_ptr<LinearLayer<double>> to_double() const override;

 private:
  quant::QuantizedMatrix q_;
};

/// Frozen base plus trainable down/up adapter. After merge() the layer
/// behaves like a dense layer holding W + up * down.
template <typename T>
class LoraLinear final : public LinearLayer<T> {
 public:
  LoraLinear(std::string name, lowrank::LoraAdapter<T> adapter);

  const lowrank::LoraAdapter<T>& adapter() const noexcept { return a_; }
  lowrank::LoraAdapter<T>& adapter() noexcept { return a_; }

  LinearKind kind() const noexcept override { return LinearKind::kLora; }
  LayerSpec spec() const override;
  std::size_t fan_in() const noexcept override { return a_.fan_in(); }
  std::size_t fan_out() const noexcept override { return a_.fan_out(); }
  Grid<T> forward(const Grid<T>& x) const override;
  Grid<T> backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const override;
  void parameters(std::vector<ParamRef<T>>& out) override;
  std::size_t param_count() const noexcept override;
  double flops_per_row() const noexcept override;
  Grid<T> effective_weight() const override;
  std::unique_ptr<LinearLayer<T>> clone() const override;
  std::unique_ptr<LinearLayer<float>> to_float() const override;
  std::unique_ptr<LinearLayer<double>> to_double() const override;

 private:
  Grid<T> base_forward(const Grid<T>& x) const;
  lowrank::LoraAdapter<T> a_;
};

/// alpha(step) W x + (1 - alpha(step)) up down x, W frozen.
template <typename T>
class BlendLinear final : public LinearLayer<T> {
 public:
  BlendLinear(std::string name, lowrank::BlendLayer<T> layer, std::size_t step = 0);

  const lowrank::BlendLayer<T>& layer() const noexcept { return b_; }
  std::size_t step() const noexcept { return step_; }
  double alpha() const noexcept { return b_.alpha(step_); }

  LinearKind kind() const noexcept override { return LinearKind::kBlend; }
  LayerSpec spec() const override;
  std::size_t fan_in() const noexcept override { return b_.base.cols(); }
  std::size_t fan_out() const noexcept override { return b_.base.rows(); }
  Grid<T> forward(const Grid<T>& x) const override;
  Grid<T> backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const override;
  void parameters(std::vector<ParamRef<T>>& out) override;
  std::size_t param_count() const noexcept override { return b_.base.size() + b_.delta.param_count(); }
  double flops_per_row() const noexcept override;
  void set_step(std::size_t step) override { step_ = step; }
  Grid<T> effective_weight() const override;
  std::unique_ptr<LinearLayer<T>> clone() const override;
  std::unique_ptr<LinearLayer<float>> to_float() const override;
  std::unique_ptr<LinearLayer<double>> to_double() const override;

 private:
  lowrank::BlendLayer<T> b_;
  std::size_t step_ = 0;
};

/// Builds a layer of `spec` for a fan_out x fan_in matrix. Kinds that wrap a
/// dense weight (lora, quantized, blend) use `base`; when base is null a
/// N(0, 0.02) weight is drawn from the seed. Fresh low-rank factors use
/// down ~ N(0, 1/sqrt(fan_in)) and up ~ N(0, 0.02).
template <typename T>
std::unique_ptr<LinearLayer<T>> make_linear(const std::string& name, const LayerSpec& spec, std::size_t fan_out,
                                            std::size_t fan_in, std::uint64_t seed, const Grid<T>* base = nullptr);

}  // namespace lrlm::transformer
