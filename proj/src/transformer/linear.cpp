// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/transformer/linear.hpp"

#include <cmath>
#include <string>

#include "lrlm/common/error.hpp"
#include "lrlm/kernels/kernels.hpp"
#include "lrlm/linalg/ops.hpp"
#include "lrlm/linalg/random.hpp"

namespace lrlm::transformer {

using linalg::matmul;
using linalg::matmul_nt;
using linalg::matmul_tn;

template <typename T>
Grid<T>& GradSink<T>::slot(const std::string& name, std::size_t rows, std::size_t cols) {
  auto it = grads.find(name);
  if (it == grads.end()) it = grads.emplace(name, Grid<T>(rows, cols)).first;
  if (it->second.rows() != rows || it->second.cols() != cols) throw ShapeError("gradient shape changed for " + name);
  return it->second;
}

template <typename T>
void LinearLayer<T>::check_input(const Grid<T>& x) const {
  if (x.cols() != fan_in()) {
    throw ShapeError(name_ + ": input width " + std::to_string(x.cols()) + " != fan_in " + std::to_string(fan_in()));
  }
}

namespace {

template <typename T>
void accumulate(GradSink<T>& sink, const std::string& name, const Grid<T>& g) {
  if (!sink.wants(name)) return;
  linalg::add_scaled(sink.slot(name, g.rows(), g.cols()), g);
}

// y = x * down^T * up^T; returns z = x * down^T through `z_out`.
template <typename T>
Grid<T> lowrank_apply(const lowrank::LowRankFactors<T>& f, const Grid<T>& x, Grid<T>* z_out = nullptr) {
  Grid<T> z = matmul_nt(x, f.down);
  Grid<T> y = matmul_nt(z, f.up);
  if (z_out != nullptr) *z_out = std::move(z);
  return y;
}

// Gradients of y = up (down x) scaled by `coeff`; returns dx.
template <typename T>
Grid<T> lowrank_backward(const lowrank::LowRankFactors<T>& f, const std::string& prefix, const Grid<T>& x,
                         const Grid<T>& dy, GradSink<T>& sink, double coeff) {
  const Grid<T> z = matmul_nt(x, f.down);
  Grid<T> dz = matmul(dy, f.up);  // rows x r
  if (coeff != 1.0) {
    for (auto& v : dz.values()) v = static_cast<T>(static_cast<double>(v) * coeff);
  }
  if (sink.wants(prefix + ".up")) {
    Grid<T> dup = matmul_tn(dy, z);
    if (coeff != 1.0) {
      for (auto& v : dup.values()) v = static_cast<T>(static_cast<double>(v) * coeff);
    }
    accumulate(sink, prefix + ".up", dup);
  }
  if (sink.wants(prefix + ".down")) accumulate(sink, prefix + ".down", matmul_tn(dz, x));
  return matmul(dz, f.down);
}

template <typename T>
Grid<T> quant_rows(const quant::QuantizedMatrix& q, const Grid<T>& x) {
  Grid<T> y(x.rows(), q.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const std::vector<T> r = quant::qmatvec(q, x.row(i));
    std::copy(r.begin(), r.end(), y.row(i).begin());
  }
  return y;
}

// dx = dy * W for a quantized W, one dequantized row at a time.
template <typename T>
Grid<T> quant_backward(const quant::QuantizedMatrix& q, const Grid<T>& dy) {
  Grid<T> dx(dy.rows(), q.cols());
  std::vector<T> w(q.cols());
  for (std::size_t o = 0; o < q.rows(); ++o) {
    q.dequantize_row(o, std::span<T>(w));
    for (std::size_t i = 0; i < dy.rows(); ++i) kernels::axpy(dy(i, o), w.data(), dx.data() + i * dx.cols(), q.cols());
  }
  return dx;
}

template <typename T>
Grid<T> dequantized(const quant::QuantizedMatrix& q) {
  Grid<T> w(q.rows(), q.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) q.dequantize_row(i, w.row(i));
  return w;
}

template <typename U, typename T>
lowrank::BaseWeight<U> cast_base(const lowrank::BaseWeight<T>& b) {
  if (const auto* q = std::get_if<quant::QuantizedMatrix>(&b)) return *q;
  return std::get<Grid<T>>(b).template cast<U>();
}

}  // namespace

// ---------------------------------------------------------------- dense

template <typename T>
DenseLinear<T>::DenseLinear(std::string name, Grid<T> weight) : LinearLayer<T>(std::move(name)), weight_(std::move(weight)) {}

template <typename T>
Grid<T> DenseLinear<T>::forward(const Grid<T>& x) const {
  this->check_input(x);
  return matmul_nt(x, weight_);
}

template <typename T>
Grid<T> DenseLinear<T>::backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const {
  const std::string wname = this->name() + ".weight";
  if (sink.wants(wname)) accumulate(sink, wname, matmul_tn(dy, x));
  return matmul(dy, weight_);
}

template <typename T>
void DenseLinear<T>::parameters(std::vector<ParamRef<T>>& out) {
  out.push_back({this->name() + ".weight", &weight_, true});
}

template <typename T>
std::unique_ptr<LinearLayer<T>> DenseLinear<T>::clone() const {
  return std::make_unique<DenseLinear<T>>(*this);
}

template <typename T>
std::unique_ptr<LinearLayer<float>> DenseLinear<T>::to_float() const {
  return std::make_unique<DenseLinear<float>>(this->name(), weight_.template cast<float>());
}

template <typename T>
std::unique_ptr<LinearLayer<double>> DenseLinear<T>::to_double() const {
  return std::make_unique<DenseLinear<double>>(this->name(), weight_.template cast<double>());
}

// ---------------------------------------------------------------- low-rank

template <typename T>
LowRankLinear<T>::LowRankLinear(std::string name, lowrank::LowRankFactors<T> factors)
    : LinearLayer<T>(std::move(name)), f_(std::move(factors)) {
  f_.validate();
}

template <typename T>
LayerSpec LowRankLinear<T>::spec() const {
  LayerSpec s;
  s.kind = LinearKind::kLowRank;
  s.rank = f_.rank();
  return s;
}

template <typename T>
Grid<T> LowRankLinear<T>::forward(const Grid<T>& x) const {
  this->check_input(x);
  return lowrank_apply(f_, x);
}

template <typename T>
Grid<T> LowRankLinear<T>::backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const {
  return lowrank_backward(f_, this->name(), x, dy, sink, 1.0);
}

template <typename T>
void LowRankLinear<T>::parameters(std::vector<ParamRef<T>>& out) {
  out.push_back({this->name() + ".down", &f_.down, true});
  out.push_back({this->name() + ".up", &f_.up, true});
}

template <typename T>
std::unique_ptr<LinearLayer<T>> LowRankLinear<T>::clone() const {
  return std::make_unique<LowRankLinear<T>>(*this);
}

template <typename T>
std::unique_ptr<LinearLayer<float>> LowRankLinear<T>::to_float() const {
  return std::make_unique<LowRankLinear<float>>(this->name(), f_.template cast<float>());
}

template <typename T>
std::unique_ptr<LinearLayer<double>> LowRankLinear<T>::to_double() const {
  return std::make_unique<LowRankLinear<double>>(this->name(), f_.template cast<double>());
}

// ---------------------------------------------------------------- quantized

template <typename T>
QuantLinear<T>::QuantLinear(std::string name, quant::QuantizedMatrix q) : LinearLayer<T>(std::move(name)), q_(std::move(q)) {}

template <typename T>
LayerSpec QuantLinear<T>::spec() const {
  LayerSpec s;
  s.kind = LinearKind::kQuantized;
  s.bits = q_.bits();
  return s;
}

template <typename T>
Grid<T> QuantLinear<T>::forward(const Grid<T>& x) const {
  this->check_input(x);
  return quant_rows(q_, x);
}

template <typename T>
Grid<T> QuantLinear<T>::backward(const Grid<T>&, const Grid<T>& dy, GradSink<T>&) const {
  return quant_backward<T>(q_, dy);
}

template <typename T>
Grid<T> QuantLinear<T>::effective_weight() const {
  return dequantized<T>(q_);
}

template <typename T>
std::unique_ptr<LinearLayer<T>> QuantLinear<T>::clone() const {
  return std::make_unique<QuantLinear<T>>(*this);
}

template <typename T>
std::unique_ptr<LinearLayer<float>> QuantLinear<T>::to_float() const {
  return std::make_unique<QuantLinear<float>>(this->name(), q_);
}

template <typename T>
std::unique_ptr<LinearLayer<double>> QuantLinear<T>::to_double() const {
  return std::make_unique<QuantLinear<double>>(this->name(), q_);
}

// ---------------------------------------------------------------- lora

template <typename T>
LoraLinear<T>::LoraLinear(std::string name, lowrank::LoraAdapter<T> adapter)
    : LinearLayer<T>(std::move(name)), a_(std::move(adapter)) {
  a_.delta.validate();
  if (a_.delta.fan_in() != a_.fan_in() || a_.delta.fan_out() != a_.fan_out()) {
    throw ShapeError(this->name() + ": adapter shape differs from base");
  }
}

template <typename T>
LayerSpec LoraLinear<T>::spec() const {
  LayerSpec s;
  s.kind = LinearKind::kLora;
  s.rank = a_.delta.rank();
  if (const auto* q = std::get_if<quant::QuantizedMatrix>(&a_.base)) s.bits = q->bits();
  return s;
}

template <typename T>
Grid<T> LoraLinear<T>::base_forward(const Grid<T>& x) const {
  if (const auto* q = std::get_if<quant::QuantizedMatrix>(&a_.base)) return quant_rows(*q, x);
  return matmul_nt(x, std::get<Grid<T>>(a_.base));
}

template <typename T>
Grid<T> LoraLinear<T>::forward(const Grid<T>& x) const {
  this->check_input(x);
  Grid<T> y = base_forward(x);
  if (!a_.merged) linalg::add_scaled(y, lowrank_apply(a_.delta, x));
  return y;
}

template <typename T>
Grid<T> LoraLinear<T>::backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const {
  Grid<T> dx = a_.quantized_base() ? quant_backward<T>(std::get<quant::QuantizedMatrix>(a_.base), dy)
                                   : matmul(dy, std::get<Grid<T>>(a_.base));
  if (!a_.merged) linalg::add_scaled(dx, lowrank_backward(a_.delta, this->name(), x, dy, sink, 1.0));
  return dx;
}

template <typename T>
void LoraLinear<T>::parameters(std::vector<ParamRef<T>>& out) {
  if (auto* w = std::get_if<Grid<T>>(&a_.base)) out.push_back({this->name() + ".base", w, false});
  if (!a_.merged) {
    out.push_back({this->name() + ".down", &a_.delta.down, true});
    out.push_back({this->name() + ".up", &a_.delta.up, true});
  }
}

template <typename T>
std::size_t LoraLinear<T>::param_count() const noexcept {
  return a_.fan_in() * a_.fan_out() + (a_.merged ? 0 : a_.delta.param_count());
}

template <typename T>
double LoraLinear<T>::flops_per_row() const noexcept {
  return 2.0 * static_cast<double>(param_count());
}

template <typename T>
Grid<T> LoraLinear<T>::effective_weight() const {
  Grid<T> w = a_.quantized_base() ? dequantized<T>(std::get<quant::QuantizedMatrix>(a_.base))
                                  : std::get<Grid<T>>(a_.base);
  if (!a_.merged) linalg::add_scaled(w, a_.delta.product());
  return w;
}

template <typename T>
std::unique_ptr<LinearLayer<T>> LoraLinear<T>::clone() const {
  return std::make_unique<LoraLinear<T>>(*this);
}

template <typename T>
std::unique_ptr<LinearLayer<float>> LoraLinear<T>::to_float() const {
  lowrank::LoraAdapter<float> a{cast_base<float>(a_.base), a_.delta.template cast<float>(), a_.merged};
  return std::make_unique<LoraLinear<float>>(this->name(), std::move(a));
}

template <typename T>
std::unique_ptr<LinearLayer<double>> LoraLinear<T>::to_double() const {
  lowrank::LoraAdapter<double> a{cast_base<double>(a_.base), a_.delta.template cast<double>(), a_.merged};
  return std::make_unique<LoraLinear<double>>(this->name(), std::move(a));
}

// ---------------------------------------------------------------- blend

template <typename T>
BlendLinear<T>::BlendLinear(std::string name, lowrank::BlendLayer<T> layer, std::size_t step)
    : LinearLayer<T>(std::move(name)), b_(std::move(layer)), step_(step) {
  b_.delta.validate();
  if (b_.delta.fan_in() != b_.base.cols() || b_.delta.fan_out() != b_.base.rows()) {
    throw ShapeError(this->name() + ": blend path shape differs from base");
  }
}

template <typename T>
LayerSpec BlendLinear<T>::spec() const {
  LayerSpec s;
  s.kind = LinearKind::kBlend;
  s.rank = b_.delta.rank();
  s.start_alpha = b_.start_alpha;
  s.end_step = b_.end_step;
  return s;
}

template <typename T>
Grid<T> BlendLinear<T>::forward(const Grid<T>& x) const {
  this->check_input(x);
  const double alpha = b_.alpha(step_);
  if (alpha == 0.0) return lowrank_apply(b_.delta, x);
  Grid<T> dense = matmul_nt(x, b_.base);
  if (alpha == 1.0) return dense;
  const Grid<T> low = lowrank_apply(b_.delta, x);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    dense.data()[i] = static_cast<T>(alpha * static_cast<double>(dense.data()[i]) +
                                     (1.0 - alpha) * static_cast<double>(low.data()[i]));
  }
  return dense;
}

template <typename T>
Grid<T> BlendLinear<T>::backward(const Grid<T>& x, const Grid<T>& dy, GradSink<T>& sink) const {
  const double alpha = b_.alpha(step_);
  Grid<T> dx = lowrank_backward(b_.delta, this->name(), x, dy, sink, 1.0 - alpha);
  if (alpha != 0.0) {
    Grid<T> dd = matmul(dy, b_.base);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx.data()[i] = static_cast<T>(static_cast<double>(dx.data()[i]) + alpha * static_cast<double>(dd.data()[i]));
    }
  }
  return dx;
}

template <typename T>
void BlendLinear<T>::parameters(std::vector<ParamRef<T>>& out) {
  out.push_back({this->name() + ".base", &b_.base, false});
  out.push_back({this->name() + ".down", &b_.delta.down, true});
  out.push_back({this->name() + ".up", &b_.delta.up, true});
}

template <typename T>
double BlendLinear<T>::flops_per_row() const noexcept {
  const double alpha = b_.alpha(step_);
  double f = 0.0;
  if (alpha != 0.0) f += 2.0 * static_cast<double>(b_.base.size());
  if (alpha != 1.0) f += 2.0 * static_cast<double>(b_.delta.param_count());
  return f;
}

template <typename T>
Grid<T> BlendLinear<T>::effective_weight() const {
  const double alpha = b_.alpha(step_);
  Grid<T> w = b_.base;
  const Grid<T> low = b_.delta.product();
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.data()[i] = static_cast<T>(alpha * static_cast<double>(w.data()[i]) + (1.0 - alpha) * static_cast<double>(low.data()[i]));
  }
  return w;
}

template <typename T>
std::unique_ptr<LinearLayer<T>> BlendLinear<T>::clone() const {
  return std::make_unique<BlendLinear<T>>(*this);
}

template <typename T>
std::unique_ptr<LinearLayer<float>> BlendLinear<T>::to_float() const {
  lowrank::BlendLayer<float> b{b_.base.template cast<float>(), b_.delta.template cast<float>(), b_.start_alpha, b_.end_step};
  return std::make_unique<BlendLinear<float>>(this->name(), std::move(b), step_);
}

template <typename T>
std::unique_ptr<LinearLayer<double>> BlendLinear<T>::to_double() const {
  lowrank::BlendLayer<double> b{b_.base.template cast<double>(), b_.delta.template cast<double>(), b_.start_alpha, b_.end_step};
  return std::make_unique<BlendLinear<double>>(this->name(), std::move(b), step_);
}

// ---------------------------------------------------------------- factory

template <typename T>
std::unique_ptr<LinearLayer<T>> make_linear(const std::string& name, const LayerSpec& spec, std::size_t fan_out,
                                            std::size_t fan_in, std::uint64_t seed, const Grid<T>* base) {
  spec.validate(fan_out, fan_in, name);
  auto dense = [&] {
    if (base != nullptr) {
      if (base->rows() != fan_out || base->cols() != fan_in) throw ShapeError(name + ": base weight shape mismatch");
      return *base;
    }
    return linalg::seeded_random<T>(fan_out, fan_in, linalg::derive_seed(seed, 0), linalg::Gaussian{0.02});
  };
  auto fresh_factors = [&] {
    return lowrank::LowRankFactors<T>{
        linalg::seeded_random<T>(spec.rank, fan_in, linalg::derive_seed(seed, 1),
                                 linalg::Gaussian{1.0 / std::sqrt(static_cast<double>(fan_in))}),
        linalg::seeded_random<T>(fan_out, spec.rank, linalg::derive_seed(seed, 2), linalg::Gaussian{0.02})};
  };
  switch (spec.kind) {
    case LinearKind::kDense:
      return std::make_unique<DenseLinear<T>>(name, dense());
    case LinearKind::kLowRank:
      return std::make_unique<LowRankLinear<T>>(name, fresh_factors());
    case LinearKind::kQuantized:
      return std::make_unique<QuantLinear<T>>(name, quant::quantize_rows(dense().template cast<float>(), spec.bits));
    case LinearKind::kLora: {
      lowrank::BaseWeight<T> b = dense();
      if (spec.bits != 0) b = quant::quantize_rows(std::get<Grid<T>>(b).template cast<float>(), spec.bits);
      return std::make_unique<LoraLinear<T>>(name, lowrank::make_lora<T>(std::move(b), spec.rank, linalg::derive_seed(seed, 3)));
    }
    case LinearKind::kBlend:
      return std::make_unique<BlendLinear<T>>(
          name, lowrank::BlendLayer<T>{dense(), fresh_factors(), spec.start_alpha, spec.end_step});
  }
  throw ConfigError(name + ": unknown layer kind");
}

#define LRLM_INSTANTIATE(T)                                                                                   \
  template struct GradSink<T>;                                                                                \
  template class LinearLayer<T>;                                                                              \
  template class DenseLinear<T>;                                                                              \
  template class LowRankLinear<T>;                                                                            \
  template class QuantLinear<T>;                                                                              \
  template class LoraLinear<T>;                                                                               \
  template class BlendLinear<T>;                                                                              \
  template std::unique_ptr<LinearLayer<T>> make_linear(const std::string&, const LayerSpec&, std::size_t,      \
                                                       std::size_t, std::uint64_t, const Grid<T>*);

LRLM_INSTANTIATE(float)
LRLM_INSTANTIATE(double)
#undef LRLM_INSTANTIATE

}  // namespace lrlm::transformer
