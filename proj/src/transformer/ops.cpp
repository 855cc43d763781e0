// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/transformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lrlm/common/error.hpp"
#include "lrlm/kernels/kernels.hpp"
#include "lrlm/linalg/ops.hpp"

namespace lrlm::transformer {

template <typename T>
std::vector<T> rmsnorm(std::span<const T> x, std::span<const T> gain, double eps) {
  if (x.size() != gain.size()) throw ShapeError("rmsnorm: gain length differs from input");
  if (x.empty()) throw ShapeError("rmsnorm: empty input");
  const double ms = kernels::dot(x.data(), x.data(), x.size()) / static_cast<double>(x.size());
  const double r = 1.0 / std::sqrt(ms + eps);
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(static_cast<double>(x[i]) * r * static_cast<double>(gain[i]));
  return y;
}

namespace {

template <typename T>
void rotate_pairs(T* v, std::size_t d, std::size_t position, double base, bool inverse) {
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double theta = static_cast<double>(position) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double c = std::cos(theta);
    const double s = inverse ? -std::sin(theta) : std::sin(theta);
    const double a = v[2 * i];
    const double b = v[2 * i + 1];
    v[2 * i] = static_cast<T>(a * c - b * s);
    v[2 * i + 1] = static_cast<T>(a * s + b * c);
  }
}

}  // namespace

template <typename T>
std::vector<T> rope_apply(std::span<const T> v, std::size_t position, double base) {
  if (v.size() % 2 != 0) throw ShapeError("rope_apply: head dimension " + std::to_string(v.size()) + " is odd");
  std::vector<T> out(v.begin(), v.end());
  rotate_pairs(out.data(), out.size(), position, base, false);
  return out;
}

template <typename T>
void softmax_inplace(std::span<T> row) {
  if (row.empty()) return;
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (auto& x : row) {
    const double e = std::exp(static_cast<double>(x) - peak);
    x = static_cast<T>(e);
    total += e;
  }
  for (auto& x : row) x = static_cast<T>(static_cast<double>(x) / total);
}

namespace detail {

template <typename T>
void head_probs_row(const T* qi, const T* k, std::size_t stride, std::size_t i, std::size_t d, T* scores, T* probs) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> row(i + 1);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j <= i; ++j) {
    row[j] = static_cast<double>(static_cast<T>(kernels::dot(qi, k + j * stride, d) * scale));
    peak = std::max(peak, row[j]);
  }
  double total = 0.0;
  for (std::size_t j = 0; j <= i; ++j) {
    if (scores != nullptr) scores[j] = static_cast<T>(row[j]);
    row[j] = std::exp(row[j] - peak);
    total += row[j];
  }
  for (std::size_t j = 0; j <= i; ++j) probs[j] = static_cast<T>(row[j] / total);
}

template <typename T>
void head_mix_row(const T* probs, const T* v, std::size_t stride, std::size_t i, std::size_t d, T* out) {
  std::fill(out, out + d, T{0});
  for (std::size_t j = 0; j <= i; ++j) kernels::axpy(probs[j], v + j * stride, out, d);
}

template <typename T>
void head_probs(const T* q, const T* k, std::size_t stride, std::size_t l, std::size_t d, T* scores, T* probs) {
  std::fill(probs, probs + l * l, T{0});
  if (scores != nullptr) std::fill(scores, scores + l * l, T{0});
  for (std::size_t i = 0; i < l; ++i) {
    head_probs_row(q + i * stride, k, stride, i, d, scores == nullptr ? nullptr : scores + i * l, probs + i * l);
  }
}

template <typename T>
void head_mix(const T* probs, const T* v, std::size_t stride, std::size_t l, std::size_t d, T* out) {
  for (std::size_t i = 0; i < l; ++i) head_mix_row(probs + i * l, v, stride, i, d, out + i * stride);
}

template <typename T>
Grid<T> rmsnorm_rows(const Grid<T>& x, std::span<const T> gain) {
  if (gain.size() != x.cols()) throw ShapeError("rmsnorm: gain length differs from width");
  Grid<T> y(x.rows(), x.cols());
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const T* xi = x.data() + i * n;
    const double r = 1.0 / std::sqrt(kernels::dot(xi, xi, n) / static_cast<double>(n) + kRmsNormEps);
    T* yi = y.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) yi[j] = static_cast<T>(static_cast<double>(xi[j]) * r * static_cast<double>(gain[j]));
  }
  return y;
}

template <typename T>
Grid<T> rmsnorm_rows_backward(const Grid<T>& x, std::span<const T> gain, const Grid<T>& dy, T* dgain) {
  const std::size_t n = x.cols();
  Grid<T> dx(x.rows(), n);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const T* xi = x.data() + i * n;
    const T* dyi = dy.data() + i * n;
    const double r = 1.0 / std::sqrt(kernels::dot(xi, xi, n) / static_cast<double>(n) + kRmsNormEps);
    double proj = 0.0;
    for (std::size_t j = 0; j < n; ++j) proj += static_cast<double>(dyi[j]) * static_cast<double>(gain[j]) * static_cast<double>(xi[j]);
    const double coeff = r * r * r * proj / static_cast<double>(n);
    T* dxi = dx.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      dxi[j] = static_cast<T>(r * static_cast<double>(gain[j]) * static_cast<double>(dyi[j]) - coeff * static_cast<double>(xi[j]));
      if (dgain != nullptr) dgain[j] = static_cast<T>(static_cast<double>(dgain[j]) + static_cast<double>(dyi[j]) * static_cast<double>(xi[j]) * r);
    }
  }
  return dx;
}

template <typename T>
void rope_rows(Grid<T>& x, std::size_t heads, std::size_t first_position, double base, bool inverse) {
  const std::size_t d = x.cols() / heads;
  if (d % 2 != 0) throw ShapeError("rope: head dimension " + std::to_string(d) + " is odd");
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t h = 0; h < heads; ++h) rotate_pairs(x.data() + i * x.cols() + h * d, d, first_position + i, base, inverse);
  }
}

}  // namespace detail

template <typename T>
Grid<T> attention(const Grid<T>& q, const Grid<T>& k, const Grid<T>& v, bool causal) {
  if (!q.same_shape(k) || !q.same_shape(v)) throw ShapeError("attention: q, k, v shapes differ");
  const std::size_t l = q.rows();
  const std::size_t d = q.cols();
  Grid<T> out(l, d);
  if (causal) {
    std::vector<T> probs(l * l);
    detail::head_probs(q.data(), k.data(), d, l, d, static_cast<T*>(nullptr), probs.data());
    detail::head_mix(probs.data(), v.data(), d, l, d, out.data());
    return out;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<T> row(l);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < l; ++j) row[j] = static_cast<T>(kernels::dot(q.data() + i * d, k.data() + j * d, d) * scale);
    softmax_inplace(std::span<T>(row));
    for (std::size_t j = 0; j < l; ++j) kernels::axpy(row[j], v.data() + j * d, out.data() + i * d, d);
  }
  return out;
}

template <typename T>
std::vector<T> ffn_forward(std::span<const T> x, const Grid<T>& w_up, const Grid<T>& w_gate, const Grid<T>& w_down) {
  if (w_up.cols() != x.size() || w_gate.cols() != x.size() || w_up.rows() != w_gate.rows() ||
      w_down.cols() != w_up.rows()) {
    throw ShapeError("ffn_forward: weight shapes do not chain");
  }
  const std::vector<T> u = linalg::matvec(w_up, x);
  const std::vector<T> g = linalg::matvec(w_gate, x);
  std::vector<T> h(u.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = static_cast<T>(static_cast<double>(u[i]) * silu(static_cast<double>(g[i])));
  return linalg::matvec(w_down, std::span<const T>(h));
}

namespace {

template <typename T>
double row_log_sum_exp(const T* row, std::size_t n, double& peak) {
  peak = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, static_cast<double>(row[j]));
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(static_cast<double>(row[j]) - peak);
  return peak + std::log(total);
}

template <typename T>
void check_targets(const Grid<T>& logits, std::span<const int> targets) {
  if (targets.size() != logits.rows()) throw ShapeError("cross_entropy: target count differs from logits rows");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols()) throw ConfigError("cross_entropy: target id out of range");
  }
}

}  // namespace

template <typename T>
double cross_entropy_loss(const Grid<T>& logits, std::span<const int> targets) {
  check_targets(logits, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double peak;
    const double lse = row_log_sum_exp(logits.data() + i * logits.cols(), logits.cols(), peak);
    total += lse - static_cast<double>(logits(i, static_cast<std::size_t>(targets[i])));
  }
  return logits.rows() == 0 ? 0.0 : total / static_cast<double>(logits.rows());
}

template <typename T>
double cross_entropy_with_grad(const Grid<T>& logits, std::span<const int> targets, Grid<T>& dlogits) {
  check_targets(logits, targets);
  dlogits = Grid<T>(logits.rows(), logits.cols());
  const double inv_rows = 1.0 / static_cast<double>(std::max<std::size_t>(logits.rows(), 1));
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const T* row = logits.data() + i * logits.cols();
    double peak;
    const double lse = row_log_sum_exp(row, logits.cols(), peak);
    const auto target = static_cast<std::size_t>(targets[i]);
    total += lse - static_cast<double>(row[target]);
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - lse);
      dlogits(i, j) = static_cast<T>((p - (j == target ? 1.0 : 0.0)) * inv_rows);
    }
  }
  return total * inv_rows;
}

#define LRLM_INSTANTIATE(T)                                                                                   \
  template std::vector<T> rmsnorm(std::span<const T>, std::span<const T>, double);                            \
  template std::vector<T> rope_apply(std::span<const T>, std::size_t, double);                                \
  template Grid<T> attention(const Grid<T>&, const Grid<T>&, const Grid<T>&, bool);                           \
  template std::vector<T> ffn_forward(std::span<const T>, const Grid<T>&, const Grid<T>&, const Grid<T>&);    \
  template double cross_entropy_loss(const Grid<T>&, std::span<const int>);                                   \
  template double cross_entropy_with_grad(const Grid<T>&, std::span<const int>, Grid<T>&);                    \
  template void softmax_inplace(std::span<T>);                                                                \
  template Grid<T> detail::rmsnorm_rows(const Grid<T>&, std::span<const T>);                                  \
  template Grid<T> detail::rmsnorm_rows_backward(const Grid<T>&, std::span<const T>, const Grid<T>&, T*);      \
  template void detail::rope_rows(Grid<T>&, std::size_t, std::size_t, double, bool);                         \
  template void detail::head_probs(const T*, const T*, std::size_t, std::size_t, std::size_t, T*, T*);        \
  template void detail::head_mix(const T*, const T*, std::size_t, std::size_t, std::size_t, T*);         \
  template void detail::head_probs_row(const T*, const T*, std::size_t, std::size_t, std::size_t, T*, T*);    \
  template void detail::head_mix_row(const T*, const T*, std::size_t, std::size_t, std::size_t, T*);

LRLM_INSTANTIATE(float)
LRLM_INSTANTIATE(double)
#undef LRLM_INSTANTIATE

}  // namespace lrlm::transformer
