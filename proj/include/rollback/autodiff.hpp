// Copyright 2026 The Rollback Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rollback/kernels.hpp"
#include "rollback/tensor.hpp"

namespace rollback {

enum class Mode { kTrain, kEval };

template <std::floating_point T>
class Tape;

/// Handle to a node recorded on a Tape.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool needs_grad() const { return tape_->needs_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients produced by one backward pass, keyed by parameter identity.
template <std::floating_point T>
class Gradients {
 public:
  const Tensor<T>* find(const Tensor<T>& param) const {
    auto it = grads_.find(&param);
    return it == grads_.end() ? nullptr : &it->second;
  }

  /// Gradient of `param`, or zeros when the parameter never reached the loss.
  Tensor<T> of(const Tensor<T>& param) const {
    if (const auto* g = find(param)) return *g;
    return Tensor<T>::zeros_like(param);
  }

  /// Inserts zero gradients for parameters that were not on the tape.
  void ensure(std::span<const Tensor<T>* const> params) {
    for (const auto* p : params) {
      if (!grads_.contains(p)) grads_.emplace(p, Tensor<T>::zeros_like(*p));
    }
  }

  void accumulate(const Tensor<T>* param, const Tensor<T>& g) {
    auto [it, inserted] = grads_.try_emplace(param, g);
    if (!inserted) {
      auto dst = it->second.values();
      auto src = g.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::unordered_map<const Tensor<T>*, Tensor<T>> grads_;
};

/// Records a forward computation for reverse-mode differentiation. A tape is
/// single-use and single-threaded; independent tapes share no state.
template <std::floating_point T>
class Tape {
 public:
  // gin[k] accumulates into input k's gradient, or is null when input k
  // does not need one.
  using BackwardFn =
      std::function<void(const Tensor<T>& gout, std::span<Tensor<T>* const> gin)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned constant (inputs, targets).
  Var<T> input(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf that refers to `param` without copying. The tensor must outlive the
  /// tape's use. Gradients are tracked iff param.requires_grad().
  Var<T> watch(const Tensor<T>& param) {
    Node n;
    n.external = &param;
    n.needs_grad = param.requires_grad();
    n.source = param.requires_grad() ? &param : nullptr;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf that refers to `param` but never receives a gradient.
  Var<T> constant(const Tensor<T>& param) {
    Node n;
    n.external = &param;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    for (auto id : inputs) n.needs_grad = n.needs_grad || nodes_.at(id).needs_grad;
    n.inputs = std::move(inputs);
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Each node is visited once, in reverse
  /// recording order.
  Gradients<T> backward(Var<T> loss) {
    if (loss.value().size() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " +
                          shape_str(loss.shape()));
    }
    std::vector<Tensor<T>> grads(nodes_.size());
    grads[loss.id()] = Tensor<T>(loss.shape(), T{1});
    std::vector<Tensor<T>*> gin;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.needs_grad || grads[id].empty() || !node.backward) continue;
      gin.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t in = node.inputs[k];
        if (!nodes_[in].needs_grad) continue;
        if (grads[in].empty()) grads[in] = Tensor<T>::zeros_like(value(in));
        gin[k] = &grads[in];
      }
      node.backward(grads[id], gin);
    }
    Gradients<T> out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& node = nodes_[id];
      if (!node.source) continue;
      if (grads[id].empty()) {
        out.accumulate(node.source, Tensor<T>::zeros_like(*node.source));
      } else {
        out.accumulate(node.source, grads[id]);
      }
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    const Tensor<T>* source = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
};

namespace detail {

template <std::floating_point T>
void check_same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

template <std::floating_point T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction helpers
// ---------------------------------------------------------------------------

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out = a.value();
  detail::add_into(out, b.value());
  return a.tape().record(std::move(out), {a.id(), b.id()},
                         [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                           if (gin[0]) detail::add_into(*gin[0], g);
                           if (gin[1]) detail::add_into(*gin[1], g);
                         });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  Tape<T>* tape = &a.tape();
  const auto ia = a.id(), ib = b.id();
  return tape->record(std::move(out), {ia, ib},
                      [tape, ia, ib](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        auto gv = g.values();
                        if (gin[0]) {
                          auto dst = gin[0]->values();
                          auto other = tape->value(ib).values();
                          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gv[i] * other[i];
                        }
                        if (gin[1]) {
                          auto dst = gin[1]->values();
                          auto other = tape->value(ia).values();
                          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gv[i] * other[i];
                        }
                      });
}

template <std::floating_point T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  return x.tape().record(std::move(out), {x.id()},
                         [factor](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                           auto dst = gin[0]->values();
                           auto gv = g.values();
                           for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * gv[i];
                         });
}

template <std::floating_point T>
Var<T> sum(Var<T> x) {
  T total{0};
  for (T v : x.value().values()) total += v;
  return x.tape().record(Tensor<T>(Shape{}, std::vector<T>{total}), {x.id()},
                         [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                           const T s = g[0];
                           for (auto& v : gin[0]->values()) v += s;
                         });
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: cannot multiply " + shape_str(sa) + " by " + shape_str(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor<T> out(Shape{m, n});
  kernels::gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data());
  Tape<T>* tape = &a.tape();
  const auto ia = a.id(), ib = b.id();
  return tape->record(
      std::move(out), {ia, ib},
      [tape, ia, ib, m, n, k](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
        if (gin[0]) {
          // dA = dC * B^T, with B stored [k x n]
          kernels::gemm_nt(m, k, n, g.data(), tape->value(ib).data(), gin[0]->data());
        }
        if (gin[1]) {
          // dB = A^T * dC, with A stored [m x k]
          kernels::gemm_tn(k, n, m, tape->value(ia).data(), g.data(), gin[1]->data());
        }
      });
}

/// y[i, j] = x[i, j] + bias[j]
template <std::floating_point T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  detail::check_same_tape(x, bias);
  const Shape& sx = x.shape();
  if (sx.size() != 2 || bias.shape() != Shape{sx[1]}) {
    throw ShapeError("add_bias: " + shape_str(sx) + " with bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = sx[0], cols = sx[1];
  Tensor<T> out = x.value();
  const T* b = bias.value().data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += b[j];
  return x.tape().record(std::move(out), {x.id(), bias.id()},
                         [rows, cols](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                           if (gin[0]) detail::add_into(*gin[0], g);
                           if (gin[1]) {
                             T* gb = gin[1]->data();
                             for (std::size_t i = 0; i < rows; ++i)
                               for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

template <std::floating_point T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, std::size_t stride,
              std::size_t padding) {
  detail::check_same_tape(x, weight);
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1]) {
    throw ShapeError("conv2d: input " + shape_str(sx) + " incompatible with kernel " +
                     shape_str(sw));
  }
  if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
  if (sw[2] > sx[2] + 2 * padding || sw[3] > sx[3] + 2 * padding) {
    throw ShapeError("conv2d: kernel " + shape_str(sw) + " larger than padded input " +
                     shape_str(sx) + " (padding " + std::to_string(padding) + ")");
  }
  if (bias && bias->shape() != Shape{sw[0]}) {
    throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " for " +
                     std::to_string(sw[0]) + " filters");
  }
  kernels::ConvGeometry geo{sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], stride, padding, 0, 0};
  geo.out_h = (sx[2] + 2 * padding - sw[2]) / stride + 1;
  geo.out_w = (sx[3] + 2 * padding - sw[3]) / stride + 1;

  const std::size_t K = geo.patch(), P = geo.out_pixels(), NP = geo.columns();
  std::vector<T> cols(K * NP);
  kernels::im2col(geo, x.value().data(), cols.data());
  std::vector<T> tmp(geo.filters * NP, T{0});
  kernels::gemm_nn(geo.filters, NP, K, weight.value().data(), cols.data(), tmp.data());

  Tensor<T> out(Shape{geo.batch, geo.filters, geo.out_h, geo.out_w});
  const T* b = bias ? bias->value().data() : nullptr;
  for (std::size_t n = 0; n < geo.batch; ++n)
    for (std::size_t f = 0; f < geo.filters; ++f) {
      const T* src = tmp.data() + f * NP + n * P;
      T* dst = out.data() + (n * geo.filters + f) * P;
      const T bf = b ? b[f] : T{0};
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bf;
    }

  std::vector<std::size_t> inputs{x.id(), weight.id()};
  if (bias) {
    detail::check_same_tape(x, *bias);
    inputs.push_back(bias->id());
  }
  Tape<T>* tape = &x.tape();
  const bool track = x.needs_grad() || weight.needs_grad() || (bias && bias->needs_grad());
  if (!track) cols.clear();
  const auto iw = weight.id();
  return tape->record(
      std::move(out), std::move(inputs),
      [tape, iw, geo, cols = std::move(cols)](const Tensor<T>& g,
                                              std::span<Tensor<T>* const> gin) {
        const std::size_t K = geo.patch(), P = geo.out_pixels(), NP = geo.columns();
        std::vector<T> gtmp(geo.filters * NP);
        for (std::size_t n = 0; n < geo.batch; ++n)
          for (std::size_t f = 0; f < geo.filters; ++f) {
            const T* src = g.data() + (n * geo.filters + f) * P;
            std::copy(src, src + P, gtmp.data() + f * NP + n * P);
          }
        if (gin.size() > 2 && gin[2]) {
          T* gb = gin[2]->data();
          for (std::size_t f = 0; f < geo.filters; ++f) {
            const T* row = gtmp.data() + f * NP;
            T acc{0};
            for (std::size_t j = 0; j < NP; ++j) acc += row[j];
            gb[f] += acc;
          }
        }
        if (gin[1]) kernels::gemm_nt(geo.filters, K, NP, gtmp.data(), cols.data(), gin[1]->data());
        if (gin[0]) {
          std::vector<T> gcols(K * NP, T{0});
          kernels::gemm_tn(K, NP, geo.filters, tape->value(iw).data(), gtmp.data(), gcols.data());
          kernels::col2im(geo, gcols.data(), gin[0]->data());
        }
      });
}

/// Bias-free convolution.
template <std::floating_point T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::nullopt_t, std::size_t stride, std::size_t padding) {
  return conv2d(x, weight, std::optional<Var<T>>{}, stride, padding);
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel axis of [N x C] or [N x C x H x W]
// ---------------------------------------------------------------------------

template <std::floating_point T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

namespace detail {

template <std::floating_point T>
Var<T> batch_norm_impl(Var<T> x, Var<T> gamma, Var<T> beta, const BatchNormStats<T>& stats,
                       BatchNormStats<T>* update, Mode mode, BatchNormOptions opts) {
  detail::check_same_tape(x, gamma);
  detail::check_same_tape(x, beta);
  const Shape& sx = x.shape();
  if (sx.size() != 2 && sx.size() != 4) {
    throw ShapeError("batch_norm: expected [N x C] or [N x C x H x W], got " + shape_str(sx));
  }
  const std::size_t N = sx[0], C = sx[1];
  const std::size_t S = sx.size() == 4 ? sx[2] * sx[3] : 1;
  const Shape cshape{C};
  if (gamma.shape() != cshape || beta.shape() != cshape || stats.running_mean.shape() != cshape ||
      stats.running_var.shape() != cshape) {
    throw ShapeError("batch_norm: per-channel parameters must have shape " + shape_str(cshape));
  }
  if (mode == Mode::kTrain && N < 2) {
    throw ValidationError("batch_norm: invalid batch, train mode needs N >= 2, got N=" +
                          std::to_string(N));
  }

  const T* xv = x.value().data();
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  const std::size_t count = N * S;
  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::kTrain) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opts.epsilon));
      if (update) {
        const double unbiased = ss / static_cast<double>(count - 1);
        T& rm = update->running_mean[c];
        T& rv = update->running_var[c];
        rm = static_cast<T>((1.0 - opts.momentum) * rm + opts.momentum * mu);
        rv = static_cast<T>((1.0 - opts.momentum) * rv + opts.momentum * unbiased);
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = stats.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var[c]) +
                                                  opts.epsilon));
    }
  }

  Tensor<T> out(sx);
  Tensor<T> xhat(sx);
  T* ov = out.data();
  T* hv = xhat.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        const T h = (xv[off + i] - mean[c]) * inv_std[c];
        hv[off + i] = h;
        ov[off + i] = gv[c] * h + bv[c];
      }
    }

  Tape<T>* tape = &x.tape();
  const auto ig = gamma.id();
  const bool track = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  if (!track) xhat = Tensor<T>();
  return tape->record(
      std::move(out), {x.id(), gamma.id(), beta.id()},
      [tape, ig, mode, N, C, S, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
        const T* gv = g.data();
        const T* hv = xhat.data();
        const T* gamma = tape->value(ig).data();
        const double count = static_cast<double>(N * S);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
              sum_g += gv[off + i];
              sum_gh += static_cast<double>(gv[off + i]) * hv[off + i];
            }
          }
          if (gin[1]) (*gin[1])[c] += static_cast<T>(sum_gh);
          if (gin[2]) (*gin[2])[c] += static_cast<T>(sum_g);
          if (!gin[0]) continue;
          T* dx = gin[0]->data();
          if (mode == Mode::kTrain) {
            const T k = gamma[c] * inv_std[c];
            const T mean_g = static_cast<T>(sum_g / count);
            const T mean_gh = static_cast<T>(sum_gh / count);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * C + c) * S;
              for (std::size_t i = 0; i < S; ++i)
                dx[off + i] += k * (gv[off + i] - mean_g - hv[off + i] * mean_gh);
            }
          } else {
            const T k = gamma[c] * inv_std[c];
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * C + c) * S;
              for (std::size_t i = 0; i < S; ++i) dx[off + i] += k * gv[off + i];
            }
          }
        }
      });
}

}  // namespace detail

/// Train mode normalizes by batch statistics and folds them into `stats`;
/// eval mode normalizes by the running statistics.
template <std::floating_point T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, Mode mode,
                  BatchNormOptions opts = {}) {
  return detail::batch_norm_impl(x, gamma, beta, stats, &stats, mode, opts);
}

/// Read-only statistics: train mode still uses batch statistics but leaves
/// the running statistics untouched.
template <std::floating_point T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, const BatchNormStats<T>& stats,
                  Mode mode, BatchNormOptions opts = {}) {
  return detail::batch_norm_impl<T>(x, gamma, beta, stats, nullptr, mode, opts);
}

// ---------------------------------------------------------------------------
// Activations, pooling, loss
// ---------------------------------------------------------------------------

/// max(x, slope * x); the subgradient at 0 is 1.
template <std::floating_point T>
Var<T> leaky_relu(Var<T> x, T slope) {
  if (!(slope >= T{0} && slope < T{1})) {
    throw ValidationError("leaky_relu: slope must lie in [0, 1)");
  }
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v >= T{0} ? v : slope * v;
  Tape<T>* tape = &x.tape();
  const auto ix = x.id();
  return tape->record(std::move(out), {ix},
                      [tape, ix, slope](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        const T* xv = tape->value(ix).data();
                        T* dst = gin[0]->data();
                        const T* gv = g.data();
                        for (std::size_t i = 0; i < g.size(); ++i)
                          dst[i] += xv[i] >= T{0} ? gv[i] : slope * gv[i];
                      });
}

template <std::floating_point T>
Var<T> global_avg_pool(Var<T> x) {
  const Shape& sx = x.shape();
  if (sx.size() != 4) throw ShapeError("global_avg_pool: expected 4-D input, got " + shape_str(sx));
  const std::size_t NC = sx[0] * sx[1], S = sx[2] * sx[3];
  Tensor<T> out(Shape{sx[0], sx[1]});
  const T* xv = x.value().data();
  const T inv = T{1} / static_cast<T>(S);
  for (std::size_t r = 0; r < NC; ++r) {
    T acc{0};
    for (std::size_t i = 0; i < S; ++i) acc += xv[r * S + i];
    out[r] = acc * inv;
  }
  return x.tape().record(std::move(out), {x.id()},
                         [NC, S, inv](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                           T* dst = gin[0]->data();
                           for (std::size_t r = 0; r < NC; ++r) {
                             const T v = g[r] * inv;
                             for (std::size_t i = 0; i < S; ++i) dst[r * S + i] += v;
                           }
                         });
}

/// Row-wise softmax with max subtraction.
template <std::floating_point T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: expected 2-D logits, got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* z = logits.data() + i * cols;
    T* p = out.data() + i * cols;
    T mx = z[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, z[j]);
    T total{0};
    for (std::size_t j = 0; j < cols; ++j) {
      p[j] = std::exp(z[j] - mx);
      total += p[j];
    }
    for (std::size_t j = 0; j < cols; ++j) p[j] /= total;
  }
  return out;
}

/// Mean over rows of -y^T log softmax(z). Targets must be one-hot rows.
template <std::floating_point T>
Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& targets) {
  const Shape& sz = logits.shape();
  if (sz.size() != 2 || targets.shape() != sz) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(sz) + " vs targets " +
                     shape_str(targets.shape()));
  }
  const std::size_t N = sz[0], L = sz[1];
  if (L < 2) throw ValidationError("softmax_cross_entropy: need at least 2 classes");
  std::vector<std::size_t> label(N);
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < L; ++j) {
      const T y = targets[i * L + j];
      if (y == T{1}) {
        ++ones;
        label[i] = j;
      } else if (y != T{0}) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) {
      throw ValidationError("softmax_cross_entropy: target row " + std::to_string(i) +
                            " is not one-hot");
    }
  }
  const Tensor<T>& z = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const T* row = z.data() + i * L;
    T mx = row[0];
    for (std::size_t j = 1; j < L; ++j) mx = std::max(mx, row[j]);
    double se = 0.0;
    for (std::size_t j = 0; j < L; ++j) se += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(se) - static_cast<double>(row[label[i]] - mx);
  }
  const T loss = static_cast<T>(total / static_cast<double>(N));
  Tape<T>* tape = &logits.tape();
  const auto iz = logits.id();
  return tape->record(Tensor<T>(Shape{}, std::vector<T>{loss}), {iz},
                      [tape, iz, N, L, label = std::move(label)](
                          const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        const Tensor<T> p = softmax_rows(tape->value(iz));
                        const T s = g[0] / static_cast<T>(N);
                        T* dst = gin[0]->data();
                        for (std::size_t i = 0; i < N; ++i)
                          for (std::size_t j = 0; j < L; ++j) {
                            const T y = j == label[i] ? T{1} : T{0};
                            dst[i * L + j] += s * (p[i * L + j] - y);
                          }
                      });
}

/// One-hot encoding of integer labels in [0, classes).
template <std::floating_point T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor<T> out(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
    out[i * classes + static_cast<std::size_t>(labels[i])] = T{1};
  }
  return out;
}

}  // namespace rollback
