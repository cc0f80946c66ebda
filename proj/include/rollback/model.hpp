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

// Block-partitioned classification network: N convolutional blocks, global
// average pooling, and a classifier head
//   embedding FC -> batch norm -> leaky ReLU -> class FC.
// Each block is the unit the rollback scheduler restores; the classifier is a
// separate group that is never restored.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "rollback/autodiff.hpp"
#include "rollback/tensor.hpp"

namespace rollback {

struct NetworkConfig {
  std::size_t num_blocks = 5;
  std::vector<std::size_t> widths{8, 16, 32, 64, 128};
  std::size_t convs_per_block = 2;
  std::size_t kernel = 3;
  Shape input{1, 32, 16};  // C x H x W
  std::size_t embedding_width = 64;
  std::size_t num_classes = 40;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  double leaky_slope = 0.1;

  std::size_t feature_dim() const { return widths.back(); }
  BatchNormOptions bn_options() const { return {bn_momentum, bn_epsilon}; }

  void validate() const {
    auto fail = [](const std::string& what) { throw ValidationError("network config: " + what); };
    if (num_blocks < 2) fail("num_blocks must be >= 2");
    if (widths.size() != num_blocks) fail("widths must list one entry per block");
    for (auto w : widths)
      if (w == 0) fail("block widths must be positive");
    if (convs_per_block < 1) fail("convs_per_block must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) fail("kernel must be a positive odd size");
    if (input.size() != 3) fail("input must be C x H x W");
    for (auto d : input)
      if (d == 0) fail("input dimensions must be positive");
    if (embedding_width < 1) fail("embedding_width must be >= 1");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must lie in (0, 1]");
    if (!(bn_epsilon > 0.0)) fail("bn_epsilon must be positive");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) fail("leaky_slope must lie in [0, 1)");
    // Every downsampling block halves H and W (rounding up).
    std::size_t h = input[1], w = input[2];
    for (std::size_t b = 1; b < num_blocks; ++b) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    if (h < 1 || w < 1) fail("input too small for the number of blocks");
  }
};

struct LayerSpec {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride;
  std::size_t padding;
};

struct BlockSpec {
  std::size_t index;  // 1-based
  std::vector<LayerSpec> layers;
  bool downsamples;
  std::vector<std::string> parameter_names;
};

inline std::string block_group_id(std::size_t index) { return "Block" + std::to_string(index); }
inline constexpr const char* kClassifierGroup = "FC";

/// Block layout of `config`: block 1 keeps resolution, later blocks open with
/// a stride-2 convolution.
inline std::vector<BlockSpec> block_specs(const NetworkConfig& config) {
  config.validate();
  std::vector<BlockSpec> specs;
  std::size_t in = config.input[0];
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    BlockSpec spec{b + 1, {}, b > 0, {}};
    const std::size_t out = config.widths[b];
    for (std::size_t l = 0; l < config.convs_per_block; ++l) {
      const std::size_t stride = (l == 0 && b > 0) ? 2 : 1;
      spec.layers.push_back({l == 0 ? in : out, out, config.kernel, stride, config.kernel / 2});
      const std::string n = std::to_string(l + 1);
      for (const char* suffix : {".weight", ".bias"}) spec.parameter_names.push_back("conv" + n + suffix);
      for (const char* suffix : {".gamma", ".beta"}) spec.parameter_names.push_back("bn" + n + suffix);
    }
    in = out;
    specs.push_back(std::move(spec));
  }
  return specs;
}

template <std::floating_point T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;

  explicit BatchNormParams(std::size_t channels = 1)
      : gamma(Shape{channels}, T{1}), beta(Shape{channels}, T{0}),
        stats{Tensor<T>(Shape{channels}, T{0}), Tensor<T>(Shape{channels}, T{1})} {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }
};

template <std::floating_point T>
struct ConvLayer {
  LayerSpec spec;
  Tensor<T> weight;  // F x C x k x k
  Tensor<T> bias;    // F
  BatchNormParams<T> bn;
};

template <std::floating_point T>
struct Block {
  std::size_t index;  // 1-based
  std::vector<ConvLayer<T>> layers;
};

template <std::floating_point T>
struct Classifier {
  Tensor<T> embed_weight;  // feature_dim x embedding_width
  Tensor<T> embed_bias;
  BatchNormParams<T> bn;
  Tensor<T> class_weight;  // embedding_width x L
  Tensor<T> class_bias;
};

template <std::floating_point T>
struct NetworkParams {
  NetworkConfig config;
  std::vector<Block<T>> blocks;
  Classifier<T> classifier;

  std::size_t num_blocks() const { return blocks.size(); }
  std::size_t num_classes() const { return config.num_classes; }
  std::size_t feature_dim() const { return config.feature_dim(); }
};

/// A named tensor inside a group. `trainable` is false for running statistics.
template <typename TensorRef>
struct NamedTensor {
  std::string name;
  TensorRef* tensor;
  bool trainable;
};

template <typename TensorRef>
struct TensorGroup {
  std::string id;
  std::vector<NamedTensor<TensorRef>> tensors;
};

namespace detail {

template <typename TensorRef, typename BN>
void append_bn(std::vector<NamedTensor<TensorRef>>& out, const std::string& prefix, BN& bn) {
  out.push_back({prefix + ".gamma", &bn.gamma, true});
  out.push_back({prefix + ".beta", &bn.beta, true});
  out.push_back({prefix + ".running_mean", &bn.stats.running_mean, false});
  out.push_back({prefix + ".running_var", &bn.stats.running_var, false});
}

template <typename TensorRef, typename BlockT>
TensorGroup<TensorRef> block_group(BlockT& block) {
  TensorGroup<TensorRef> g{block_group_id(block.index), {}};
  for (std::size_t l = 0; l < block.layers.size(); ++l) {
    auto& layer = block.layers[l];
    const std::string n = std::to_string(l + 1);
    g.tensors.push_back({"conv" + n + ".weight", &layer.weight, true});
    g.tensors.push_back({"conv" + n + ".bias", &layer.bias, true});
    append_bn<TensorRef>(g.tensors, "bn" + n, layer.bn);
  }
  return g;
}

template <typename TensorRef, typename ClassifierT>
TensorGroup<TensorRef> classifier_group(ClassifierT& c) {
  TensorGroup<TensorRef> g{kClassifierGroup, {}};
  g.tensors.push_back({"embed.weight", &c.embed_weight, true});
  g.tensors.push_back({"embed.bias", &c.embed_bias, true});
  append_bn<TensorRef>(g.tensors, "bn", c.bn);
  g.tensors.push_back({"logits.weight", &c.class_weight, true});
  g.tensors.push_back({"logits.bias", &c.class_bias, true});
  return g;
}

template <typename TensorRef, typename Params>
std::vector<TensorGroup<TensorRef>> all_groups(Params& params, bool include_buffers) {
  std::vector<TensorGroup<TensorRef>> groups;
  for (auto& block : params.blocks) groups.push_back(block_group<TensorRef>(block));
  groups.push_back(classifier_group<TensorRef>(params.classifier));
  if (!include_buffers) {
    for (auto& g : groups) std::erase_if(g.tensors, [](const auto& t) { return !t.trainable; });
  }
  return groups;
}

}  // namespace detail

/// Trainable tensors grouped as Block1..BlockN, FC. Disjoint and exhaustive.
template <std::floating_point T>
std::vector<TensorGroup<Tensor<T>>> parameter_groups(NetworkParams<T>& params) {
  return detail::all_groups<Tensor<T>>(params, false);
}
template <std::floating_point T>
std::vector<TensorGroup<const Tensor<T>>> parameter_groups(const NetworkParams<T>& params) {
  return detail::all_groups<const Tensor<T>>(params, false);
}

/// Full group state: trainable tensors plus batch-norm running statistics.
template <std::floating_point T>
std::vector<TensorGroup<Tensor<T>>> state_groups(NetworkParams<T>& params) {
  return detail::all_groups<Tensor<T>>(params, true);
}
template <std::floating_point T>
std::vector<TensorGroup<const Tensor<T>>> state_groups(const NetworkParams<T>& params) {
  return detail::all_groups<const Tensor<T>>(params, true);
}

namespace detail {

template <std::floating_point T>
Tensor<T> fan_in_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 2.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  t.set_requires_grad(true);
  return t;
}

template <std::floating_point T>
Tensor<T> trainable_zeros(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <std::floating_point T>
Classifier<T> make_classifier(const NetworkConfig& config, std::mt19937_64& rng) {
  const std::size_t d = config.feature_dim(), e = config.embedding_width, L = config.num_classes;
  Classifier<T> c{fan_in_normal<T>(Shape{d, e}, d, rng), trainable_zeros<T>(Shape{e}),
                  BatchNormParams<T>(e), fan_in_normal<T>(Shape{e, L}, e, rng, 1.0),
                  trainable_zeros<T>(Shape{L})};
  return c;
}

}  // namespace detail

/// Fan-in scaled normal initialization: N(0, 2 / fan_in) for every conv and
/// the embedding FC, N(0, 1 / fan_in) for the class FC, which feeds no
/// rectifier; zero biases; batch-norm gamma 1, beta 0, running stats (0, 1).
template <std::floating_point T>
NetworkParams<T> build_network(const NetworkConfig& config, std::uint64_t seed) {
  const auto specs = block_specs(config);
  std::mt19937_64 rng(seed);
  NetworkParams<T> params;
  params.config = config;
  for (const auto& spec : specs) {
    Block<T> block{spec.index, {}};
    for (const auto& ls : spec.layers) {
      const std::size_t fan_in = ls.in_channels * ls.kernel * ls.kernel;
      block.layers.push_back(
          {ls,
           detail::fan_in_normal<T>(Shape{ls.out_channels, ls.in_channels, ls.kernel, ls.kernel},
                                    fan_in, rng),
           detail::trainable_zeros<T>(Shape{ls.out_channels}), BatchNormParams<T>(ls.out_channels)});
    }
    params.blocks.push_back(std::move(block));
  }
  params.classifier = detail::make_classifier<T>(config, rng);
  return params;
}

/// Replaces the classifier with a freshly initialized head for `num_classes`.
/// Block tensors are left untouched.
template <std::floating_point T>
void reset_classifier(NetworkParams<T>& params, std::size_t num_classes, std::uint64_t seed) {
  NetworkConfig cfg = params.config;
  cfg.num_classes = num_classes;
  cfg.validate();
  std::mt19937_64 rng(seed);
  params.classifier = detail::make_classifier<T>(cfg, rng);
  params.config = cfg;
}

struct ForwardOptions {
  Mode mode = Mode::kEval;
  // frozen_blocks[i] marks block i+1 as frozen: its tensors enter the tape as
  // constants and its batch norms run on running statistics.
  std::vector<bool> frozen_blocks;
  bool frozen_classifier = false;

  bool block_frozen(std::size_t zero_based) const {
    return zero_based < frozen_blocks.size() && frozen_blocks[zero_based];
  }
};

namespace detail {

template <std::floating_point T, typename BN>
Var<T> apply_bn(Tape<T>& tape, Var<T> x, BN& bn, Mode mode, bool frozen,
                const BatchNormOptions& opts) {
  if (frozen) {
    return batch_norm(x, tape.constant(bn.gamma), tape.constant(bn.beta),
                      std::as_const(bn.stats), Mode::kEval, opts);
  }
  return batch_norm(x, tape.watch(bn.gamma), tape.watch(bn.beta), bn.stats, mode, opts);
}

template <std::floating_point T, typename Params>
Var<T> features_impl(Tape<T>& tape, Var<T> x, Params& params, const ForwardOptions& opts) {
  const auto& cfg = params.config;
  const Shape& sx = x.shape();
  if (sx.size() != 4 || Shape(sx.begin() + 1, sx.end()) != cfg.input) {
    throw ShapeError("network input must be [B x " + shape_str(cfg.input).substr(1) +
                     ", got " + shape_str(sx));
  }
  const T slope = static_cast<T>(cfg.leaky_slope);
  const auto bn_opts = cfg.bn_options();
  Var<T> h = x;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto& block = params.blocks[b];
    const bool frozen = opts.block_frozen(b);
    for (auto& layer : block.layers) {
      Var<T> w = frozen ? tape.constant(layer.weight) : tape.watch(layer.weight);
      Var<T> bias = frozen ? tape.constant(layer.bias) : tape.watch(layer.bias);
      h = conv2d(h, w, std::optional<Var<T>>(bias), layer.spec.stride, layer.spec.padding);
      h = apply_bn(tape, h, layer.bn, opts.mode, frozen, bn_opts);
      h = leaky_relu(h, slope);
    }
  }
  return global_avg_pool(h);
}

template <std::floating_point T, typename Params>
Var<T> classify_impl(Tape<T>& tape, Var<T> features, Params& params, const ForwardOptions& opts) {
  auto& c = params.classifier;
  const bool frozen = opts.frozen_classifier;
  auto leaf = [&](auto& t) { return frozen ? tape.constant(t) : tape.watch(t); };
  Var<T> h = add_bias(matmul(features, leaf(c.embed_weight)), leaf(c.embed_bias));
  h = apply_bn(tape, h, c.bn, opts.mode, frozen, params.config.bn_options());
  h = leaky_relu(h, static_cast<T>(params.config.leaky_slope));
  return add_bias(matmul(h, leaf(c.class_weight)), leaf(c.class_bias));
}

}  // namespace detail

/// Blocks 1..N followed by global average pooling: [B x feature_dim].
/// Train mode updates batch-norm running statistics of non-frozen blocks.
template <std::floating_point T>
Var<T> forward_features(Tape<T>& tape, Var<T> x, NetworkParams<T>& params,
                        const ForwardOptions& opts) {
  return detail::features_impl(tape, x, params, opts);
}

/// Read-only variant; running statistics are never written.
template <std::floating_point T>
Var<T> forward_features(Tape<T>& tape, Var<T> x, const NetworkParams<T>& params,
                        const ForwardOptions& opts) {
  return detail::features_impl(tape, x, params, opts);
}

template <std::floating_point T>
Var<T> classify(Tape<T>& tape, Var<T> features, NetworkParams<T>& params,
                const ForwardOptions& opts) {
  return detail::classify_impl(tape, features, params, opts);
}

template <std::floating_point T>
Var<T> classify(Tape<T>& tape, Var<T> features, const NetworkParams<T>& params,
                const ForwardOptions& opts) {
  return detail::classify_impl(tape, features, params, opts);
}

/// Pre-softmax logits [B x L].
template <std::floating_point T>
Var<T> forward_logits(Tape<T>& tape, Var<T> x, NetworkParams<T>& params,
                      const ForwardOptions& opts) {
  return classify(tape, forward_features(tape, x, params, opts), params, opts);
}

template <std::floating_point T>
Var<T> forward_logits(Tape<T>& tape, Var<T> x, const NetworkParams<T>& params,
                      const ForwardOptions& opts) {
  return classify(tape, forward_features(tape, x, params, opts), params, opts);
}

/// Eval-mode features of a batch without gradient tracking.
template <std::floating_point T>
Tensor<T> extract_batch_features(const NetworkParams<T>& params, const Tensor<T>& batch) {
  Tape<T> tape;
  ForwardOptions opts;
  opts.mode = Mode::kEval;
  opts.frozen_blocks.assign(params.blocks.size(), true);
  opts.frozen_classifier = true;
  return forward_features(tape, tape.input(batch), params, opts).value();
}

}  // namespace rollback
