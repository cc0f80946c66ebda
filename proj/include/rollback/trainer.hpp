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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "rollback/autodiff.hpp"
#include "rollback/data.hpp"
#include "rollback/metrics.hpp"
#include "rollback/model.hpp"
#include "rollback/optimizer.hpp"
#include "rollback/scheduler.hpp"

namespace rollback {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  bool flip = true;
  double flip_probability = 0.5;
  std::size_t eval_every = 0;   // epochs; 0 disables periodic evaluation
  bool eval_at_period_end = false;
  bool flip_fusion = true;      // for evaluation features
  SgdOptions sgd{};

  void validate() const {
    if (batch_size < 2) throw ValidationError("batch size must be >= 2 (batch norm)");
    if (flip_probability < 0.0 || flip_probability > 1.0) throw ValidationError("flip probability must lie in [0, 1]");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;   // global, 1-based
  std::size_t period = 0;  // 1-based
  double loss = 0.0;       // mean training loss over the epoch
  std::vector<double> lrs; // Block1..BlockN, FC
  std::optional<double> map;
  std::optional<double> rank1;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
  std::vector<std::string> groups;
  std::vector<EpochRecord> records;
  double wall_seconds = 0.0;

  /// CSV with columns epoch, period, loss, lr_block1..lr_blockN, lr_fc, map, rank1.
  void write_csv(std::ostream& os) const {
    os << "epoch,period,loss";
    for (const auto& g : groups) {
      std::string lower = g;
      for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      os << ",lr_" << lower;
    }
    os << ",map,rank1\n";
    char buf[64];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%.9g", r.loss);
      os << r.epoch << ',' << r.period << ',' << buf;
      for (double lr : r.lrs) {
        std::snprintf(buf, sizeof buf, "%.9g", lr);
        os << ',' << buf;
      }
      os << ',';
      if (r.map) {
        std::snprintf(buf, sizeof buf, "%.6f", *r.map);
        os << buf;
      }
      os << ',';
      if (r.rank1) {
        std::snprintf(buf, sizeof buf, "%.6f", *r.rank1);
        os << buf;
      }
      os << '\n';
    }
  }

  /// Records belonging to period p.
  std::vector<EpochRecord> period(std::size_t p) const {
    std::vector<EpochRecord> out;
    for (const auto& r : records)
      if (r.period == p) out.push_back(r);
    return out;
  }
};

enum class BoundaryStage { kBefore, kAfter };

template <std::floating_point T>
struct TrainHooks {
  // Called around each period_boundary; params and optimizer are in the
  // state they hold at that moment.
  std::function<void(const PeriodPlan&, BoundaryStage, const NetworkParams<T>&, const NesterovSgd<T>&)> on_boundary;
  // Optional retrieval split for periodic evaluation.
  const ImageSet<T>* query = nullptr;
  const ImageSet<T>* gallery = nullptr;
};

namespace detail {

template <std::floating_point T>
void check_labels(const ImageSet<T>& data, std::size_t classes) {
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const int y = data.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(y) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
  }
}

template <std::floating_point T>
ForwardOptions train_options(const PeriodPlan& plan, std::size_t num_blocks) {
  ForwardOptions opts;
  opts.mode = Mode::kTrain;
  opts.frozen_blocks.resize(num_blocks);
  for (std::size_t b = 0; b < num_blocks; ++b) opts.frozen_blocks[b] = plan.frozen(block_group_id(b + 1));
  opts.frozen_classifier = plan.frozen(kClassifierGroup);
  return opts;
}

}  // namespace detail

/// One SGD step on a batch; returns the batch loss.
template <std::floating_point T>
T train_step(NetworkParams<T>& params, NesterovSgd<T>& opt, const Tensor<T>& batch, std::span<const int> labels,
             const ForwardOptions& fopts) {
  Tape<T> tape;
  Var<T> logits = forward_logits(tape, tape.input(batch), params, fopts);
  Var<T> loss = softmax_cross_entropy(logits, one_hot<T>(labels, params.num_classes()));
  const T value = loss.value()[0];
  if (!std::isfinite(value)) return value;
  Gradients<T> grads = tape.backward(loss);
  opt.step(params, grads);
  return value;
}

/// Runs every plan in order: period boundary, then shuffled mini-batch
/// cross-entropy epochs. The last partial batch is dropped when it holds a
/// single sample.
template <std::floating_point T>
TrainLog run(NetworkParams<T>& params, const ImageSet<T>& train, const std::vector<PeriodPlan>& plans,
             const SnapshotStore<T>& snap, const TrainConfig& config, const TrainHooks<T>& hooks = {}) {
  config.validate();
  detail::check_labels(train, params.num_classes());
  if (train.image_shape() != params.config.input) {
    throw ShapeError("training images " + shape_str(train.image_shape()) + " do not match network input " +
                     shape_str(params.config.input));
  }
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(config.seed);
  NesterovSgd<T> opt(params, 0.01, config.sgd);
  TrainLog log;
  for (const auto& g : opt.groups()) log.groups.push_back(g.id);

  const std::size_t M = train.size();
  std::vector<std::size_t> order(M);
  std::vector<int> batch_labels;
  std::size_t global_epoch = 0;
  for (const auto& plan : plans) {
    if (hooks.on_boundary) hooks.on_boundary(plan, BoundaryStage::kBefore, params, opt);
    period_boundary(params, opt, snap, plan);
    if (hooks.on_boundary) hooks.on_boundary(plan, BoundaryStage::kAfter, params, opt);
    const ForwardOptions fopts = detail::train_options<T>(plan, params.num_blocks());

    for (std::size_t e = 0; e < plan.epochs; ++e) {
      enter_epoch(opt, plan, e);
      ++global_epoch;
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      std::size_t seen = 0, batch_index = 0;
      for (std::size_t s = 0; s < M; s += config.batch_size, ++batch_index) {
        const std::size_t end = std::min(M, s + config.batch_size);
        if (end - s < 2) continue;
        const std::span<const std::size_t> idx(order.data() + s, end - s);
        Tensor<T> batch = gather_rows(train.images, idx);
        if (config.flip) augment_flip(batch, config.flip_probability, rng);
        batch_labels.clear();
        for (auto i : idx) batch_labels.push_back(train.labels[i]);
        const T loss = train_step(params, opt, batch, batch_labels, fopts);
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(global_epoch) + ", batch " +
                             std::to_string(batch_index));
        }
        loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());
        seen += idx.size();
      }
      EpochRecord rec;
      rec.epoch = global_epoch;
      rec.period = plan.index;
      rec.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
      for (const auto& g : opt.groups()) rec.lrs.push_back(g.learning_rate);
      const bool periodic = config.eval_every > 0 && global_epoch % config.eval_every == 0;
      const bool period_end = config.eval_at_period_end && e + 1 == plan.epochs;
      if (hooks.query && hooks.gallery && (periodic || period_end)) {
        const auto report = evaluate(params, *hooks.query, *hooks.gallery, config.flip_fusion);
        rec.map = report.map();
        rec.rank1 = report.rank1();
      }
      log.records.push_back(std::move(rec));
    }
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

/// Top-1 accuracy of the classifier head in eval mode.
template <std::floating_point T>
double classification_accuracy(const NetworkParams<T>& params, const ImageSet<T>& data, std::size_t batch_size = 64) {
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < data.size(); s += batch_size) {
    const std::size_t end = std::min(data.size(), s + batch_size);
    idx.resize(end - s);
    std::iota(idx.begin(), idx.end(), s);
    Tape<T> tape;
    ForwardOptions opts;
    opts.frozen_blocks.assign(params.num_blocks(), true);
    opts.frozen_classifier = true;
    const Tensor<T> logits = forward_logits(tape, tape.input(gather_rows(data.images, idx)), params, opts).value();
    const std::size_t L = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* row = logits.data() + i * L;
      const auto best = static_cast<int>(std::max_element(row, row + L) - row);
      if (best == data.labels[idx[i]]) ++correct;
    }
  }
  return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
}

struct PretrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  double decay_factor = 0.1;
  std::size_t holdout_every = 10;  // every k-th sample per class is held out; 0 keeps all
  TrainConfig train{};
};

/// Source split for pre-training: the k-th, 2k-th, ... sample of each class
/// (in file order) goes to the held-out set.
template <std::floating_point T>
std::pair<ImageSet<T>, ImageSet<T>> split_holdout(const ImageSet<T>& data, std::size_t every) {
  std::vector<std::size_t> keep, hold;
  std::unordered_map<int, std::size_t> seen;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t n = ++seen[data.labels[i]];
    (every > 0 && n % every == 0 ? hold : keep).push_back(i);
  }
  auto take = [&](const std::vector<std::size_t>& ix) {
    ImageSet<T> out;
    if (ix.empty()) return out;
    out.images = gather_rows(data.images, ix);
    for (auto i : ix) {
      out.labels.push_back(data.labels[i]);
      out.cameras.push_back(data.cameras[i]);
    }
    return out;
  };
  return {take(keep), take(hold)};
}

struct PretrainResult {
  TrainLog log;
  double holdout_accuracy = 0.0;
};

/// Trains a freshly initialized network on the source classification task.
/// The returned network keeps the source classifier; call reset_classifier
/// before fine-tuning on another label space.
template <std::floating_point T>
NetworkParams<T> pretrain(NetworkConfig config, const ImageSet<T>& source, const PretrainConfig& pc,
                          PretrainResult* result = nullptr) {
  int max_label = -1;
  for (int y : source.labels) max_label = std::max(max_label, y);
  config.num_classes = static_cast<std::size_t>(max_label + 1);
  config.input = source.image_shape();
  NetworkParams<T> params = build_network<T>(config, pc.train.seed);
  auto [fit, held] = split_holdout(source, pc.holdout_every);
  TrainLog log;
  if (pc.epochs > 0) {
    PeriodPlan plan;
    plan.strategy = "pretrain";
    for (std::size_t b = 1; b <= params.num_blocks(); ++b) plan.learning_rates.emplace_back(block_group_id(b), pc.learning_rate);
    plan.learning_rates.emplace_back(kClassifierGroup, pc.learning_rate);
    plan.epochs = pc.epochs;
    plan.decay_every = std::max<std::size_t>(1, (pc.epochs * 3) / 4);
    plan.decay_factor = pc.decay_factor;
    plan.decay_until = pc.epochs;
    const auto snap = snapshot(params);
    log = run(params, fit, {plan}, snap, pc.train);
  }
  if (result) {
    result->log = log;
    result->holdout_accuracy = held.size() ? classification_accuracy(params, held) : 0.0;
  }
  return params;
}

}  // namespace rollback
