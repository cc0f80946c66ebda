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

// Refine-tuning schedules. A schedule is a list of periods; at the start of
// each period the extractor blocks listed as rolled back are restored to the
// pre-trained snapshot, learning rates are re-assigned per group, and the
// momentum buffers are cleared. The classifier is never restored.
//
// Strategies:
//   rollback        period 1 fine-tunes everything; period p >= 2 keeps blocks
//                   1..p-1 and restores blocks p..N.
//   baseline        one long period, decay only inside the first E epochs.
//   base_cy         rollback's learning-rate timeline with no restore.
//   fc_warmup       classifier-only warm-up with frozen blocks, then baseline.
//   remain_block=i  one fine-tune period, then restore every block except i.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rollback/checkpoint.hpp"
#include "rollback/model.hpp"
#include "rollback/optimizer.hpp"

namespace rollback {

enum class StrategyKind { kRollback, kBaseline, kBaseCy, kFcWarmup, kRemainBlock };

struct Strategy {
  StrategyKind kind = StrategyKind::kRollback;
  std::size_t periods = 4;  // M
  std::size_t epochs_per_period = 40;
  std::size_t decay_every = 20;
  double decay_factor = 0.1;
  std::size_t warmup_epochs = 20;
  std::size_t remain_block = 0;  // 1-based, remain_block only

  double extractor_lr = 0.01;         // fresh / rolled-back blocks
  double classifier_lr = 0.1;         // classifier in the first period
  double retained_lr = 0.001;         // retained blocks in periods p >= 2
  double refine_classifier_lr = 0.01; // classifier in periods p >= 2

  static Strategy parse(std::string_view text) {
    Strategy s;
    if (text == "rollback") {
      s.kind = StrategyKind::kRollback;
    } else if (text == "baseline") {
      s.kind = StrategyKind::kBaseline;
    } else if (text == "base_cy") {
      s.kind = StrategyKind::kBaseCy;
    } else if (text == "fc_warmup") {
      s.kind = StrategyKind::kFcWarmup;
    } else if (text.starts_with("remain_block=")) {
      s.kind = StrategyKind::kRemainBlock;
      const auto digits = text.substr(13);
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
      if (ec != std::errc{} || p != digits.data() + digits.size() || v == 0) {
        throw ValidationError("remain_block needs a positive block index, got '" +
                              std::string(text) + "'");
      }
      s.remain_block = v;
    } else {
      throw ValidationError("unknown strategy '" + std::string(text) +
                            "' (expected rollback, baseline, base_cy, fc_warmup, remain_block=i)");
    }
    return s;
  }

  std::string name() const {
    switch (kind) {
      case StrategyKind::kRollback: return "rollback";
      case StrategyKind::kBaseline: return "baseline";
      case StrategyKind::kBaseCy: return "base_cy";
      case StrategyKind::kFcWarmup: return "fc_warmup";
      case StrategyKind::kRemainBlock: return "remain_block=" + std::to_string(remain_block);
    }
    return "unknown";
  }

  void validate(std::size_t num_blocks) const {
    if (periods < 1) throw ValidationError("strategy needs at least one period");
    if (epochs_per_period < 1) throw ValidationError("epochs_per_period must be >= 1");
    if (decay_every < 1) throw ValidationError("decay_every must be >= 1");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ValidationError("decay factor must lie in (0, 1]");
    for (double lr : {extractor_lr, classifier_lr, retained_lr, refine_classifier_lr})
      if (!(lr > 0.0)) throw ValidationError("learning rates must be positive");
    if (kind == StrategyKind::kRemainBlock && (remain_block < 1 || remain_block > num_blocks)) {
      throw ValidationError("remain_block index " + std::to_string(remain_block) +
                            " outside [1, " + std::to_string(num_blocks) + "]");
    }
    if (kind == StrategyKind::kFcWarmup && warmup_epochs < 1) {
      throw ValidationError("fc_warmup needs warmup_epochs >= 1");
    }
  }
};

struct PeriodPlan {
  std::size_t index = 1;  // p, 1-based
  std::string strategy;
  std::vector<std::size_t> retained;     // blocks keeping trained weights (R)
  std::vector<std::size_t> rolled_back;  // {1..N} \ R for refine periods
  bool restore = false;                  // whether rolled_back is actually restored
  bool classifier_retained = false;      // FC carried over from the previous period
  std::vector<std::pair<std::string, double>> learning_rates;  // group id -> lr
  std::vector<std::string> frozen_groups;
  std::size_t epochs = 40;
  std::size_t decay_every = 20;
  double decay_factor = 0.1;
  std::size_t decay_until = 40;  // decay boundaries b < decay_until apply
  bool reset_momentum = false;

  double lr_of(const std::string& group) const {
    for (const auto& [g, lr] : learning_rates)
      if (g == group) return lr;
    throw ValidationError("plan has no learning rate for group '" + group + "'");
  }
  bool frozen(const std::string& group) const {
    return std::find(frozen_groups.begin(), frozen_groups.end(), group) != frozen_groups.end();
  }
};

namespace detail {

inline PeriodPlan fine_tune_plan(const Strategy& s, std::size_t num_blocks, std::size_t epochs,
                                 std::size_t decay_until) {
  PeriodPlan plan;
  plan.strategy = s.name();
  for (std::size_t b = 1; b <= num_blocks; ++b) plan.learning_rates.emplace_back(block_group_id(b), s.extractor_lr);
  plan.learning_rates.emplace_back(kClassifierGroup, s.classifier_lr);
  plan.epochs = epochs;
  plan.decay_every = s.decay_every;
  plan.decay_factor = s.decay_factor;
  plan.decay_until = decay_until;
  return plan;
}

inline PeriodPlan refine_plan(const Strategy& s, std::size_t num_blocks, std::size_t index,
                              const std::vector<std::size_t>& retained, bool restore) {
  PeriodPlan plan;
  plan.index = index;
  plan.strategy = s.name();
  plan.retained = retained;
  for (std::size_t b = 1; b <= num_blocks; ++b) {
    const bool kept = std::find(retained.begin(), retained.end(), b) != retained.end();
    if (!kept) plan.rolled_back.push_back(b);
    plan.learning_rates.emplace_back(block_group_id(b), kept ? s.retained_lr : s.extractor_lr);
  }
  plan.learning_rates.emplace_back(kClassifierGroup, s.refine_classifier_lr);
  plan.restore = restore;
  plan.classifier_retained = true;
  plan.epochs = s.epochs_per_period;
  plan.decay_every = s.decay_every;
  plan.decay_factor = s.decay_factor;
  plan.decay_until = s.epochs_per_period;
  plan.reset_momentum = true;
  return plan;
}

}  // namespace detail

/// Expands a strategy into its ordered period plans for an N-block network.
inline std::vector<PeriodPlan> build_schedule(const Strategy& s, std::size_t num_blocks) {
  s.validate(num_blocks);
  const std::size_t E = s.epochs_per_period;
  std::vector<PeriodPlan> plans;
  switch (s.kind) {
    case StrategyKind::kRollback:
    case StrategyKind::kBaseCy: {
      plans.push_back(detail::fine_tune_plan(s, num_blocks, E, E));
      const bool restore = s.kind == StrategyKind::kRollback;
      for (std::size_t p = 2; p <= s.periods; ++p) {
        std::vector<std::size_t> retained;
        for (std::size_t b = 1; b < p && b <= num_blocks; ++b) retained.push_back(b);
        plans.push_back(detail::refine_plan(s, num_blocks, p, retained, restore));
      }
      break;
    }
    case StrategyKind::kBaseline:
      plans.push_back(detail::fine_tune_plan(s, num_blocks, s.periods * E, E));
      break;
    case StrategyKind::kFcWarmup: {
      PeriodPlan warm = detail::fine_tune_plan(s, num_blocks, s.warmup_epochs, 0);
      for (std::size_t b = 1; b <= num_blocks; ++b) warm.frozen_groups.push_back(block_group_id(b));
      plans.push_back(std::move(warm));
      PeriodPlan main = detail::fine_tune_plan(s, num_blocks, s.periods * E, E);
      main.index = 2;
      main.classifier_retained = true;
      main.reset_momentum = true;
      plans.push_back(std::move(main));
      break;
    }
    case StrategyKind::kRemainBlock:
      plans.push_back(detail::fine_tune_plan(s, num_blocks, E, E));
      plans.push_back(detail::refine_plan(s, num_blocks, 2, {s.remain_block}, true));
      break;
  }
  return plans;
}

/// Table-style label of the carried-over set: "none", "B1+FC", "B2+FC", ...
inline std::string retained_label(const PeriodPlan& plan) {
  std::string out;
  for (auto b : plan.retained) {
    if (!out.empty()) out += '+';
    out += "B" + std::to_string(b);
  }
  if (plan.classifier_retained) {
    if (!out.empty()) out += '+';
    out += "FC";
  }
  return out.empty() ? "none" : out;
}

inline std::string format_lr(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// One manifest line per period:
/// period=<p> strategy=<s> retained=<label> rolled_back=<blocks> restore=<yes|no>
/// lr=<group:lr,...> frozen=<groups> epochs=<E> decay=<every>x<factor>@<until>
/// reset_momentum=<yes|no>
inline std::string schedule_manifest(const std::vector<PeriodPlan>& plans) {
  std::ostringstream os;
  for (const auto& plan : plans) {
    os << "period=" << plan.index << " strategy=" << plan.strategy
       << " retained=" << retained_label(plan) << " rolled_back=";
    if (plan.rolled_back.empty()) os << "none";
    for (std::size_t i = 0; i < plan.rolled_back.size(); ++i) os << (i ? "+" : "") << 'B' << plan.rolled_back[i];
    os << " restore=" << (plan.restore ? "yes" : "no") << " lr=";
    for (std::size_t i = 0; i < plan.learning_rates.size(); ++i)
      os << (i ? "," : "") << plan.learning_rates[i].first << ':' << format_lr(plan.learning_rates[i].second);
    os << " frozen=";
    if (plan.frozen_groups.empty()) os << "none";
    for (std::size_t i = 0; i < plan.frozen_groups.size(); ++i) os << (i ? "," : "") << plan.frozen_groups[i];
    os << " epochs=" << plan.epochs << " decay=" << plan.decay_every << 'x' << format_lr(plan.decay_factor)
       << '@' << plan.decay_until << " reset_momentum=" << (plan.reset_momentum ? "yes" : "no") << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Snapshot store
// ---------------------------------------------------------------------------

/// Immutable deep copy of the pre-trained extractor blocks (weights and
/// batch-norm running statistics). Holds no classifier state.
template <std::floating_point T>
class SnapshotStore {
 public:
  struct Group {
    std::string id;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
  };

  static SnapshotStore capture(const NetworkParams<T>& params) {
    SnapshotStore s;
    for (const auto& g : state_groups(params)) {
      if (g.id == kClassifierGroup) continue;
      Group copy{g.id, {}};
      for (const auto& t : g.tensors) copy.tensors.emplace_back(t.name, *t.tensor);
      s.groups_.push_back(std::move(copy));
    }
    return s;
  }

  const std::vector<Group>& groups() const noexcept { return groups_; }
  std::size_t size() const noexcept { return groups_.size(); }

  const Group& group(const std::string& id) const {
    for (const auto& g : groups_)
      if (g.id == id) return g;
    throw ValidationError("snapshot has no group '" + id + "'");
  }

  bool contains(const std::string& id) const {
    return std::any_of(groups_.begin(), groups_.end(), [&](const Group& g) { return g.id == id; });
  }

  /// FNV-1a over every stored value, for before/after mutation checks.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& g : groups_) {
      h = fnv1a(g.id, h);
      for (const auto& [name, t] : g.tensors) {
        h = fnv1a(name, h);
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(T)), h);
      }
    }
    return h;
  }

 private:
  SnapshotStore() = default;
  std::vector<Group> groups_;
};

template <std::floating_point T>
SnapshotStore<T> snapshot(const NetworkParams<T>& params) {
  return SnapshotStore<T>::capture(params);
}

/// Restores the listed blocks (1-based) from the snapshot. Every other block
/// and the classifier are untouched.
template <std::floating_point T>
void restore_blocks(NetworkParams<T>& params, const SnapshotStore<T>& snap,
                    const std::vector<std::size_t>& blocks) {
  auto groups = state_groups(params);
  // Validate everything first so a mismatch leaves params unchanged.
  for (auto b : blocks) {
    if (b < 1 || b > params.num_blocks()) {
      throw ValidationError("block index " + std::to_string(b) + " outside [1, " +
                            std::to_string(params.num_blocks()) + "]");
    }
    const auto& live = groups[b - 1];
    const auto& saved = snap.group(live.id);
    if (saved.tensors.size() != live.tensors.size()) {
      throw ShapeError("snapshot group " + live.id + " has " + std::to_string(saved.tensors.size()) +
                       " tensors, network has " + std::to_string(live.tensors.size()));
    }
    for (std::size_t i = 0; i < live.tensors.size(); ++i) {
      if (saved.tensors[i].first != live.tensors[i].name ||
          saved.tensors[i].second.shape() != live.tensors[i].tensor->shape()) {
        throw ShapeError("snapshot tensor " + live.id + "/" + saved.tensors[i].first + " " +
                         shape_str(saved.tensors[i].second.shape()) + " does not match network tensor " +
                         live.tensors[i].name + " " + shape_str(live.tensors[i].tensor->shape()));
      }
    }
  }
  for (auto b : blocks) {
    const auto& live = groups[b - 1];
    const auto& saved = snap.group(live.id);
    for (std::size_t i = 0; i < live.tensors.size(); ++i) {
      const Tensor<T>& src = saved.tensors[i].second;
      std::copy(src.values().begin(), src.values().end(), live.tensors[i].tensor->values().begin());
    }
  }
}

/// Rollback entering period p (p >= 2): blocks i < p keep their trained
/// values, blocks i >= p are restored from the snapshot, the classifier is
/// kept.
template <std::floating_point T>
void apply_rollback(NetworkParams<T>& params, const SnapshotStore<T>& snap, std::size_t period) {
  if (period < 2) throw ValidationError("rollback applies from period 2 on, got " + std::to_string(period));
  std::vector<std::size_t> blocks;
  for (std::size_t b = period; b <= params.num_blocks(); ++b) blocks.push_back(b);
  restore_blocks(params, snap, blocks);
}

/// Enters `plan`: restores rolled-back blocks when the plan demands it, sets
/// per-group learning rates and frozen flags, clears momentum when asked and
/// opens a fresh decay window.
template <std::floating_point T>
void period_boundary(NetworkParams<T>& params, NesterovSgd<T>& optimizer, const SnapshotStore<T>& snap,
                     const PeriodPlan& plan) {
  if (plan.restore) restore_blocks(params, snap, plan.rolled_back);
  for (const auto& [group, lr] : plan.learning_rates) optimizer.set_group_lr(group, lr);
  for (const auto& g : optimizer.groups()) optimizer.set_group_frozen(g.id, plan.frozen(g.id));
  if (plan.reset_momentum) optimizer.reset_momentum();
  optimizer.begin_period();
}

/// Applies the learning-rate decay due at the start of `epoch_in_period`.
template <std::floating_point T>
bool enter_epoch(NesterovSgd<T>& optimizer, const PeriodPlan& plan, std::size_t epoch_in_period) {
  if (epoch_in_period >= plan.decay_until) return false;
  return optimizer.step_decay(epoch_in_period, plan.decay_every, plan.decay_factor);
}

struct LrRow {
  std::size_t epoch;   // global, 1-based
  std::size_t period;  // 1-based
  std::vector<double> lrs;  // Block1..BlockN, FC
  bool operator==(const LrRow&) const = default;
};

/// Per-epoch learning-rate table obtained by driving an optimizer through the
/// schedule exactly as the trainer does, without any training.
template <std::floating_point T>
std::vector<LrRow> lr_timeline(const NetworkParams<T>& params, const std::vector<PeriodPlan>& plans,
                               SgdOptions options = {}) {
  NetworkParams<T> scratch = params;
  const auto snap = snapshot(scratch);
  NesterovSgd<T> opt(scratch, 0.01, options);
  std::vector<LrRow> rows;
  std::size_t epoch = 0;
  for (const auto& plan : plans) {
    period_boundary(scratch, opt, snap, plan);
    for (std::size_t e = 0; e < plan.epochs; ++e) {
      enter_epoch(opt, plan, e);
      LrRow row{++epoch, plan.index, {}};
      for (const auto& g : opt.groups()) row.lrs.push_back(g.learning_rate);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace rollback
