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
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "rollback/autodiff.hpp"
#include "rollback/container.hpp"
#include "rollback/model.hpp"

namespace rollback {

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Per-group optimizer state. `frozen` groups are skipped entirely by step().
template <std::floating_point T>
struct GroupState {
  std::string id;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool frozen = false;
  std::vector<std::string> names;   // tensor names, aligned with buffers
  std::vector<Tensor<T>> buffers;  // momentum buffers
};

/// SGD with Nesterov momentum and coupled weight decay over named groups:
///   g' = g + wd * theta
///   v  = mu * v - lr * g'
///   theta += mu * v - lr * g'
template <std::floating_point T>
class NesterovSgd {
 public:
  template <typename TensorRef>
  NesterovSgd(const std::vector<TensorGroup<TensorRef>>& groups, double learning_rate,
              SgdOptions options = {}) {
    check_hyper(learning_rate, options);
    for (const auto& g : groups) {
      GroupState<T> s;
      s.id = g.id;
      s.learning_rate = learning_rate;
      s.momentum = options.momentum;
      s.weight_decay = options.weight_decay;
      for (const auto& t : g.tensors) {
        if (!t.trainable) continue;
        s.names.push_back(t.name);
        s.buffers.push_back(Tensor<T>::zeros_like(*t.tensor));
      }
      groups_.push_back(std::move(s));
    }
  }

  NesterovSgd(const NetworkParams<T>& params, double learning_rate, SgdOptions options = {})
      : NesterovSgd(parameter_groups(params), learning_rate, options) {}

  const std::vector<GroupState<T>>& groups() const noexcept { return groups_; }

  const GroupState<T>& group(const std::string& id) const { return groups_[index_of(id)]; }

  double group_lr(const std::string& id) const { return group(id).learning_rate; }

  void set_group_lr(const std::string& id, double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
      throw ValidationError("learning rate for " + id + " must be positive, got " +
                            std::to_string(lr));
    }
    groups_[index_of(id)].learning_rate = lr;
  }

  void set_group_frozen(const std::string& id, bool frozen) { groups_[index_of(id)].frozen = frozen; }

  /// Zeroes every momentum buffer; learning rates are unchanged.
  void reset_momentum() {
    for (auto& g : groups_)
      for (auto& b : g.buffers) b.fill(T{0});
  }

  /// Starts a new decay window; boundaries counted from here on are fresh.
  void begin_period() { last_decay_epoch_.reset(); }

  /// Multiplies every group's learning rate by `factor` when
  /// `epoch_in_period` is a positive multiple of `decay_every`. Returns true
  /// when a decay was applied. A boundary may be applied only once.
  bool step_decay(std::size_t epoch_in_period, std::size_t decay_every, double factor) {
    if (decay_every < 1) throw ValidationError("decay_every must be >= 1");
    if (!(factor > 0.0 && factor <= 1.0)) throw ValidationError("decay factor must lie in (0, 1]");
    if (epoch_in_period == 0 || epoch_in_period % decay_every != 0) return false;
    if (last_decay_epoch_ && *last_decay_epoch_ == epoch_in_period) {
      throw ContractError("learning-rate decay already applied at period epoch " +
                          std::to_string(epoch_in_period));
    }
    for (auto& g : groups_) g.learning_rate *= factor;
    last_decay_epoch_ = epoch_in_period;
    return true;
  }

  /// One update over `groups`, which must list the same groups and trainable
  /// tensors (in order) the optimizer was built from.
  template <typename TensorRef>
  void step(const std::vector<TensorGroup<TensorRef>>& groups, const Gradients<T>& grads) {
    if (groups.size() != groups_.size()) {
      throw ContractError("optimizer tracks " + std::to_string(groups_.size()) + " groups, got " +
                          std::to_string(groups.size()));
    }
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& live = groups[gi];
      GroupState<T>& state = groups_[gi];
      if (live.id != state.id) throw ContractError("group order mismatch at " + live.id);
      if (state.frozen) continue;
      std::size_t bi = 0;
      for (const auto& nt : live.tensors) {
        if (!nt.trainable) continue;
        if (bi >= state.buffers.size()) throw ContractError("unexpected tensor " + live.id + "/" + nt.name);
        const Tensor<T>* g = grads.find(*nt.tensor);
        if (!g) throw ContractError("missing gradient for " + live.id + "/" + nt.name);
        update(*nt.tensor, *g, state.buffers[bi], state);
        ++bi;
      }
    }
  }

  void step(NetworkParams<T>& params, const Gradients<T>& grads) { step(parameter_groups(params), grads); }

  /// Appends optimizer state (hyper-parameters as metadata, buffers as
  /// entries named opt/<group>/<tensor>) to a container.
  void save(Container& c) const {
    for (const auto& g : groups_) {
      const std::string p = "opt." + g.id + ".";
      c.meta.emplace_back(p + "lr", format_double(g.learning_rate));
      c.meta.emplace_back(p + "momentum", format_double(g.momentum));
      c.meta.emplace_back(p + "weight_decay", format_double(g.weight_decay));
      c.meta.emplace_back(p + "frozen", g.frozen ? "1" : "0");
      for (std::size_t i = 0; i < g.buffers.size(); ++i)
        c.entries.push_back(to_entry("opt/" + g.id + "/" + g.names[i], g.buffers[i]));
    }
  }

  void load(const Container& c) {
    for (auto& g : groups_) {
      const std::string p = "opt." + g.id + ".";
      g.learning_rate = std::stod(c.meta_at(p + "lr"));
      g.momentum = std::stod(c.meta_at(p + "momentum"));
      g.weight_decay = std::stod(c.meta_at(p + "weight_decay"));
      g.frozen = c.meta_at(p + "frozen") == "1";
      for (std::size_t i = 0; i < g.buffers.size(); ++i)
        assign_entry(g.buffers[i], c.at("opt/" + g.id + "/" + g.names[i]));
    }
    last_decay_epoch_.reset();
  }

 private:
  static void check_hyper(double lr, const SgdOptions& o) {
    if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
    if (!(o.weight_decay >= 0.0)) throw ValidationError("weight decay must be >= 0");
  }

  static std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < groups_.size(); ++i)
      if (groups_[i].id == id) return i;
    throw ValidationError("unknown parameter group '" + id + "'");
  }

  static void update(Tensor<T>& theta, const Tensor<T>& grad, Tensor<T>& velocity,
                     const GroupState<T>& s) {
    if (grad.shape() != theta.shape()) {
      throw ShapeError("gradient shape " + shape_str(grad.shape()) + " vs parameter " +
                       shape_str(theta.shape()));
    }
    const T lr = static_cast<T>(s.learning_rate);
    const T mu = static_cast<T>(s.momentum);
    const T wd = static_cast<T>(s.weight_decay);
    T* th = theta.data();
    T* v = velocity.data();
    const T* g = grad.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const T gd = g[i] + wd * th[i];
      v[i] = mu * v[i] - lr * gd;
      th[i] += mu * v[i] - lr * gd;
    }
  }

  std::vector<GroupState<T>> groups_;
  std::optional<std::size_t> last_decay_epoch_;
};

}  // namespace rollback
