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

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the code under test except to evaluate a
// scalar loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "rollback/autodiff.hpp"
#include "rollback/data.hpp"

namespace rollback::testing {

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is ~0 from turning round-off into a large ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

/// Central finite differences of `loss` with respect to every entry of every
/// tensor in `wrt`, compared with the reverse-mode gradients of the same
/// loss. `loss` builds a fresh tape each call and returns the loss var.
inline GradCheck finite_difference_check(
    const std::function<Var<double>(Tape<double>&)>& loss, const std::vector<Tensor<double>*>& wrt,
    double h = 1e-5) {
  Gradients<double> analytic;
  {
    Tape<double> tape;
    analytic = tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape<double> tape;
    return loss(tape).value()[0];
  };
  GradCheck out;
  for (Tensor<double>* t : wrt) {
    const Tensor<double> g = analytic.of(*t);
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = (*t)[i];
      (*t)[i] = saved + h;
      const double up = eval();
      (*t)[i] = saved - h;
      const double down = eval();
      (*t)[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      out.max_relative_error = std::max(out.max_relative_error, relative_error(g[i], numeric));
      ++out.entries;
    }
  }
  return out;
}

template <std::floating_point T>
Tensor<T> uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

// ---------------------------------------------------------------------------
// Retrieval oracle: direct per-pair distances, full sort of (distance, index)
// pairs, linear scans for CMC and AP.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<double>> naive_distances(const std::vector<std::vector<double>>& q,
                                                        const std::vector<std::vector<double>>& g) {
  std::vector<std::vector<double>> d(q.size(), std::vector<double>(g.size()));
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < q[i].size(); ++k) {
        const double diff = q[i][k] - g[j][k];
        s += diff * diff;
      }
      d[i][j] = s;
    }
  return d;
}

struct OracleRetrieval {
  std::vector<double> cmc;  // aligned with the requested ranks
  std::vector<double> ap;   // per valid query
  double map = 0.0;
  std::size_t valid = 0;
  std::size_t excluded = 0;
};

inline OracleRetrieval brute_force_retrieval(const std::vector<std::vector<double>>& dist,
                                             const std::vector<int>& ql, const std::vector<int>& gl,
                                             const std::vector<std::size_t>& ranks) {
  OracleRetrieval out;
  std::vector<double> hits_at(ranks.size(), 0.0);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t j = 0; j < dist[i].size(); ++j) order.emplace_back(dist[i][j], j);
    std::sort(order.begin(), order.end());  // lexicographic: distance, then index
    std::size_t relevant = 0;
    for (int l : gl) relevant += l == ql[i];
    if (relevant == 0) {
      ++out.excluded;
      continue;
    }
    ++out.valid;
    std::size_t first = order.size();
    double precision_sum = 0.0;
    std::size_t found = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (gl[order[pos].second] != ql[i]) continue;
      if (first == order.size()) first = pos;
      ++found;
      precision_sum += static_cast<double>(found) / static_cast<double>(pos + 1);
    }
    for (std::size_t r = 0; r < ranks.size(); ++r)
      if (first + 1 <= ranks[r]) hits_at[r] += 1.0;
    out.ap.push_back(precision_sum / static_cast<double>(relevant));
  }
  for (double h : hits_at) out.cmc.push_back(out.valid ? h / static_cast<double>(out.valid) : 0.0);
  double s = 0.0;
  for (double a : out.ap) s += a;
  out.map = out.ap.empty() ? 0.0 : s / static_cast<double>(out.ap.size());
  return out;
}

/// Nearest-prototype identification on raw pixels: each gallery identity is
/// represented by its mean image, each query takes the label of the closest
/// mean. Returns the rank-1 rate.
inline double nearest_prototype_rank1(const Dataset& query, const Dataset& gallery) {
  std::map<int, std::pair<std::vector<double>, std::size_t>> means;
  for (const auto& s : gallery.samples) {
    auto& [sum, count] = means[s.label];
    sum.resize(s.pixels.size(), 0.0);
    for (std::size_t i = 0; i < s.pixels.size(); ++i) sum[i] += s.pixels[i];
    ++count;
  }
  std::size_t correct = 0;
  for (const auto& s : query.samples) {
    double best = INFINITY;
    int best_label = -1;
    for (const auto& [label, acc] : means) {
      double d = 0.0;
      for (std::size_t i = 0; i < s.pixels.size(); ++i) {
        const double diff = s.pixels[i] - acc.first[i] / static_cast<double>(acc.second);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_label = label;
      }
    }
    correct += best_label == s.label;
  }
  return static_cast<double>(correct) / static_cast<double>(query.samples.size());
}

}  // namespace rollback::testing
