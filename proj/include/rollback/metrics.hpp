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

// Retrieval evaluation: features with optional flip fusion, squared-L2
// distance matrix, CMC and mean average precision.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "rollback/data.hpp"
#include "rollback/model.hpp"

namespace rollback {

/// Row-major [rows x cols] matrix of doubles.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
};

struct FeatureSet {
  Matrix features;  // one row per sample
  std::vector<int> labels;
  std::vector<int> cameras;  // -1 when unknown

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
};

/// Eval-mode features; with flip fusion each row is F(x) + F(flip(x)).
template <std::floating_point T>
FeatureSet extract_features(const NetworkParams<T>& params, const ImageSet<T>& samples, bool flip_fusion,
                            std::size_t batch_size = 64) {
  const std::size_t M = samples.size(), D = params.feature_dim();
  FeatureSet out;
  out.features = {M, D, std::vector<double>(M * D)};
  out.labels = samples.labels;
  out.cameras = samples.cameras;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < M; start += batch_size) {
    const std::size_t end = std::min(M, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> batch = gather_rows(samples.images, idx);
    const Tensor<T> f = extract_batch_features(params, batch);
    for (std::size_t i = 0; i < f.size(); ++i) out.features.values[start * D + i] = static_cast<double>(f[i]);
    if (flip_fusion) {
      const Tensor<T> g = extract_batch_features(params, flipped(batch));
      for (std::size_t i = 0; i < g.size(); ++i) out.features.values[start * D + i] += static_cast<double>(g[i]);
    }
  }
  return out;
}

/// s[i][j] = ||q_i - g_j||^2 via ||q||^2 + ||g||^2 - 2 q.g, clamped at zero.
inline Matrix distance_matrix(const FeatureSet& query, const FeatureSet& gallery) {
  if (query.dim() != gallery.dim()) {
    throw ShapeError("distance_matrix: query dim " + std::to_string(query.dim()) + " vs gallery dim " +
                     std::to_string(gallery.dim()));
  }
  const std::size_t Q = query.size(), G = gallery.size(), D = query.dim();
  auto norms = [D](const Matrix& m) {
    std::vector<double> n(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < D; ++k) s += m(i, k) * m(i, k);
      n[i] = s;
    }
    return n;
  };
  const auto qn = norms(query.features);
  const auto gn = norms(gallery.features);
  Matrix dist{Q, G, std::vector<double>(Q * G)};
  for (std::size_t i = 0; i < Q; ++i)
    for (std::size_t j = 0; j < G; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < D; ++k) dot += query.features(i, k) * gallery.features(j, k);
      dist(i, j) = std::max(0.0, qn[i] + gn[j] - 2.0 * dot);
    }
  return dist;
}

struct RankingOptions {
  // Drop gallery items sharing both identity and camera with the query.
  bool exclude_same_camera = false;
};

namespace detail {

/// Ascending distance; ties broken by gallery index. Returns, per kept
/// position, whether the gallery item matches the query identity.
inline std::vector<bool> ranked_matches(const Matrix& dist, std::size_t q, int qlabel, int qcam,
                                        const std::vector<int>& glabels, const std::vector<int>& gcams,
                                        const RankingOptions& opts) {
  std::vector<std::size_t> order(dist.cols);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist(q, a) < dist(q, b); });
  std::vector<bool> hits;
  hits.reserve(order.size());
  for (auto j : order) {
    const bool same_id = glabels[j] == qlabel;
    if (opts.exclude_same_camera && same_id && qcam >= 0 && gcams[j] == qcam) continue;
    hits.push_back(same_id);
  }
  return hits;
}

inline void check_labels(const Matrix& dist, const std::vector<int>& ql, const std::vector<int>& gl) {
  if (dist.rows != ql.size() || dist.cols != gl.size()) {
    throw ShapeError("distance matrix " + std::to_string(dist.rows) + "x" + std::to_string(dist.cols) +
                     " does not match " + std::to_string(ql.size()) + " query and " + std::to_string(gl.size()) +
                     " gallery labels");
  }
}

inline std::vector<int> cameras_or_none(const std::vector<int>& cams, std::size_t n) {
  return cams.size() == n ? cams : std::vector<int>(n, -1);
}

}  // namespace detail

struct CmcResult {
  std::vector<std::size_t> ranks;
  std::vector<double> values;  // aligned with ranks
  std::size_t valid_queries = 0;
  std::size_t excluded_queries = 0;  // no relevant gallery item

  double at(std::size_t k) const {
    for (std::size_t i = 0; i < ranks.size(); ++i)
      if (ranks[i] == k) return values[i];
    throw ValidationError("rank " + std::to_string(k) + " was not evaluated");
  }
};

/// CMC(k): fraction of valid queries whose top-k ranked gallery contains a
/// match. Queries with no match in the gallery are excluded and counted.
inline CmcResult cmc(const Matrix& dist, const std::vector<int>& query_labels, const std::vector<int>& gallery_labels,
                     const std::vector<std::size_t>& ranks, const RankingOptions& opts = {},
                     const std::vector<int>& query_cameras = {}, const std::vector<int>& gallery_cameras = {}) {
  detail::check_labels(dist, query_labels, gallery_labels);
  for (auto k : ranks)
    if (k < 1) throw ValidationError("CMC ranks start at 1");
  const auto qc = detail::cameras_or_none(query_cameras, query_labels.size());
  const auto gc = detail::cameras_or_none(gallery_cameras, gallery_labels.size());
  CmcResult out;
  out.ranks = ranks;
  std::vector<std::size_t> counts(ranks.size(), 0);
  for (std::size_t q = 0; q < dist.rows; ++q) {
    const auto hits = detail::ranked_matches(dist, q, query_labels[q], qc[q], gallery_labels, gc, opts);
    const auto first = std::find(hits.begin(), hits.end(), true);
    if (first == hits.end()) {
      ++out.excluded_queries;
      continue;
    }
    ++out.valid_queries;
    const auto pos = static_cast<std::size_t>(first - hits.begin());  // 0-based
    for (std::size_t r = 0; r < ranks.size(); ++r)
      if (pos < ranks[r]) ++counts[r];
  }
  for (auto c : counts)
    out.values.push_back(out.valid_queries ? static_cast<double>(c) / static_cast<double>(out.valid_queries) : 0.0);
  return out;
}

struct ApResult {
  std::vector<double> per_query;  // NaN for excluded queries
  double mean_ap = 0.0;
  std::size_t valid_queries = 0;
  std::size_t excluded_queries = 0;
};

/// AP_q = (1/R_q) sum over hit positions k of precision@k; mAP averages the
/// valid queries.
inline ApResult mean_ap(const Matrix& dist, const std::vector<int>& query_labels, const std::vector<int>& gallery_labels,
                        const RankingOptions& opts = {}, const std::vector<int>& query_cameras = {},
                        const std::vector<int>& gallery_cameras = {}) {
  detail::check_labels(dist, query_labels, gallery_labels);
  const auto qc = detail::cameras_or_none(query_cameras, query_labels.size());
  const auto gc = detail::cameras_or_none(gallery_cameras, gallery_labels.size());
  ApResult out;
  double total = 0.0;
  for (std::size_t q = 0; q < dist.rows; ++q) {
    const auto hits = detail::ranked_matches(dist, q, query_labels[q], qc[q], gallery_labels, gc, opts);
    std::size_t found = 0;
    double acc = 0.0;
    for (std::size_t k = 0; k < hits.size(); ++k) {
      if (!hits[k]) continue;
      ++found;
      acc += static_cast<double>(found) / static_cast<double>(k + 1);
    }
    if (found == 0) {
      ++out.excluded_queries;
      out.per_query.push_back(std::nan(""));
      continue;
    }
    ++out.valid_queries;
    const double ap = acc / static_cast<double>(found);
    out.per_query.push_back(ap);
    total += ap;
  }
  out.mean_ap = out.valid_queries ? total / static_cast<double>(out.valid_queries) : 0.0;
  return out;
}

struct RetrievalReport {
  Matrix distances;
  CmcResult cmc;
  ApResult ap;

  double map() const { return ap.mean_ap; }
  double rank1() const { return cmc.at(1); }
};

inline const std::vector<std::size_t>& default_ranks() {
  static const std::vector<std::size_t> ranks{1, 5, 10};
  return ranks;
}

inline RetrievalReport evaluate(const FeatureSet& query, const FeatureSet& gallery, const RankingOptions& opts = {},
                                const std::vector<std::size_t>& ranks = default_ranks()) {
  RetrievalReport r;
  r.distances = distance_matrix(query, gallery);
  r.cmc = cmc(r.distances, query.labels, gallery.labels, ranks, opts, query.cameras, gallery.cameras);
  r.ap = mean_ap(r.distances, query.labels, gallery.labels, opts, query.cameras, gallery.cameras);
  return r;
}

template <std::floating_point T>
RetrievalReport evaluate(const NetworkParams<T>& params, const ImageSet<T>& query, const ImageSet<T>& gallery,
                         bool flip_fusion, const RankingOptions& opts = {}) {
  return evaluate(extract_features(params, query, flip_fusion), extract_features(params, gallery, flip_fusion), opts);
}

/// Summary CSV: header "mAP,rank-1,rank-5,rank-10" (one column per evaluated
/// rank) and one data row.
inline void write_report_csv(std::ostream& os, const RetrievalReport& r) {
  os << "mAP";
  for (auto k : r.cmc.ranks) os << ",rank-" << k;
  os << ",valid_queries,excluded_queries\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", r.map());
  os << buf;
  for (double v : r.cmc.values) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    os << ',' << buf;
  }
  os << ',' << r.cmc.valid_queries << ',' << r.cmc.excluded_queries << '\n';
}

inline void write_per_query_ap_csv(std::ostream& os, const RetrievalReport& r, const std::vector<int>& labels) {
  os << "query,label,ap\n";
  char buf[64];
  for (std::size_t q = 0; q < r.ap.per_query.size(); ++q) {
    const double ap = r.ap.per_query[q];
    if (std::isnan(ap)) {
      std::snprintf(buf, sizeof buf, "excluded");
    } else {
      std::snprintf(buf, sizeof buf, "%.6f", ap);
    }
    os << q << ',' << (q < labels.size() ? labels[q] : -1) << ',' << buf << '\n';
  }
}

}  // namespace rollback
