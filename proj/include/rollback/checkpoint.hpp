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

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>

#include "rollback/container.hpp"
#include "rollback/model.hpp"
#include "rollback/optimizer.hpp"

namespace rollback {

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(item)));
    } catch (const std::exception&) {
      throw FormatError("malformed size list '" + s + "'");
    }
  }
  return out;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_config_meta(Container& c, const NetworkConfig& cfg) {
  c.meta.emplace_back("net.num_blocks", std::to_string(cfg.num_blocks));
  c.meta.emplace_back("net.widths", detail::join_sizes(cfg.widths));
  c.meta.emplace_back("net.convs_per_block", std::to_string(cfg.convs_per_block));
  c.meta.emplace_back("net.kernel", std::to_string(cfg.kernel));
  c.meta.emplace_back("net.input", detail::join_sizes(cfg.input));
  c.meta.emplace_back("net.embedding_width", std::to_string(cfg.embedding_width));
  c.meta.emplace_back("net.num_classes", std::to_string(cfg.num_classes));
  c.meta.emplace_back("net.bn_momentum", detail::format_real(cfg.bn_momentum));
  c.meta.emplace_back("net.bn_epsilon", detail::format_real(cfg.bn_epsilon));
  c.meta.emplace_back("net.leaky_slope", detail::format_real(cfg.leaky_slope));
}

inline NetworkConfig read_config_meta(const Container& c) {
  NetworkConfig cfg;
  try {
    cfg.num_blocks = std::stoull(c.meta_at("net.num_blocks"));
    cfg.widths = detail::split_sizes(c.meta_at("net.widths"));
    cfg.convs_per_block = std::stoull(c.meta_at("net.convs_per_block"));
    cfg.kernel = std::stoull(c.meta_at("net.kernel"));
    cfg.input = detail::split_sizes(c.meta_at("net.input"));
    cfg.embedding_width = std::stoull(c.meta_at("net.embedding_width"));
    cfg.num_classes = std::stoull(c.meta_at("net.num_classes"));
    cfg.bn_momentum = std::stod(c.meta_at("net.bn_momentum"));
    cfg.bn_epsilon = std::stod(c.meta_at("net.bn_epsilon"));
    cfg.leaky_slope = std::stod(c.meta_at("net.leaky_slope"));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("malformed network metadata: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

/// Parameters (including batch-norm running statistics) as container
/// entries named <group>/<tensor>.
template <std::floating_point T>
Container params_to_container(const NetworkParams<T>& params) {
  Container c;
  c.meta.emplace_back("kind", "checkpoint");
  write_config_meta(c, params.config);
  for (const auto& g : state_groups(params))
    for (const auto& t : g.tensors) c.entries.push_back(to_entry(g.id + "/" + t.name, *t.tensor));
  return c;
}

template <std::floating_point T>
NetworkParams<T> params_from_container(const Container& c) {
  NetworkParams<T> params = build_network<T>(read_config_meta(c), 0);
  for (const auto& g : state_groups(params))
    for (const auto& t : g.tensors) assign_entry(*t.tensor, c.at(g.id + "/" + t.name));
  return params;
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const NetworkParams<T>& params,
                     const NesterovSgd<T>* optimizer = nullptr) {
  Container c = params_to_container(params);
  if (optimizer) optimizer->save(c);
  save_container(path, c);
}

template <std::floating_point T>
NetworkParams<T> load_checkpoint(const std::string& path) {
  return params_from_container<T>(load_container(path));
}

/// FNV-1a over the serialized bytes of a checkpoint.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

template <std::floating_point T>
std::uint64_t params_fingerprint(const NetworkParams<T>& params) {
  std::ostringstream os(std::ios::binary);
  write_container(os, params_to_container(params));
  return fnv1a(os.str());
}

}  // namespace rollback
