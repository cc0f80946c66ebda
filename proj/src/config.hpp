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

// Flat, typed key = value configuration shared by every subcommand.
//
//   # comment
//   data.train_ids = 40
//   net.widths     = 8,16,32,64,128
//
// Keys are fixed by the schema in config.cpp; unknown keys and malformed
// values are rejected with a ValidationError that lists the valid keys.

#include <cstdint>
#include <string>
#include <vector>

#include "rollback/data.hpp"
#include "rollback/model.hpp"
#include "rollback/scheduler.hpp"
#include "rollback/trainer.hpp"

namespace rollback::cli {

enum class KeyType { kInt, kReal, kBool, kString, kIntList, kStringList };

struct KeyDef {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
};

const std::vector<KeyDef>& schema();
const char* type_name(KeyType t);

class Config {
 public:
  Config();

  /// Parses `text` (file contents) on top of the current values.
  void merge_text(const std::string& text, const std::string& origin = "<config>");
  void merge_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  bool is_default(const std::string& key) const;

  const std::string& raw(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  /// Every key in schema order as "key = value" lines.
  std::string effective() const;
  /// FNV-1a of effective(), as 16 hex digits.
  std::string hash() const;

  DatasetSpec dataset_spec() const;
  NetworkConfig network() const;
  Strategy strategy() const;
  Strategy strategy(const std::string& name) const;
  TrainConfig train() const;
  PretrainConfig pretrain() const;

 private:
  std::vector<std::string> values_;  // aligned with schema()
};

std::string valid_keys();

}  // namespace rollback::cli
