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

#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rollback/checkpoint.hpp"

namespace rollback::cli {
namespace {

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int precision = 1; precision <= 17; ++precision) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", precision, v);
    if (std::stod(shorter) == v) return shorter;
  }
  return buf;
}

std::string sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<KeyDef> build_schema() {
  const DatasetSpec d;
  const NetworkConfig n;
  const Strategy s;
  const TrainConfig t;
  const PretrainConfig p;
  using K = KeyType;
  auto z = [](std::size_t v) { return std::to_string(v); };
  return {
      {"data.source_classes", K::kInt, z(d.source_classes), "pre-training classes"},
      {"data.source_samples_per_class", K::kInt, z(d.source_samples_per_class), "samples per source class"},
      {"data.train_ids", K::kInt, z(d.train_ids), "target training identities"},
      {"data.train_samples_per_id", K::kInt, z(d.train_samples_per_id), "samples per training identity"},
      {"data.test_ids", K::kInt, z(d.test_ids), "target test identities"},
      {"data.query_per_id", K::kInt, z(d.query_per_id), "query samples per test identity"},
      {"data.gallery_per_id", K::kInt, z(d.gallery_per_id), "gallery samples per test identity"},
      {"data.channels", K::kInt, z(d.channels), "image channels"},
      {"data.height", K::kInt, z(d.height), "image height"},
      {"data.width", K::kInt, z(d.width), "image width"},
      {"data.shift_range", K::kInt, z(d.shift_range), "max translation in pixels"},
      {"data.brightness_jitter", K::kReal, real(d.brightness_jitter), "brightness and contrast jitter"},
      {"data.noise_sigma", K::kReal, real(d.noise_sigma), "additive pixel noise"},
      {"data.occlusion_prob", K::kReal, real(d.occlusion_prob), "probability of a random occluder"},
      {"data.texture_amplitude", K::kReal, real(d.texture_amplitude), "identity texture amplitude"},
      {"data.level_spread", K::kReal, real(d.level_spread), "spread of region intensity levels"},
      {"data.stripe_amplitude", K::kReal, real(d.stripe_amplitude), "target-domain sensor stripe amplitude"},
      {"data.seed", K::kInt, std::to_string(d.seed), "generator seed"},
      {"data.dir", K::kString, "data", "dataset directory (gen writes, others read)"},

      {"net.num_blocks", K::kInt, z(n.num_blocks), "convolutional blocks N"},
      {"net.widths", K::kIntList, sizes(n.widths), "channels per block"},
      {"net.convs_per_block", K::kInt, z(n.convs_per_block), "conv layers per block"},
      {"net.embedding_width", K::kInt, z(n.embedding_width), "classifier embedding width"},

      {"strategy.name", K::kString, "rollback", "rollback | baseline | base_cy | fc_warmup | remain_block=i"},
      {"strategy.periods", K::kInt, z(s.periods), "periods M"},
      {"strategy.epochs_per_period", K::kInt, z(s.epochs_per_period), "epochs per period E"},
      {"strategy.decay_every", K::kInt, z(s.decay_every), "lr step decay interval within a period"},
      {"strategy.decay_factor", K::kReal, real(s.decay_factor), "lr step decay factor"},
      {"strategy.warmup_epochs", K::kInt, z(s.warmup_epochs), "fc_warmup warm-up epochs"},
      {"lr.extractor", K::kReal, real(s.extractor_lr), "fresh and rolled-back block lr"},
      {"lr.classifier", K::kReal, real(s.classifier_lr), "classifier lr in the first period"},
      {"lr.retained", K::kReal, real(s.retained_lr), "retained block lr in later periods"},
      {"lr.refine_classifier", K::kReal, real(s.refine_classifier_lr), "classifier lr in later periods"},

      {"train.batch_size", K::kInt, z(t.batch_size), "mini-batch size B"},
      {"train.seed", K::kInt, std::to_string(t.seed), "run seed"},
      {"train.flip", K::kBool, t.flip ? "true" : "false", "horizontal flip augmentation"},
      {"train.eval_every", K::kInt, z(t.eval_every), "evaluate every k epochs (0: off)"},
      {"train.flip_fusion", K::kBool, t.flip_fusion ? "true" : "false", "fuse flipped features at evaluation"},
      {"sgd.momentum", K::kReal, real(t.sgd.momentum), "Nesterov momentum"},
      {"sgd.weight_decay", K::kReal, real(t.sgd.weight_decay), "coupled weight decay"},

      {"pretrain.epochs", K::kInt, z(p.epochs), "source pre-training epochs"},
      {"pretrain.lr", K::kReal, real(p.learning_rate), "source pre-training lr"},
      {"pretrain.holdout_every", K::kInt, z(p.holdout_every), "hold out every k-th source sample"},

      {"run.pretrained", K::kString, "", "pre-trained checkpoint (run, ablation)"},
      {"run.out", K::kString, "out", "output directory"},
      {"eval.checkpoint", K::kString, "", "checkpoint to evaluate"},
      {"ablation.seeds", K::kIntList, "1,2,3,4,5", "seeds for the ablation sweep"},
      {"ablation.strategies", K::kStringList, "rollback,baseline,base_cy", "strategies for the ablation sweep"},
  };
}

std::string trim(std::string s) {
  auto space = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), space));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), space).base(), s.end());
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

bool parse_int(const std::string& s, std::int64_t& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && p == end;
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no" || s == "off") {
    out = false;
    return true;
  }
  return false;
}

/// Normalized text of `value` for `type`; throws on malformed input.
std::string normalize(const KeyDef& def, const std::string& value) {
  auto bad = [&](const std::string& why) -> ValidationError {
    return ValidationError("config key '" + def.name + "' expects " + type_name(def.type) + ", got '" + value +
                           "'" + (why.empty() ? "" : " (" + why + ")"));
  };
  switch (def.type) {
    case KeyType::kInt: {
      std::int64_t v = 0;
      if (!parse_int(value, v)) throw bad("");
      if (v < 0) throw bad("must be >= 0");
      return std::to_string(v);
    }
    case KeyType::kReal: {
      double v = 0;
      if (!parse_real(value, v)) throw bad("");
      return real(v);
    }
    case KeyType::kBool: {
      bool v = false;
      if (!parse_bool(value, v)) throw bad("use true or false");
      return v ? "true" : "false";
    }
    case KeyType::kString:
      return value;
    case KeyType::kIntList: {
      std::string out;
      for (const auto& item : split_list(value)) {
        std::int64_t v = 0;
        if (!parse_int(item, v) || v < 0) throw bad("comma-separated non-negative integers");
        out += (out.empty() ? "" : ",") + std::to_string(v);
      }
      if (out.empty()) throw bad("empty list");
      return out;
    }
    case KeyType::kStringList: {
      std::string out;
      for (const auto& item : split_list(value)) {
        if (item.empty()) throw bad("empty list item");
        out += (out.empty() ? "" : ",") + item;
      }
      if (out.empty()) throw bad("empty list");
      return out;
    }
  }
  return value;
}

std::size_t index_of(const std::string& key) {
  const auto& s = schema();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i].name == key) return i;
  throw ValidationError("unknown config key '" + key + "'; valid keys: " + valid_keys());
}

}  // namespace

const std::vector<KeyDef>& schema() {
  static const std::vector<KeyDef> s = build_schema();
  return s;
}

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::kInt: return "int";
    case KeyType::kReal: return "real";
    case KeyType::kBool: return "bool";
    case KeyType::kString: return "string";
    case KeyType::kIntList: return "int list";
    case KeyType::kStringList: return "string list";
  }
  return "?";
}

std::string valid_keys() {
  std::string out;
  for (const auto& k : schema()) out += (out.empty() ? "" : ", ") + k.name;
  return out;
}

Config::Config() {
  for (const auto& k : schema()) values_.push_back(k.default_value);
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(number) + ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set(key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

void Config::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& value) {
  const std::size_t i = index_of(key);
  values_[i] = normalize(schema()[i], value);
}

bool Config::is_default(const std::string& key) const {
  const std::size_t i = index_of(key);
  return values_[i] == schema()[i].default_value;
}

const std::string& Config::raw(const std::string& key) const { return values_[index_of(key)]; }

std::int64_t Config::get_int(const std::string& key) const { return std::stoll(raw(key)); }

std::size_t Config::get_size(const std::string& key) const { return static_cast<std::size_t>(get_int(key)); }

double Config::get_real(const std::string& key) const { return std::stod(raw(key)); }

bool Config::get_bool(const std::string& key) const { return raw(key) == "true"; }

std::string Config::get_string(const std::string& key) const { return raw(key); }

std::vector<std::size_t> Config::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(raw(key))) out.push_back(static_cast<std::size_t>(std::stoull(item)));
  return out;
}

std::vector<std::string> Config::get_strings(const std::string& key) const { return split_list(raw(key)); }

std::string Config::effective() const {
  std::string out;
  for (std::size_t i = 0; i < values_.size(); ++i) out += schema()[i].name + " = " + values_[i] + "\n";
  return out;
}

std::string Config::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(effective())));
  return buf;
}

DatasetSpec Config::dataset_spec() const {
  DatasetSpec d;
  d.source_classes = get_size("data.source_classes");
  d.source_samples_per_class = get_size("data.source_samples_per_class");
  d.train_ids = get_size("data.train_ids");
  d.train_samples_per_id = get_size("data.train_samples_per_id");
  d.test_ids = get_size("data.test_ids");
  d.query_per_id = get_size("data.query_per_id");
  d.gallery_per_id = get_size("data.gallery_per_id");
  d.channels = get_size("data.channels");
  d.height = get_size("data.height");
  d.width = get_size("data.width");
  d.shift_range = get_size("data.shift_range");
  d.brightness_jitter = get_real("data.brightness_jitter");
  d.noise_sigma = get_real("data.noise_sigma");
  d.occlusion_prob = get_real("data.occlusion_prob");
  d.texture_amplitude = get_real("data.texture_amplitude");
  d.level_spread = get_real("data.level_spread");
  d.stripe_amplitude = get_real("data.stripe_amplitude");
  d.seed = static_cast<std::uint64_t>(get_int("data.seed"));
  d.validate();
  return d;
}

NetworkConfig Config::network() const {
  NetworkConfig n;
  n.num_blocks = get_size("net.num_blocks");
  n.widths = get_sizes("net.widths");
  n.convs_per_block = get_size("net.convs_per_block");
  n.embedding_width = get_size("net.embedding_width");
  n.input = {get_size("data.channels"), get_size("data.height"), get_size("data.width")};
  n.num_classes = get_size("data.train_ids");
  n.validate();
  return n;
}

Strategy Config::strategy() const { return strategy(get_string("strategy.name")); }

Strategy Config::strategy(const std::string& name) const {
  Strategy s = Strategy::parse(name);
  s.periods = get_size("strategy.periods");
  s.epochs_per_period = get_size("strategy.epochs_per_period");
  s.decay_every = get_size("strategy.decay_every");
  s.decay_factor = get_real("strategy.decay_factor");
  s.warmup_epochs = get_size("strategy.warmup_epochs");
  s.extractor_lr = get_real("lr.extractor");
  s.classifier_lr = get_real("lr.classifier");
  s.retained_lr = get_real("lr.retained");
  s.refine_classifier_lr = get_real("lr.refine_classifier");
  s.validate(get_size("net.num_blocks"));
  return s;
}

TrainConfig Config::train() const {
  TrainConfig t;
  t.batch_size = get_size("train.batch_size");
  t.seed = static_cast<std::uint64_t>(get_int("train.seed"));
  t.flip = get_bool("train.flip");
  t.eval_every = get_size("train.eval_every");
  t.flip_fusion = get_bool("train.flip_fusion");
  t.sgd.momentum = get_real("sgd.momentum");
  t.sgd.weight_decay = get_real("sgd.weight_decay");
  t.validate();
  return t;
}

PretrainConfig Config::pretrain() const {
  PretrainConfig p;
  p.epochs = get_size("pretrain.epochs");
  p.learning_rate = get_real("pretrain.lr");
  p.holdout_every = get_size("pretrain.holdout_every");
  p.train = train();
  p.train.eval_every = 0;
  return p;
}

}  // namespace rollback::cli
