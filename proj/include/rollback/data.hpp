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

// Synthetic identity datasets and their binary file format.
//
// Each identity owns a prototype image made of a low-frequency body layout
// (per-region intensities and a smooth horizontal gradient) and an
// identity-specific oriented grating texture per region. Samples are the
// prototype under nuisance transforms: integer shift, left/right view,
// brightness and contrast jitter, Gaussian noise and an optional occluding
// rectangle. The source task draws textures from a wide frequency band; the
// target task draws them from a narrow high-frequency band, so filters learned
// on the source transfer but are not tuned to the target.
//
// File layout (little-endian, see docs/FORMATS.md):
//   "RBDS" u32 version  str name  u32 C  u32 H  u32 W
//   u32 total  u32 train  u32 query  u32 gallery
//   { i32 label  u8 split  i32 camera  f32 pixels[C*H*W] } * total

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rollback/container.hpp"
#include "rollback/tensor.hpp"

namespace rollback {

enum class Split : std::uint8_t { kTrain = 0, kQuery = 1, kGallery = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "?";
}

struct Sample {
  std::vector<float> pixels;  // C x H x W, values in [0, 1]
  std::int32_t label = 0;
  Split split = Split::kTrain;
  std::int32_t camera = -1;  // -1: no camera information

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::string name;
  Shape image_shape{1, 32, 16};
  std::vector<Sample> samples;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [s](const Sample& x) { return x.split == s; }));
  }
  std::set<std::int32_t> identities() const {
    std::set<std::int32_t> ids;
    for (const auto& s : samples) ids.insert(s.label);
    return ids;
  }
  bool operator==(const Dataset&) const = default;
};

struct DatasetSpec {
  std::size_t source_classes = 50;
  std::size_t source_samples_per_class = 100;
  std::size_t train_ids = 40;
  std::size_t train_samples_per_id = 20;
  std::size_t test_ids = 40;
  std::size_t query_per_id = 2;
  std::size_t gallery_per_id = 8;
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 16;
  std::size_t shift_range = 2;
  double brightness_jitter = 0.1;
  double noise_sigma = 0.05;
  double occlusion_prob = 0.2;
  double texture_amplitude = 0.15;
  double level_spread = 0.5;  // region levels drawn from 0.5 +- spread
  double stripe_amplitude = 0.0;  // target-domain sensor stripes
  std::uint64_t seed = 7;

  void validate() const {
    auto fail = [](const std::string& what) { throw ValidationError("dataset spec: " + what); };
    if (source_classes < 2) fail("source_classes must be >= 2");
    if (source_samples_per_class < 1) fail("source_samples_per_class must be >= 1");
    if (train_ids < 2) fail("train_ids must be >= 2");
    if (train_samples_per_id < 1) fail("train_samples_per_id must be >= 1");
    if (test_ids < 1) fail("test_ids must be >= 1");
    if (query_per_id < 1) fail("each test identity needs at least one query sample");
    if (gallery_per_id < 1) fail("each test identity needs at least one gallery sample");
    if (channels < 1 || height < 4 || width < 4) fail("image must be at least 1x4x4");
    if (shift_range * 2 >= std::min(height, width)) fail("shift_range too large for the image");
    if (brightness_jitter < 0.0 || brightness_jitter > 0.5) fail("brightness_jitter must lie in [0, 0.5]");
    if (noise_sigma < 0.0) fail("noise_sigma must be >= 0");
    if (occlusion_prob < 0.0 || occlusion_prob > 1.0) fail("occlusion_prob must lie in [0, 1]");
    if (texture_amplitude < 0.0 || texture_amplitude > 0.5) fail("texture_amplitude must lie in [0, 0.5]");
    if (level_spread < 0.0 || level_spread > 0.5) fail("level_spread must lie in [0, 0.5]");
    if (stripe_amplitude < 0.0 || stripe_amplitude > 0.5) fail("stripe_amplitude must lie in [0, 0.5]");
  }
};

struct SyntheticData {
  Dataset source;   // pre-training classes, all tagged train
  Dataset train;    // target training identities [0, train_ids)
  Dataset query;    // target test identities [train_ids, train_ids + test_ids)
  Dataset gallery;  // same identities as query, distinct samples
};

namespace detail {

struct Grating {
  double amplitude, frequency, orientation, phase;
};

struct Prototype {
  std::array<double, 3> region_level;  // head, upper body, lower body
  double gradient;                     // left-right intensity slope
  std::array<Grating, 3> texture;
};

struct TextureBand {
  double min_frequency, max_frequency;
};

inline Prototype draw_prototype(std::mt19937_64& rng, const TextureBand& band, double amplitude,
                                double spread) {
  std::uniform_real_distribution<double> level(0.5 - spread, 0.5 + spread);
  std::uniform_real_distribution<double> grad(-0.15, 0.15);
  std::uniform_real_distribution<double> freq(band.min_frequency, band.max_frequency);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5 * amplitude, amplitude);
  Prototype p{};
  for (auto& l : p.region_level) l = level(rng);
  p.gradient = grad(rng);
  for (auto& t : p.texture) t = {amp(rng), freq(rng), angle(rng), phase(rng)};
  return p;
}

inline std::size_t region_of(std::size_t row, std::size_t height) {
  const double y = static_cast<double>(row) / static_cast<double>(height);
  return y < 0.2 ? 0 : (y < 0.55 ? 1 : 2);
}

/// Prototype value at continuous position (y, x) of an H x W canvas.
inline double prototype_value(const Prototype& p, double y, double x, std::size_t height,
                              std::size_t width, std::size_t channel) {
  const auto row = static_cast<std::size_t>(std::clamp(y, 0.0, static_cast<double>(height - 1)));
  const std::size_t r = region_of(row, height);
  const double xc = x / static_cast<double>(width) - 0.5;
  const Grating& g = p.texture[(r + channel) % 3];
  const double wave = g.amplitude * std::sin(2.0 * std::numbers::pi * g.frequency *
                                                 (x * std::cos(g.orientation) + y * std::sin(g.orientation)) +
                                             g.phase);
  return p.region_level[r] + p.gradient * xc + wave;
}

inline Sample render(const Prototype& proto, const DatasetSpec& spec, std::int32_t label, Split split,
                     std::mt19937_64& rng, double stripes = 0.0) {
  const std::size_t C = spec.channels, H = spec.height, W = spec.width;
  const auto s = static_cast<int>(spec.shift_range);
  std::uniform_int_distribution<int> shift(-s, s);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-spec.brightness_jitter, spec.brightness_jitter);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);

  const int dy = shift(rng), dx = shift(rng);
  const bool mirrored = unit(rng) < 0.5;
  const double offset = jitter(rng);
  const double contrast = 1.0 + jitter(rng);
  const bool occluded = unit(rng) < spec.occlusion_prob;
  std::size_t oh = 0, ow = 0, oy = 0, ox = 0;
  double ov = 0.0;
  if (occluded) {
    oh = H / 5 + static_cast<std::size_t>(unit(rng) * static_cast<double>(H / 5));
    ow = W / 4 + static_cast<std::size_t>(unit(rng) * static_cast<double>(W / 4));
    oy = static_cast<std::size_t>(unit(rng) * static_cast<double>(H - oh));
    ox = static_cast<std::size_t>(unit(rng) * static_cast<double>(W - ow));
    ov = unit(rng);
  }
  bool vertical = false;
  double freq = 0.0, phase = 0.0;
  if (stripes > 0.0) {
    vertical = unit(rng) < 0.5;
    freq = 0.15 + 0.30 * unit(rng);
    phase = 2.0 * std::numbers::pi * unit(rng);
  }

  Sample out;
  out.label = label;
  out.split = split;
  out.pixels.resize(C * H * W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const std::size_t src_w = mirrored ? W - 1 - w : w;
        const double y = std::clamp(static_cast<double>(static_cast<int>(h) - dy), 0.0, static_cast<double>(H - 1));
        const double x =
            std::clamp(static_cast<double>(static_cast<int>(src_w) - dx), 0.0, static_cast<double>(W - 1));
        double v = 0.5 + contrast * (prototype_value(proto, y, x, H, W, c) - 0.5) + offset;
        if (stripes > 0.0)
          v += stripes * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(vertical ? w : h) + phase);
        if (spec.noise_sigma > 0.0) v += noise(rng);
        if (occluded && h >= oy && h < oy + oh && w >= ox && w < ox + ow) v = ov;
        out.pixels[(c * H + h) * W + w] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return out;
}

}  // namespace detail

/// Deterministic in `spec.seed`. Source, target-train and target-test
/// identities are drawn independently; target train and test label ranges are
/// disjoint.
inline SyntheticData generate(const DatasetSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const Shape shape{spec.channels, spec.height, spec.width};
  const detail::TextureBand source_band{0.05, 0.45};
  const detail::TextureBand target_band{0.30, 0.45};

  SyntheticData data;
  data.source = {"source", shape, {}};
  data.train = {"train", shape, {}};
  data.query = {"query", shape, {}};
  data.gallery = {"gallery", shape, {}};

  for (std::size_t c = 0; c < spec.source_classes; ++c) {
    const auto proto = detail::draw_prototype(rng, source_band, spec.texture_amplitude, spec.level_spread);
    for (std::size_t i = 0; i < spec.source_samples_per_class; ++i)
      data.source.samples.push_back(detail::render(proto, spec, static_cast<std::int32_t>(c), Split::kTrain, rng));
  }
  for (std::size_t id = 0; id < spec.train_ids; ++id) {
    const auto proto = detail::draw_prototype(rng, target_band, spec.texture_amplitude, spec.level_spread);
    for (std::size_t i = 0; i < spec.train_samples_per_id; ++i)
      data.train.samples.push_back(detail::render(proto, spec, static_cast<std::int32_t>(id), Split::kTrain, rng,
                                                   spec.stripe_amplitude));
  }
  for (std::size_t id = 0; id < spec.test_ids; ++id) {
    const auto label = static_cast<std::int32_t>(spec.train_ids + id);
    const auto proto = detail::draw_prototype(rng, target_band, spec.texture_amplitude, spec.level_spread);
    for (std::size_t i = 0; i < spec.query_per_id; ++i)
      data.query.samples.push_back(detail::render(proto, spec, label, Split::kQuery, rng, spec.stripe_amplitude));
    for (std::size_t i = 0; i < spec.gallery_per_id; ++i)
      data.gallery.samples.push_back(detail::render(proto, spec, label, Split::kGallery, rng, spec.stripe_amplitude));
  }
  return data;
}

inline constexpr std::array<char, 4> kDatasetMagic{'R', 'B', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(std::ostream& os, const Dataset& d) {
  if (d.image_shape.size() != 3) throw ShapeError("dataset image shape must be C x H x W");
  const std::size_t pixels = shape_numel(d.image_shape);
  io::Writer w(os);
  w.bytes(kDatasetMagic.data(), kDatasetMagic.size());
  w.u32(kDatasetVersion);
  w.str(d.name);
  for (auto dim : d.image_shape) w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(d.samples.size()));
  for (Split s : {Split::kTrain, Split::kQuery, Split::kGallery}) w.u32(static_cast<std::uint32_t>(d.count(s)));
  for (const auto& s : d.samples) {
    if (s.pixels.size() != pixels) throw ShapeError("sample pixel count does not match the image shape");
    w.i32(s.label);
    const auto split = static_cast<std::uint8_t>(s.split);
    w.bytes(&split, 1);
    w.i32(s.camera);
    for (float v : s.pixels) w.f32(v);
  }
  if (!os) throw Error("dataset write failed");
}

struct DatasetHeader {
  std::uint32_t version;
  std::string name;
  Shape image_shape;
  std::uint32_t total, train, query, gallery;
};

inline DatasetHeader read_dataset_header(io::Reader& r) {
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kDatasetMagic) throw FormatError("bad magic at offset 0: not a dataset file");
  const auto version_at = r.offset();
  DatasetHeader h;
  h.version = r.u32("version");
  if (h.version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(h.version) + " at offset " +
                      std::to_string(version_at) + " (expected " + std::to_string(kDatasetVersion) + ")");
  }
  h.name = r.str("name", 4096);
  for (int i = 0; i < 3; ++i) {
    const auto at = r.offset();
    const std::uint32_t dim = r.u32("image shape");
    if (dim == 0 || dim > 4096) {
      throw FormatError("invalid image dimension " + std::to_string(dim) + " at offset " + std::to_string(at));
    }
    h.image_shape.push_back(dim);
  }
  h.total = r.u32("sample count");
  h.train = r.u32("train count");
  h.query = r.u32("query count");
  const auto gallery_at = r.offset();
  h.gallery = r.u32("gallery count");
  if (static_cast<std::uint64_t>(h.train) + h.query + h.gallery != h.total) {
    throw FormatError("split counts do not add up to the sample count at offset " + std::to_string(gallery_at));
  }
  return h;
}

inline Dataset read_dataset(std::istream& is) {
  io::Reader r(is);
  const DatasetHeader h = read_dataset_header(r);
  Dataset d;
  d.name = h.name;
  d.image_shape = h.image_shape;
  const std::size_t pixels = shape_numel(h.image_shape);
  d.samples.reserve(std::min<std::size_t>(h.total, 1u << 20));
  for (std::uint32_t i = 0; i < h.total; ++i) {
    Sample s;
    s.label = r.i32("label");
    std::uint8_t split = 0;
    const auto split_at = r.offset();
    r.bytes(&split, 1, "split");
    if (split > 2) {
      throw FormatError("invalid split tag " + std::to_string(split) + " at offset " + std::to_string(split_at));
    }
    s.split = static_cast<Split>(split);
    s.camera = r.i32("camera");
    s.pixels.resize(pixels);
    for (auto& v : s.pixels) v = r.f32("pixels");
    d.samples.push_back(std::move(s));
  }
  r.expect_end();
  if (d.count(Split::kTrain) != h.train || d.count(Split::kQuery) != h.query ||
      d.count(Split::kGallery) != h.gallery) {
    throw FormatError("per-split sample counts disagree with the header");
  }
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_dataset(os, d);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  return read_dataset(is);
}

inline DatasetHeader load_dataset_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  io::Reader r(is);
  return read_dataset_header(r);
}

/// Images stacked as one [M x C x H x W] tensor with aligned labels.
template <std::floating_point T>
struct ImageSet {
  Tensor<T> images;
  std::vector<int> labels;
  std::vector<int> cameras;

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
};

template <std::floating_point T>
ImageSet<T> to_image_set(const Dataset& d) {
  if (d.samples.empty()) throw DataError("dataset '" + d.name + "' is empty");
  const std::size_t pixels = shape_numel(d.image_shape);
  Shape shape{d.samples.size()};
  shape.insert(shape.end(), d.image_shape.begin(), d.image_shape.end());
  ImageSet<T> set{Tensor<T>(shape), {}, {}};
  T* dst = set.images.data();
  for (const auto& s : d.samples) {
    if (s.pixels.size() != pixels) throw ShapeError("sample pixel count does not match the image shape");
    dst = std::transform(s.pixels.begin(), s.pixels.end(), dst, [](float v) { return static_cast<T>(v); });
    set.labels.push_back(s.label);
    set.cameras.push_back(s.camera);
  }
  return set;
}

/// Rows `indices` of a [M x ...] tensor, in order.
template <std::floating_point T>
Tensor<T> gather_rows(const Tensor<T>& src, std::span<const std::size_t> indices) {
  Shape shape = src.shape();
  const std::size_t row = src.size() / shape[0];
  shape[0] = indices.size();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(src.data() + indices[i] * row, row, out.data() + i * row);
  return out;
}

/// Mirrors sample `n` of a [B x C x H x W] batch along the width axis.
template <std::floating_point T>
void flip_sample(Tensor<T>& batch, std::size_t n) {
  const std::size_t C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  T* base = batch.data() + n * C * H * W;
  for (std::size_t r = 0; r < C * H; ++r) std::reverse(base + r * W, base + (r + 1) * W);
}

template <std::floating_point T>
Tensor<T> flipped(const Tensor<T>& batch) {
  Tensor<T> out = batch;
  for (std::size_t n = 0; n < out.dim(0); ++n) flip_sample(out, n);
  return out;
}

/// Flips each sample independently with probability `p`; returns the mask.
template <std::floating_point T>
std::vector<bool> augment_flip(Tensor<T>& batch, double p, std::mt19937_64& rng) {
  if (batch.rank() != 4) throw ShapeError("augment_flip expects a 4-D batch, got " + shape_str(batch.shape()));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<bool> mask(batch.dim(0));
  for (std::size_t n = 0; n < mask.size(); ++n) {
    mask[n] = unit(rng) < p;
    if (mask[n]) flip_sample(batch, n);
  }
  return mask;
}

}  // namespace rollback
