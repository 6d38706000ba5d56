// Copyright 2026 The maskdesk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "maskdesk/pipeline.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace maskdesk::pipeline {

namespace rk = records::keys;

std::int64_t IdMapper::to_contiguous(std::int64_t original) const {
  auto it = forward_.find(original);
  if (it == forward_.end()) throw UnknownClassError(original);
  return it->second;
}

std::int64_t IdMapper::to_original(std::int64_t contiguous) const {
  if (contiguous < 1 || contiguous > num_classes()) throw UnknownClassError(contiguous);
  return inverse_[static_cast<std::size_t>(contiguous - 1)];
}

records::ClassTable IdMapper::table() const {
  return {forward_.begin(), forward_.end()};
}

IdMapper IdMapper::from_table(const records::ClassTable& table) {
  std::vector<std::int64_t> ids;
  for (const auto& [orig, _] : table) ids.push_back(orig);
  IdMapper m = build_id_mapper(ids);
  for (const auto& [orig, contiguous] : table) {
    if (m.to_contiguous(orig) != contiguous) {
      throw ContractError("class table is not the order-preserving densification (id " +
                          std::to_string(orig) + " -> " + std::to_string(contiguous) + ")");
    }
  }
  return m;
}

IdMapper build_id_mapper(std::span<const std::int64_t> original_ids) {
  if (original_ids.empty()) throw ContractError("build_id_mapper: empty id set");
  std::vector<std::int64_t> sorted(original_ids.begin(), original_ids.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() <= 0) {
    throw ContractError("build_id_mapper: class id " + std::to_string(sorted.front()) +
                        " is not positive");
  }
  if (auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end()) {
    throw ContractError("build_id_mapper: duplicate class id " + std::to_string(*dup));
  }
  IdMapper m;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    m.forward_[sorted[i]] = static_cast<std::int64_t>(i + 1);
  }
  m.inverse_ = std::move(sorted);
  return m;
}

namespace {

template <typename V>
const V& require(const records::RecordEntry& entry, const char* key) {
  auto it = entry.find(key);
  if (it == entry.end()) throw Error(std::string("record is missing key ") + key);
  const V* v = std::get_if<V>(&it->second);
  if (!v) throw Error(std::string("record key ") + key + " has the wrong type");
  return *v;
}

std::int64_t require_scalar(const records::RecordEntry& entry, const char* key) {
  const auto& v = require<records::Int64List>(entry, key);
  if (v.size() != 1) throw Error(std::string("record key ") + key + " is not a scalar");
  return v[0];
}

// Masks travel as little-endian u16 per pixel.
LabelGrid require_grid(const records::RecordEntry& entry, const char* key, std::int64_t h,
                       std::int64_t w) {
  const auto& bytes = require<records::Bytes>(entry, key);
  if (static_cast<std::int64_t>(bytes.size()) != 2 * h * w) {
    throw Error(std::string("record key ") + key + " holds " + std::to_string(bytes.size()) +
                " bytes, expected " + std::to_string(2 * h * w));
  }
  LabelGrid g(h, w);
  for (std::int64_t i = 0; i < h * w; ++i) {
    const auto lo = static_cast<unsigned char>(bytes[2 * i]);
    const auto hi = static_cast<unsigned char>(bytes[2 * i + 1]);
    g.values[i] = static_cast<std::int32_t>(lo | (hi << 8));
  }
  return g;
}

records::Bytes to_u16_bytes(const LabelGrid& g, const char* what) {
  records::Bytes out(static_cast<std::size_t>(2 * g.size()), '\0');
  for (std::int64_t i = 0; i < g.size(); ++i) {
    const auto v = g.values[i];
    if (v < 0 || v > 0xffff) {
      throw ContractError(std::string(what) + " value " + std::to_string(v) +
                          " does not fit in 16 bits");
    }
    out[2 * i] = static_cast<char>(v & 0xff);
    out[2 * i + 1] = static_cast<char>(v >> 8);
  }
  return out;
}

struct Window {
  std::int64_t y0 = 0, x0 = 0, h = 0, w = 0;
};

}  // namespace

records::RecordEntry to_record(const RawSample& s) {
  if (static_cast<std::int64_t>(s.rgb.size()) != s.height * s.width * 3 ||
      s.class_mask.height != s.height || s.class_mask.width != s.width ||
      !s.instance_mask.same_extent(s.class_mask)) {
    throw ShapeError("raw sample buffers disagree with " + std::to_string(s.height) + "x" +
                     std::to_string(s.width));
  }
  return {
      {rk::kHeight, records::Int64List{s.height}},
      {rk::kWidth, records::Int64List{s.width}},
      {rk::kEncoded, records::Bytes(s.rgb.begin(), s.rgb.end())},
      {rk::kImageId, records::Int64List{s.image_id}},
      {rk::kContiguousMask, to_u16_bytes(s.class_mask, "class mask")},
      {rk::kInstanceMask, to_u16_bytes(s.instance_mask, "instance mask")},
  };
}

RawSample from_record(const records::RecordEntry& entry) {
  RawSample s;
  s.height = require_scalar(entry, rk::kHeight);
  s.width = require_scalar(entry, rk::kWidth);
  if (s.height <= 0 || s.width <= 0) {
    throw Error("record has non-positive image extent " + std::to_string(s.height) + "x" +
                std::to_string(s.width));
  }
  s.image_id = require_scalar(entry, rk::kImageId);
  const auto& bytes = require<records::Bytes>(entry, rk::kEncoded);
  if (static_cast<std::int64_t>(bytes.size()) != s.height * s.width * 3) {
    throw Error("image/encoded holds " + std::to_string(bytes.size()) + " bytes, expected " +
                std::to_string(s.height * s.width * 3));
  }
  s.rgb.assign(bytes.begin(), bytes.end());
  s.class_mask = require_grid(entry, rk::kContiguousMask, s.height, s.width);
  s.instance_mask = require_grid(entry, rk::kInstanceMask, s.height, s.width);
  return s;
}

TargetSet TargetSet::downsample(std::int64_t factor) const {
  TargetSet out;
  out.labels = labels;
  for (const auto& m : masks) out.masks.push_back(downsample_nearest(m, factor));
  return out;
}

TargetSet build_targets(const LabelGrid& contiguous, const LabelGrid& instance,
                        const BinaryMask& valid) {
  if (!contiguous.same_extent(instance) || !contiguous.same_extent(valid)) {
    throw ShapeError("build_targets: grids differ in extent");
  }
  std::map<std::int32_t, std::size_t> slot;
  TargetSet t;
  for (std::int64_t i = 0; i < instance.size(); ++i) {
    const auto id = instance.values[i];
    if (id == 0 || !valid.values[i] || contiguous.values[i] == 0) continue;
    slot.try_emplace(id, 0);
  }
  for (auto& [id, index] : slot) {
    index = t.masks.size();
    t.masks.emplace_back(instance.height, instance.width);
    t.labels.push_back(0);
  }
  for (std::int64_t i = 0; i < instance.size(); ++i) {
    const auto id = instance.values[i];
    if (id == 0 || !valid.values[i] || contiguous.values[i] == 0) continue;
    const auto k = slot[id];
    t.masks[k].values[i] = 1;
    // An instance takes the class of its first pixel in raster order.
    if (t.labels[k] == 0) t.labels[k] = contiguous.values[i];
  }
  return t;
}

Parsed parse(const RawSample& raw, const ParserConfig& cfg, const IdMapper& mapper,
             std::uint64_t seed) {
  const std::int64_t target = cfg.target;
  if (target <= 0) throw ConfigError("parser target must be positive");
  if (cfg.crop_probability > 0 && cfg.crop_sizes.empty()) {
    throw ConfigError("crop enabled with no crop sizes");
  }

  // Validate class ids up front so errors do not depend on the crop.
  std::set<std::int32_t> present_instances;
  for (std::int64_t i = 0; i < raw.class_mask.size(); ++i) {
    const auto c = raw.class_mask.values[i];
    if (c != 0) {
      if (c < 0 || c > mapper.num_classes()) throw UnknownClassError(c);
      if (raw.instance_mask.values[i] != 0) present_instances.insert(raw.instance_mask.values[i]);
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Parsed out;
  Window win{0, 0, raw.height, raw.width};
  double scale;
  if (cfg.crop_probability > 0 && unit(rng) < cfg.crop_probability) {
    out.stats.cropped = true;
    std::uniform_real_distribution<double> frac(cfg.crop_min_fraction, 1.0);
    win.h = std::clamp<std::int64_t>(std::llround(raw.height * frac(rng)), 1, raw.height);
    win.w = std::clamp<std::int64_t>(std::llround(raw.width * frac(rng)), 1, raw.width);
    win.y0 = std::uniform_int_distribution<std::int64_t>(0, raw.height - win.h)(rng);
    win.x0 = std::uniform_int_distribution<std::int64_t>(0, raw.width - win.w)(rng);
    const auto pick =
        std::uniform_int_distribution<std::size_t>(0, cfg.crop_sizes.size() - 1)(rng);
    const double side = static_cast<double>(cfg.crop_sizes[pick]);
    scale = side / static_cast<double>(std::min(win.h, win.w));
    // The longer side must still fit the canvas.
    scale = std::min(scale, static_cast<double>(target) / std::max(win.h, win.w));
  } else {
    scale = static_cast<double>(target) / static_cast<double>(std::max(win.h, win.w));
  }
  const std::int64_t oh = std::clamp<std::int64_t>(std::llround(win.h * scale), 1, target);
  const std::int64_t ow = std::clamp<std::int64_t>(std::llround(win.w * scale), 1, target);
  out.stats.scale = scale;
  out.stats.out_height = oh;
  out.stats.out_width = ow;

  // Image: bilinear with half-pixel centres, then per-channel normalization.
  std::vector<float> pixels(static_cast<std::size_t>(target * target * 3), 0.0f);
  const double fy = static_cast<double>(win.h) / oh;
  const double fx = static_cast<double>(win.w) / ow;
  std::vector<std::int64_t> x_lo(ow), x_hi(ow);
  std::vector<double> x_t(ow);
  for (std::int64_t x = 0; x < ow; ++x) {
    const double sx = std::clamp((x + 0.5) * fx - 0.5, 0.0, static_cast<double>(win.w - 1));
    x_lo[x] = static_cast<std::int64_t>(std::floor(sx));
    x_hi[x] = std::min(x_lo[x] + 1, win.w - 1);
    x_t[x] = sx - x_lo[x];
  }
  auto src = [&](std::int64_t y, std::int64_t x, int c) {
    return static_cast<double>(raw.rgb[((win.y0 + y) * raw.width + win.x0 + x) * 3 + c]);
  };
  for (std::int64_t y = 0; y < oh; ++y) {
    const double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, static_cast<double>(win.h - 1));
    const auto y0 = static_cast<std::int64_t>(std::floor(sy));
    const auto y1 = std::min(y0 + 1, win.h - 1);
    const double ty = sy - y0;
    for (std::int64_t x = 0; x < ow; ++x) {
      const double tx = x_t[x];
      for (int c = 0; c < 3; ++c) {
        const double top = src(y0, x_lo[x], c) * (1 - tx) + src(y0, x_hi[x], c) * tx;
        const double bot = src(y1, x_lo[x], c) * (1 - tx) + src(y1, x_hi[x], c) * tx;
        const double v = (top * (1 - ty) + bot * ty) / 255.0;
        pixels[(y * target + x) * 3 + c] = static_cast<float>((v - cfg.mean[c]) / cfg.std[c]);
      }
    }
  }
  out.sample.image = Tensor({1, target, target, 3}, std::move(pixels));
  out.sample.image_id = raw.image_id;

  // Masks: nearest neighbour inside the window, zero padding outside.
  auto& cls = out.sample.contiguous_mask = LabelGrid(target, target);
  auto& inst = out.sample.instance_mask = LabelGrid(target, target);
  auto& valid = out.sample.valid_mask = BinaryMask(target, target);
  for (std::int64_t y = 0; y < oh; ++y) {
    const auto sy = std::min(win.h - 1, (2 * y + 1) * win.h / (2 * oh));
    for (std::int64_t x = 0; x < ow; ++x) {
      const auto sx = std::min(win.w - 1, (2 * x + 1) * win.w / (2 * ow));
      const auto c = raw.class_mask(win.y0 + sy, win.x0 + sx);
      cls(y, x) = c;
      inst(y, x) = raw.instance_mask(win.y0 + sy, win.x0 + sx);
      valid(y, x) = 1;
    }
  }

  out.targets = build_targets(cls, inst, valid);
  out.stats.dropped_instances =
      static_cast<std::int64_t>(present_instances.size()) -
      static_cast<std::int64_t>(out.targets.size());
  return out;
}

Parsed parse(const records::RecordEntry& entry, const ParserConfig& cfg,
             const IdMapper& mapper, std::uint64_t seed) {
  return parse(from_record(entry), cfg, mapper, seed);
}

Batch collate(std::span<const PanopticSample> samples, std::span<const TargetSet> targets) {
  if (samples.empty()) throw ContractError("collate: empty sample list");
  if (samples.size() != targets.size()) {
    throw ContractError("collate: " + std::to_string(samples.size()) + " samples but " +
                        std::to_string(targets.size()) + " target sets");
  }
  const Shape& first = samples[0].image.shape();
  std::vector<Tensor> images;
  Batch b;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].image.shape() != first) {
      throw ContractError("collate: sample " + std::to_string(i) + " has shape " +
                          to_string(samples[i].image.shape()) + ", expected " +
                          to_string(first));
    }
    images.push_back(samples[i].image);
    b.valid.push_back(samples[i].valid_mask);
    b.targets.push_back(targets[i]);
    b.image_ids.push_back(samples[i].image_id);
  }
  // Each image is [1,H,W,3]; concatenating the buffers stacks them.
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(first[1] * first[2] * 3) * images.size());
  for (const auto& t : images) data.insert(data.end(), t.data().begin(), t.data().end());
  b.images = Tensor({static_cast<std::int64_t>(images.size()), first[1], first[2], first[3]},
                    std::move(data));
  return b;
}

std::vector<Batch> make_batches(std::span<const Parsed> parsed, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < parsed.size(); i += batch_size) {
    std::vector<PanopticSample> s;
    std::vector<TargetSet> t;
    for (std::size_t j = i; j < std::min(parsed.size(), i + batch_size); ++j) {
      s.push_back(parsed[j].sample);
      t.push_back(parsed[j].targets);
    }
    out.push_back(collate(s, t));
  }
  return out;
}

}  // namespace maskdesk::pipeline
