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

#pragma once

// Label preparation: contiguous class ids, record decoding, resize / crop /
// pad with validity masks, per-instance binary targets and batching.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "maskdesk/grid.h"
#include "maskdesk/records.h"
#include "maskdesk/tensor.h"

namespace maskdesk::pipeline {

// Order-preserving map from sparse original class ids to 1..K. 0 stays
// reserved for background / void.
class IdMapper {
 public:
  IdMapper() = default;

  std::int64_t to_contiguous(std::int64_t original) const;  // UnknownClassError
  std::int64_t to_original(std::int64_t contiguous) const;  // UnknownClassError
  bool contains(std::int64_t original) const { return forward_.count(original) > 0; }
  std::int64_t num_classes() const { return static_cast<std::int64_t>(inverse_.size()); }
  records::ClassTable table() const;

  static IdMapper from_table(const records::ClassTable& table);

 private:
  friend IdMapper build_id_mapper(std::span<const std::int64_t>);
  std::map<std::int64_t, std::int64_t> forward_;
  std::vector<std::int64_t> inverse_;  // contiguous - 1 -> original
};

// ids must be positive and distinct; throws ContractError otherwise.
IdMapper build_id_mapper(std::span<const std::int64_t> original_ids);

// Decoded record contents. class_mask holds contiguous ids (0 = void);
// both masks are stored in records as little-endian u16 per pixel.
struct RawSample {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> rgb;  // H*W*3, row-major
  LabelGrid class_mask;
  LabelGrid instance_mask;
  std::int64_t image_id = 0;
};

records::RecordEntry to_record(const RawSample& sample);
RawSample from_record(const records::RecordEntry& entry);  // throws Error

struct ParserConfig {
  std::int64_t target = 640;
  double crop_probability = 0.5;
  std::vector<std::int64_t> crop_sizes{400, 500, 600};
  double crop_min_fraction = 0.5;  // crop side as a fraction of the image side
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

struct PanopticSample {
  Tensor image;  // [1, T, T, 3]
  LabelGrid contiguous_mask;
  LabelGrid instance_mask;
  BinaryMask valid_mask;
  std::int64_t image_id = 0;
};

struct TargetSet {
  std::vector<BinaryMask> masks;
  std::vector<std::int64_t> labels;  // contiguous, 1..K

  std::size_t size() const { return labels.size(); }
  // Nearest-neighbour reduction of every mask.
  TargetSet downsample(std::int64_t factor) const;
};

struct ParseStats {
  std::int64_t dropped_instances = 0;
  bool cropped = false;
  double scale = 1.0;
  std::int64_t out_height = 0;  // extent of the valid region
  std::int64_t out_width = 0;
};

struct Parsed {
  PanopticSample sample;
  TargetSet targets;
  ParseStats stats;
};

// Class ids outside 0..mapper.num_classes() throw UnknownClassError.
Parsed parse(const RawSample& raw, const ParserConfig& cfg, const IdMapper& mapper,
             std::uint64_t seed);
Parsed parse(const records::RecordEntry& entry, const ParserConfig& cfg,
             const IdMapper& mapper, std::uint64_t seed);

// One mask per distinct non-zero instance id inside the valid region, in
// increasing id order. Instances labelled 0 (void) are skipped.
TargetSet build_targets(const LabelGrid& contiguous, const LabelGrid& instance,
                        const BinaryMask& valid);

struct Batch {
  Tensor images;  // [B, H, W, 3]
  std::vector<BinaryMask> valid;
  std::vector<TargetSet> targets;
  std::vector<std::int64_t> image_ids;

  std::size_t size() const { return targets.size(); }
};

// Stacks samples; mixed spatial sizes throw ContractError.
Batch collate(std::span<const PanopticSample> samples, std::span<const TargetSet> targets);
// Consecutive chunks of batch_size (last one may be short).
std::vector<Batch> make_batches(std::span<const Parsed> parsed, std::size_t batch_size);

}  // namespace maskdesk::pipeline
