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

// Panoptic quality over (mask, label) segment sets, plus the inference
// post-processing that turns model outputs into segments.

#include <cstdint>
#include <map>
#include <vector>

#include "maskdesk/grid.h"
#include "maskdesk/losses.h"
#include "maskdesk/pipeline.h"
#include "maskdesk/tensor.h"

namespace maskdesk {

struct Segment {
  BinaryMask mask;
  std::int64_t label = 0;  // contiguous, 1..K
};

struct SegmentSet {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<Segment> segments;
  BinaryMask void_mask;  // optional; pixels ignored in IoU unions

  // Throws InputError on extent mismatches, labels < 1 or overlapping masks.
  void validate() const;
};

struct ClassStats {
  double iou_sum = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  double sq() const { return tp ? iou_sum / static_cast<double>(tp) : 0.0; }
  double rq() const {
    const double d = static_cast<double>(tp) + 0.5 * static_cast<double>(fp + fn);
    return d > 0 ? static_cast<double>(tp) / d : 0.0;
  }
  double pq() const { return sq() * rq(); }
  ClassStats& operator+=(const ClassStats& o);
};

struct PQResult {
  ClassStats overall;
  std::map<std::int64_t, ClassStats> per_class;

  double pq() const { return overall.pq(); }
  double sq() const { return overall.sq(); }
  double rq() const { return overall.rq(); }
  // Mean of per-class PQ over classes present in either set.
  double class_averaged_pq() const;
};

// A prediction and a ground truth of the same class match when IoU > 0.5,
// where void pixels are removed from the union.
PQResult panoptic_quality(const SegmentSet& pred, const SegmentSet& gt);

// Accumulates per-image statistics in the order images are added.
class PanopticEvaluator {
 public:
  void add(const SegmentSet& pred, const SegmentSet& gt);
  const PQResult& result() const { return total_; }
  std::int64_t images() const { return images_; }

 private:
  PQResult total_;
  std::int64_t images_ = 0;
};

struct PostprocessConfig {
  double confidence_threshold = 0.5;
  double mask_threshold = 0.5;
};

// One image: mask_logits [N_q,h,w], class_logits [N_q,K+1]. Queries whose
// argmax is no-object or whose top probability is below the threshold are
// dropped. Each pixel goes to the surviving query with the highest mask
// probability if that probability reaches mask_threshold.
template <typename T>
SegmentSet postprocess(const BasicTensor<T>& mask_logits, const BasicTensor<T>& class_logits,
                       const PostprocessConfig& cfg = {});

// Ground-truth segments at (h, w); invalid pixels become void.
SegmentSet segments_from_targets(const pipeline::TargetSet& targets, const BinaryMask& valid,
                                 std::int64_t h, std::int64_t w);

}  // namespace maskdesk
