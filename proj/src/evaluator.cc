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

#include "maskdesk/evaluator.h"

#include <cmath>
#include <set>

#include "maskdesk/ops.h"

namespace maskdesk {

void SegmentSet::validate() const {
  BinaryMask seen(height, width);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (seg.mask.height != height || seg.mask.width != width) {
      throw InputError("segment " + std::to_string(s) + " is " +
                       std::to_string(seg.mask.height) + "x" + std::to_string(seg.mask.width) +
                       ", set is " + std::to_string(height) + "x" + std::to_string(width));
    }
    if (seg.label < 1) {
      throw InputError("segment " + std::to_string(s) + " has label " +
                       std::to_string(seg.label));
    }
    for (std::int64_t i = 0; i < seg.mask.size(); ++i) {
      if (!seg.mask.values[i]) continue;
      if (seen.values[i]) {
        throw InputError("segment " + std::to_string(s) + " overlaps another segment at pixel " +
                         std::to_string(i));
      }
      seen.values[i] = 1;
    }
  }
  if (void_mask.size() && (void_mask.height != height || void_mask.width != width)) {
    throw InputError("void mask extent differs from the segment set");
  }
}

ClassStats& ClassStats::operator+=(const ClassStats& o) {
  iou_sum += o.iou_sum;
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

double PQResult::class_averaged_pq() const {
  if (per_class.empty()) return 0.0;
  double s = 0;
  for (const auto& [_, c] : per_class) s += c.pq();
  return s / static_cast<double>(per_class.size());
}

PQResult panoptic_quality(const SegmentSet& pred, const SegmentSet& gt) {
  pred.validate();
  gt.validate();
  if (pred.height != gt.height || pred.width != gt.width) {
    throw InputError("prediction grid " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " differs from ground truth " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  const std::int64_t n = gt.height * gt.width;
  // Segment index per pixel (-1 for none); sets are disjoint.
  auto owner = [n](const SegmentSet& s) {
    std::vector<std::int32_t> o(static_cast<std::size_t>(n), -1);
    for (std::size_t k = 0; k < s.segments.size(); ++k)
      for (std::int64_t i = 0; i < n; ++i)
        if (s.segments[k].mask.values[i]) o[i] = static_cast<std::int32_t>(k);
    return o;
  };
  const auto pred_of = owner(pred), gt_of = owner(gt);
  auto is_void = [&](std::int64_t i) {
    return (gt.void_mask.size() && gt.void_mask.values[i]) ||
           (pred.void_mask.size() && pred.void_mask.values[i]);
  };

  std::vector<std::int64_t> pred_area(pred.segments.size(), 0), pred_void(pred.segments.size(), 0);
  std::vector<std::int64_t> gt_area(gt.segments.size(), 0);
  std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> inter;
  for (std::int64_t i = 0; i < n; ++i) {
    if (pred_of[i] >= 0) {
      ++pred_area[pred_of[i]];
      if (is_void(i) && gt_of[i] < 0) ++pred_void[pred_of[i]];
    }
    if (gt_of[i] >= 0) ++gt_area[gt_of[i]];
    if (pred_of[i] >= 0 && gt_of[i] >= 0) ++inter[{pred_of[i], gt_of[i]}];
  }

  PQResult r;
  std::vector<char> pred_matched(pred.segments.size(), 0), gt_matched(gt.segments.size(), 0);
  for (const auto& [key, overlap] : inter) {
    const auto [p, g] = key;
    if (pred.segments[p].label != gt.segments[g].label) continue;
    const auto uni = pred_area[p] + gt_area[g] - overlap - pred_void[p];
    const double iou = static_cast<double>(overlap) / static_cast<double>(uni);
    if (iou <= 0.5) continue;
    if (pred_matched[p] || gt_matched[g]) {
      throw ContractError("panoptic_quality: IoU > 0.5 matched a segment twice");
    }
    pred_matched[p] = gt_matched[g] = 1;
    auto& c = r.per_class[gt.segments[g].label];
    c.tp += 1;
    c.iou_sum += iou;
  }
  for (std::size_t p = 0; p < pred.segments.size(); ++p)
    if (!pred_matched[p]) r.per_class[pred.segments[p].label].fp += 1;
  for (std::size_t g = 0; g < gt.segments.size(); ++g)
    if (!gt_matched[g]) r.per_class[gt.segments[g].label].fn += 1;
  for (const auto& [_, c] : r.per_class) r.overall += c;
  return r;
}

void PanopticEvaluator::add(const SegmentSet& pred, const SegmentSet& gt) {
  const auto r = panoptic_quality(pred, gt);
  for (const auto& [label, c] : r.per_class) total_.per_class[label] += c;
  total_.overall += r.overall;
  ++images_;
}

template <typename T>
SegmentSet postprocess(const BasicTensor<T>& mask_logits, const BasicTensor<T>& class_logits,
                       const PostprocessConfig& cfg) {
  if (mask_logits.rank() != 3 || class_logits.rank() != 2 ||
      mask_logits.dim(0) != class_logits.dim(0)) {
    throw ShapeError("postprocess: mask logits " + to_string(mask_logits.shape()) +
                     " and class logits " + to_string(class_logits.shape()) + " disagree");
  }
  NoGradGuard no_grad;
  const auto Q = mask_logits.dim(0), h = mask_logits.dim(1), w = mask_logits.dim(2);
  const auto C = class_logits.dim(1);
  const auto probs = softmax(class_logits, 1);
  std::vector<std::int64_t> kept, labels;
  for (std::int64_t q = 0; q < Q; ++q) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < C; ++c)
      if (probs.data()[q * C + c] > probs.data()[q * C + best]) best = c;
    if (best == C - 1 || probs.data()[q * C + best] < cfg.confidence_threshold) continue;
    kept.push_back(q);
    labels.push_back(best + 1);
  }
  SegmentSet out;
  out.height = h;
  out.width = w;
  std::vector<BinaryMask> masks(kept.size(), BinaryMask(h, w));
  const auto z = mask_logits.data();
  for (std::int64_t i = 0; i < h * w; ++i) {
    std::int64_t winner = -1;
    double best = -1;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(z[kept[k] * h * w + i])));
      if (p > best) {
        best = p;
        winner = static_cast<std::int64_t>(k);
      }
    }
    if (winner >= 0 && best >= cfg.mask_threshold) masks[winner].values[i] = 1;
  }
  for (std::size_t k = 0; k < kept.size(); ++k) {
    if (masks[k].count_nonzero() == 0) continue;
    out.segments.push_back({std::move(masks[k]), labels[k]});
  }
  return out;
}

SegmentSet segments_from_targets(const pipeline::TargetSet& targets, const BinaryMask& valid,
                                 std::int64_t h, std::int64_t w) {
  SegmentSet s;
  s.height = h;
  s.width = w;
  s.void_mask = to_resolution(valid, h, w);
  for (auto& v : s.void_mask.values) v = !v;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto m = to_resolution(targets.masks[i], h, w);
    if (m.count_nonzero() == 0) continue;
    s.segments.push_back({std::move(m), targets.labels[i]});
  }
  return s;
}

template SegmentSet postprocess(const BasicTensor<float>&, const BasicTensor<float>&,
                                const PostprocessConfig&);
template SegmentSet postprocess(const BasicTensor<double>&, const BasicTensor<double>&,
                                const PostprocessConfig&);

}  // namespace maskdesk
