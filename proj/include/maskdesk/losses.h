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

// Dice, focal and weighted classification losses with padding-aware
// reductions, and the total loss over matched query/target pairs.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "maskdesk/grid.h"
#include "maskdesk/pipeline.h"
#include "maskdesk/tensor.h"

namespace maskdesk {

struct LossConfig {
  double dice_eps = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double no_object_weight = 1e-4;
  // (classification, focal, dice)
  std::array<double, 3> weights{1.0, 20.0, 1.0};
};

// Soft dice on sigmoid(logits). logits is [P, H, W] (or [H, W] for P = 1);
// gt holds P*H*W binary values; valid holds H*W values shared by every pair.
// Returns the mean over pairs. Pairs with no valid pixel contribute 0 and
// bump degenerate_mask_count().
template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> gt,
                         std::span<const std::uint8_t> valid, double eps = 1.0);

// Sigmoid focal loss, mean over valid pixels per pair, then mean over pairs.
// Probabilities are clamped to [1e-7, 1 - 1e-7] before the log.
template <typename T>
BasicTensor<T> focal_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> gt,
                          std::span<const std::uint8_t> valid, double alpha = 0.25,
                          double gamma = 2.0);

// Weighted cross-entropy over queries. logits is [N_q, K+1]; labels[q] is a
// contiguous class id in 1..K (column l-1) or K+1 for no-object (column K),
// which gets weight no_object_weight. Normalized by the sum of weights.
template <typename T>
BasicTensor<T> classification_loss(const BasicTensor<T>& logits,
                                   std::span<const std::int64_t> labels,
                                   double no_object_weight = 1e-4);

std::int64_t degenerate_mask_count();
void reset_degenerate_mask_count();

template <typename T>
struct BasicModelOutputs {
  BasicTensor<T> mask_logits;   // [B, N_q, h, w]
  BasicTensor<T> class_logits;  // [B, N_q, K+1]
};
using ModelOutputs = BasicModelOutputs<float>;

// Matched query for every target of one image.
struct Assignment {
  std::vector<std::int64_t> query_for_gt;
  double total_real_cost = 0.0;
};

template <typename T>
struct BasicLossBundle {
  double classification = 0.0;
  double focal = 0.0;
  double dice = 0.0;
  double total = 0.0;
  std::array<double, 3> weights{};
  double no_object_weight = 0.0;
  BasicTensor<T> objective;  // differentiable total, same value as `total`
};
using LossBundle = BasicLossBundle<float>;

// targets and valid masks may be at input resolution; they are reduced by
// nearest neighbour to the mask-logit resolution. Mask losses average over
// every matched pair in the batch; classification averages per image then
// over the batch.
template <typename T>
BasicLossBundle<T> total_loss(const BasicModelOutputs<T>& outputs,
                              std::span<const pipeline::TargetSet> targets,
                              std::span<const BinaryMask> valid,
                              std::span<const Assignment> assignments, const LossConfig& cfg);

// Reduces a grid to (h, w); the ratio must be an integer factor.
template <typename V>
Grid<V> to_resolution(const Grid<V>& g, std::int64_t h, std::int64_t w) {
  if (g.height == h && g.width == w) return g;
  if (h <= 0 || g.height % h || g.height / h != g.width / w || g.width % w) {
    throw ShapeError("cannot reduce " + std::to_string(g.height) + "x" +
                     std::to_string(g.width) + " grid to " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  return downsample_nearest(g, g.height / h);
}

}  // namespace maskdesk
