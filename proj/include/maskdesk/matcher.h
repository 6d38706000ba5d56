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

// Bipartite matching between ground-truth segments and predicted queries.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "maskdesk/grid.h"
#include "maskdesk/losses.h"
#include "maskdesk/pipeline.h"
#include "maskdesk/tensor.h"

namespace maskdesk {

struct CostConfig {
  // (class, focal, dice)
  std::array<double, 3> weights{1.0, 20.0, 1.0};
  double dice_eps = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

// Row-major matrix of ground truths (rows) x queries (columns). Cells
// outside the real_rows x real_cols block hold pad_cost.
struct CostMatrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t real_rows = 0;
  std::int64_t real_cols = 0;
  double pad_cost = 0.0;
  std::vector<double> values;

  double at(std::int64_t r, std::int64_t c) const { return values[r * cols + c]; }
};

// Embeds a rows x cols matrix in a size x size one filled with
// (max real entry + 1). An empty real block pads with 1.
CostMatrix square_pad(std::span<const double> rect, std::int64_t rows, std::int64_t cols,
                      std::int64_t size);

// Unpadded [N, N_q] costs for one image. mask_logits is [N_q, h, w],
// class_logits is [N_q, K+1]; targets and valid may be at a multiple of
// (h, w) and are reduced by nearest neighbour.
template <typename T>
std::vector<double> pair_costs(const BasicTensor<T>& mask_logits,
                               const BasicTensor<T>& class_logits,
                               const pipeline::TargetSet& targets, const BinaryMask& valid,
                               const CostConfig& cfg);

// pair_costs square-padded to N_q x N_q. Throws TargetOverflowError when
// there are more targets than queries.
template <typename T>
CostMatrix build_cost_matrix(const BasicTensor<T>& mask_logits,
                             const BasicTensor<T>& class_logits,
                             const pipeline::TargetSet& targets, const BinaryMask& valid,
                             const CostConfig& cfg);

// O(n^3) shortest-augmenting-path assignment with potentials. Returns the
// matching of the real rows. Non-square input throws ContractError.
Assignment hungarian(const CostMatrix& costs);

// Exhaustive minimum over all injections of rows into columns.
// Requires rows <= cols <= 9.
Assignment brute_force_match(std::span<const double> costs, std::int64_t rows,
                             std::int64_t cols);

inline constexpr std::int64_t kBruteForceLimit = 9;

// Matches every image of a batch.
template <typename T>
std::vector<Assignment> match_batch(const BasicModelOutputs<T>& outputs,
                                    std::span<const pipeline::TargetSet> targets,
                                    std::span<const BinaryMask> valid, const CostConfig& cfg);

}  // namespace maskdesk
