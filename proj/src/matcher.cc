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

#include "maskdesk/matcher.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maskdesk/ops.h"

namespace maskdesk {

namespace {

double sigmoid_of(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double real_cost_sum(std::span<const double> values, std::int64_t cols,
                     const std::vector<std::int64_t>& query_for_gt) {
  double total = 0;
  for (std::size_t r = 0; r < query_for_gt.size(); ++r)
    total += values[static_cast<std::int64_t>(r) * cols + query_for_gt[r]];
  return total;
}

}  // namespace

CostMatrix square_pad(std::span<const double> rect, std::int64_t rows, std::int64_t cols,
                      std::int64_t size) {
  if (rows < 0 || cols < 0 || static_cast<std::int64_t>(rect.size()) != rows * cols) {
    throw ShapeError("square_pad: " + std::to_string(rect.size()) + " values for " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (size < rows || size < cols) {
    throw ContractError("square_pad: size " + std::to_string(size) + " smaller than " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
  CostMatrix m;
  m.rows = m.cols = size;
  m.real_rows = rows;
  m.real_cols = cols;
  m.pad_cost = rect.empty() ? 1.0 : *std::max_element(rect.begin(), rect.end()) + 1.0;
  m.values.assign(static_cast<std::size_t>(size * size), m.pad_cost);
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy_n(rect.begin() + r * cols, cols, m.values.begin() + r * size);
  return m;
}

template <typename T>
std::vector<double> pair_costs(const BasicTensor<T>& mask_logits,
                               const BasicTensor<T>& class_logits,
                               const pipeline::TargetSet& targets, const BinaryMask& valid_in,
                               const CostConfig& cfg) {
  if (mask_logits.rank() != 3 || class_logits.rank() != 2 ||
      mask_logits.dim(0) != class_logits.dim(0)) {
    throw ShapeError("pair_costs: mask logits " + to_string(mask_logits.shape()) +
                     " and class logits " + to_string(class_logits.shape()) + " disagree");
  }
  const std::int64_t Q = mask_logits.dim(0), h = mask_logits.dim(1), w = mask_logits.dim(2);
  const std::int64_t C = class_logits.dim(1);
  const std::int64_t N = static_cast<std::int64_t>(targets.size());
  if (N > Q) throw TargetOverflowError(N, Q);
  const auto valid = to_resolution(valid_in, h, w);

  std::vector<std::int64_t> pixels;  // indices of valid pixels
  for (std::int64_t i = 0; i < h * w; ++i)
    if (valid.values[i]) pixels.push_back(i);
  const auto S = static_cast<std::int64_t>(pixels.size());

  std::vector<std::vector<double>> gt(static_cast<std::size_t>(N));
  std::vector<double> gt_sum(static_cast<std::size_t>(N), 0.0);
  for (std::int64_t i = 0; i < N; ++i) {
    const auto label = targets.labels[i];
    if (label < 1 || label > C - 1) {
      throw ContractError("pair_costs: target label " + std::to_string(label) +
                          " outside 1.." + std::to_string(C - 1));
    }
    const auto m = to_resolution(targets.masks[i], h, w);
    gt[i].resize(static_cast<std::size_t>(S));
    for (std::int64_t s = 0; s < S; ++s) {
      gt[i][s] = m.values[pixels[s]] ? 1.0 : 0.0;
      gt_sum[i] += gt[i][s];
    }
  }

  const double alpha = cfg.focal_alpha, gamma = cfg.focal_gamma;
  const double lo = 1e-7, hi = 1.0 - 1e-7;
  std::vector<double> out(static_cast<std::size_t>(N * Q));
  std::vector<double> prob(static_cast<std::size_t>(S)), pos_minus_neg(static_cast<std::size_t>(S));
  const auto z = mask_logits.data();
  const auto cl = class_logits.data();
  for (std::int64_t q = 0; q < Q; ++q) {
    double prob_sum = 0, neg_sum = 0;
    for (std::int64_t s = 0; s < S; ++s) {
      const double p = sigmoid_of(z[q * h * w + pixels[s]]);
      const double pc = std::clamp(p, lo, hi);
      const double pos = -alpha * std::pow(1 - pc, gamma) * std::log(pc);
      const double neg = -(1 - alpha) * std::pow(pc, gamma) * std::log(1 - pc);
      prob[s] = p;
      prob_sum += p;
      neg_sum += neg;
      pos_minus_neg[s] = pos - neg;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(cl[q * C + c]));
    double denom = 0;
    for (std::int64_t c = 0; c < C; ++c) denom += std::exp(cl[q * C + c] - mx);

    for (std::int64_t i = 0; i < N; ++i) {
      double inter = 0, focal_pos = 0;
      for (std::int64_t s = 0; s < S; ++s) {
        if (gt[i][s] == 0.0) continue;
        inter += prob[s];
        focal_pos += pos_minus_neg[s];
      }
      const double focal = S ? (neg_sum + focal_pos) / static_cast<double>(S) : 0.0;
      const double dice =
          S ? 1.0 - (2 * inter + cfg.dice_eps) / (prob_sum + gt_sum[i] + cfg.dice_eps) : 0.0;
      const double p_true = std::exp(cl[q * C + targets.labels[i] - 1] - mx) / denom;
      const double cost =
          cfg.weights[0] * -p_true + cfg.weights[1] * focal + cfg.weights[2] * dice;
      if (!std::isfinite(cost)) {
        throw ContractError("non-finite matching cost at (" + std::to_string(i) + ", " +
                            std::to_string(q) + ")");
      }
      out[i * Q + q] = cost;
    }
  }
  return out;
}

template <typename T>
CostMatrix build_cost_matrix(const BasicTensor<T>& mask_logits,
                             const BasicTensor<T>& class_logits,
                             const pipeline::TargetSet& targets, const BinaryMask& valid,
                             const CostConfig& cfg) {
  const auto costs = pair_costs(mask_logits, class_logits, targets, valid, cfg);
  const std::int64_t Q = mask_logits.dim(0);
  return square_pad(costs, static_cast<std::int64_t>(targets.size()), Q, Q);
}

Assignment hungarian(const CostMatrix& costs) {
  if (costs.rows != costs.cols ||
      static_cast<std::int64_t>(costs.values.size()) != costs.rows * costs.cols) {
    throw ContractError("hungarian: needs a square matrix, got " + std::to_string(costs.rows) +
                        "x" + std::to_string(costs.cols));
  }
  const std::int64_t n = costs.rows;
  for (std::int64_t k = 0; k < n * n; ++k) {
    if (!std::isfinite(costs.values[k])) {
      throw ContractError("hungarian: non-finite cost at (" + std::to_string(k / n) + ", " +
                          std::to_string(k % n) + ")");
    }
  }
  // Potentials u (rows) and v (columns); p[j] is the row matched to column
  // j, with index 0 as the virtual source. 1-based throughout.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::int64_t> p(n + 1, 0), way(n + 1, 0);
  for (std::int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::int64_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::int64_t i0 = p[j0];
      double delta = inf;
      std::int64_t j1 = 0;
      for (std::int64_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = costs.values[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::int64_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::int64_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::int64_t> col_of_row(n, -1);
  for (std::int64_t j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;

  Assignment a;
  for (std::int64_t r = 0; r < costs.real_rows; ++r) {
    if (col_of_row[r] >= costs.real_cols) {
      throw ContractError("hungarian: real row " + std::to_string(r) + " matched to padding");
    }
    a.query_for_gt.push_back(col_of_row[r]);
  }
  a.total_real_cost = real_cost_sum(costs.values, n, a.query_for_gt);
  return a;
}

Assignment brute_force_match(std::span<const double> costs, std::int64_t rows,
                             std::int64_t cols) {
  if (rows < 0 || rows > cols || cols > kBruteForceLimit) {
    throw ContractError("brute_force_match: needs rows <= cols <= " +
                        std::to_string(kBruteForceLimit) + ", got " + std::to_string(rows) +
                        "x" + std::to_string(cols));
  }
  if (static_cast<std::int64_t>(costs.size()) != rows * cols) {
    throw ShapeError("brute_force_match: " + std::to_string(costs.size()) + " values for " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  Assignment best;
  best.total_real_cost = std::numeric_limits<double>::infinity();
  std::vector<std::int64_t> current;
  std::vector<char> used(static_cast<std::size_t>(cols), 0);
  auto dfs = [&](auto&& self, std::int64_t r) -> void {
    if (r == rows) {
      const double total = real_cost_sum(costs, cols, current);
      if (total < best.total_real_cost) {
        best.total_real_cost = total;
        best.query_for_gt = current;
      }
      return;
    }
    for (std::int64_t c = 0; c < cols; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      current.push_back(c);
      self(self, r + 1);
      current.pop_back();
      used[c] = 0;
    }
  };
  dfs(dfs, 0);
  return best;
}

template <typename T>
std::vector<Assignment> match_batch(const BasicModelOutputs<T>& outputs,
                                    std::span<const pipeline::TargetSet> targets,
                                    std::span<const BinaryMask> valid, const CostConfig& cfg) {
  const auto B = outputs.mask_logits.dim(0);
  if (targets.size() != static_cast<std::size_t>(B) || valid.size() != targets.size()) {
    throw ContractError("match_batch: batch of " + std::to_string(B) + " with " +
                        std::to_string(targets.size()) + " target sets");
  }
  NoGradGuard no_grad;
  std::vector<Assignment> out;
  for (std::int64_t b = 0; b < B; ++b) {
    out.push_back(hungarian(build_cost_matrix(select(outputs.mask_logits, b),
                                              select(outputs.class_logits, b), targets[b],
                                              valid[b], cfg)));
  }
  return out;
}

#define MASKDESK_MATCHER(T)                                                              \
  template std::vector<double> pair_costs(const BasicTensor<T>&, const BasicTensor<T>&,  \
                                          const pipeline::TargetSet&, const BinaryMask&, \
                                          const CostConfig&);                            \
  template CostMatrix build_cost_matrix(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                        const pipeline::TargetSet&, const BinaryMask&,   \
                                        const CostConfig&);                              \
  template std::vector<Assignment> match_batch(const BasicModelOutputs<T>&,              \
                                               std::span<const pipeline::TargetSet>,     \
                                               std::span<const BinaryMask>,              \
                                               const CostConfig&);

MASKDESK_MATCHER(float)
MASKDESK_MATCHER(double)

#undef MASKDESK_MATCHER

}  // namespace maskdesk
