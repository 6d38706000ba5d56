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

// Test-only helpers: random fixtures, buffer hashing, and a central
// finite-difference oracle that never touches the backward code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "maskdesk/tensor.h"

namespace maskdesk::testing {

template <typename T = double>
BasicTensor<T> random_tensor(Shape shape, std::mt19937_64& rng,
                             double lo = -1.0, double hi = 1.0,
                             bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return BasicTensor<T>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
std::uint64_t hash_buffer(std::span<const T> values) {
  // FNV-1a over the raw bytes.
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

struct GradCheckResult {
  double max_relative_error = 0.0;     // worst single input
  double pooled_relative_error = 0.0;  // all probed entries as one vector
  std::size_t checked = 0;
};

// Compares analytic gradients of `loss_fn` (which must read the current
// values of `inputs`) with central differences. Relative error per input is
// ||analytic - numeric|| / max(||analytic||, ||numeric||) over the checked
// elements. At most `max_elements` entries of each input are probed. The
// pooled error treats every probed entry of every input as one vector.
inline GradCheckResult gradcheck(const std::function<Tensor64()>& loss_fn,
                                 std::vector<Tensor64> inputs,
                                 double step = 1e-5,
                                 std::size_t max_elements = 64,
                                 std::uint64_t seed = 1) {
  for (auto& t : inputs) t.set_requires_grad(true);
  auto loss = loss_fn();
  backward<double>(loss, inputs);

  GradCheckResult result;
  double pooled_diff2 = 0, pooled_a2 = 0, pooled_n2 = 0;
  std::mt19937_64 rng(seed);
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(static_cast<std::size_t>(t.numel()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_elements) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_elements);
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i : idx) {
      auto data = t.mutable_data();
      const double saved = data[i];
      double plus, minus;
      {
        NoGradGuard guard;
        data[i] = saved + step;
        plus = loss_fn().item();
        data[i] = saved - step;
        minus = loss_fn().item();
      }
      data[i] = saved;
      const double numeric = (plus - minus) / (2 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++result.checked;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
    const double rel = (a2 == 0 && n2 == 0) ? 0.0 : std::sqrt(diff2) / denom;
    result.max_relative_error = std::max(result.max_relative_error, rel);
    pooled_diff2 += diff2;
    pooled_a2 += a2;
    pooled_n2 += n2;
  }
  const double denom = std::max({std::sqrt(pooled_a2), std::sqrt(pooled_n2), 1e-300});
  result.pooled_relative_error =
      (pooled_a2 == 0 && pooled_n2 == 0) ? 0.0 : std::sqrt(pooled_diff2) / denom;
  return result;
}

}  // namespace maskdesk::testing
