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

#include <chrono>
#include <cmath>
#include <random>

#include "doctest.h"
#include "maskdesk/matcher.h"
#include "maskdesk/ops.h"
#include "testing.h"

using namespace maskdesk;
using maskdesk::testing::random_tensor;

namespace {

CostMatrix square(std::vector<double> v, std::int64_t n) { return square_pad(v, n, n, n); }

std::vector<double> random_costs(std::int64_t rows, std::int64_t cols, std::mt19937_64& rng,
                                 bool integral) {
  std::uniform_real_distribution<double> real(-5.0, 5.0);
  std::uniform_int_distribution<int> small(0, 20);
  std::vector<double> v(static_cast<std::size_t>(rows * cols));
  for (auto& x : v) x = integral ? small(rng) : real(rng);
  return v;
}

// Number of injections that reach the minimum total (independent enumeration).
int count_optima(const std::vector<double>& c, std::int64_t rows, std::int64_t cols,
                 double best) {
  int count = 0;
  std::vector<std::int64_t> pick;
  std::vector<char> used(cols, 0);
  auto rec = [&](auto&& self, std::int64_t r) -> void {
    if (r == rows) {
      double t = 0;
      for (std::int64_t i = 0; i < rows; ++i) t += c[i * cols + pick[i]];
      count += t == best;
      return;
    }
    for (std::int64_t j = 0; j < cols; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      pick.push_back(j);
      self(self, r + 1);
      pick.pop_back();
      used[j] = 0;
    }
  };
  rec(rec, 0);
  return count;
}

}  // namespace

TEST_CASE("hungarian examples") {
  auto a = hungarian(square({0, 9, 9, 0}, 2));
  CHECK(a.query_for_gt == std::vector<std::int64_t>{0, 1});
  CHECK(a.total_real_cost == 0.0);
  auto b = hungarian(square({1, 2, 2, 1}, 2));
  CHECK(b.query_for_gt == std::vector<std::int64_t>{0, 1});
  CHECK(b.total_real_cost == 2.0);
}

TEST_CASE("brute force examples") {
  auto one = brute_force_match(std::vector<double>{7}, 1, 1);
  CHECK(one.query_for_gt == std::vector<std::int64_t>{0});
  CHECK(one.total_real_cost == 7.0);
  auto two = brute_force_match(std::vector<double>{1, 5, 5, 5, 1, 5}, 2, 3);
  CHECK(two.query_for_gt == std::vector<std::int64_t>{0, 1});
  CHECK(two.total_real_cost == 2.0);
  // Column 1 is cheapest for both rows but can only be used once.
  auto dom = brute_force_match(std::vector<double>{5, 0, 6, 5, 0, 7}, 2, 3);
  CHECK(dom.query_for_gt[0] != dom.query_for_gt[1]);
  CHECK(dom.total_real_cost == 5.0);
  CHECK_THROWS_AS(brute_force_match(std::vector<double>(10, 0.0), 1, 10), ContractError);
  CHECK_THROWS_AS(brute_force_match(std::vector<double>(6, 0.0), 3, 2), ContractError);
}

TEST_CASE("3 real rows against 5 queries match the injection oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = random_costs(3, 5, rng, false);
    auto padded = square_pad(c, 3, 5, 5);
    auto h = hungarian(padded);
    auto bf = brute_force_match(c, 3, 5);
    CHECK(h.query_for_gt == bf.query_for_gt);
    CHECK(h.total_real_cost == bf.total_real_cost);
  }
}

TEST_CASE("square padding uses max + 1") {
  auto m = square_pad(std::vector<double>{1, -3, 4, 2, 0, 0}, 2, 3, 4);
  CHECK(m.pad_cost == 5.0);
  CHECK(m.at(0, 3) == 5.0);
  CHECK(m.at(2, 0) == 5.0);
  CHECK(m.at(1, 0) == 2.0);
  auto empty = square_pad(std::vector<double>{}, 0, 3, 3);
  for (double v : empty.values) CHECK(v == empty.pad_cost);
  auto vacuous = hungarian(empty);
  CHECK(vacuous.query_for_gt.empty());
  CHECK(vacuous.total_real_cost == 0.0);
}

TEST_CASE("hungarian equals brute force on 200 random matrices") {
  std::mt19937_64 rng(22);
  int unique = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t cols = 1 + static_cast<std::int64_t>(rng() % 8);
    const std::int64_t rows = static_cast<std::int64_t>(rng() % (cols + 1));
    // Integer-valued costs make ties common; reals make them unique.
    auto c = random_costs(rows, cols, rng, trial % 2 == 0);
    auto h = hungarian(square_pad(c, rows, cols, cols));
    auto bf = brute_force_match(c, rows, cols);
    CHECK(h.total_real_cost == bf.total_real_cost);
    if (count_optima(c, rows, cols, bf.total_real_cost) == 1) {
      ++unique;
      CHECK(h.query_for_gt == bf.query_for_gt);
    }
  }
  CHECK(unique > 100);
}

TEST_CASE("padding never changes the real optimum") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t rows = 1 + static_cast<std::int64_t>(rng() % 5);
    const std::int64_t cols = rows + static_cast<std::int64_t>(rng() % 3);
    auto c = random_costs(rows, cols, rng, trial % 2 == 0);
    const double base = hungarian(square_pad(c, rows, cols, cols)).total_real_cost;
    for (std::int64_t extra = 1; extra <= 4; ++extra) {
      CHECK(hungarian(square_pad(c, rows, cols, cols + extra)).total_real_cost == base);
    }
  }
}

TEST_CASE("scaling costs keeps the matching") {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_costs(4, 7, rng, false);
    auto base = hungarian(square_pad(c, 4, 7, 7));
    for (double k : {0.01, 3.0, 1e4}) {
      std::vector<double> scaled(c);
      for (auto& v : scaled) v *= k;
      auto s = hungarian(square_pad(scaled, 4, 7, 7));
      CHECK(s.query_for_gt == base.query_for_gt);
      CHECK(s.total_real_cost == doctest::Approx(k * base.total_real_cost).epsilon(1e-12));
    }
  }
}

TEST_CASE("hungarian on 256 x 256 finishes within a second") {
  std::mt19937_64 rng(25);
  auto c = random_costs(256, 256, rng, false);
  const auto start = std::chrono::steady_clock::now();
  auto a = hungarian(square(c, 256));
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 1.0);
  std::vector<char> seen(256, 0);
  for (auto q : a.query_for_gt) seen[q]++;
  CHECK(std::count(seen.begin(), seen.end(), 1) == 256);
}

TEST_CASE("hungarian rejects bad input") {
  CostMatrix m;
  m.rows = 2;
  m.cols = 3;
  m.values.assign(6, 0.0);
  CHECK_THROWS_AS(hungarian(m), ContractError);
  auto nan = square({0, NAN, 1, 1}, 2);
  CHECK_THROWS_WITH_AS(hungarian(nan), doctest::Contains("(0, 1)"), ContractError);
}

namespace {

pipeline::TargetSet random_targets(std::int64_t n, std::int64_t h, std::int64_t w,
                                   std::int64_t K, std::mt19937_64& rng) {
  pipeline::TargetSet t;
  for (std::int64_t i = 0; i < n; ++i) {
    BinaryMask m(h, w);
    for (auto& v : m.values) v = (rng() % 3) == 0;
    m.values[i] = 1;
    t.masks.push_back(m);
    t.labels.push_back(1 + static_cast<std::int64_t>(rng() % K));
  }
  return t;
}

}  // namespace

TEST_CASE("cost cells equal the weighted component losses") {
  std::mt19937_64 rng(26);
  CostConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    auto masks = random_tensor({5, 4, 4}, rng, -3, 3);
    auto classes = random_tensor({5, 4}, rng, -2, 2);
    auto targets = random_targets(3, 4, 4, 3, rng);
    BinaryMask valid(4, 4, std::uint8_t{1});
    for (int y = 0; y < 4; ++y) valid(y, 3) = 0;
    auto m = build_cost_matrix(masks, classes, targets, valid, cfg);
    REQUIRE(m.rows == 5);
    CHECK(m.real_rows == 3);
    auto probs = softmax(classes, 1);
    for (std::int64_t i = 0; i < 3; ++i) {
      for (std::int64_t q = 0; q < 5; ++q) {
        auto row = select(masks, q);
        const auto& g = targets.masks[i].values;
        const double expect =
            cfg.weights[0] * -probs.data()[q * 4 + targets.labels[i] - 1] +
            cfg.weights[1] * focal_loss(row, g, valid.values).item() +
            cfg.weights[2] * dice_loss(row, g, valid.values).item();
        CHECK(std::abs(m.at(i, q) - expect) <= 1e-6);
      }
    }
    for (std::int64_t r = 3; r < 5; ++r)
      for (std::int64_t q = 0; q < 5; ++q) CHECK(m.at(r, q) == m.pad_cost);
  }
}

TEST_CASE("a perfectly predicted target picks its query") {
  std::mt19937_64 rng(27);
  const std::int64_t Q = 6, h = 4, w = 4, K = 3;
  auto targets = random_targets(1, h, w, K, rng);
  std::vector<double> masks(Q * h * w, 0.0), classes(Q * (K + 1), 0.0);
  for (std::int64_t i = 0; i < h * w; ++i)
    masks[3 * h * w + i] = targets.masks[0].values[i] ? 30.0 : -30.0;
  classes[3 * (K + 1) + targets.labels[0] - 1] = 30.0;
  auto m = build_cost_matrix(Tensor64({Q, h, w}, masks), Tensor64({Q, K + 1}, classes),
                             targets, BinaryMask(h, w, std::uint8_t{1}), CostConfig{});
  std::int64_t best = 0;
  for (std::int64_t q = 1; q < Q; ++q)
    if (m.at(0, q) < m.at(0, best)) best = q;
  CHECK(best == 3);
  CHECK(hungarian(m).query_for_gt == std::vector<std::int64_t>{3});
}

TEST_CASE("cost matrix errors") {
  std::mt19937_64 rng(28);
  auto masks = random_tensor({2, 2, 2}, rng);
  auto classes = random_tensor({2, 3}, rng);
  BinaryMask valid(2, 2, std::uint8_t{1});
  auto three = random_targets(3, 2, 2, 2, rng);
  CHECK_THROWS_WITH_AS(build_cost_matrix(masks, classes, three, valid, CostConfig{}),
                       doctest::Contains("3 targets > 2 queries"), TargetOverflowError);
  auto one = random_targets(1, 2, 2, 2, rng);
  auto data = masks.mutable_data();
  data[4] = NAN;  // query 1
  CHECK_THROWS_WITH_AS(build_cost_matrix(masks, classes, one, valid, CostConfig{}),
                       doctest::Contains("(0, 1)"), ContractError);
}

TEST_CASE("batch matching reduces full-resolution targets") {
  std::mt19937_64 rng(29);
  BasicModelOutputs<float> out{random_tensor<float>({2, 4, 2, 2}, rng),
                               random_tensor<float>({2, 4, 3}, rng)};
  std::vector<pipeline::TargetSet> targets{random_targets(2, 8, 8, 2, rng),
                                           random_targets(0, 8, 8, 2, rng)};
  std::vector<BinaryMask> valid(2, BinaryMask(8, 8, std::uint8_t{1}));
  auto a = match_batch(out, targets, valid, CostConfig{});
  REQUIRE(a.size() == 2);
  CHECK(a[0].query_for_gt.size() == 2);
  CHECK(a[1].query_for_gt.empty());
}
