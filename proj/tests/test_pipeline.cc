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

#include <atomic>
#include <chrono>
#include <random>
#include <set>
#include <thread>

#include "doctest.h"
#include "maskdesk/pipeline.h"
#include "maskdesk/work_queue.h"

using namespace maskdesk;
using namespace maskdesk::pipeline;

namespace {

ParserConfig no_crop(std::int64_t target) {
  ParserConfig cfg;
  cfg.target = target;
  cfg.crop_probability = 0.0;
  return cfg;
}

// Random blocky scene: rectangles of contiguous classes 1..3 with distinct
// instance ids, on a void background.
RawSample random_scene(std::int64_t h, std::int64_t w, std::mt19937_64& rng) {
  RawSample s;
  s.height = h;
  s.width = w;
  s.image_id = static_cast<std::int64_t>(rng() % 1000);
  s.rgb.resize(static_cast<std::size_t>(h * w * 3));
  for (auto& b : s.rgb) b = static_cast<std::uint8_t>(rng() & 0xff);
  s.class_mask = LabelGrid(h, w);
  s.instance_mask = LabelGrid(h, w);
  const std::int32_t classes[] = {1, 2, 3};
  const int n = 1 + static_cast<int>(rng() % 5);
  for (int k = 0; k < n; ++k) {
    const auto y0 = static_cast<std::int64_t>(rng() % h), x0 = static_cast<std::int64_t>(rng() % w);
    const auto y1 = std::min(h, y0 + 1 + static_cast<std::int64_t>(rng() % h));
    const auto x1 = std::min(w, x0 + 1 + static_cast<std::int64_t>(rng() % w));
    for (auto y = y0; y < y1; ++y)
      for (auto x = x0; x < x1; ++x) {
        s.class_mask(y, x) = classes[k % 3];
        s.instance_mask(y, x) = k + 1;
      }
  }
  return s;
}

const std::int64_t kSceneIds[] = {3, 8, 20};

}  // namespace

TEST_CASE("id mapper densifies in order") {
  const std::int64_t ids[] = {7, 1, 3};
  auto m = build_id_mapper(ids);
  CHECK(m.to_contiguous(1) == 1);
  CHECK(m.to_contiguous(3) == 2);
  CHECK(m.to_contiguous(7) == 3);
  CHECK(m.num_classes() == 3);
  const std::int64_t single[] = {5};
  CHECK(build_id_mapper(single).to_contiguous(5) == 1);
}

TEST_CASE("id mapper over 1..90 with ten gaps is a bijection onto 1..80") {
  std::vector<std::int64_t> ids;
  for (std::int64_t i = 1; i <= 90; ++i)
    if (i % 9 != 0) ids.push_back(i);
  REQUIRE(ids.size() == 80);
  auto m = build_id_mapper(ids);
  CHECK(m.num_classes() == 80);
  std::set<std::int64_t> range;
  std::int64_t prev = 0;
  for (auto id : ids) {
    const auto c = m.to_contiguous(id);
    CHECK(c > prev);
    prev = c;
    range.insert(c);
    CHECK(m.to_original(c) == id);
  }
  CHECK(*range.begin() == 1);
  CHECK(*range.rbegin() == 80);
  CHECK(IdMapper::from_table(m.table()).table() == m.table());
}

TEST_CASE("id mapper rejects bad input") {
  CHECK_THROWS_AS(build_id_mapper(std::span<const std::int64_t>{}), ContractError);
  const std::int64_t dup[] = {1, 4, 4};
  CHECK_THROWS_WITH_AS(build_id_mapper(dup), doctest::Contains("duplicate class id 4"),
                       ContractError);
  const std::int64_t zero[] = {0, 2};
  CHECK_THROWS_AS(build_id_mapper(zero), ContractError);
  const std::int64_t ok[] = {2};
  CHECK_THROWS_AS(build_id_mapper(ok).to_contiguous(3), UnknownClassError);
}

TEST_CASE("2x2 fixture enumerates two targets") {
  LabelGrid cls(2, 2, {1, 1, 0, 2});
  LabelGrid inst(2, 2, {1, 1, 0, 2});
  BinaryMask valid(2, 2, std::uint8_t{1});
  auto t = build_targets(cls, inst, valid);
  REQUIRE(t.size() == 2);
  CHECK(t.masks[0] == BinaryMask(2, 2, {1, 1, 0, 0}));
  CHECK(t.labels[0] == 1);
  CHECK(t.masks[1] == BinaryMask(2, 2, {0, 0, 0, 1}));
  CHECK(t.labels[1] == 2);
}

TEST_CASE("wide image is padded at the bottom") {
  std::mt19937_64 rng(1);
  auto raw = random_scene(320, 640, rng);
  auto p = parse(raw, no_crop(640), build_id_mapper(kSceneIds), 0);
  CHECK(p.stats.scale == 1.0);
  CHECK(p.sample.image.shape() == Shape{1, 640, 640, 3});
  for (std::int64_t y = 0; y < 640; ++y) {
    const bool expect = y < 320;
    CHECK(p.sample.valid_mask(y, 0) == expect);
    CHECK(p.sample.valid_mask(y, 639) == expect);
  }
  CHECK(p.sample.valid_mask.count_nonzero() == 320 * 640);
  // Padding is zero in every grid and in the image.
  CHECK(p.sample.image.data()[(400 * 640 + 10) * 3] == 0.0f);
  CHECK(p.sample.contiguous_mask(500, 5) == 0);
}

TEST_CASE("target-sized input keeps geometry and pixel values") {
  std::mt19937_64 rng(2);
  auto raw = random_scene(64, 64, rng);
  auto cfg = no_crop(64);
  auto p = parse(raw, cfg, build_id_mapper(kSceneIds), 0);
  CHECK(p.sample.valid_mask.count_nonzero() == 64 * 64);
  for (std::int64_t i = 0; i < 64 * 64; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float expect = (raw.rgb[i * 3 + c] / 255.0f - cfg.mean[c]) / cfg.std[c];
      CHECK(p.sample.image.data()[i * 3 + c] == doctest::Approx(expect).epsilon(1e-6));
    }
    CHECK(p.sample.instance_mask.values[i] == raw.instance_mask.values[i]);
  }
}

TEST_CASE("parse properties on random scenes") {
  std::mt19937_64 rng(3);
  auto mapper = build_id_mapper(kSceneIds);
  ParserConfig cfg;
  cfg.target = 64;
  cfg.crop_sizes = {40, 50, 60};
  for (int trial = 0; trial < 60; ++trial) {
    const auto h = 8 + static_cast<std::int64_t>(rng() % 120);
    const auto w = 8 + static_cast<std::int64_t>(rng() % 120);
    auto raw = random_scene(h, w, rng);
    const auto seed = rng();
    auto p = parse(raw, cfg, mapper, seed);
    const auto& s = p.sample;

    // Union of target masks equals the instance pixels in the valid region.
    BinaryMask uni(64, 64);
    for (const auto& m : p.targets.masks) {
      CHECK(m.count_nonzero() > 0);
      for (std::int64_t i = 0; i < m.size(); ++i) {
        CHECK_FALSE((m.values[i] && uni.values[i]));  // disjoint
        uni.values[i] |= m.values[i];
      }
    }
    for (std::int64_t i = 0; i < uni.size(); ++i) {
      const bool expect = s.valid_mask.values[i] && s.instance_mask.values[i] != 0 &&
                          s.contiguous_mask.values[i] != 0;
      CHECK(static_cast<bool>(uni.values[i]) == expect);
    }
    for (auto l : p.targets.labels) CHECK((l >= 1 && l <= 3));

    // Valid region is the top-left rectangle of the scaled extent.
    const auto oh = p.stats.out_height, ow = p.stats.out_width;
    CHECK(oh <= 64);
    CHECK(ow <= 64);
    CHECK(s.valid_mask.count_nonzero() == oh * ow);
    CHECK(s.valid_mask(oh - 1, ow - 1) == 1);
    if (!p.stats.cropped) {
      CHECK(std::max(oh, ow) == 64);
      const double area = h * p.stats.scale * w * p.stats.scale;
      CHECK(std::abs(s.valid_mask.count_nonzero() - area) <= 64.0 + 1.0);
    }

    // Deterministic in (entry, cfg, seed).
    auto again = parse(raw, cfg, mapper, seed);
    CHECK(again.sample.image.data().size() == s.image.data().size());
    CHECK(std::equal(again.sample.image.data().begin(), again.sample.image.data().end(),
                     s.image.data().begin()));
    CHECK(again.targets.masks == p.targets.masks);
  }
}

TEST_CASE("crops land on one of the configured sizes") {
  std::mt19937_64 rng(4);
  auto mapper = build_id_mapper(kSceneIds);
  ParserConfig cfg;
  cfg.target = 640;
  cfg.crop_probability = 1.0;
  auto raw = random_scene(480, 640, rng);
  int sized = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto p = parse(raw, cfg, mapper, seed);
    CHECK(p.stats.cropped);
    const auto shortest = std::min(p.stats.out_height, p.stats.out_width);
    const auto longest = std::max(p.stats.out_height, p.stats.out_width);
    CHECK(longest <= 640);
    if (shortest == 400 || shortest == 500 || shortest == 600) ++sized;
    else CHECK(longest == 640);  // clamped by the canvas
  }
  CHECK(sized > 0);
}

TEST_CASE("unknown class ids are reported") {
  std::mt19937_64 rng(5);
  auto raw = random_scene(16, 16, rng);
  raw.class_mask(3, 3) = 4;  // mapper covers 1..3
  CHECK_THROWS_WITH_AS(parse(raw, no_crop(32), build_id_mapper(kSceneIds), 0),
                       doctest::Contains("4"), UnknownClassError);
}

TEST_CASE("instances that vanish after resize are dropped and counted") {
  RawSample raw;
  raw.height = raw.width = 64;
  raw.rgb.assign(64 * 64 * 3, 128);
  raw.class_mask = LabelGrid(64, 64, std::int32_t{1});
  raw.instance_mask = LabelGrid(64, 64, std::int32_t{1});
  raw.class_mask(1, 1) = 2;  // one pixel, lost when shrinking 4x
  raw.instance_mask(1, 1) = 2;
  auto p = parse(raw, no_crop(16), build_id_mapper(kSceneIds), 0);
  CHECK(p.targets.size() == 1);
  CHECK(p.stats.dropped_instances == 1);
}

TEST_CASE("record round trip feeds the parser") {
  std::mt19937_64 rng(6);
  auto raw = random_scene(20, 30, rng);
  auto back = from_record(to_record(raw));
  CHECK(back.rgb == raw.rgb);
  CHECK(back.class_mask == raw.class_mask);
  CHECK(back.instance_mask == raw.instance_mask);
  auto entry = to_record(raw);
  CHECK(std::get<records::Bytes>(entry.at(records::keys::kContiguousMask)).size() == 2 * 20 * 30);
  CHECK(std::get<records::Bytes>(entry.at(records::keys::kInstanceMask)).size() == 2 * 20 * 30);
  auto short_mask = entry;
  std::get<records::Bytes>(short_mask[records::keys::kContiguousMask]).pop_back();
  CHECK_THROWS_AS(from_record(short_mask), Error);
  entry.erase(records::keys::kInstanceMask);
  CHECK_THROWS_WITH_AS(from_record(entry), doctest::Contains("instance_mask"), Error);
  raw.instance_mask(0, 0) = 70000;
  CHECK_THROWS_AS(to_record(raw), ContractError);
}

TEST_CASE("batching stacks images and keeps targets ragged") {
  std::mt19937_64 rng(7);
  auto mapper = build_id_mapper(kSceneIds);
  std::vector<Parsed> parsed;
  for (int i = 0; i < 3; ++i) parsed.push_back(parse(random_scene(40, 30, rng), no_crop(32), mapper, i));
  auto batches = make_batches(parsed, 2);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].images.shape() == Shape{2, 32, 32, 3});
  CHECK(batches[1].images.shape() == Shape{1, 32, 32, 3});
  CHECK(batches[0].targets[1].size() == parsed[1].targets.size());
  // A singleton batch equals its input.
  CHECK(std::equal(batches[1].images.data().begin(), batches[1].images.data().end(),
                   parsed[2].sample.image.data().begin()));
  auto odd = parse(random_scene(40, 30, rng), no_crop(16), mapper, 0);
  std::vector<PanopticSample> mixed{parsed[0].sample, odd.sample};
  std::vector<TargetSet> t{parsed[0].targets, odd.targets};
  CHECK_THROWS_AS(collate(mixed, t), ContractError);
}

TEST_CASE("nearest downsample of targets") {
  BinaryMask m(4, 4, {1, 0, 0, 0,  //
                      0, 1, 0, 0,  //
                      0, 0, 0, 0,  //
                      0, 0, 0, 1});
  TargetSet t{{m}, {2}};
  auto d = t.downsample(2);
  CHECK(d.masks[0] == BinaryMask(2, 2, {1, 0, 0, 1}));
  CHECK_THROWS_AS(t.downsample(3), ShapeError);
}

TEST_CASE("ordered work queue yields index order for any worker count") {
  for (std::size_t workers : {0u, 1u, 3u, 8u}) {
    std::atomic<int> in_flight{0}, peak{0};
    OrderedWorkQueue<int> q(
        [&](std::size_t i) {
          const int now = ++in_flight;
          int p = peak.load();
          while (now > p && !peak.compare_exchange_weak(p, now)) {}
          std::this_thread::sleep_for(std::chrono::microseconds((i * 37) % 200));
          --in_flight;
          return static_cast<int>(i * i);
        },
        50, workers, 4);
    for (int i = 0; i < 50; ++i) {
      auto v = q.next();
      REQUIRE(v.has_value());
      CHECK(*v == i * i);
    }
    CHECK_FALSE(q.next().has_value());
    CHECK(peak.load() <= 4);
  }
}

TEST_CASE("ordered work queue rethrows in sequence") {
  OrderedWorkQueue<int> q(
      [](std::size_t i) -> int {
        if (i == 2) throw InputError("bad item 2");
        return static_cast<int>(i);
      },
      4, 2, 2);
  CHECK(*q.next() == 0);
  CHECK(*q.next() == 1);
  CHECK_THROWS_WITH_AS(q.next(), "bad item 2", InputError);
  CHECK(*q.next() == 3);
}

TEST_CASE("parallel parsing matches serial parsing") {
  std::mt19937_64 rng(8);
  auto mapper = build_id_mapper(kSceneIds);
  ParserConfig cfg;
  cfg.target = 32;
  cfg.crop_sizes = {20, 25, 30};
  std::vector<records::RecordEntry> entries;
  for (int i = 0; i < 20; ++i) entries.push_back(to_record(random_scene(24, 40, rng)));
  auto job = [&](std::size_t i) { return parse(entries[i], cfg, mapper, 1000 + i); };
  OrderedWorkQueue<Parsed> q(job, entries.size(), 4, 3);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto got = q.next();
    auto want = job(i);
    CHECK(got->targets.masks == want.targets.masks);
    CHECK(std::equal(got->sample.image.data().begin(), got->sample.image.data().end(),
                     want.sample.image.data().begin()));
  }
}
