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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criterion 8 trains the toy configuration twice, so a full
// run takes about a minute.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "maskdesk/dataset.h"
#include "maskdesk/evaluator.h"
#include "maskdesk/matcher.h"
#include "maskdesk/model.h"
#include "maskdesk/position_embedding.h"
#include "maskdesk/records.h"
#include "maskdesk/trainer.h"
#include "maskdesk/verify.h"

using namespace maskdesk;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void criterion(int n, const std::string& title, const std::function<Outcome()>& fn) {
  Outcome out;
  const auto t0 = Clock::now();
  try {
    out = fn();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  if (!out.passed) ++failures;
  std::printf("%s criterion %2d: %s  [%s; %.1f s]\n", out.passed ? "PASS" : "FAIL", n,
              title.c_str(), out.detail.c_str(), since(t0));
  std::fflush(stdout);
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Checks of one verify suite, all of which must pass.
Outcome suite_outcome(const VerifyReport& report, const std::string& suite) {
  int total = 0, bad = 0;
  double worst = 0;
  std::string failed;
  for (const auto& c : report.checks) {
    if (c.suite != suite) continue;
    ++total;
    worst = std::max(worst, c.error);
    if (!c.passed) {
      ++bad;
      failed += "; failed: " + c.name;
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d checks, worst error %.2e", total, worst);
  return {total > 0 && bad == 0, buf + failed};
}

records::RecordEntry random_entry(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nkeys(0, 6), len(0, 60), kind(0, 2), byte(0, 255);
  std::uniform_int_distribution<std::int64_t> i64(INT64_MIN, INT64_MAX);
  std::uniform_int_distribution<std::uint32_t> bits;
  records::RecordEntry e;
  const int n = nkeys(rng);
  for (int k = 0; k < n; ++k) {
    const std::string key = "key" + std::to_string(k);
    const int m = len(rng);
    switch (kind(rng)) {
      case 0: {
        records::Bytes b;
        for (int i = 0; i < m; ++i) b.push_back(static_cast<char>(byte(rng)));
        e[key] = b;
        break;
      }
      case 1: {
        records::Int64List v(m);
        for (auto& x : v) x = i64(rng);
        e[key] = v;
        break;
      }
      default: {
        records::FloatList v(m);
        for (auto& x : v) {
          do x = std::bit_cast<float>(bits(rng)); while (std::isnan(x));
        }
        e[key] = v;
      }
    }
  }
  return e;
}

SegmentSet box_set(std::int64_t h, std::int64_t w, std::vector<std::uint8_t> bits,
                   std::int64_t label) {
  SegmentSet s;
  s.height = h;
  s.width = w;
  s.segments.push_back({BinaryMask(h, w, std::move(bits)), label});
  return s;
}

RunConfig toy_config(const fs::path& work) {
  auto cfg = load_config(fs::path(MASKDESK_SOURCE_DIR) / "configs" / "toy.cfg");
  cfg.paths.raw_dir = (work / "raw").string();
  cfg.paths.shard_dir = (work / "shards").string();
  cfg.paths.run_dir = (work / "run").string();
  cfg.validate();
  return cfg;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("maskdesk-acceptance-" +
                                                     std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  const RunConfig defaults;

  criterion(1, "shape contracts at 640x640 with the default model", [] {
    const auto t0 = Clock::now();
    ModelConfig cfg;
    MaskFormer model(cfg);
    NoGradGuard no_grad;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(-1, 1);
    std::vector<float> pixels(640 * 640 * 3);
    for (auto& v : pixels) v = u(rng);
    Tensor image({1, 640, 640, 3}, std::move(pixels));
    auto pix = model.pixel_decoder(model.backbone(image));
    auto dec = model.transformer_decoder(pix.encoded);
    auto pos = sine_position_embedding(20, 20, 256);
    const double seconds = since(t0);
    const bool ok = pix.mask_features.shape() == Shape{1, 160, 160, 256} &&
                    dec.shape() == Shape{1, 100, 256} && pos.shape() == Shape{1, 20, 20, 256} &&
                    seconds < 30.0;
    return Outcome{ok, "pixel decoder " + shape_str(pix.mask_features.shape()) +
                           ", transformer decoder " + shape_str(dec.shape()) +
                           ", position embedding " + shape_str(pos.shape()) + ", " +
                           std::to_string(seconds) + " s"};
  });

  criterion(2, "position embedding mean on 20x20x256 is 0.4937 +- 1e-3", [] {
    auto pos = sine_position_embedding<double>(20, 20, 256);
    double sum = 0;
    for (double v : pos.data()) sum += v;
    const double mean = sum / static_cast<double>(pos.numel());
    char buf[64];
    std::snprintf(buf, sizeof buf, "mean %.8f", mean);
    return Outcome{std::abs(mean - 0.4937) <= 1e-3, buf};
  });

  criterion(3, "padded hungarian equals brute force on 200 matrices", [] {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2026);
    std::uniform_real_distribution<double> value(-5, 5);
    int mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const auto q = 1 + static_cast<std::int64_t>(rng() % 8);
      const auto n = static_cast<std::int64_t>(rng() % (q + 1));
      std::vector<double> rect(static_cast<std::size_t>(n * q));
      for (auto& v : rect) v = value(rng);
      const auto fast = hungarian(square_pad(rect, n, q, q));
      double summed = 0;
      for (std::int64_t r = 0; r < n; ++r)
        summed += rect[static_cast<std::size_t>(r * q + fast.query_for_gt[r])];
      if (summed != brute_force_match(rect, n, q).total_real_cost) ++mismatches;
    }
    const double seconds = since(t0);
    return Outcome{mismatches == 0 && seconds < 10.0,
                   std::to_string(mismatches) + " mismatches, " + std::to_string(seconds) + " s"};
  });

  const auto report = verify(defaults);

  criterion(4, "loss fixtures within 1e-3",
            [&] { return suite_outcome(report, "loss-fixtures"); });

  criterion(5, "mask losses ignore padding on 50 fixtures within 1e-7",
            [&] { return suite_outcome(report, "padding"); });

  criterion(6, "gradient checks within 1e-4 and every parameter gets a gradient",
            [&] { return suite_outcome(report, "gradients"); });

  criterion(7, "1000-entry shard round-trip and skewed balance <= 1.10", [&] {
    std::mt19937_64 rng(7);
    std::vector<records::RecordEntry> entries;
    for (int i = 0; i < 1000; ++i) entries.push_back(random_entry(rng));
    auto set = records::write_shards(entries, 4, work / "records");
    auto back = records::read_shards(set);
    std::vector<std::string> a, b;
    for (const auto& e : entries) a.push_back(records::encode_payload(e));
    for (const auto& e : back) b.push_back(records::encode_payload(e));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());

    // Heavy-tailed sizes: mostly small records plus a few large ones.
    std::lognormal_distribution<double> size(8.0, 1.2);
    std::vector<records::RecordEntry> skewed;
    for (int i = 0; i < 400; ++i) {
      const auto bytes = std::min<std::size_t>(static_cast<std::size_t>(size(rng)), 200000);
      skewed.push_back({{"blob", records::Bytes(bytes, 'x')}});
    }
    auto skew_set = records::write_shards(skewed, 8, work / "skewed");
    std::uint64_t lo = UINT64_MAX, hi = 0;
    for (std::size_t i = 0; i < skew_set.shards.size(); ++i) {
      const auto bytes = fs::file_size(skew_set.shard_path(i));
      lo = std::min<std::uint64_t>(lo, bytes);
      hi = std::max<std::uint64_t>(hi, bytes);
    }
    const double ratio = static_cast<double>(hi) / static_cast<double>(lo);
    const bool exact = back.size() == entries.size() && a == b;
    return Outcome{exact && ratio <= 1.10, std::string(exact ? "byte-exact" : "MISMATCH") +
                                               ", balance ratio " + std::to_string(ratio)};
  });

  criterion(8, "toy training: final loss < 0.7 x initial, CSV reproducible", [&] {
    auto cfg = toy_config(work / "toy");
    dataset::synth(cfg.synth_images, cfg.paths.raw_dir, cfg.seed);
    dataset::ingest(cfg.paths.raw_dir, static_cast<std::size_t>(cfg.shard_count),
                    cfg.paths.shard_dir);
    auto t0 = Clock::now();
    const auto history = train(cfg);
    const double seconds = since(t0);
    const auto first_csv = slurp(fs::path(cfg.paths.run_dir) / "loss.csv");
    cfg.paths.run_dir = (work / "toy" / "repeat").string();
    train(cfg);
    const bool same = first_csv == slurp(fs::path(cfg.paths.run_dir) / "loss.csv");
    const double initial = history.front().total, final_loss = history.back().total;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu steps, loss %.4f -> %.4f (ratio %.3f), %s, %.1f s/run",
                  history.size(), initial, final_loss, final_loss / initial,
                  same ? "CSV identical" : "CSV DIFFERS", seconds);
    return Outcome{history.size() == 300 && final_loss < 0.7 * initial && same &&
                       seconds < 600.0,
                   buf};
  });

  criterion(9, "PQ(gt, gt) = 1, 0.75-IoU fixture gives 0.75, PQ = SQ x RQ", [&] {
    const fs::path raw = work / "toy" / "raw";
    const auto cats = dataset::read_categories(raw / "categories.json");
    std::vector<std::int64_t> ids;
    for (const auto& c : cats) ids.push_back(c.id);
    const auto mapper = pipeline::build_id_mapper(ids);
    const auto parser = toy_config(work / "toy").eval_parser_config();
    int samples = 0, perfect = 0, product_checks = 0, product_bad = 0;
    std::mt19937_64 rng(9);
    for (const auto& ann : dataset::read_annotations(raw / "annotations.jsonl")) {
      std::int64_t h = 0, w = 0;
      const auto rgb = dataset::read_ppm(raw / ann.file_name, h, w);
      const auto parsed = pipeline::parse(dataset::to_raw_sample(ann, rgb, mapper), parser,
                                          mapper, 0);
      const auto T = parser.target;
      const auto gt = segments_from_targets(parsed.targets, parsed.sample.valid_mask, T, T);
      ++samples;
      if (!gt.segments.empty() && panoptic_quality(gt, gt).pq() == 1.0) ++perfect;

      // Thin every segment at random and drop some: TP, FP and FN all occur.
      SegmentSet pred = gt;
      for (auto& seg : pred.segments)
        for (auto& v : seg.mask.values)
          if (v && rng() % 3 == 0) v = 0;
      std::erase_if(pred.segments, [&](const Segment& s) {
        return s.mask.count_nonzero() == 0 || rng() % 5 == 0;
      });
      const auto r = panoptic_quality(pred, gt);
      if (r.overall.tp > 0) {
        ++product_checks;
        if (std::abs(r.pq() - r.sq() * r.rq()) > 1e-12 * std::max(1.0, r.pq())) ++product_bad;
      }
    }
    const auto fixture = panoptic_quality(box_set(2, 2, {1, 1, 1, 0}, 2),
                                          box_set(2, 2, {1, 1, 1, 1}, 2));
    const bool ok = samples == 200 && perfect == samples && fixture.pq() == 0.75 &&
                    product_checks > 0 && product_bad == 0;
    return Outcome{ok, std::to_string(perfect) + "/" + std::to_string(samples) +
                           " samples at PQ 1, fixture PQ " + std::to_string(fixture.pq()) +
                           ", PQ = SQ x RQ on " + std::to_string(product_checks - product_bad) +
                           "/" + std::to_string(product_checks)};
  });

  criterion(10, "verify fails when dice eps or no-object weight moves 10x", [&] {
    std::string detail = report.passed() ? "pristine passes" : "PRISTINE FAILS";
    bool ok = report.passed();
    auto mutate = [&](const std::string& label, const std::function<void(RunConfig&)>& edit) {
      RunConfig cfg = defaults;
      edit(cfg);
      const auto r = verify(cfg);
      detail += ", " + label + (r.passed() ? " undetected" : " detected");
      ok = ok && !r.passed();
    };
    const double eps = defaults.losses.dice_eps, w = defaults.losses.no_object_weight;
    mutate("eps x10", [&](RunConfig& c) { c.losses.dice_eps = eps * 10; });
    mutate("eps /10", [&](RunConfig& c) { c.losses.dice_eps = eps / 10; });
    mutate("no-object x10", [&](RunConfig& c) { c.losses.no_object_weight = w * 10; });
    mutate("no-object /10", [&](RunConfig& c) { c.losses.no_object_weight = w / 10; });
    return Outcome{ok, detail};
  });

  fs::remove_all(work);
  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
