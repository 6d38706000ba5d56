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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "maskdesk/dataset.h"
#include "maskdesk/trainer.h"

using namespace maskdesk;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("maskdesk_test_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// 24 synthetic scenes in 3 shards, shared by every test.
const fs::path& shard_dir() {
  static const fs::path dir = [] {
    auto raw = fresh_dir("raw"), shards = fresh_dir("shards");
    dataset::synth(24, raw, 5);
    dataset::ingest(raw, 3, shards);
    return shards;
  }();
  return dir;
}

RunConfig toy(const std::string& run) {
  RunConfig cfg;
  cfg.parser.target = 64;
  cfg.parser.crop_sizes = {40, 50, 60};
  cfg.model.input_size = 64;
  cfg.model.n_queries = 16;
  cfg.model.hidden_size = 32;
  cfg.model.backbone_channels = 32;
  cfg.model.num_encoder_layers = 1;
  cfg.model.num_decoder_layers = 1;
  cfg.model.num_heads = 4;
  cfg.model.dim_feedforward = 64;
  cfg.model.num_classes = 4;
  cfg.trainer.batch_size = 4;
  cfg.trainer.steps = 3;
  cfg.trainer.lr = 1e-3;
  cfg.paths.shard_dir = shard_dir().string();
  cfg.paths.run_dir = fresh_dir(run).string();
  return cfg;
}

Tensor leaf(std::vector<float> values) {
  const auto n = static_cast<std::int64_t>(values.size());
  return Tensor({n}, std::move(values), true);
}

void set_grad(Tensor& t, std::vector<float> g) {
  t.zero_grad();
  auto& buf = t.node()->grad_buffer();
  std::copy(g.begin(), g.end(), buf.begin());
}

}  // namespace

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
  TrainerConfig cfg;
  cfg.lr = 0.01;
  cfg.grad_clip_norm = 0;
  auto p = leaf({1.0f, -2.0f, 0.5f});
  Optimizer opt(cfg, {{"p", p}});
  set_grad(p, {0.3f, -4.0f, 0.0f});
  const double norm = opt.step();
  CHECK(norm == doctest::Approx(std::sqrt(0.09 + 16.0)));
  // m_hat = g, v_hat = g^2 after bias correction.
  auto expect = [&](double w, double g) { return w - 0.01 * g / (std::abs(g) + 1e-8); };
  CHECK(p.data()[0] == doctest::Approx(expect(1.0, 0.3)).epsilon(1e-6));
  CHECK(p.data()[1] == doctest::Approx(expect(-2.0, -4.0)).epsilon(1e-6));
  CHECK(p.data()[2] == 0.5f);
}

TEST_CASE("sgd momentum accumulates and clipping rescales by the global norm") {
  TrainerConfig cfg;
  cfg.optimizer = "sgd";
  cfg.lr = 0.5;
  cfg.momentum = 0.9;
  cfg.grad_clip_norm = 0;
  auto p = leaf({0.0f});
  Optimizer opt(cfg, {{"p", p}});
  set_grad(p, {1.0f});
  opt.step();
  CHECK(p.data()[0] == doctest::Approx(-0.5));
  set_grad(p, {1.0f});
  opt.step();
  CHECK(p.data()[0] == doctest::Approx(-0.5 - 0.5 * 1.9));

  cfg.momentum = 0;
  cfg.lr = 1;
  cfg.grad_clip_norm = 1;
  auto a = leaf({0.0f}), b = leaf({0.0f});
  Optimizer clipped(cfg, {{"a", a}, {"b", b}});
  set_grad(a, {3.0f});
  set_grad(b, {4.0f});
  CHECK(clipped.step() == doctest::Approx(5.0));
  CHECK(a.data()[0] == doctest::Approx(-3.0 / 5.0).epsilon(1e-5));
  CHECK(b.data()[0] == doctest::Approx(-4.0 / 5.0).epsilon(1e-5));
}

TEST_CASE("batch source wraps around and ignores the worker count") {
  auto cfg = toy("source");
  const auto set = records::load_manifest(cfg.paths.shard_dir);
  BatchSource serial(set, cfg.parser, 9, 0, 2), parallel(set, cfg.parser, 9, 4, 3);
  std::vector<std::int64_t> ids;
  for (int b = 0; b < 4; ++b) {
    auto x = serial.next(10), y = parallel.next(10);
    CHECK(x.images.shape() == Shape{10, 64, 64, 3});
    CHECK(x.image_ids == y.image_ids);
    CHECK(std::equal(x.images.data().begin(), x.images.data().end(), y.images.data().begin()));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.targets[i].masks == y.targets[i].masks);
    ids.insert(ids.end(), x.image_ids.begin(), x.image_ids.end());
  }
  // 40 draws over 24 records: the first 16 repeat in the same order.
  for (std::size_t i = 24; i < ids.size(); ++i) CHECK(ids[i] == ids[i - 24]);
}

TEST_CASE("a zero learning rate leaves every parameter unchanged") {
  auto cfg = toy("lr0");
  cfg.trainer.lr = 0;
  cfg.trainer.steps = 1;
  train(cfg);
  const auto saved = load_checkpoint(fs::path(cfg.paths.run_dir) / "final.ckpt");
  const auto fresh = MaskFormer(cfg.model_config()).export_parameters();
  REQUIRE(saved.size() == fresh.size());
  for (std::size_t i = 0; i < saved.size(); ++i) {
    INFO(saved[i].first);
    CHECK(saved[i].first == fresh[i].first);
    CHECK(std::equal(saved[i].second.data().begin(), saved[i].second.data().end(),
                     fresh[i].second.data().begin(), fresh[i].second.data().end()));
  }
}

TEST_CASE("training is reproducible and writes its artifacts") {
  auto a = toy("repro_a"), b = toy("repro_b"), c = toy("repro_c");
  a.trainer.checkpoint_every = 2;
  b.workers = 3;
  c.seed = 1;
  const auto ha = train(a);
  train(b);
  train(c);
  REQUIRE(ha.size() == 3);
  const auto csv = slurp(fs::path(a.paths.run_dir) / "loss.csv");
  CHECK(csv.rfind(loss_csv_header() + "\n", 0) == 0);
  CHECK(csv.find(loss_csv_row(ha[2])) != std::string::npos);
  CHECK(csv == slurp(fs::path(b.paths.run_dir) / "loss.csv"));
  CHECK(csv != slurp(fs::path(c.paths.run_dir) / "loss.csv"));
  CHECK(fs::exists(fs::path(a.paths.run_dir) / "step-000002.ckpt"));
  CHECK(fs::exists(fs::path(a.paths.run_dir) / "final.ckpt"));
  CHECK(load_config(fs::path(a.paths.run_dir) / "config.cfg").trainer.checkpoint_every == 2);
  for (const auto& s : ha) {
    CHECK(s.total == doctest::Approx(s.classification + 20 * s.focal + s.dice));
  }
}

TEST_CASE("a non-finite loss aborts before the update and names the batch") {
  auto cfg = toy("nan");
  const auto set = records::load_manifest(cfg.paths.shard_dir);
  BatchSource source(set, cfg.parser, 0, 0, 1);
  auto batch = source.next(2);
  auto images = batch.images.data();
  std::vector<float> poisoned(images.begin(), images.end());
  poisoned[5] = std::numeric_limits<float>::quiet_NaN();
  batch.images = Tensor(batch.images.shape(), poisoned);

  Trainer trainer(cfg);
  const auto before = trainer.model().export_parameters();
  const std::string ids =
      std::to_string(batch.image_ids[0]) + ", " + std::to_string(batch.image_ids[1]);
  const std::string needle = "image ids [" + ids + "]";
  CHECK_THROWS_WITH_AS(trainer.step(batch), doctest::Contains(needle.c_str()),
                       NonFiniteLossError);
  const auto after = trainer.model().export_parameters();
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(std::equal(before[i].second.data().begin(), before[i].second.data().end(),
                     after[i].second.data().begin()));
  }
  CHECK(trainer.steps_done() == 0);
}

TEST_CASE("class count must agree with the shards") {
  auto cfg = toy("classes");
  cfg.model.num_classes = 5;
  CHECK_THROWS_WITH_AS(train(cfg), doctest::Contains("num_classes"), ConfigError);
}

TEST_CASE("profile stages add up to the step time") {
  auto cfg = toy("profile");
  cfg.profile_steps = 0;
  auto empty = profile(cfg);
  CHECK(empty.steps.empty());
  CHECK(empty.table().empty());

  cfg.profile_steps = 4;
  auto report = profile(cfg);
  REQUIRE(report.steps.size() == 4);
  CHECK(report.records == 16);
  const auto t = report.totals();
  CHECK(t.read > 0);
  CHECK(t.parse > 0);
  CHECK(t.match > 0);
  CHECK(t.forward > 0);
  CHECK(t.backward > 0);
  CHECK(t.update > 0);
  CHECK(std::abs(t.stage_sum() - t.step) <= 0.05 * t.step);
  CHECK(report.table().find("backward") != std::string::npos);
  CHECK(report.records_per_second() > 0);
}

TEST_CASE("evaluation scores every record and writes both report formats") {
  auto cfg = toy("eval");
  cfg.trainer.steps = 1;
  train(cfg);
  auto report = evaluate(cfg);
  CHECK(report.images == 24);
  const auto& r = report.result;
  CHECK(r.overall.tp + r.overall.fn > 0);
  if (r.overall.tp > 0) CHECK(r.pq() == doctest::Approx(r.sq() * r.rq()));
  CHECK(report.text().find("class 25 (contiguous 4)") != std::string::npos);
  const auto csv = report.csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);

  cfg.eval_images = 5;
  CHECK(evaluate(cfg).images == 5);
  cfg.paths.checkpoint = (fs::path(cfg.paths.run_dir) / "missing.ckpt").string();
  CHECK_THROWS(evaluate(cfg));
}
