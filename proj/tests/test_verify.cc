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

#include <algorithm>

#include "doctest.h"
#include "maskdesk/verify.h"

using namespace maskdesk;

namespace {

RunConfig toy() {
  RunConfig cfg;
  cfg.parser.target = 64;
  cfg.parser.crop_sizes = {40, 50, 60};
  cfg.model.input_size = 64;
  cfg.model.n_queries = 16;
  cfg.model.hidden_size = 64;
  cfg.model.backbone_channels = 64;
  cfg.model.num_encoder_layers = 2;
  cfg.model.num_decoder_layers = 2;
  cfg.model.num_heads = 4;
  cfg.model.dim_feedforward = 128;
  cfg.model.num_classes = 4;
  return cfg;
}

std::vector<std::string> failed(const VerifyReport& r) {
  std::vector<std::string> out;
  for (const auto& c : r.checks)
    if (!c.passed) out.push_back(c.suite + " / " + c.name);
  return out;
}

}  // namespace

TEST_CASE("pristine configuration passes every suite in order") {
  const auto report = verify(toy());
  INFO(report.text());
  CHECK(report.passed());
  std::vector<std::string> suites;
  for (const auto& c : report.checks)
    if (suites.empty() || suites.back() != c.suite) suites.push_back(c.suite);
  CHECK(suites == std::vector<std::string>{"input-shape", "layer-shapes", "gradients",
                                           "loss-fixtures", "matcher", "padding", "records"});
  CHECK(report.text().find("0 failed") != std::string::npos);
}

TEST_CASE("perturbed dice epsilon fails only loss fixtures") {
  for (double eps : {0.1, 2.0, 10.0}) {
    auto cfg = toy();
    cfg.losses.dice_eps = eps;
    const auto report = verify(cfg);
    CHECK_FALSE(report.passed());
    for (const auto& c : report.checks) {
      if (!c.passed) CHECK(c.suite == "loss-fixtures");
    }
    const auto f = failed(report);
    CHECK(std::find(f.begin(), f.end(), "loss-fixtures / dice on disjoint saturated masks") !=
          f.end());
  }
}

TEST_CASE("perturbed no-object weight is detected") {
  for (double w : {1e-3, 1e-5}) {
    auto cfg = toy();
    cfg.losses.no_object_weight = w;
    const auto f = failed(verify(cfg));
    CHECK(f == std::vector<std::string>{
                   "loss-fixtures / classification, 1 real + 99 no-object queries"});
  }
}

TEST_CASE("too few queries surfaces the matcher precondition") {
  auto cfg = toy();
  cfg.model.n_queries = 4;
  const auto report = verify(cfg);
  const auto f = failed(report);
  REQUIRE(f.size() == 1);
  CHECK(f[0] == "matcher / 6-target fixture with model.n_queries queries");
  for (const auto& c : report.checks)
    if (!c.passed) CHECK(c.detail.find("target overflow") != std::string::npos);
}
