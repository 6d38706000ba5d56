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

#include "maskdesk/verify.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <unistd.h>

#include "maskdesk/losses.h"
#include "maskdesk/matcher.h"
#include "maskdesk/model.h"
#include "maskdesk/ops.h"
#include "maskdesk/pipeline.h"
#include "maskdesk/position_embedding.h"
#include "maskdesk/records.h"

namespace maskdesk {

namespace {

namespace fs = std::filesystem;

// Recomputed offline with default hyper-parameters (dice eps 1, focal
// alpha 0.25 / gamma 2, no-object weight 1e-4, weights 1/20/1); see
// tests/oracles/loss_fixture.py and tests/oracles/verify_fixtures.py.
constexpr double kFixtureClassification = 1.304089887225;
constexpr double kFixtureFocal = 0.227033693509;
constexpr double kFixtureDice = 0.525589571028;
constexpr double kFixtureTotal = 6.370353328424;
constexpr double kDiceDisjoint = 0.8;
constexpr double kClassification100 = 0.731496549561;

constexpr double kFixtureTolerance = 1e-3;
constexpr double kGradTolerance = 1e-4;
constexpr double kPaddingTolerance = 1e-7;

struct Measure {
  Measure(double e = 0.0, std::string d = {}) : error(e), detail(std::move(d)) {}
  double error;
  std::string detail;
};

class Runner {
 public:
  explicit Runner(VerifyReport& report) : report_(report) {}

  void suite(std::string name) { suite_ = std::move(name); }

  // A check passes when fn returns an error <= tolerance. Exceptions fail
  // the check with their message.
  void check(const std::string& name, double tolerance, const std::function<Measure()>& fn) {
    CheckResult r{suite_, name, false, 0.0, tolerance, ""};
    try {
      auto m = fn();
      r.error = m.error;
      r.detail = m.detail;
      r.passed = std::isfinite(m.error) && m.error <= tolerance;
    } catch (const std::exception& e) {
      r.detail = e.what();
      r.error = std::numeric_limits<double>::infinity();
    }
    report_.checks.push_back(std::move(r));
  }

 private:
  VerifyReport& report_;
  std::string suite_;
};

Measure boolean(bool ok, std::string detail = "") { return {ok ? 0.0 : 1.0, std::move(detail)}; }

Measure shape_is(const Shape& got, const Shape& want) {
  return boolean(got == want, "got " + to_string(got) + ", want " + to_string(want));
}

template <typename T>
BasicTensor<T> uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<T>(d(rng));
  return BasicTensor<T>(std::move(shape), std::move(v));
}

std::vector<std::uint8_t> bits(std::size_t n, std::mt19937_64& rng, double p = 0.5) {
  std::bernoulli_distribution b(p);
  std::vector<std::uint8_t> v(n);
  for (auto& x : v) x = b(rng);
  return v;
}

// ||analytic - numeric|| / max(||analytic||, ||numeric||) over probed
// entries of all inputs, by central differences.
double fd_relative_error(const std::function<Tensor64()>& loss_fn, std::vector<Tensor64> inputs,
                         double step, std::size_t per_input, std::uint64_t seed) {
  for (auto& t : inputs) t.set_requires_grad(true);
  backward<double>(loss_fn(), inputs);
  std::mt19937_64 rng(seed);
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(analytic.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_input);
    }
    for (std::size_t i : idx) {
      auto data = t.mutable_data();
      const double saved = data[i];
      double plus, minus;
      {
        NoGradGuard no_grad;
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
    }
  }
  if (a2 == 0 && n2 == 0) return 0.0;
  return std::sqrt(diff2) / std::max(std::sqrt(a2), std::sqrt(n2));
}

pipeline::TargetSet square_targets(int n, std::int64_t side, std::int64_t classes,
                                   std::mt19937_64& rng) {
  pipeline::TargetSet t;
  for (int i = 0; i < n; ++i) {
    BinaryMask m(side, side);
    const auto y0 = static_cast<std::int64_t>(rng() % (side / 2));
    const auto x0 = static_cast<std::int64_t>(rng() % (side / 2));
    for (auto y = y0; y < y0 + side / 3; ++y)
      for (auto x = x0; x < x0 + side / 3; ++x) m(y, x) = 1;
    t.masks.push_back(m);
    t.labels.push_back(1 + static_cast<std::int64_t>(rng() % classes));
  }
  return t;
}

ModelConfig gradient_model_config() {
  ModelConfig c;
  c.input_size = 64;
  c.n_queries = 4;
  c.hidden_size = 8;
  c.backbone_channels = 16;
  c.num_encoder_layers = 2;
  c.num_decoder_layers = 2;
  c.num_heads = 2;
  c.dim_feedforward = 16;
  c.num_classes = 2;
  c.seed = 11;
  return c;
}

ModelConfig toy_model_config() {
  ModelConfig c;
  c.input_size = 64;
  c.n_queries = 16;
  c.hidden_size = 64;
  c.backbone_channels = 64;
  c.num_encoder_layers = 2;
  c.num_decoder_layers = 2;
  c.num_heads = 4;
  c.dim_feedforward = 128;
  c.num_classes = 4;
  c.seed = 3;
  return c;
}

records::RecordEntry random_entry(std::mt19937_64& rng) {
  records::RecordEntry e;
  const int keys = static_cast<int>(rng() % 6);
  for (int k = 0; k < keys; ++k) {
    const auto n = rng() % 40;
    const std::string key = "k" + std::to_string(k);
    switch (rng() % 3) {
      case 0: {
        records::Bytes b;
        for (std::size_t i = 0; i < n; ++i) b.push_back(static_cast<char>(rng() & 0xff));
        e[key] = b;
        break;
      }
      case 1: {
        records::Int64List v;
        for (std::size_t i = 0; i < n; ++i) v.push_back(static_cast<std::int64_t>(rng()));
        e[key] = v;
        break;
      }
      default: {
        records::FloatList v;
        std::uniform_real_distribution<float> d(-1e6f, 1e6f);
        for (std::size_t i = 0; i < n; ++i) v.push_back(d(rng));
        e[key] = v;
      }
    }
  }
  return e;
}

pipeline::RawSample random_raw(std::int64_t h, std::int64_t w, std::int64_t classes,
                               std::mt19937_64& rng) {
  pipeline::RawSample s;
  s.height = h;
  s.width = w;
  s.image_id = 17;
  s.rgb.resize(static_cast<std::size_t>(h * w * 3));
  for (auto& b : s.rgb) b = static_cast<std::uint8_t>(rng() & 0xff);
  s.class_mask = LabelGrid(h, w);
  s.instance_mask = LabelGrid(h, w);
  for (int k = 0; k < 3; ++k) {
    const auto y0 = static_cast<std::int64_t>(rng() % h), x0 = static_cast<std::int64_t>(rng() % w);
    for (auto y = y0; y < std::min(h, y0 + h / 2); ++y)
      for (auto x = x0; x < std::min(w, x0 + w / 2); ++x) {
        s.class_mask(y, x) = static_cast<std::int32_t>(1 + k % classes);
        s.instance_mask(y, x) = k + 1;
      }
  }
  return s;
}

void shape_suites(Runner& run, const RunConfig& cfg) {
  const auto mc = cfg.model_config();
  const auto S = mc.input_size, Q = mc.n_queries, C = mc.hidden_size;
  const auto K = mc.num_classes;

  run.suite("input-shape");
  run.check("parser emits [1, S, S, 3] for S = model.input_size", 0, [&] {
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::int64_t> ids;
    for (std::int64_t k = 1; k <= K; ++k) ids.push_back(k);
    auto raw = random_raw(std::max<std::int64_t>(8, 3 * S / 4), std::max<std::int64_t>(8, S / 2),
                          K, rng);
    auto p = pipeline::parse(raw, cfg.parser, pipeline::build_id_mapper(ids), cfg.seed);
    return shape_is(p.sample.image.shape(), {1, S, S, 3});
  });

  std::optional<MaskFormer> model;
  std::optional<Tensor> features, decoded;
  std::optional<MaskFormer::PixelDecoderOutput> pixel;
  std::optional<ModelOutputs> outputs;
  run.check("model accepts [1, S, S, 3]", 0, [&] {
    NoGradGuard no_grad;
    model.emplace(mc);
    features = model->backbone(Tensor::zeros({1, S, S, 3}));
    pixel = model->pixel_decoder(*features);
    decoded = model->transformer_decoder(pixel->encoded);
    outputs = model->heads(*decoded, pixel->mask_features);
    return shape_is(outputs->mask_logits.shape(), {1, Q, S / 4, S / 4});
  });
  auto rejects = [&]<typename E>(Shape bad, E*) {
    return [&, bad] {
      if (!model) throw ContractError("model was not built");
      NoGradGuard no_grad;
      try {
        model->forward(Tensor::zeros(bad));
      } catch (const E& e) {
        return boolean(true, e.what());
      }
      return boolean(false, "input " + to_string(bad) + " was accepted");
    };
  };
  run.check("model rejects a 4-channel input", 0,
            rejects({1, S, S, 4}, static_cast<ShapeError*>(nullptr)));
  run.check("model rejects a side that is not a multiple of 32", 0,
            rejects({1, S + 8, S, 3}, static_cast<ConfigError*>(nullptr)));

  run.suite("layer-shapes");
  auto need = [](bool ok) {
    if (!ok) throw ContractError("forward pass did not complete");
  };
  run.check("backbone [1, S/32, S/32, Cb]", 0, [&] {
    need(features.has_value());
    return shape_is(features->shape(), {1, S / 32, S / 32, mc.backbone_channels});
  });
  run.check("position embedding [1, S/32, S/32, C]", 0, [&] {
    auto pos = sine_position_embedding<float>(S / 32, S / 32, C);
    double mean = 0;
    for (float v : pos.data()) mean += v;
    mean /= static_cast<double>(pos.numel());
    auto m = shape_is(pos.shape(), {1, S / 32, S / 32, C});
    m.detail += "; mean " + std::to_string(mean);
    return m;
  });
  run.check("pixel decoder encoded [1, S/32, S/32, C]", 0, [&] {
    need(pixel.has_value());
    return shape_is(pixel->encoded.shape(), {1, S / 32, S / 32, C});
  });
  run.check("pixel decoder mask features [1, S/4, S/4, C]", 0, [&] {
    need(pixel.has_value());
    return shape_is(pixel->mask_features.shape(), {1, S / 4, S / 4, C});
  });
  run.check("transformer decoder [1, Q, C]", 0, [&] {
    need(decoded.has_value());
    return shape_is(decoded->shape(), {1, Q, C});
  });
  run.check("class logits [1, Q, K+1]", 0, [&] {
    need(outputs.has_value());
    return shape_is(outputs->class_logits.shape(), {1, Q, K + 1});
  });
  run.check("mask logits [1, Q, S/4, S/4]", 0, [&] {
    need(outputs.has_value());
    return shape_is(outputs->mask_logits.shape(), {1, Q, S / 4, S / 4});
  });
}

void gradient_suite(Runner& run, const RunConfig& cfg) {
  run.suite("gradients");
  const auto& lc = cfg.losses;
  std::mt19937_64 rng(cfg.seed + 101);
  auto z = uniform_tensor<double>({2, 3, 4}, rng, -3, 3);
  auto gt = bits(24, rng);
  auto valid = bits(12, rng, 0.8);
  valid[0] = 1;
  auto c = uniform_tensor<double>({6, 5}, rng, -3, 3);
  std::vector<std::int64_t> labels{1, 2, 5, 4, 5, 3};

  run.check("dice loss", kGradTolerance, [&] {
    return Measure{fd_relative_error([&] { return dice_loss(z, gt, valid, lc.dice_eps); }, {z},
                                     1e-5, 64, 1)};
  });
  run.check("focal loss", kGradTolerance, [&] {
    return Measure{fd_relative_error(
        [&] { return focal_loss(z, gt, valid, lc.focal_alpha, lc.focal_gamma); }, {z}, 1e-5, 64,
        2)};
  });
  run.check("classification loss", kGradTolerance, [&] {
    return Measure{fd_relative_error(
        [&] { return classification_loss(c, labels, lc.no_object_weight); }, {c}, 1e-5, 64, 3)};
  });

  run.check("toy model, 2 encoder + 2 decoder layers (double)", kGradTolerance, [&] {
    const auto mc = gradient_model_config();
    BasicMaskFormer<double> model(mc);
    std::mt19937_64 r(6);
    auto image = uniform_tensor<double>({2, 64, 64, 3}, r, -1, 1);
    std::vector<pipeline::TargetSet> targets{square_targets(2, 64, 2, r),
                                             square_targets(1, 64, 2, r)};
    std::vector<BinaryMask> masks(2, BinaryMask(64, 64, std::uint8_t{1}));
    for (std::int64_t y = 0; y < 64; ++y)
      for (std::int64_t x = 48; x < 64; ++x) masks[1](y, x) = 0;
    // Matching is piecewise constant; keep it fixed.
    std::vector<Assignment> assign{{{2, 0}, 0}, {{3}, 0}};
    std::vector<Tensor64> params;
    for (const auto& [_, t] : model.parameters()) params.push_back(t);
    const double err = fd_relative_error(
        [&] { return total_loss(model.forward(image), targets, masks, assign, lc).objective; },
        params, 1e-6, 6, 4);
    return Measure{err, "pooled over " + std::to_string(params.size()) + " parameter tensors"};
  });

  run.check("every parameter receives a nonzero gradient", 0, [&] {
    const auto mc = toy_model_config();
    MaskFormer model(mc);
    std::mt19937_64 r(7);
    auto image = uniform_tensor<float>({2, 64, 64, 3}, r, -2, 2);
    std::vector<pipeline::TargetSet> targets{square_targets(3, 64, 4, r),
                                             square_targets(2, 64, 4, r)};
    std::vector<BinaryMask> masks(2, BinaryMask(64, 64, std::uint8_t{1}));
    auto out = model.forward(image);
    auto assign = match_batch(out, std::span(targets), std::span(masks), cfg.cost_config());
    auto bundle = total_loss(out, std::span(targets), std::span(masks), std::span(assign), lc);
    std::vector<Tensor> params;
    for (const auto& [_, t] : model.parameters()) params.push_back(t);
    backward<float>(bundle.objective, params);
    std::string dead;
    for (const auto& [name, t] : model.parameters()) {
      if (std::none_of(t.grad().begin(), t.grad().end(), [](float g) { return g != 0.0f; }))
        dead += (dead.empty() ? "" : ", ") + name;
    }
    return boolean(dead.empty(), dead.empty() ? "" : "zero gradient: " + dead);
  });
}

void loss_fixture_suite(Runner& run, const RunConfig& cfg) {
  run.suite("loss-fixtures");
  const auto& lc = cfg.losses;
  std::optional<LossBundle> bundle;
  auto fixture = [&]() -> const LossBundle& {
    if (!bundle) {
      ModelOutputs out{Tensor({1, 2, 3, 3}, {1.5f, -0.5f, 0.2f, 0.8f, 2.0f, -1.0f, -1.2f, 0.3f,
                                             0.0f, -0.7f, 0.4f, 1.1f, -2.0f, 0.6f, 0.9f, 0.5f,
                                             -1.5f, 1.3f}),
                       Tensor({1, 2, 3}, {0.2f, 1.0f, -0.5f, -0.3f, 0.1f, 0.8f})};
      std::vector<pipeline::TargetSet> targets{
          {{BinaryMask(3, 3, {1, 0, 0, 1, 1, 0, 0, 1, 0})}, {2}}};
      std::vector<BinaryMask> valid{BinaryMask(3, 3, {1, 1, 0, 1, 1, 0, 1, 1, 0})};
      std::vector<Assignment> assign{{{1}, 0.0}};
      bundle = total_loss(out, std::span(targets), std::span(valid), std::span(assign), lc);
    }
    return *bundle;
  };
  auto against = [](double got, double want) {
    return Measure{std::abs(got - want),
                   "got " + std::to_string(got) + ", want " + std::to_string(want)};
  };
  run.check("matched pair: classification", kFixtureTolerance,
            [&] { return against(fixture().classification, kFixtureClassification); });
  run.check("matched pair: focal", kFixtureTolerance,
            [&] { return against(fixture().focal, kFixtureFocal); });
  run.check("matched pair: dice", kFixtureTolerance,
            [&] { return against(fixture().dice, kFixtureDice); });
  run.check("matched pair: weighted total", kFixtureTolerance,
            [&] { return against(fixture().total, kFixtureTotal); });

  run.check("dice on disjoint saturated masks", kFixtureTolerance, [&] {
    Tensor logits({1, 4}, {30.f, 30.f, -30.f, -30.f});
    const std::uint8_t gt[] = {0, 0, 1, 1}, valid[] = {1, 1, 1, 1};
    return against(dice_loss(logits, gt, valid, lc.dice_eps).item(), kDiceDisjoint);
  });

  run.check("classification, 1 real + 99 no-object queries", kFixtureTolerance, [&] {
    const std::int64_t K = 4;
    std::vector<float> logits;
    std::vector<std::int64_t> labels;
    logits.push_back(static_cast<float>(std::log(0.5)));
    for (int k = 0; k < K; ++k) logits.push_back(static_cast<float>(std::log(0.125)));
    labels.push_back(1);
    for (int q = 0; q < 99; ++q) {
      for (int k = 0; k < K; ++k) logits.push_back(static_cast<float>(std::log(0.99 / K)));
      logits.push_back(static_cast<float>(std::log(0.01)));
      labels.push_back(K + 1);
    }
    Tensor t({100, K + 1}, logits);
    return against(classification_loss(t, labels, lc.no_object_weight).item(),
                   kClassification100);
  });
}

void matcher_suite(Runner& run, const RunConfig& cfg) {
  run.suite("matcher");
  run.check("hungarian equals brute force on 200 random matrices", 0, [&] {
    std::mt19937_64 rng(cfg.seed + 202);
    std::uniform_real_distribution<double> value(0, 10);
    std::int64_t mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const auto q = 1 + static_cast<std::int64_t>(rng() % 8);
      const auto n = static_cast<std::int64_t>(rng() % (q + 1));
      std::vector<double> rect(static_cast<std::size_t>(n * q));
      for (auto& v : rect) v = value(rng);
      const auto fast = hungarian(square_pad(rect, n, q, q));
      const auto slow = brute_force_match(rect, n, q);
      if (fast.total_real_cost != slow.total_real_cost) ++mismatches;
    }
    return boolean(mismatches == 0, std::to_string(mismatches) + " of 200 totals differ");
  });

  run.check("6-target fixture with model.n_queries queries", 0, [&] {
    const auto Q = cfg.model.n_queries, K = cfg.model.num_classes;
    std::mt19937_64 rng(cfg.seed + 203);
    Tensor masks = uniform_tensor<float>({Q, 8, 8}, rng, -3, 3);
    Tensor classes = uniform_tensor<float>({Q, K + 1}, rng, -3, 3);
    auto targets = square_targets(6, 8, K, rng);
    BinaryMask valid(8, 8, std::uint8_t{1});
    const auto cost = pair_costs(masks, classes, targets, valid, cfg.cost_config());
    const auto a = hungarian(build_cost_matrix(masks, classes, targets, valid, cfg.cost_config()));
    std::vector<std::int64_t> used = a.query_for_gt;
    std::sort(used.begin(), used.end());
    const bool injective = std::adjacent_find(used.begin(), used.end()) == used.end();
    double sum = 0;
    for (std::size_t r = 0; r < a.query_for_gt.size(); ++r)
      sum += cost[r * static_cast<std::size_t>(Q) + static_cast<std::size_t>(a.query_for_gt[r])];
    bool optimal = true;
    if (Q <= kBruteForceLimit) optimal = brute_force_match(cost, 6, Q).total_real_cost == sum;
    return boolean(a.query_for_gt.size() == 6 && injective && sum == a.total_real_cost && optimal,
                   "total cost " + std::to_string(a.total_real_cost));
  });
}

void padding_suite(Runner& run, const RunConfig& cfg) {
  run.suite("padding");
  const auto& lc = cfg.losses;
  // Appends 3 invalid columns of arbitrary logits and labels.
  std::mt19937_64 rng(cfg.seed + 303);
  double dice_err = 0, focal_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t P = 2, H = 4, W = 5, W2 = W + 3;
    auto z = uniform_tensor<double>({P, H, W}, rng, -4, 4);
    auto gt = bits(static_cast<std::size_t>(P * H * W), rng);
    auto valid = bits(static_cast<std::size_t>(H * W), rng, 0.8);
    valid[0] = 1;
    std::uniform_real_distribution<double> junk(-5, 5);
    std::vector<double> zp;
    std::vector<std::uint8_t> gp, vp;
    for (std::int64_t p = 0; p < P; ++p)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W2; ++x) {
          const bool real = x < W;
          zp.push_back(real ? z.data()[(p * H + y) * W + x] : junk(rng));
          gp.push_back(real ? gt[(p * H + y) * W + x] : static_cast<std::uint8_t>(rng() & 1));
        }
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W2; ++x) vp.push_back(x < W ? valid[y * W + x] : 0);
    Tensor64 padded({P, H, W2}, zp);
    dice_err = std::max(dice_err, std::abs(dice_loss(z, gt, valid, lc.dice_eps).item() -
                                           dice_loss(padded, gp, vp, lc.dice_eps).item()));
    focal_err = std::max(
        focal_err,
        std::abs(focal_loss(z, gt, valid, lc.focal_alpha, lc.focal_gamma).item() -
                 focal_loss(padded, gp, vp, lc.focal_alpha, lc.focal_gamma).item()));
  }
  run.check("dice ignores padding on 50 fixtures", kPaddingTolerance,
            [&] { return Measure{dice_err}; });
  run.check("focal ignores padding on 50 fixtures", kPaddingTolerance,
            [&] { return Measure{focal_err}; });
}

void records_suite(Runner& run, const RunConfig& cfg) {
  run.suite("records");
  run.check("payload encode/decode identity on 200 entries", 0, [&] {
    std::mt19937_64 rng(cfg.seed + 404);
    int bad = 0;
    for (int i = 0; i < 200; ++i) {
      auto e = random_entry(rng);
      if (records::decode_payload(records::encode_payload(e)) != e) ++bad;
    }
    return boolean(bad == 0, std::to_string(bad) + " entries changed");
  });
  run.check("shard write/read is byte-exact", 0, [&] {
    std::mt19937_64 rng(cfg.seed + 405);
    std::vector<records::RecordEntry> entries;
    for (int i = 0; i < 50; ++i) entries.push_back(random_entry(rng));
    const auto dir = fs::temp_directory_path() /
                     ("maskdesk-verify-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    auto set = records::write_shards(entries, 3, dir);
    auto back = records::read_shards(set);
    fs::remove_all(dir);
    std::vector<std::string> a, b;
    for (const auto& e : entries) a.push_back(records::encode_payload(e));
    for (const auto& e : back) b.push_back(records::encode_payload(e));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return boolean(a == b);
  });
  run.check("panoptic sample survives to_record/from_record", 0, [&] {
    std::mt19937_64 rng(cfg.seed + 406);
    auto raw = random_raw(20, 30, 3, rng);
    auto back = pipeline::from_record(pipeline::to_record(raw));
    return boolean(back.rgb == raw.rgb && back.class_mask == raw.class_mask &&
                   back.instance_mask == raw.instance_mask && back.image_id == raw.image_id);
  });
  run.check("shard balance on skewed sizes (max/min - 1.10)", 0, [&] {
    std::mt19937_64 rng(cfg.seed + 407);
    std::lognormal_distribution<double> size(7.0, 1.0);
    std::vector<std::uint64_t> sizes(1000);
    for (auto& s : sizes) s = static_cast<std::uint64_t>(size(rng)) + 1;
    const std::size_t shards = 8;
    auto assignment = records::assign_to_shards(sizes, shards);
    std::vector<std::uint64_t> load(shards, records::kFileHeaderBytes);
    for (std::size_t i = 0; i < sizes.size(); ++i) load[assignment[i]] += sizes[i];
    const auto [lo, hi] = std::minmax_element(load.begin(), load.end());
    const double ratio = static_cast<double>(*hi) / static_cast<double>(*lo);
    return Measure{std::max(0.0, ratio - 1.10), "ratio " + std::to_string(ratio)};
  });
}

}  // namespace

bool VerifyReport::passed() const { return failures() == 0; }

std::size_t VerifyReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(checks.begin(), checks.end(), [](const auto& c) { return !c.passed; }));
}

std::string VerifyReport::text() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    char err[64];
    std::snprintf(err, sizeof err, "error %.3e (tol %.1e)", c.error, c.tolerance);
    os << (c.passed ? "PASS  " : "FAIL  ") << c.suite << " / " << c.name << "  " << err;
    if (!c.detail.empty()) os << "  " << c.detail;
    os << '\n';
  }
  os << checks.size() << " checks, " << failures() << " failed\n";
  return os.str();
}

VerifyReport verify(const RunConfig& cfg) {
  VerifyReport report;
  Runner run(report);
  shape_suites(run, cfg);
  gradient_suite(run, cfg);
  loss_fixture_suite(run, cfg);
  matcher_suite(run, cfg);
  padding_suite(run, cfg);
  records_suite(run, cfg);
  return report;
}

}  // namespace maskdesk
