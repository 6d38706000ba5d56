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

#include "maskdesk/config.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace maskdesk {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw ConfigError("config key " + key + ": cannot parse '" + value + "' as " + expected);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  if (v.empty()) bad_value(key, v, "a number");
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(out)) bad_value(key, v, "a number");
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Seq>
std::string join(const Seq& values, const std::function<std::string(double)>& f) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    out += f(static_cast<double>(v));
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Get>
Field int_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) {
            get(c) = parse_int(k, v);
          },
          [get](const RunConfig& c) {
            return std::to_string(get(c));
          }};
}

template <typename Get>
Field double_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) {
            get(c) = parse_double(k, v);
          },
          [get](const RunConfig& c) { return fmt_double(get(c)); }};
}

template <typename Get>
Field string_field(Get get) {
  return {[get](RunConfig& c, const std::string&, const std::string& v) { get(c) = v; },
          [get](const RunConfig& c) { return get(c); }};
}

template <typename Get>
Field float3_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) {
            const auto parts = split_list(v);
            if (parts.size() != 3) bad_value(k, v, "three comma-separated numbers");
            auto& dst = get(c);
            for (int i = 0; i < 3; ++i) dst[i] = static_cast<float>(parse_double(k, parts[i]));
          },
          [get](const RunConfig& c) {
            return join(get(c), fmt_double);
          }};
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                   c.seed = parse_uint(k, v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    f["workers"] = int_field([](auto& c) -> auto& { return c.workers; });
    f["queue_capacity"] = int_field([](auto& c) -> auto& { return c.queue_capacity; });
    f["shard_count"] = int_field([](auto& c) -> auto& { return c.shard_count; });
    f["synth_images"] = int_field([](auto& c) -> auto& { return c.synth_images; });
    f["profile_steps"] = int_field([](auto& c) -> auto& { return c.profile_steps; });
    f["eval_images"] = int_field([](auto& c) -> auto& { return c.eval_images; });

    f["parser.target_size"] = int_field([](auto& c) -> auto& { return c.parser.target; });
    f["parser.crop_probability"] =
        double_field([](auto& c) -> auto& { return c.parser.crop_probability; });
    f["parser.crop_min_fraction"] =
        double_field([](auto& c) -> auto& { return c.parser.crop_min_fraction; });
    f["parser.crop_sizes"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          std::vector<std::int64_t> sizes;
          for (const auto& p : split_list(v)) sizes.push_back(parse_int(k, p));
          c.parser.crop_sizes = sizes;
        },
        [](const RunConfig& c) {
          std::string out;
          for (auto s : c.parser.crop_sizes) out += (out.empty() ? "" : ",") + std::to_string(s);
          return out;
        }};
    f["parser.mean"] = float3_field([](auto& c) -> auto& { return c.parser.mean; });
    f["parser.std"] = float3_field([](auto& c) -> auto& { return c.parser.std; });

    f["model.input_size"] = int_field([](auto& c) -> auto& { return c.model.input_size; });
    f["model.n_queries"] = int_field([](auto& c) -> auto& { return c.model.n_queries; });
    f["model.hidden_size"] = int_field([](auto& c) -> auto& { return c.model.hidden_size; });
    f["model.backbone_channels"] =
        int_field([](auto& c) -> auto& { return c.model.backbone_channels; });
    f["model.num_encoder_layers"] =
        int_field([](auto& c) -> auto& { return c.model.num_encoder_layers; });
    f["model.num_decoder_layers"] =
        int_field([](auto& c) -> auto& { return c.model.num_decoder_layers; });
    f["model.num_heads"] = int_field([](auto& c) -> auto& { return c.model.num_heads; });
    f["model.dim_feedforward"] =
        int_field([](auto& c) -> auto& { return c.model.dim_feedforward; });
    f["model.num_classes"] = int_field([](auto& c) -> auto& { return c.model.num_classes; });

    f["losses.dice_eps"] = double_field([](auto& c) -> auto& { return c.losses.dice_eps; });
    f["losses.focal_alpha"] =
        double_field([](auto& c) -> auto& { return c.losses.focal_alpha; });
    f["losses.focal_gamma"] =
        double_field([](auto& c) -> auto& { return c.losses.focal_gamma; });
    f["losses.no_object_weight"] =
        double_field([](auto& c) -> auto& { return c.losses.no_object_weight; });
    f["losses.weight_class"] =
        double_field([](auto& c) -> auto& { return c.losses.weights[0]; });
    f["losses.weight_focal"] =
        double_field([](auto& c) -> auto& { return c.losses.weights[1]; });
    f["losses.weight_dice"] =
        double_field([](auto& c) -> auto& { return c.losses.weights[2]; });

    f["matcher.cost_class"] =
        double_field([](auto& c) -> auto& { return c.matcher_weights[0]; });
    f["matcher.cost_focal"] =
        double_field([](auto& c) -> auto& { return c.matcher_weights[1]; });
    f["matcher.cost_dice"] =
        double_field([](auto& c) -> auto& { return c.matcher_weights[2]; });

    f["trainer.optimizer"] = string_field([](auto& c) -> auto& { return c.trainer.optimizer; });
    f["trainer.lr"] = double_field([](auto& c) -> auto& { return c.trainer.lr; });
    f["trainer.momentum"] = double_field([](auto& c) -> auto& { return c.trainer.momentum; });
    f["trainer.beta1"] = double_field([](auto& c) -> auto& { return c.trainer.beta1; });
    f["trainer.beta2"] = double_field([](auto& c) -> auto& { return c.trainer.beta2; });
    f["trainer.adam_eps"] = double_field([](auto& c) -> auto& { return c.trainer.adam_eps; });
    f["trainer.batch_size"] = int_field([](auto& c) -> auto& { return c.trainer.batch_size; });
    f["trainer.steps"] = int_field([](auto& c) -> auto& { return c.trainer.steps; });
    f["trainer.grad_clip_norm"] =
        double_field([](auto& c) -> auto& { return c.trainer.grad_clip_norm; });
    f["trainer.checkpoint_every"] =
        int_field([](auto& c) -> auto& { return c.trainer.checkpoint_every; });

    f["evaluator.confidence_threshold"] =
        double_field([](auto& c) -> auto& { return c.evaluator.confidence_threshold; });
    f["evaluator.mask_threshold"] =
        double_field([](auto& c) -> auto& { return c.evaluator.mask_threshold; });

    f["paths.raw_dir"] = string_field([](auto& c) -> auto& { return c.paths.raw_dir; });
    f["paths.shard_dir"] = string_field([](auto& c) -> auto& { return c.paths.shard_dir; });
    f["paths.run_dir"] = string_field([](auto& c) -> auto& { return c.paths.run_dir; });
    f["paths.checkpoint"] = string_field([](auto& c) -> auto& { return c.paths.checkpoint; });
    return f;
  }();
  return fields;
}

const Field& field(const std::string& key) {
  const auto& r = registry();
  auto it = r.find(key);
  if (it == r.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : registry()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, key, trim(value));
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return field(key).get(cfg);
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (!section.empty() && key.rfind(section + ".", 0) != 0) key = section + "." + key;
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

std::pair<std::string, std::string> split_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  return {trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1))};
}

RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : parse_config_text(ss.str())) set_config_value(cfg, k, v);
  }
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

std::string dump_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& key : config_keys()) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += (dot == std::string::npos ? key : key.substr(dot + 1)) + " = " +
           get_config_value(cfg, key) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  model_config().validate();
  require(workers >= 0, "workers must be >= 0");
  require(queue_capacity >= 1, "queue_capacity must be >= 1");
  require(shard_count >= 1, "shard_count must be >= 1");
  require(synth_images >= 0, "synth_images must be >= 0");
  require(profile_steps >= 0, "profile_steps must be >= 0");
  require(eval_images >= 0, "eval_images must be >= 0");
  require(parser.target == model.input_size,
          "parser.target_size (" + std::to_string(parser.target) +
              ") must equal model.input_size (" + std::to_string(model.input_size) + ")");
  require(parser.crop_probability >= 0 && parser.crop_probability <= 1,
          "parser.crop_probability must lie in [0, 1]");
  require(parser.crop_min_fraction > 0 && parser.crop_min_fraction <= 1,
          "parser.crop_min_fraction must lie in (0, 1]");
  require(!parser.crop_sizes.empty(), "parser.crop_sizes must not be empty");
  for (auto s : parser.crop_sizes) require(s > 0, "parser.crop_sizes must be positive");
  for (float s : parser.std) require(s > 0, "parser.std must be positive");
  require(losses.dice_eps >= 0, "losses.dice_eps must be >= 0");
  require(losses.no_object_weight >= 0, "losses.no_object_weight must be >= 0");
  require(losses.focal_alpha >= 0 && losses.focal_alpha <= 1,
          "losses.focal_alpha must lie in [0, 1]");
  require(losses.focal_gamma >= 0, "losses.focal_gamma must be >= 0");
  require(trainer.optimizer == "adam" || trainer.optimizer == "sgd",
          "trainer.optimizer must be adam or sgd, got '" + trainer.optimizer + "'");
  require(trainer.lr >= 0, "trainer.lr must be >= 0");
  require(trainer.batch_size >= 1, "trainer.batch_size must be >= 1");
  require(trainer.steps >= 0, "trainer.steps must be >= 0");
  require(trainer.grad_clip_norm >= 0, "trainer.grad_clip_norm must be >= 0");
  require(trainer.checkpoint_every >= 0, "trainer.checkpoint_every must be >= 0");
  require(trainer.beta1 >= 0 && trainer.beta1 < 1 && trainer.beta2 >= 0 && trainer.beta2 < 1,
          "trainer.beta1/beta2 must lie in [0, 1)");
  require(evaluator.mask_threshold >= 0 && evaluator.mask_threshold <= 1,
          "evaluator.mask_threshold must lie in [0, 1]");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.seed = seed;
  return m;
}

CostConfig RunConfig::cost_config() const {
  CostConfig c;
  c.weights = matcher_weights;
  c.dice_eps = losses.dice_eps;
  c.focal_alpha = losses.focal_alpha;
  c.focal_gamma = losses.focal_gamma;
  return c;
}

pipeline::ParserConfig RunConfig::eval_parser_config() const {
  auto p = parser;
  p.crop_probability = 0.0;
  return p;
}

}  // namespace maskdesk
