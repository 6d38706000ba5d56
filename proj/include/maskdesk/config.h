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

// Run configuration: every tunable of a run, addressable by a dotted key
// ("trainer.lr"). Files are plain text:
//
//   # comment
//   seed = 3
//   [trainer]
//   lr = 1e-3          -> trainer.lr
//
// A key inside a section may itself be dotted or fully qualified.
// Overrides given on the command line are applied after the file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "maskdesk/evaluator.h"
#include "maskdesk/losses.h"
#include "maskdesk/matcher.h"
#include "maskdesk/model.h"
#include "maskdesk/pipeline.h"

namespace maskdesk {

struct TrainerConfig {
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t batch_size = 8;
  std::int64_t steps = 300;
  double grad_clip_norm = 0.1;  // 0 disables clipping
  std::int64_t checkpoint_every = 0;  // 0 keeps only the final checkpoint
};

struct PathsConfig {
  std::string raw_dir = "data/raw";        // synth output, ingest input
  std::string shard_dir = "data/shards";   // ingest output, train/eval input
  std::string run_dir = "runs/default";    // checkpoints, loss.csv, reports
  std::string checkpoint;                  // eval/profile input; empty = run_dir/final.ckpt
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::int64_t workers = 2;         // parser threads; 0 parses inline
  std::int64_t queue_capacity = 8;  // parsed samples in flight
  std::int64_t shard_count = 4;
  std::int64_t synth_images = 200;
  std::int64_t profile_steps = 10;
  std::int64_t eval_images = 0;     // 0 = every record

  pipeline::ParserConfig parser;
  ModelConfig model;
  LossConfig losses;
  std::array<double, 3> matcher_weights{1.0, 20.0, 1.0};  // (class, focal, dice)
  TrainerConfig trainer;
  PostprocessConfig evaluator;
  PathsConfig paths;

  // Checks ranges and cross-field consistency; throws ConfigError.
  void validate() const;

  ModelConfig model_config() const;  // carries the run seed
  CostConfig cost_config() const;    // dice/focal shapes shared with the losses
  pipeline::ParserConfig eval_parser_config() const;  // no crop
};

// Every known key, in a stable order.
const std::vector<std::string>& config_keys();

// Throws ConfigError on unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// "key=value" pairs in file syntax order.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

// Defaults, then the file (if non-empty path), then overrides. Validates.
RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

// Splits "key=value"; throws ConfigError without '='.
std::pair<std::string, std::string> split_override(const std::string& assignment);

// Sectioned text that load_config reads back to the same values.
std::string dump_config(const RunConfig& cfg);

}  // namespace maskdesk
