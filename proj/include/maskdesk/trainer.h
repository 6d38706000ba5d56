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

// Training, evaluation and stage profiling over record shards.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "maskdesk/config.h"
#include "maskdesk/evaluator.h"
#include "maskdesk/model.h"
#include "maskdesk/pipeline.h"
#include "maskdesk/records.h"

namespace maskdesk {

// Wall-clock seconds per stage of one step.
struct StageTimes {
  double read = 0;
  double parse = 0;
  double match = 0;
  double forward = 0;
  double backward = 0;
  double update = 0;
  double step = 0;  // whole step, measured independently

  double stage_sum() const { return read + parse + match + forward + backward + update; }
  StageTimes& operator+=(const StageTimes& o);
};

struct StepLoss {
  std::int64_t step = 0;
  double classification = 0;
  double focal = 0;
  double dice = 0;
  double total = 0;
};

// Loss is not finite. The message names the step and the image ids of the
// offending batch.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

// Cycles over every record of a shard set in (shard, record) order, parses
// batches with a pool of worker threads and collates them.
class BatchSource {
 public:
  BatchSource(const records::ShardSet& shards, const pipeline::ParserConfig& parser,
              std::uint64_t seed, std::int64_t workers, std::int64_t queue_capacity);

  // Seeds of the parse jobs depend only on (seed, batch index, slot).
  pipeline::Batch next(std::int64_t batch_size, StageTimes* times = nullptr);
  const pipeline::IdMapper& mapper() const { return mapper_; }

 private:
  records::RecordEntry read_one();

  records::ShardSet shards_;
  pipeline::ParserConfig parser_;
  pipeline::IdMapper mapper_;
  std::uint64_t seed_;
  std::int64_t workers_;
  std::int64_t capacity_;
  std::int64_t batches_ = 0;
  std::size_t shard_ = 0;
  std::optional<records::ShardReader> reader_;
  bool any_record_ = false;
};

// Gradient-norm clipping followed by Adam or SGD with momentum.
class Optimizer {
 public:
  Optimizer(const TrainerConfig& cfg, const NamedTensors<float>& params);

  // Applies one update from the current .grad() buffers. Returns the global
  // gradient norm before clipping.
  double step();

 private:
  TrainerConfig cfg_;
  NamedTensors<float> params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);

  // forward -> match -> loss -> backward -> update. Throws
  // NonFiniteLossError before touching the parameters.
  StepLoss step(const pipeline::Batch& batch, StageTimes* times = nullptr);

  MaskFormer& model() { return model_; }
  std::int64_t steps_done() const { return steps_; }

 private:
  RunConfig cfg_;
  MaskFormer model_;
  Optimizer optimizer_;
  std::int64_t steps_ = 0;
};

// Loss CSV header and row formatting (17 significant digits).
std::string loss_csv_header();
std::string loss_csv_row(const StepLoss& s);

// Full run: reads paths.shard_dir, writes loss.csv, periodic and final
// checkpoints and the resolved config under paths.run_dir. Progress lines
// go to log when non-null.
std::vector<StepLoss> train(const RunConfig& cfg, std::ostream* log = nullptr);

std::filesystem::path checkpoint_path(const RunConfig& cfg);

struct EvalReport {
  PQResult result;
  std::int64_t images = 0;
  records::ClassTable class_table;

  std::string text() const;
  std::string csv() const;
};

// Scores the checkpoint on every record (or eval_images of them) without
// cropping. Ground truth is compared at mask-logit resolution.
EvalReport evaluate(const RunConfig& cfg);

struct ProfileReport {
  std::vector<StageTimes> steps;
  std::int64_t records = 0;

  StageTimes totals() const;
  double records_per_second() const;
  // Empty string when no steps ran.
  std::string table() const;
};

// profile_steps training steps from a fresh model, timed per stage.
ProfileReport profile(const RunConfig& cfg);

}  // namespace maskdesk
