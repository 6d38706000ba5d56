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

#include "maskdesk/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "maskdesk/losses.h"
#include "maskdesk/matcher.h"
#include "maskdesk/ops.h"
#include "maskdesk/work_queue.h"

namespace maskdesk {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string ids_of(const pipeline::Batch& batch) {
  std::string out = "[";
  for (std::size_t i = 0; i < batch.image_ids.size(); ++i)
    out += (i ? ", " : "") + std::to_string(batch.image_ids[i]);
  return out + "]";
}

void check_classes(const RunConfig& cfg, const pipeline::IdMapper& mapper) {
  if (mapper.num_classes() != cfg.model.num_classes) {
    throw ConfigError("model.num_classes is " + std::to_string(cfg.model.num_classes) +
                      " but the shards hold " + std::to_string(mapper.num_classes()) +
                      " classes");
  }
}

}  // namespace

StageTimes& StageTimes::operator+=(const StageTimes& o) {
  read += o.read;
  parse += o.parse;
  match += o.match;
  forward += o.forward;
  backward += o.backward;
  update += o.update;
  step += o.step;
  return *this;
}

BatchSource::BatchSource(const records::ShardSet& shards, const pipeline::ParserConfig& parser,
                         std::uint64_t seed, std::int64_t workers, std::int64_t queue_capacity)
    : shards_(shards),
      parser_(parser),
      mapper_(pipeline::IdMapper::from_table(shards.class_table)),
      seed_(seed),
      workers_(workers),
      capacity_(queue_capacity) {
  if (shards_.shards.empty() || shards_.record_count == 0) {
    throw InputError("no records under " + shards_.dir.string());
  }
}

records::RecordEntry BatchSource::read_one() {
  records::RecordEntry entry;
  // At most one full pass over the shards per record; the constructor
  // guarantees at least one record exists.
  for (std::size_t tries = 0; tries <= shards_.shards.size(); ++tries) {
    if (!reader_) reader_.emplace(shards_.shard_path(shard_));
    if (reader_->next(entry)) return entry;
    reader_.reset();
    shard_ = (shard_ + 1) % shards_.shards.size();
  }
  throw InputError("shards under " + shards_.dir.string() + " hold no readable records");
}

pipeline::Batch BatchSource::next(std::int64_t batch_size, StageTimes* times) {
  auto t0 = Clock::now();
  std::vector<records::RecordEntry> entries;
  for (std::int64_t i = 0; i < batch_size; ++i) entries.push_back(read_one());
  if (times) times->read += seconds_since(t0);

  t0 = Clock::now();
  const std::uint64_t batch_seed = splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(batches_)));
  OrderedWorkQueue<pipeline::Parsed> queue(
      [&](std::size_t i) {
        return pipeline::parse(entries[i], parser_, mapper_, splitmix64(batch_seed + i));
      },
      entries.size(), static_cast<std::size_t>(workers_), static_cast<std::size_t>(capacity_));
  std::vector<pipeline::PanopticSample> samples;
  std::vector<pipeline::TargetSet> targets;
  while (auto p = queue.next()) {
    samples.push_back(std::move(p->sample));
    targets.push_back(std::move(p->targets));
  }
  auto batch = pipeline::collate(samples, targets);
  if (times) times->parse += seconds_since(t0);
  ++batches_;
  return batch;
}

Optimizer::Optimizer(const TrainerConfig& cfg, const NamedTensors<float>& params)
    : cfg_(cfg), params_(params) {
  for (const auto& [_, p] : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    if (cfg_.optimizer == "adam") v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

double Optimizer::step() {
  double sq = 0;
  for (const auto& [_, p] : params_)
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  double scale = 1.0;
  if (cfg_.grad_clip_norm > 0 && norm > cfg_.grad_clip_norm)
    scale = cfg_.grad_clip_norm / (norm + 1e-6);

  ++t_;
  const bool adam = cfg_.optimizer == "adam";
  const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].second;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& m = m_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = scale * grad[i];
      double delta;
      if (adam) {
        m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1 - cfg_.beta2) * g * g;
        delta = cfg_.lr * (m[i] / bc1) / (std::sqrt(v_[k][i] / bc2) + cfg_.adam_eps);
      } else {
        m[i] = cfg_.momentum * m[i] + g;
        delta = cfg_.lr * m[i];
      }
      data[i] = static_cast<float>(static_cast<double>(data[i]) - delta);
    }
  }
  return norm;
}

Trainer::Trainer(const RunConfig& cfg)
    : cfg_(cfg), model_(cfg.model_config()), optimizer_(cfg.trainer, model_.parameters()) {
  cfg_.validate();
}

StepLoss Trainer::step(const pipeline::Batch& batch, StageTimes* times) {
  StageTimes local;
  auto t0 = Clock::now();
  auto outputs = model_.forward(batch.images);
  local.forward += seconds_since(t0);
  const std::int64_t step_number = steps_ + 1;
  const auto prefix = "non-finite loss at step " + std::to_string(step_number) +
                      " (batch image ids " + ids_of(batch) + "): ";
  // The matcher rejects non-finite costs, so catch bad outputs first.
  for (const auto* t : {&outputs.class_logits, &outputs.mask_logits}) {
    const auto d = t->data();
    if (!std::all_of(d.begin(), d.end(), [](float v) { return std::isfinite(v); }))
      throw NonFiniteLossError(prefix + "model outputs contain NaN or Inf");
  }

  t0 = Clock::now();
  std::vector<Assignment> assignments;
  {
    NoGradGuard no_grad;
    assignments = match_batch(outputs, std::span(batch.targets), std::span(batch.valid),
                              cfg_.cost_config());
  }
  local.match += seconds_since(t0);

  t0 = Clock::now();
  auto bundle = total_loss(outputs, std::span(batch.targets), std::span(batch.valid),
                           std::span(assignments), cfg_.losses);
  local.forward += seconds_since(t0);
  if (!std::isfinite(bundle.total)) {
    throw NonFiniteLossError(prefix + "classification=" + fmt17(bundle.classification) +
                             " focal=" + fmt17(bundle.focal) + " dice=" + fmt17(bundle.dice) +
                             " total=" + fmt17(bundle.total));
  }

  t0 = Clock::now();
  std::vector<Tensor> leaves;
  for (const auto& [_, p] : model_.parameters()) leaves.push_back(p);
  backward(bundle.objective, std::span<const Tensor>(leaves));
  local.backward += seconds_since(t0);

  t0 = Clock::now();
  optimizer_.step();
  local.update += seconds_since(t0);

  steps_ = step_number;
  if (times) *times += local;
  return {step_number, bundle.classification, bundle.focal, bundle.dice, bundle.total};
}

std::string loss_csv_header() { return "step,classification,focal,dice,total"; }

std::string loss_csv_row(const StepLoss& s) {
  return std::to_string(s.step) + "," + fmt17(s.classification) + "," + fmt17(s.focal) + "," +
         fmt17(s.dice) + "," + fmt17(s.total);
}

fs::path checkpoint_path(const RunConfig& cfg) {
  if (!cfg.paths.checkpoint.empty()) return cfg.paths.checkpoint;
  return fs::path(cfg.paths.run_dir) / "final.ckpt";
}

std::vector<StepLoss> train(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto shards = records::load_manifest(cfg.paths.shard_dir);
  BatchSource source(shards, cfg.parser, cfg.seed, cfg.workers, cfg.queue_capacity);
  check_classes(cfg, source.mapper());
  Trainer trainer(cfg);

  const fs::path run_dir = cfg.paths.run_dir;
  fs::create_directories(run_dir);
  std::ofstream(run_dir / "config.cfg", std::ios::trunc) << dump_config(cfg);
  std::ofstream csv(run_dir / "loss.csv", std::ios::trunc);
  if (!csv) throw Error("cannot write " + (run_dir / "loss.csv").string());
  csv << loss_csv_header() << '\n';

  std::vector<StepLoss> history;
  const std::int64_t report_every = std::max<std::int64_t>(1, cfg.trainer.steps / 20);
  for (std::int64_t s = 0; s < cfg.trainer.steps; ++s) {
    const auto batch = source.next(cfg.trainer.batch_size);
    StepLoss loss;
    try {
      loss = trainer.step(batch);
    } catch (const NonFiniteLossError& e) {
      std::ofstream(run_dir / ("nonfinite-step-" + std::to_string(s + 1) + ".txt"))
          << e.what() << '\n';
      throw;
    }
    history.push_back(loss);
    csv << loss_csv_row(loss) << '\n' << std::flush;
    if (log && (loss.step % report_every == 0 || loss.step == 1)) {
      *log << "step " << loss.step << "  total " << std::setprecision(6) << loss.total
           << "  classification " << loss.classification << "  focal " << loss.focal
           << "  dice " << loss.dice << '\n';
    }
    const auto every = cfg.trainer.checkpoint_every;
    if (every > 0 && loss.step % every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step-%06lld.ckpt", static_cast<long long>(loss.step));
      save_checkpoint(run_dir / name, trainer.model().export_parameters());
    }
  }
  save_checkpoint(run_dir / "final.ckpt", trainer.model().export_parameters());
  return history;
}

EvalReport evaluate(const RunConfig& cfg) {
  cfg.validate();
  const auto shards = records::load_manifest(cfg.paths.shard_dir);
  const auto mapper = pipeline::IdMapper::from_table(shards.class_table);
  check_classes(cfg, mapper);
  MaskFormer model(cfg.model_config());
  model.load_parameters(load_checkpoint(checkpoint_path(cfg)));

  EvalReport report;
  report.class_table = shards.class_table;
  PanopticEvaluator evaluator;
  const auto parser = cfg.eval_parser_config();
  std::vector<pipeline::Parsed> pending;
  auto flush = [&]() {
    if (pending.empty()) return;
    NoGradGuard no_grad;
    auto batch = pipeline::make_batches(pending, pending.size()).front();
    auto out = model.forward(batch.images);
    const auto h = out.mask_logits.dim(2), w = out.mask_logits.dim(3);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto idx = static_cast<std::int64_t>(i);
      auto pred = postprocess(select(out.mask_logits, idx), select(out.class_logits, idx),
                              cfg.evaluator);
      evaluator.add(pred, segments_from_targets(batch.targets[i], batch.valid[i], h, w));
    }
    pending.clear();
  };
  std::int64_t seen = 0;
  for (std::size_t s = 0; s < shards.shards.size(); ++s) {
    records::ShardReader reader(shards.shard_path(s));
    records::RecordEntry entry;
    while ((cfg.eval_images == 0 || seen < cfg.eval_images) && reader.next(entry)) {
      pending.push_back(pipeline::parse(entry, parser, mapper, 0));
      ++seen;
      if (static_cast<std::int64_t>(pending.size()) == cfg.trainer.batch_size) flush();
    }
  }
  flush();
  report.result = evaluator.result();
  report.images = evaluator.images();
  return report;
}

std::string EvalReport::text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "images " << images << '\n';
  os << "PQ " << result.pq() << "  SQ " << result.sq() << "  RQ " << result.rq() << '\n';
  os << "class-averaged PQ " << result.class_averaged_pq() << '\n';
  os << "TP " << result.overall.tp << "  FP " << result.overall.fp << "  FN "
     << result.overall.fn << '\n';
  for (const auto& [original, contiguous] : class_table) {
    auto it = result.per_class.find(contiguous);
    const ClassStats c = it == result.per_class.end() ? ClassStats{} : it->second;
    os << "class " << original << " (contiguous " << contiguous << ")  PQ " << c.pq()
       << "  SQ " << c.sq() << "  RQ " << c.rq() << "  TP " << c.tp << "  FP " << c.fp
       << "  FN " << c.fn << '\n';
  }
  return os.str();
}

std::string EvalReport::csv() const {
  std::ostringstream os;
  os << "class,contiguous,pq,sq,rq,tp,fp,fn\n";
  auto row = [&](const std::string& name, const std::string& contiguous, const ClassStats& c) {
    os << name << ',' << contiguous << ',' << fmt17(c.pq()) << ',' << fmt17(c.sq()) << ','
       << fmt17(c.rq()) << ',' << c.tp << ',' << c.fp << ',' << c.fn << '\n';
  };
  row("all", "", result.overall);
  for (const auto& [original, contiguous] : class_table) {
    auto it = result.per_class.find(contiguous);
    row(std::to_string(original), std::to_string(contiguous),
        it == result.per_class.end() ? ClassStats{} : it->second);
  }
  return os.str();
}

StageTimes ProfileReport::totals() const {
  StageTimes t;
  for (const auto& s : steps) t += s;
  return t;
}

double ProfileReport::records_per_second() const {
  const double secs = totals().step;
  return secs > 0 ? static_cast<double>(records) / secs : 0.0;
}

std::string ProfileReport::table() const {
  if (steps.empty()) return "";
  const auto t = totals();
  const double n = static_cast<double>(steps.size());
  std::ostringstream os;
  os << std::fixed;
  os << "stage      total_ms   ms/step   share\n";
  auto row = [&](const char* name, double secs) {
    os << std::left << std::setw(9) << name << std::right << std::setprecision(2)
       << std::setw(10) << secs * 1e3 << std::setw(10) << secs * 1e3 / n << std::setw(7)
       << std::setprecision(1) << 100 * secs / t.step << "%\n";
  };
  row("read", t.read);
  row("parse", t.parse);
  row("match", t.match);
  row("forward", t.forward);
  row("backward", t.backward);
  row("update", t.update);
  os << std::setprecision(2) << "steps " << steps.size() << "  step time " << t.step * 1e3
     << " ms  stage sum " << t.stage_sum() * 1e3 << " ms  ("
     << std::setprecision(2) << 100 * std::abs(t.stage_sum() - t.step) / t.step
     << "% unaccounted)\n";
  os << std::setprecision(1) << "records/sec " << records_per_second() << '\n';
  return os.str();
}

ProfileReport profile(const RunConfig& cfg) {
  cfg.validate();
  ProfileReport report;
  if (cfg.profile_steps == 0) return report;
  const auto shards = records::load_manifest(cfg.paths.shard_dir);
  BatchSource source(shards, cfg.parser, cfg.seed, cfg.workers, cfg.queue_capacity);
  check_classes(cfg, source.mapper());
  Trainer trainer(cfg);
  for (std::int64_t s = 0; s < cfg.profile_steps; ++s) {
    StageTimes times;
    const auto t0 = Clock::now();
    const auto batch = source.next(cfg.trainer.batch_size, &times);
    trainer.step(batch, &times);
    times.step = seconds_since(t0);
    report.records += static_cast<std::int64_t>(batch.size());
    report.steps.push_back(times);
  }
  return report;
}

}  // namespace maskdesk
