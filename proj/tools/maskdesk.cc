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

// maskdesk: synthetic data, ingestion, training, evaluation, verification
// and profiling from one executable.
//
// Exit codes: 0 success, 1 check or runtime failure, 2 usage/config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "maskdesk/config.h"
#include "maskdesk/dataset.h"
#include "maskdesk/model.h"
#include "maskdesk/trainer.h"
#include "maskdesk/verify.h"

namespace fs = std::filesystem;
using namespace maskdesk;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  // Shortcut flags, applied after --set.
  std::vector<std::pair<std::string, std::string>> shortcuts;

  RunConfig load() const {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : sets) overrides.push_back(split_override(s));
    overrides.insert(overrides.end(), shortcuts.begin(), shortcuts.end());
    return load_config(file, overrides);
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.file, "Config file (key = value, [section] headers)")
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.sets, "Override a config key, e.g. --set trainer.lr=1e-3")
      ->take_all();
}

// Registers an option whose value becomes a config override.
template <typename Value>
void add_shortcut(CLI::App* cmd, ConfigArgs& args, const std::string& flag,
                  const std::string& key, const std::string& help) {
  cmd->add_option_function<Value>(
      flag,
      [&args, key](const Value& v) {
        std::ostringstream os;
        os << v;
        args.shortcuts.emplace_back(key, os.str());
      },
      help + " (same as --set " + key + "=...)");
}

int cmd_synth(const RunConfig& cfg) {
  const auto summary = dataset::synth(cfg.synth_images, cfg.paths.raw_dir, cfg.seed);
  std::cout << "wrote " << summary.images << " images to " << cfg.paths.raw_dir << '\n';
  const auto& cats = dataset::synth_categories();
  for (std::size_t k = 0; k < cats.size(); ++k) {
    std::cout << "  " << cats[k].name << " (id " << cats[k].id << "): "
              << summary.segments_per_category[k] << " segments\n";
  }
  return kOk;
}

int cmd_ingest(const RunConfig& cfg) {
  const auto summary = dataset::ingest(cfg.paths.raw_dir, static_cast<std::size_t>(cfg.shard_count),
                                       cfg.paths.shard_dir);
  const auto& set = summary.shards;
  std::cout << "ingested " << set.record_count << " records (" << summary.segments
            << " segments) into " << set.shards.size() << " shards under " << set.dir.string()
            << '\n';
  for (const auto& s : set.shards)
    std::cout << "  " << s.name << "  " << s.records << " records  " << s.bytes << " bytes\n";
  std::printf("balance (largest / smallest bytes) %.4f\n", set.balance_ratio());
  if (set.balance_ratio() > 1.10) {
    std::cout << "warning: shards differ by more than 10% in size\n";
  }
  std::cout << "class table (original -> contiguous):";
  for (const auto& [orig, contiguous] : set.class_table)
    std::cout << ' ' << orig << "->" << contiguous;
  std::cout << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg) {
  const auto history = train(cfg, &std::cout);
  std::cout << "trained " << history.size() << " steps; checkpoint "
            << (fs::path(cfg.paths.run_dir) / "final.ckpt").string() << ", losses "
            << (fs::path(cfg.paths.run_dir) / "loss.csv").string() << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& cfg) {
  const auto report = evaluate(cfg);
  const fs::path dir = cfg.paths.run_dir;
  fs::create_directories(dir);
  std::ofstream(dir / "eval.txt", std::ios::trunc) << report.text();
  std::ofstream(dir / "eval.csv", std::ios::trunc) << report.csv();
  std::cout << report.text();
  std::cout << "reports: " << (dir / "eval.txt").string() << ", " << (dir / "eval.csv").string()
            << '\n';
  return kOk;
}

int cmd_verify(const RunConfig& cfg) {
  const auto report = verify(cfg);
  std::cout << report.text();
  return report.passed() ? kOk : kFailure;
}

int cmd_profile(const RunConfig& cfg) {
  const auto report = profile(cfg);
  std::cout << report.table();
  return kOk;
}

int cmd_model_info(const RunConfig& cfg, bool verbose) {
  MaskFormer model(cfg.model_config());
  std::map<std::string, std::int64_t> by_module;
  for (const auto& [name, t] : model.parameters()) {
    by_module[name.substr(0, name.find('.'))] += t.numel();
    if (verbose) std::cout << name << "  " << to_string(t.shape()) << '\n';
  }
  for (const auto& [module, n] : by_module) std::cout << module << "  " << n << '\n';
  std::cout << "parameters " << model.parameter_count() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskdesk: mask-classification segmentation at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "maskdesk 0.1.0");

  ConfigArgs args;
  bool verbose = false;

  auto* synth = app.add_subcommand("synth", "Generate synthetic shape scenes");
  add_config_options(synth, args);
  add_shortcut<std::int64_t>(synth, args, "-n,--images", "synth_images", "Number of images");
  add_shortcut<std::string>(synth, args, "-o,--out", "paths.raw_dir", "Output directory");
  add_shortcut<std::uint64_t>(synth, args, "--seed", "seed", "Random seed");

  auto* ingest = app.add_subcommand("ingest", "Convert annotations into balanced record shards");
  add_config_options(ingest, args);
  add_shortcut<std::string>(ingest, args, "-i,--raw", "paths.raw_dir", "Raw dataset directory");
  add_shortcut<std::int64_t>(ingest, args, "-n,--shards", "shard_count", "Number of shards");
  add_shortcut<std::string>(ingest, args, "-o,--out", "paths.shard_dir", "Shard directory");

  auto* trn = app.add_subcommand("train", "Train a model on record shards");
  add_config_options(trn, args);

  auto* ev = app.add_subcommand("eval", "Panoptic quality of a checkpoint");
  add_config_options(ev, args);
  add_shortcut<std::string>(ev, args, "--checkpoint", "paths.checkpoint", "Checkpoint file");

  auto* ver = app.add_subcommand("verify", "Run the shape, gradient, loss, matcher, padding "
                                           "and record suites");
  add_config_options(ver, args);

  auto* prof = app.add_subcommand("profile", "Per-stage timing of training steps");
  add_config_options(prof, args);
  add_shortcut<std::int64_t>(prof, args, "--steps", "profile_steps", "Steps to time");

  auto* model = app.add_subcommand("model", "Model utilities");
  model->require_subcommand(1);
  auto* info = model->add_subcommand("info", "Parameter counts");
  add_config_options(info, args);
  info->add_flag("-v,--verbose", verbose, "List every parameter tensor");

  auto* show = app.add_subcommand("config", "Print the resolved configuration");
  add_config_options(show, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    const RunConfig cfg = args.load();
    if (*synth) return cmd_synth(cfg);
    if (*ingest) return cmd_ingest(cfg);
    if (*trn) return cmd_train(cfg);
    if (*ev) return cmd_eval(cfg);
    if (*ver) return cmd_verify(cfg);
    if (*prof) return cmd_profile(cfg);
    if (*info) return cmd_model_info(cfg, verbose);
    if (*show) {
      std::cout << dump_config(cfg);
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
