// Copyright 2026 The AnonyNoise Authors
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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "anony/config.hpp"
#include "anony/event_core.hpp"
#include "anony/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anony;

namespace {

constexpr const char* kCodeVersion = "anonynoise 0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTrainingAbort = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;  // -1: keep config value
  std::string output_dir;
  std::string stage;
  std::string checkpoint;
};

void add_common(CLI::App* app, CommonArgs& args) {
  app->add_option("--config", args.config_path, "Config file (JSON)");
  app->add_option("--set", args.overrides, "Override, dotted.key=value (repeatable)");
  app->add_option("--seed", args.seed, "Override the config seed");
  app->add_option("--output-dir", args.output_dir, "Base output directory");
}

json resolve_config(const CommonArgs& args) {
  json cfg = args.config_path.empty() ? config::default_config()
                                      : config::load_config(args.config_path);
  for (const auto& kv : args.overrides) config::apply_override(cfg, kv);
  if (args.seed >= 0) cfg["seed"] = args.seed;
  if (!args.output_dir.empty()) cfg["output_dir"] = args.output_dir;
  config::validate(cfg);
  return cfg;
}

// One directory per run, timestamp+seed, never overwritten.
std::string make_run_dir(const json& cfg, const std::string& kind) {
  const std::string base = cfg.at("output_dir").get<std::string>();
  const std::string stem = config::timestamp_utc() + "-seed" +
                           std::to_string(cfg.at("seed").get<std::uint64_t>()) +
                           (kind.empty() ? "" : "-" + kind);
  fs::create_directories(base);
  fs::path dir = fs::path(base) / stem;
  for (int i = 1; fs::exists(dir); ++i)
    dir = fs::path(base) / (stem + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir.string();
}

std::vector<event::LabeledSample> load_dataset_samples(const json& cfg) {
  if (cfg.at("dataset").at("source").get<std::string>() == "archive")
    return event::load_samples(cfg.at("dataset").at("archive_path").get<std::string>());
  return event::generate_synthetic_dataset(config::dataset_spec(cfg));
}

train::Dataset build_dataset(const json& cfg) {
  return train::make_dataset(load_dataset_samples(cfg),
                             cfg.at("dataset").at("val_fraction").get<double>(),
                             config::protocol(cfg), cfg.at("seed").get<std::uint64_t>(),
                             config::augmentation_cfg(cfg));
}

train::TrainState build_state(const json& cfg, const train::Dataset& ds) {
  const int ch = ds.channels();
  return train::TrainState(config::anonymizer_cfg(cfg, ch),
                           config::classifier_cfg(cfg, ch, ds.n_subjects),
                           config::classifier_cfg(cfg, ch, ds.n_classes),
                           config::denoiser_cfg(cfg, ch), config::triplet_cfg(cfg),
                           config::loss_weights(cfg), cfg.at("seed").get<std::uint64_t>());
}

train::StageConfig find_stage(const std::vector<train::StageConfig>& stages,
                              train::Stage which) {
  for (const auto& s : stages)
    if (s.stage == which) return s;
  // sensible fallback mirroring the default schedule
  train::StageConfig sc;
  sc.stage = which;
  return sc;
}

int cmd_run(const CommonArgs& args) {
  json cfg = resolve_config(args);
  const std::string run_dir = make_run_dir(cfg, "");
  std::ofstream log_stream(fs::path(run_dir) / "train_log.jsonl");
  train::EpochLogger log{&log_stream};

  config::RunManifest manifest;
  manifest.resolved_config = cfg;
  manifest.code_version = kCodeVersion;
  manifest.started_at = config::timestamp_utc();
  const std::string manifest_path = (fs::path(run_dir) / "manifest.json").string();
  manifest.save(manifest_path);

  train::Dataset ds = build_dataset(cfg);
  train::TrainState state = build_state(cfg, ds);
  if (!args.checkpoint.empty()) train::load_state(state, args.checkpoint);

  std::vector<train::StageConfig> stages = config::stage_configs(cfg);
  if (!args.stage.empty()) {
    std::vector<train::StageConfig> filtered;
    for (const auto& s : stages)
      if (train::stage_name(s.stage) == args.stage) filtered.push_back(s);
    if (filtered.empty()) {
      std::cerr << "error: no configured stage named '" << args.stage << "'\n";
      return kExitConfig;
    }
    stages = filtered;
  }

  std::vector<eval::MetricsRow> rows;
  try {
    for (const auto& sc : stages) {
      const std::string name = train::stage_name(sc.stage);
      const std::string ckpt_path = (fs::path(run_dir) / (name + ".ckpt")).string();
      switch (sc.stage) {
        case train::Stage::kPretrain: {
          train::pretrain_all(state, ds, sc, log);
          train::save_state(state, ckpt_path);
          rows.push_back(*state.raw_metrics);
          break;
        }
        case train::Stage::kPipeline: {
          train::train_pipeline(state, ds, sc, log, run_dir);
          train::save_state(state, ckpt_path);
          break;
        }
        case train::Stage::kPosttrain: {
          if (cfg.at("baseline").at("enabled").get<bool>()) {
            std::vector<float> stds;
            for (const auto& v : cfg.at("baseline").at("std_values"))
              stds.push_back(v.get<float>());
            for (auto& row : train::run_noise_baseline(state, ds, sc, stds, log))
              rows.push_back(row);
          }
          train::LearnedAnonymizer learned(*state.anon, state.eval_seed);
          rows.push_back(train::posttrain_attack(state, ds, sc, learned, log));
          train::save_state(state, ckpt_path);
          break;
        }
        case train::Stage::kPosttrainInversion: {
          if (cfg.at("baseline").at("enabled").get<bool>())
            for (const auto& v : cfg.at("baseline").at("std_values")) {
              train::GaussianAnonymizer g(v.get<float>(), state.eval_seed);
              rows.push_back(train::posttrain_inversion_attack(state, ds, sc, g, log));
            }
          train::LearnedAnonymizer learned(*state.anon, state.eval_seed);
          rows.push_back(train::posttrain_inversion_attack(state, ds, sc, learned, log));
          train::save_state(state, ckpt_path);
          break;
        }
      }
      manifest.stage_checkpoints.emplace_back(name, ckpt_path);
      manifest.save(manifest_path);
    }
  } catch (const train::TrainingAbort& e) {
    manifest.status = "failed";
    manifest.failure_reason = e.what();
    manifest.finished_at = config::timestamp_utc();
    manifest.save(manifest_path);
    std::cerr << "training abort: " << e.what() << "\n";
    for (const auto& r : e.last_reports) std::cerr << "  last batch: " << r << "\n";
    if (!manifest.stage_checkpoints.empty())
      std::cerr << "last checkpoint: " << manifest.stage_checkpoints.back().second << "\n";
    return kExitTrainingAbort;
  }

  if (!rows.empty()) eval::emit_report(rows, run_dir, cfg.dump());
  manifest.metrics = rows;
  manifest.status = "ok";
  manifest.finished_at = config::timestamp_utc();
  manifest.save(manifest_path);
  std::cout << "run complete: " << run_dir << "\n";
  return kExitOk;
}

int cmd_gen_data(const CommonArgs& args) {
  json cfg = resolve_config(args);
  const std::string run_dir = make_run_dir(cfg, "gen-data");
  auto samples = event::generate_synthetic_dataset(config::dataset_spec(cfg));
  const std::string archive = (fs::path(run_dir) / "archive").string();
  event::save_samples(samples, archive);
  std::cout << "archive written: " << archive << " (" << samples.size() << " samples)\n";
  return kExitOk;
}

int cmd_attack(const CommonArgs& args, const std::string& mode, float gauss_std,
               bool inversion) {
  json cfg = resolve_config(args);
  if (args.checkpoint.empty()) {
    std::cerr << "error: attack requires --checkpoint\n";
    return kExitConfig;
  }
  const std::string run_dir = make_run_dir(cfg, "attack");
  std::ofstream log_stream(fs::path(run_dir) / "train_log.jsonl");
  train::EpochLogger log{&log_stream};

  train::Dataset ds = build_dataset(cfg);
  train::TrainState state = build_state(cfg, ds);
  train::load_state(state, args.checkpoint);
  train::StageConfig sc = find_stage(config::stage_configs(cfg),
                                     inversion ? train::Stage::kPosttrainInversion
                                               : train::Stage::kPosttrain);

  std::unique_ptr<train::Anonymizer> anonymizer;
  if (mode == "learned")
    anonymizer = std::make_unique<train::LearnedAnonymizer>(*state.anon, state.eval_seed);
  else if (mode == "identity")
    anonymizer = std::make_unique<train::IdentityAnonymizer>();
  else if (mode == "gaussian")
    anonymizer = std::make_unique<train::GaussianAnonymizer>(gauss_std, state.eval_seed);
  else {
    std::cerr << "error: --mode must be learned, identity, or gaussian\n";
    return kExitConfig;
  }

  std::vector<eval::MetricsRow> rows;
  if (state.raw_metrics) rows.push_back(*state.raw_metrics);
  try {
    rows.push_back(inversion
                       ? train::posttrain_inversion_attack(state, ds, sc, *anonymizer, log)
                       : train::posttrain_attack(state, ds, sc, *anonymizer, log));
  } catch (const train::TrainingAbort& e) {
    std::cerr << "training abort: " << e.what() << "\n";
    return kExitTrainingAbort;
  }
  eval::emit_report(rows, run_dir, cfg.dump());
  train::save_state(state, (fs::path(run_dir) / "attack.ckpt").string());
  std::cout << "attack complete: " << run_dir << "\n";
  return kExitOk;
}

int cmd_transfer(const CommonArgs& args) {
  json cfg = resolve_config(args);
  if (args.checkpoint.empty()) {
    std::cerr << "error: transfer requires --checkpoint\n";
    return kExitConfig;
  }
  const std::string run_dir = make_run_dir(cfg, "transfer");
  std::ofstream log_stream(fs::path(run_dir) / "train_log.jsonl");
  train::EpochLogger log{&log_stream};

  // The config describes the *target* dataset; the checkpoint provides the
  // frozen anonymizer (and the source classifier shapes for loading).
  train::Dataset target_ds = build_dataset(cfg);
  train::TrainState state = build_state(cfg, target_ds);
  train::load_state(state, args.checkpoint);

  auto stages = config::stage_configs(cfg);
  train::StageConfig pre = find_stage(stages, train::Stage::kPretrain);
  train::StageConfig post = find_stage(stages, train::Stage::kPosttrain);
  try {
    auto [raw, attacked] = train::transfer_frozen_anonymizer(state, target_ds, pre, post, log);
    eval::emit_report({raw, attacked}, run_dir, cfg.dump());
  } catch (const train::TrainingAbort& e) {
    std::cerr << "training abort: " << e.what() << "\n";
    return kExitTrainingAbort;
  }
  std::cout << "transfer complete: " << run_dir << "\n";
  return kExitOk;
}

int cmd_report(const CommonArgs& args, const std::string& metrics_path) {
  json cfg = resolve_config(args);
  const std::string run_dir = make_run_dir(cfg, "report");
  std::ifstream in(metrics_path);
  if (!in) {
    std::cerr << "error: cannot open " << metrics_path << "\n";
    return kExitIo;
  }
  json j;
  in >> j;
  std::vector<eval::MetricsRow> rows;
  for (const auto& row : j.at("rows")) {
    eval::MetricsRow r;
    r.config_label = row.at("config").get<std::string>();
    r.acc_t = row.at("acc_T").get<double>();
    r.acc_id_top1 = row.at("acc_id_top1").get<double>();
    if (row.contains("acc_id_top5") && !row.at("acc_id_top5").is_null())
      r.acc_id_top5 = row.at("acc_id_top5").get<double>();
    if (row.contains("acc_id_top10") && !row.at("acc_id_top10").is_null())
      r.acc_id_top10 = row.at("acc_id_top10").get<double>();
    r.map_id = row.at("mAP").get<double>();
    if (row.contains("recon_mse") && !row.at("recon_mse").is_null())
      r.recon_mse = row.at("recon_mse").get<double>();
    rows.push_back(r);
  }
  eval::emit_report(rows, run_dir, j.value("config", json::object()).dump());
  std::cout << "report written: " << run_dir << "\n";
  return kExitOk;
}

int cmd_export_anon(const CommonArgs& args) {
  json cfg = resolve_config(args);
  if (args.checkpoint.empty()) {
    std::cerr << "error: export-anon requires --checkpoint\n";
    return kExitConfig;
  }
  const std::string run_dir = make_run_dir(cfg, "export-anon");
  train::Dataset ds = build_dataset(cfg);
  train::TrainState state = build_state(cfg, ds);
  train::load_state(state, args.checkpoint);
  const std::string archive = (fs::path(run_dir) / "anonymized").string();
  train::export_anonymized(state, ds, archive);
  std::cout << "anonymized archive written: " << archive << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AnonyNoise: anonymizing event streams with learned noise"};
  app.require_subcommand(1);

  CommonArgs run_args, gen_args, attack_args, transfer_args, report_args, export_args;

  CLI::App* run = app.add_subcommand("run", "Execute the configured stages end to end");
  add_common(run, run_args);
  run->add_option("--stage", run_args.stage, "Run only this stage");
  run->add_option("--checkpoint", run_args.checkpoint, "Resume from this state checkpoint");

  CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic dataset archive");
  add_common(gen, gen_args);

  CLI::App* attack = app.add_subcommand("attack", "Post-training attack on a checkpoint");
  add_common(attack, attack_args);
  attack->add_option("--checkpoint", attack_args.checkpoint, "Trained state checkpoint")
      ->required();
  std::string attack_mode = "learned";
  float gauss_std = 1.0f;
  bool inversion = false;
  attack->add_option("--mode", attack_mode, "learned | identity | gaussian");
  attack->add_option("--std", gauss_std, "Gaussian std (mode=gaussian)");
  attack->add_flag("--inversion", inversion, "Use the denoiser inversion attack");

  CLI::App* transfer =
      app.add_subcommand("transfer", "Frozen-anonymizer transfer to a new dataset");
  add_common(transfer, transfer_args);
  transfer->add_option("--checkpoint", transfer_args.checkpoint, "Trained state checkpoint")
      ->required();

  CLI::App* report = app.add_subcommand("report", "Re-emit plots from a metrics.json");
  add_common(report, report_args);
  std::string metrics_path;
  report->add_option("--metrics", metrics_path, "metrics.json to re-render")->required();

  CLI::App* export_anon =
      app.add_subcommand("export-anon", "Write the anonymized sample archive");
  add_common(export_anon, export_args);
  export_anon
      ->add_option("--checkpoint", export_args.checkpoint, "Trained state checkpoint")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (attack->parsed()) return cmd_attack(attack_args, attack_mode, gauss_std, inversion);
    if (transfer->parsed()) return cmd_transfer(transfer_args);
    if (report->parsed()) return cmd_report(report_args, metrics_path);
    if (export_anon->parsed()) return cmd_export_anon(export_args);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const train::TrainingAbort& e) {
    std::cerr << "training abort: " << e.what() << "\n";
    return kExitTrainingAbort;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}
