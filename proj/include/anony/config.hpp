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

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "anony/event_core.hpp"
#include "anony/losses.hpp"
#include "anony/models.hpp"
#include "anony/training.hpp"

namespace anony::config {

// Config error carrying the dotted path of the offending key.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& msg, std::string path)
      : std::runtime_error(msg + " (at key: " + path + ")"), key_path(std::move(path)) {}
  std::string key_path;
};

// Full default config: defaults encode the published training schedule, so a
// config file only needs to override what differs.
nlohmann::json default_config();

// Parses the file, deep-merges it over the defaults, rejects unknown keys.
nlohmann::json load_config(const std::string& path);

// Applies a `dotted.key.path=value` override; values parse as JSON when
// possible (numbers, bools, arrays) and as strings otherwise. Array elements
// are addressed numerically, e.g. stages.0.epochs=2.
void apply_override(nlohmann::json& cfg, const std::string& key_value);

// Structural + semantic validation; throws ConfigError on the first problem.
void validate(const nlohmann::json& cfg);

// Typed extraction (each assumes validate() passed).
event::SyntheticDatasetSpec dataset_spec(const nlohmann::json& cfg);
event::AugmentationConfig augmentation_cfg(const nlohmann::json& cfg);
event::SplitProtocol protocol(const nlohmann::json& cfg);
models::AnonymizerConfig anonymizer_cfg(const nlohmann::json& cfg, int in_channels);
models::ClassifierConfig classifier_cfg(const nlohmann::json& cfg, int in_channels,
                                        int n_classes);
models::DenoiserConfig denoiser_cfg(const nlohmann::json& cfg, int in_channels);
losses::TripletConfig triplet_cfg(const nlohmann::json& cfg);
losses::LossWeights loss_weights(const nlohmann::json& cfg);
std::vector<train::StageConfig> stage_configs(const nlohmann::json& cfg);

struct RunManifest {
  nlohmann::json resolved_config;
  std::string code_version;
  std::string started_at;
  std::string finished_at;
  std::string status = "running";  // running | ok | failed
  std::string failure_reason;
  std::vector<std::pair<std::string, std::string>> stage_checkpoints;  // stage, path
  std::vector<eval::MetricsRow> metrics;

  nlohmann::json to_json() const;
  // Atomic write (tmp file + rename).
  void save(const std::string& path) const;
};

std::string timestamp_utc();

}  // namespace anony::config
