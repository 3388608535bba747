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

#include "anony/config.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace anony::config {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  // Schedules follow the published training setup: auxiliary nets at 1e-4
  // cosine for pre-/post-training, the pipeline with aux 1e-3 step decay
  // (x0.5 every 100 epochs) against the anonymizer at 5e-4 cosine.
  return json{
      {"seed", 1},
      {"output_dir", "runs"},
      {"dataset",
       {{"source", "synthetic"},
        {"archive_path", ""},
        {"protocol", "dvs_gesture"},
        {"val_fraction", 0.5},
        {"synthetic",
         {{"n_subjects", 8},
          {"n_classes", 4},
          {"samples_per_pair", 8},
          {"height", 16},
          {"width", 16},
          {"time_bins", 5},
          {"events_per_sample", 2000},
          {"identity_strength", 1.0},
          {"motion_strength", 1.0}}}}},
      {"augmentation",
       {{"enabled", true},
        {"pad_fraction", 1.0 / 12.0},
        {"rotation_max_deg", 15.0},
        {"horizontal_flip", false},
        {"bilinear_rotation", false}}},
      {"model",
       {{"anonymizer",
         {{"hidden_width", 64},
          {"take_noise_input", true},
          {"predict_mu", true},
          {"predict_sigma", true},
          {"add_input_residual", true},
          {"noise_input_std", 1.0}}},
        {"classifier",
         {{"backbone", "small_cnn"},
          {"dropout_rate", 0.5},
          {"pretrained_backbone", false}}},
        {"denoiser", {{"hidden_width", 64}}}}},
      {"loss",
       {{"triplet", {{"margin", 0.3}, {"mining", "batch_hard"}, {"distance", "euclidean"}}},
        {"weights", {{"ce", 1.0}, {"triplet", 1.0}, {"neg_triplet_clip", 0.0}}}}},
      {"stages", json::array()},
      {"baseline", {{"enabled", false}, {"std_values", json::array({0.01, 16.0})}}},
  };
}

namespace {

json default_stage(const std::string& name) {
  json s{{"name", name},
         {"epochs", 200},
         {"batch_size", 32},
         {"lr_aux", 1e-4},
         {"lr_anon", 5e-4},
         {"scheduler_aux", "cosine"},
         {"scheduler_anon", "cosine"},
         {"weight_decay", 1e-2},
         {"p_identities", 8},
         {"k_samples", 4},
         {"checkpoint_every", 0},
         {"lambda_recon", 1.0}};
  if (name == "pipeline") {
    s["epochs"] = 300;
    s["lr_aux"] = 1e-3;
    s["scheduler_aux"] = "step";
  }
  return s;
}

json default_stage_list() {
  return json::array({default_stage("pretrain"), default_stage("pipeline"),
                      default_stage("posttrain"), default_stage("posttrain_inversion")});
}

void merge_into(json& base, const json& user, const std::string& path) {
  if (!user.is_object())
    throw ConfigError("expected an object", path.empty() ? "<root>" : path);
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string child = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key", child);
    json& slot = base[it.key()];
    if (slot.is_object() && !it.value().is_null()) {
      merge_into(slot, it.value(), child);
    } else if (it.key() == "stages") {
      // each user stage is merged over the full per-stage default
      if (!it.value().is_array()) throw ConfigError("stages must be an array", child);
      json merged = json::array();
      for (size_t i = 0; i < it.value().size(); ++i) {
        const json& us = it.value()[i];
        std::string spath = child + "." + std::to_string(i);
        if (!us.is_object() || !us.contains("name"))
          throw ConfigError("stage entries need a name", spath);
        json ds = default_stage(us.at("name").get<std::string>());
        for (auto sit = us.begin(); sit != us.end(); ++sit) {
          if (!ds.contains(sit.key()))
            throw ConfigError("unknown stage key", spath + "." + sit.key());
          ds[sit.key()] = sit.value();
        }
        merged.push_back(std::move(ds));
      }
      slot = std::move(merged);
    } else {
      slot = it.value();
    }
  }
}

double num(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError("expected a number", path);
  return j.get<double>();
}

void require_positive(double v, const std::string& path) {
  if (v <= 0) throw ConfigError("value must be > 0", path);
}

template <typename T>
T parse_enum(const json& j, const std::string& path,
             std::initializer_list<std::pair<const char*, T>> table) {
  if (!j.is_string()) throw ConfigError("expected a string", path);
  const std::string s = j.get<std::string>();
  for (const auto& [name, value] : table)
    if (s == name) return value;
  std::string opts;
  for (const auto& [name, value] : table) opts += std::string(name) + " ";
  throw ConfigError("invalid value '" + s + "', expected one of: " + opts, path);
}

}  // namespace

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path, "<file>");
  json user;
  try {
    in >> user;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what(), "<file>");
  }
  json cfg = default_config();
  merge_into(cfg, user, "");
  return cfg;
}

void apply_override(json& cfg, const std::string& key_value) {
  auto eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must be KEY=VALUE", key_value);
  const std::string key = key_value.substr(0, eq);
  const std::string value_str = key_value.substr(eq + 1);

  json value;
  try {
    value = json::parse(value_str);
  } catch (const json::parse_error&) {
    value = value_str;  // bare strings are fine unquoted
  }

  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty override key", key);

  json* node = &cfg;
  std::string walked;
  for (size_t i = 0; i < parts.size(); ++i) {
    walked = walked.empty() ? parts[i] : walked + "." + parts[i];
    const bool last = (i + 1 == parts.size());
    if (node->is_array()) {
      size_t idx;
      try {
        idx = std::stoul(parts[i]);
      } catch (...) {
        throw ConfigError("array index expected", walked);
      }
      if (idx >= node->size()) throw ConfigError("array index out of range", walked);
      node = &(*node)[idx];
    } else if (node->is_object()) {
      if (!node->contains(parts[i])) throw ConfigError("unknown config key", walked);
      node = &(*node)[parts[i]];
    } else {
      throw ConfigError("cannot descend into a scalar", walked);
    }
    if (last) *node = value;
  }
}

void validate(const json& cfg) {
  const std::string source = cfg.at("dataset").at("source").get<std::string>();
  if (source != "synthetic" && source != "archive")
    throw ConfigError("dataset.source must be synthetic or archive", "dataset.source");
  if (source == "archive") {
    const std::string ap = cfg.at("dataset").at("archive_path").get<std::string>();
    if (ap.empty() || !fs::exists(ap))
      throw ConfigError("archive path does not exist: " + ap, "dataset.archive_path");
  }
  protocol(cfg);
  double vf = num(cfg.at("dataset").at("val_fraction"), "dataset.val_fraction");
  if (vf <= 0 || vf >= 1)
    throw ConfigError("val_fraction must be in (0, 1)", "dataset.val_fraction");

  const json& syn = cfg.at("dataset").at("synthetic");
  for (const char* k : {"n_subjects", "n_classes", "samples_per_pair", "height", "width",
                        "time_bins", "events_per_sample"})
    require_positive(num(syn.at(k), std::string("dataset.synthetic.") + k),
                     std::string("dataset.synthetic.") + k);

  const json& aug = cfg.at("augmentation");
  double pf = num(aug.at("pad_fraction"), "augmentation.pad_fraction");
  if (pf < 0 || pf >= 1)
    throw ConfigError("pad_fraction must be in [0, 1)", "augmentation.pad_fraction");
  double rot = num(aug.at("rotation_max_deg"), "augmentation.rotation_max_deg");
  if (rot < 0 || rot > 180)
    throw ConfigError("rotation_max_deg must be in [0, 180]", "augmentation.rotation_max_deg");

  const json& an = cfg.at("model").at("anonymizer");
  require_positive(num(an.at("hidden_width"), "model.anonymizer.hidden_width"),
                   "model.anonymizer.hidden_width");
  require_positive(num(an.at("noise_input_std"), "model.anonymizer.noise_input_std"),
                   "model.anonymizer.noise_input_std");
  if (!an.at("predict_mu").get<bool>() && !an.at("predict_sigma").get<bool>())
    throw ConfigError("anonymizer must predict mu, sigma, or both", "model.anonymizer");
  parse_enum<models::Backbone>(cfg.at("model").at("classifier").at("backbone"),
                               "model.classifier.backbone",
                               {{"small_cnn", models::Backbone::kSmallCnn},
                                {"resnet50_style", models::Backbone::kResNet50Style}});
  double dr = num(cfg.at("model").at("classifier").at("dropout_rate"),
                  "model.classifier.dropout_rate");
  if (dr < 0 || dr >= 1)
    throw ConfigError("dropout_rate must be in [0, 1)", "model.classifier.dropout_rate");

  triplet_cfg(cfg);
  double margin = num(cfg.at("loss").at("triplet").at("margin"), "loss.triplet.margin");
  if (margin < 0) throw ConfigError("margin must be >= 0", "loss.triplet.margin");

  // stage ordering: pretrain* -> pipeline? -> posttrain/posttrain_inversion*
  const json& stages = cfg.at("stages");
  int rank = 0;
  for (size_t i = 0; i < stages.size(); ++i) {
    const std::string path = "stages." + std::to_string(i);
    const std::string name = stages[i].at("name").get<std::string>();
    int r;
    if (name == "pretrain")
      r = 0;
    else if (name == "pipeline")
      r = 1;
    else if (name == "posttrain" || name == "posttrain_inversion")
      r = 2;
    else
      throw ConfigError("unknown stage name " + name, path + ".name");
    if (r < rank || (r == rank && r != 2 && i > 0 &&
                     stages[i - 1].at("name").get<std::string>() == name))
      throw ConfigError("stages must be ordered pretrain -> pipeline -> posttrain",
                        path + ".name");
    rank = r;
    require_positive(num(stages[i].at("epochs"), path + ".epochs"), path + ".epochs");
    require_positive(num(stages[i].at("batch_size"), path + ".batch_size"),
                     path + ".batch_size");
    require_positive(num(stages[i].at("lr_aux"), path + ".lr_aux"), path + ".lr_aux");
    require_positive(num(stages[i].at("lr_anon"), path + ".lr_anon"), path + ".lr_anon");
  }

  const json& bl = cfg.at("baseline");
  if (bl.at("enabled").get<bool>())
    for (size_t i = 0; i < bl.at("std_values").size(); ++i)
      require_positive(num(bl.at("std_values")[i], "baseline.std_values"),
                       "baseline.std_values." + std::to_string(i));
}

event::SyntheticDatasetSpec dataset_spec(const json& cfg) {
  const json& s = cfg.at("dataset").at("synthetic");
  event::SyntheticDatasetSpec spec;
  spec.n_subjects = s.at("n_subjects").get<int>();
  spec.n_target_classes = s.at("n_classes").get<int>();
  spec.samples_per_pair = s.at("samples_per_pair").get<int>();
  spec.height = s.at("height").get<int>();
  spec.width = s.at("width").get<int>();
  spec.T = s.at("time_bins").get<int>();
  spec.events_per_sample = s.at("events_per_sample").get<int>();
  spec.identity_signature_strength = s.at("identity_strength").get<double>();
  spec.motion_pattern_strength = s.at("motion_strength").get<double>();
  spec.seed = cfg.at("seed").get<std::uint64_t>();
  return spec;
}

event::AugmentationConfig augmentation_cfg(const json& cfg) {
  const json& a = cfg.at("augmentation");
  event::AugmentationConfig ac;
  ac.enabled = a.at("enabled").get<bool>();
  ac.pad_fraction = a.at("pad_fraction").get<double>();
  ac.rotation_max_deg = a.at("rotation_max_deg").get<double>();
  ac.horizontal_flip = a.at("horizontal_flip").get<bool>();
  ac.bilinear_rotation = a.at("bilinear_rotation").get<bool>();
  return ac;
}

event::SplitProtocol protocol(const json& cfg) {
  return parse_enum<event::SplitProtocol>(
      cfg.at("dataset").at("protocol"), "dataset.protocol",
      {{"dvs_gesture", event::SplitProtocol::kDvsGesture},
       {"see", event::SplitProtocol::kSee}});
}

models::AnonymizerConfig anonymizer_cfg(const json& cfg, int in_channels) {
  const json& a = cfg.at("model").at("anonymizer");
  models::AnonymizerConfig ac;
  ac.in_channels = in_channels;
  ac.hidden_width = a.at("hidden_width").get<int>();
  ac.take_noise_input = a.at("take_noise_input").get<bool>();
  ac.predict_mu = a.at("predict_mu").get<bool>();
  ac.predict_sigma = a.at("predict_sigma").get<bool>();
  ac.add_input_residual = a.at("add_input_residual").get<bool>();
  ac.noise_input_std = a.at("noise_input_std").get<float>();
  return ac;
}

models::ClassifierConfig classifier_cfg(const json& cfg, int in_channels, int n_classes) {
  const json& c = cfg.at("model").at("classifier");
  models::ClassifierConfig cc;
  cc.backbone = parse_enum<models::Backbone>(
      c.at("backbone"), "model.classifier.backbone",
      {{"small_cnn", models::Backbone::kSmallCnn},
       {"resnet50_style", models::Backbone::kResNet50Style}});
  cc.in_channels = in_channels;
  cc.n_classes = n_classes;
  cc.dropout_rate = c.at("dropout_rate").get<float>();
  cc.pretrained_backbone = c.at("pretrained_backbone").get<bool>();
  return cc;
}

models::DenoiserConfig denoiser_cfg(const json& cfg, int in_channels) {
  models::DenoiserConfig dc;
  dc.in_channels = in_channels;
  dc.hidden_width = cfg.at("model").at("denoiser").at("hidden_width").get<int>();
  return dc;
}

losses::TripletConfig triplet_cfg(const json& cfg) {
  const json& t = cfg.at("loss").at("triplet");
  losses::TripletConfig tc;
  tc.margin = t.at("margin").get<float>();
  tc.mining = parse_enum<losses::Mining>(t.at("mining"), "loss.triplet.mining",
                                         {{"batch_hard", losses::Mining::kBatchHard},
                                          {"batch_all", losses::Mining::kBatchAll}});
  tc.distance = parse_enum<losses::Distance>(t.at("distance"), "loss.triplet.distance",
                                             {{"euclidean", losses::Distance::kEuclidean},
                                              {"cosine", losses::Distance::kCosine}});
  return tc;
}

losses::LossWeights loss_weights(const json& cfg) {
  const json& w = cfg.at("loss").at("weights");
  losses::LossWeights lw;
  lw.ce = w.at("ce").get<float>();
  lw.triplet = w.at("triplet").get<float>();
  lw.neg_triplet_clip = w.at("neg_triplet_clip").get<float>();
  return lw;
}

std::vector<train::StageConfig> stage_configs(const json& cfg) {
  json stages = cfg.at("stages");
  if (stages.empty()) stages = default_stage_list();
  std::vector<train::StageConfig> out;
  for (const json& s : stages) {
    train::StageConfig sc;
    const std::string name = s.at("name").get<std::string>();
    if (name == "pretrain")
      sc.stage = train::Stage::kPretrain;
    else if (name == "pipeline")
      sc.stage = train::Stage::kPipeline;
    else if (name == "posttrain")
      sc.stage = train::Stage::kPosttrain;
    else
      sc.stage = train::Stage::kPosttrainInversion;
    sc.epochs = s.at("epochs").get<int>();
    sc.batch_size = s.at("batch_size").get<int>();
    sc.lr_aux = s.at("lr_aux").get<float>();
    sc.lr_anon = s.at("lr_anon").get<float>();
    sc.scheduler_aux = parse_enum<optim::Scheduler>(
        s.at("scheduler_aux"), "stages.scheduler_aux",
        {{"cosine", optim::Scheduler::kCosine}, {"step", optim::Scheduler::kStep}});
    sc.scheduler_anon = parse_enum<optim::Scheduler>(
        s.at("scheduler_anon"), "stages.scheduler_anon",
        {{"cosine", optim::Scheduler::kCosine}, {"step", optim::Scheduler::kStep}});
    sc.weight_decay = s.at("weight_decay").get<float>();
    sc.seed = cfg.at("seed").get<std::uint64_t>();
    sc.p_identities = s.at("p_identities").get<int>();
    sc.k_samples = s.at("k_samples").get<int>();
    sc.checkpoint_every = s.at("checkpoint_every").get<int>();
    sc.lambda_recon = s.at("lambda_recon").get<float>();
    out.push_back(sc);
  }
  return out;
}

json RunManifest::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["config"] = resolved_config;
  j["code_version"] = code_version;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["status"] = status;
  if (!failure_reason.empty()) j["failure_reason"] = failure_reason;
  j["checkpoints"] = json::object();
  for (const auto& [stage, path] : stage_checkpoints) j["checkpoints"][stage] = path;
  j["metrics"] = json::array();
  for (const auto& r : metrics) {
    json row;
    row["config"] = r.config_label;
    row["acc_T"] = r.acc_t;
    row["acc_id_top1"] = r.acc_id_top1;
    if (r.acc_id_top5) row["acc_id_top5"] = *r.acc_id_top5;
    if (r.acc_id_top10) row["acc_id_top10"] = *r.acc_id_top10;
    row["mAP"] = r.map_id;
    if (r.recon_mse) row["recon_mse"] = *r.recon_mse;
    j["metrics"].push_back(row);
  }
  return j;
}

void RunManifest::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write manifest " + tmp);
    out << to_json().dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

}  // namespace anony::config
