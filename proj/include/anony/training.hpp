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

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "anony/checkpoint.hpp"
#include "anony/evaluation.hpp"
#include "anony/event_core.hpp"
#include "anony/losses.hpp"
#include "anony/models.hpp"
#include "anony/optim.hpp"

namespace anony::train {

enum class Stage { kPretrain, kPipeline, kPosttrain, kPosttrainInversion };

std::string stage_name(Stage s);

struct StageConfig {
  Stage stage = Stage::kPretrain;
  int epochs = 200;
  int batch_size = 32;
  float lr_aux = 1e-4f;
  float lr_anon = 5e-4f;
  optim::Scheduler scheduler_aux = optim::Scheduler::kCosine;
  optim::Scheduler scheduler_anon = optim::Scheduler::kCosine;
  float weight_decay = 1e-2f;
  std::uint64_t seed = 1;
  // P x K identity batch sampling for triplet validity.
  int p_identities = 8;
  int k_samples = 4;
  int checkpoint_every = 0;  // epochs; 0 = stage boundaries only
  float lambda_recon = 1.0f;

  void validate() const;
};

// Raised when a non-finite loss aborts a stage; carries the last few batch
// loss reports for diagnosis.
struct TrainingAbort : std::runtime_error {
  TrainingAbort(const std::string& what, std::vector<std::string> reports)
      : std::runtime_error(what), last_reports(std::move(reports)) {}
  std::vector<std::string> last_reports;
};

struct Dataset {
  std::vector<event::LabeledSample> samples;
  std::vector<int> train_idx;
  // Validation samples are copied out so the re-id split indexes them directly.
  std::vector<event::LabeledSample> val_samples;
  event::ReIdSplit val_split;
  int n_subjects = 0;
  int n_classes = 0;
  event::AugmentationConfig augmentation;
  event::SplitProtocol protocol = event::SplitProtocol::kDvsGesture;

  std::vector<int> val_all() const;
  int channels() const { return samples.at(0).histogram.channels(); }
  int height() const { return samples.at(0).histogram.height(); }
  int width() const { return samples.at(0).histogram.width(); }
};

Dataset make_dataset(std::vector<event::LabeledSample> samples, double val_fraction,
                     event::SplitProtocol protocol, std::uint64_t seed,
                     const event::AugmentationConfig& augmentation);

// Anonymization front-end used by the post-training attacks: fresh noise per
// training batch, per-sample deterministic noise at evaluation.
class Anonymizer {
 public:
  virtual ~Anonymizer() = default;
  virtual Tensor apply_train(const Tensor& batch, Rng& rng) = 0;
  virtual Tensor apply_eval(const Tensor& hist, const std::string& sample_key) = 0;
  virtual std::string label() const = 0;
};

class IdentityAnonymizer : public Anonymizer {
 public:
  Tensor apply_train(const Tensor& batch, Rng&) override { return batch; }
  Tensor apply_eval(const Tensor& hist, const std::string&) override { return hist; }
  std::string label() const override { return "raw"; }
};

class GaussianAnonymizer : public Anonymizer {
 public:
  GaussianAnonymizer(float std, std::uint64_t eval_seed)
      : std_(std), eval_seed_(eval_seed) {}
  Tensor apply_train(const Tensor& batch, Rng& rng) override;
  Tensor apply_eval(const Tensor& hist, const std::string& sample_key) override;
  std::string label() const override;

 private:
  float std_;
  std::uint64_t eval_seed_;
};

class LearnedAnonymizer : public Anonymizer {
 public:
  LearnedAnonymizer(models::AnonymizerNet& net, std::uint64_t eval_seed)
      : net_(net), eval_seed_(eval_seed) {}
  Tensor apply_train(const Tensor& batch, Rng& rng) override;
  Tensor apply_eval(const Tensor& hist, const std::string& sample_key) override;
  std::string label() const override { return "anonynoise"; }

 private:
  models::AnonymizerNet& net_;
  std::uint64_t eval_seed_;
};

struct TrainState {
  models::AnonymizerConfig anon_cfg;
  models::ClassifierConfig reid_cfg;
  models::ClassifierConfig target_cfg;
  models::DenoiserConfig denoiser_cfg;
  losses::TripletConfig triplet;
  losses::LossWeights weights;

  std::unique_ptr<models::AnonymizerNet> anon;
  std::unique_ptr<models::ClassifierNet> reid;
  std::unique_ptr<models::ClassifierNet> target;
  std::unique_ptr<models::DenoiserNet> denoiser;

  // Pre-trained weights kept for the post-training attack restarts.
  std::vector<Tensor> pretrained_reid_params, pretrained_reid_buffers;
  std::vector<Tensor> pretrained_target_params, pretrained_target_buffers;
  bool has_pretrained = false;

  // Raw-data reference metrics recorded after pre-training.
  std::optional<eval::MetricsRow> raw_metrics;

  Stage stage = Stage::kPretrain;
  int epoch = 0;
  Rng rng;
  std::uint64_t eval_seed = 0;

  // Pipeline optimizer/scheduler state lives here so checkpoint-resume
  // reproduces trajectories exactly. Optimizer state loaded from a checkpoint
  // is parked in pending_opt_state until the optimizers are constructed.
  std::unique_ptr<optim::AdamW> opt_reid, opt_target, opt_anon;
  std::map<std::string, std::vector<float>> pending_opt_state;

  TrainState(const models::AnonymizerConfig& ac, const models::ClassifierConfig& rc,
             const models::ClassifierConfig& tc, const models::DenoiserConfig& dc,
             const losses::TripletConfig& tl, const losses::LossWeights& w,
             std::uint64_t seed);

  void capture_pretrained();
  void restore_pretrained_attackers();
};

// Epoch logging: one JSON line per epoch into `log` when non-null.
struct EpochLogger {
  std::ostream* out = nullptr;
  void write(const std::string& json_line);
};

// Pre-trains one classifier on raw augmented histograms; keeps the best
// parameters (mAP for re-id nets, accuracy for target nets). Returns the
// best validation metric (percent for accuracy, mAP percent for re-id).
double pretrain(models::ClassifierNet& net, bool is_reid, const Dataset& ds,
                const StageConfig& cfg, const losses::TripletConfig& triplet,
                const losses::LossWeights& weights, Rng& rng, EpochLogger log);

// Both pre-training runs plus raw reference metrics captured into the state.
void pretrain_all(TrainState& state, const Dataset& ds, const StageConfig& cfg,
                  EpochLogger log);

// Adversarial min-max stage: per batch, aux update (re-id + target, anonymizer
// fixed) then anonymizer update on a fresh forward pass (aux fixed).
void train_pipeline(TrainState& state, const Dataset& ds, const StageConfig& cfg,
                    EpochLogger log, const std::string& checkpoint_dir = "");

// Fine-tunes attackers from the pre-trained weights against the frozen
// anonymizer; returns Table-1-style metrics.
eval::MetricsRow posttrain_attack(TrainState& state, const Dataset& ds,
                                  const StageConfig& cfg, Anonymizer& anonymizer,
                                  EpochLogger log);

// Attack variant with a denoising network in front of the classifiers.
eval::MetricsRow posttrain_inversion_attack(TrainState& state, const Dataset& ds,
                                            const StageConfig& cfg,
                                            Anonymizer& anonymizer, EpochLogger log);

// Gaussian-noise baseline sweep; one metrics row per std value.
std::vector<eval::MetricsRow> run_noise_baseline(TrainState& state, const Dataset& ds,
                                                 const StageConfig& cfg,
                                                 const std::vector<float>& std_values,
                                                 EpochLogger log);

// Frozen-anonymizer cross-dataset transfer: pre-trains fresh attackers on the
// target dataset, then attacks with the frozen anonymizer from `state`.
// Returns {raw row, attacked row}.
std::pair<eval::MetricsRow, eval::MetricsRow> transfer_frozen_anonymizer(
    TrainState& state, const Dataset& target_ds, const StageConfig& pretrain_cfg,
    const StageConfig& attack_cfg, EpochLogger log);

// Export anonymized histograms (per-sample deterministic noise) in the
// sample-archive format; hook for external reconstruction attacks.
void export_anonymized(TrainState& state, const Dataset& ds, const std::string& out_dir);

// Checkpointing of the complete state (parameters, buffers, optimizers, rng).
void save_state(const TrainState& state, const std::string& path,
                const std::string& extra_meta_json = "{}");
void load_state(TrainState& state, const std::string& path);

// Evaluates current classifiers under an anonymizer; fills a metrics row.
eval::MetricsRow evaluate_state(TrainState& state, const Dataset& ds,
                                Anonymizer& anonymizer, const std::string& label);

}  // namespace anony::train
