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

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anony/event_core.hpp"
#include "anony/models.hpp"

namespace anony::eval {

struct RetrievalResult {
  // ranked[i]: gallery sample indices for query i, ascending distance
  std::vector<std::vector<int>> ranked;
  std::map<int, double> topk_acc;  // k in {1, 5, 10}, values in [0, 100]
  double mAP = 0.0;                // in [0, 1]
};

struct MetricsRow {
  std::string config_label;
  double acc_t = 0.0;
  double acc_id_top1 = 0.0;
  std::optional<double> acc_id_top5;
  std::optional<double> acc_id_top10;
  double map_id = 0.0;  // percent
  std::optional<double> recon_mse;
};

// Optional transform applied to each histogram before the classifier; used
// to plug in an anonymizer (with per-sample deterministic noise) and/or a
// denoiser during evaluation.
using SampleTransform =
    std::function<Tensor(const Tensor& hist, const std::string& sample_key)>;

// One 256-d row per sample, evaluation mode.
Tensor extract_embeddings(models::ClassifierNet& classifier,
                          const std::vector<event::LabeledSample>& samples,
                          const std::vector<int>& indices,
                          const SampleTransform& transform = nullptr,
                          int batch_size = 32);

// Retrieval over L2-normalized embeddings with Euclidean distance; ties are
// broken by sample_key order. `embeddings` has one row per dataset sample
// (row i corresponds to samples[i]).
RetrievalResult evaluate_retrieval(const event::ReIdSplit& split,
                                   const std::vector<event::LabeledSample>& samples,
                                   const Tensor& embeddings);

// Top-1 classification accuracy in percent over the given indices.
double evaluate_accuracy(models::ClassifierNet& classifier,
                         const std::vector<event::LabeledSample>& samples,
                         const std::vector<int>& indices, bool use_subject_labels,
                         const SampleTransform& transform = nullptr,
                         int batch_size = 32);

// Writes metrics.csv, metrics.json, and a scatter plot (acc_id vs acc_T,
// with arrows between paired no-inversion / with-inversion rows) to out_dir.
void emit_report(const std::vector<MetricsRow>& rows, const std::string& out_dir,
                 const std::string& config_snapshot_json = "{}");

std::vector<MetricsRow> parse_metrics_csv(const std::string& path);

}  // namespace anony::eval
