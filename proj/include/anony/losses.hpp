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

#include <map>
#include <string>
#include <vector>

#include "anony/tensor.hpp"

namespace anony::losses {

enum class Mining { kBatchHard, kBatchAll };
enum class Distance { kEuclidean, kCosine };

struct TripletConfig {
  float margin = 0.3f;
  Mining mining = Mining::kBatchHard;
  Distance distance = Distance::kEuclidean;

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;
};

// Mean over the batch of -log softmax(logits)[label]. d_logits receives the
// gradient when non-null.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     Tensor* d_logits = nullptr);

// Batch-hard or batch-all triplet loss over (N, D) embeddings. d_embeddings
// accumulates the gradient when non-null (caller zeroes it).
double triplet_loss(const Tensor& embeddings, const std::vector<int>& subject_ids,
                    const TripletConfig& cfg, Tensor* d_embeddings = nullptr);

struct LossWeights {
  float ce = 1.0f;
  float triplet = 1.0f;
  // Optional ceiling on the magnitude of the negated triplet term in the
  // anonymization loss; <= 0 means unclipped.
  float neg_triplet_clip = 0.0f;
};

// CE(id) + triplet; gradients go to d_logits/d_embeddings when non-null.
LossReport reid_loss(const Tensor& logits, const std::vector<int>& labels_id,
                     const Tensor& embeddings, const std::vector<int>& subject_ids,
                     const TripletConfig& cfg, const LossWeights& w,
                     Tensor* d_logits = nullptr, Tensor* d_embeddings = nullptr);

// CE(target) - triplet(subject ids); the adversarial anonymizer objective.
LossReport anon_loss(const Tensor& target_logits, const std::vector<int>& labels_t,
                     const Tensor& embeddings, const std::vector<int>& subject_ids,
                     const TripletConfig& cfg, const LossWeights& w,
                     Tensor* d_target_logits = nullptr, Tensor* d_embeddings = nullptr);

// CE + lambda * MSE(recon, original); the inversion-attack objective.
LossReport inversion_loss(const Tensor& recon, const Tensor& original,
                          const Tensor& logits, const std::vector<int>& labels,
                          float lambda_recon, Tensor* d_recon = nullptr,
                          Tensor* d_logits = nullptr);

double mse(const Tensor& a, const Tensor& b, Tensor* d_a = nullptr);

}  // namespace anony::losses
