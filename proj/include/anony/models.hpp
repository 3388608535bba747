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

#include <memory>
#include <string>
#include <vector>

#include "anony/nn.hpp"

namespace anony::models {

struct AnonymizerConfig {
  int in_channels = 10;  // 2*T
  int hidden_width = 64;
  bool take_noise_input = true;
  bool predict_mu = true;
  bool predict_sigma = true;
  bool add_input_residual = true;
  float noise_input_std = 1.0f;

  static constexpr int kLayers = 6;
  static constexpr int kKernel = 3;

  void validate() const;
};

struct AnonymizerOutput {
  Tensor mu;     // zero tensor when predict_mu=false
  Tensor sigma;  // softplus-mapped, element-wise >= 0
};

enum class CompositionMode { kFull, kMuOnly, kInputPlusMu, kInputPlusSigmaNoise };

// X'_e = X_e + mu + sigma * n and its ablation variants.
Tensor compose_anonymized(const Tensor& x, const AnonymizerOutput& out, const Tensor& n,
                          CompositionMode mode);
// Gradients of the composition w.r.t. mu and sigma; n is a constant sample
// and x receives no gradient (the anonymizer owns mu/sigma only).
void compose_backward(const Tensor& d_out, const AnonymizerOutput& out, const Tensor& n,
                      CompositionMode mode, Tensor& d_mu, Tensor& d_sigma);
// The composition mode implied by a config (Table-style ablation variants).
CompositionMode composition_mode(const AnonymizerConfig& cfg);

// Six 3x3 stride-1 conv layers, fully convolutional, no skip connections.
class AnonymizerNet {
 public:
  AnonymizerNet(const AnonymizerConfig& cfg, Rng& init_rng);

  // n must be shaped like x; it is concatenated as input when configured.
  AnonymizerOutput forward(const Tensor& x, const Tensor& n);
  // Backward from gradients on mu and sigma; accumulates parameter grads.
  void backward(const Tensor& d_mu, const Tensor& d_sigma);

  std::vector<nn::Param*> params();
  std::vector<nn::Param*> buffers() { return {}; }
  const AnonymizerConfig& config() const { return cfg_; }

 private:
  AnonymizerConfig cfg_;
  nn::Sequential net_;
  Tensor raw_sigma_;  // pre-softplus head output, cached for backward
  std::vector<int> in_shape_;
};

enum class Backbone { kSmallCnn, kResNet50Style };

struct ClassifierConfig {
  Backbone backbone = Backbone::kSmallCnn;
  int in_channels = 10;
  int n_classes = 2;
  float dropout_rate = 0.5f;
  bool pretrained_backbone = false;

  static constexpr int kEmbedDim = 256;

  void validate() const;
};

struct ClassifierOut {
  Tensor embedding;  // (N, 256)
  Tensor logits;     // (N, n_classes)
};

// Backbone + replacement head (linear 256 -> BN -> LeakyReLU -> dropout)
// + linear classifier.
class ClassifierNet {
 public:
  ClassifierNet(const ClassifierConfig& cfg, Rng& init_rng);

  ClassifierOut forward(const Tensor& x, nn::Mode mode, Rng* rng);
  // Backward from gradients on the embedding and logits; returns dL/dx.
  Tensor backward(const Tensor& d_embedding, const Tensor& d_logits);

  std::vector<nn::Param*> params();
  std::vector<nn::Param*> buffers();
  const ClassifierConfig& config() const { return cfg_; }
  nn::Param& first_conv_weight();

 private:
  ClassifierConfig cfg_;
  nn::Sequential backbone_;
  nn::Sequential head_;
  std::unique_ptr<nn::Linear> classifier_;
  Tensor embedding_;
};

struct DenoiserConfig {
  int in_channels = 10;
  int hidden_width = 64;

  static constexpr int kLayers = 15;

  void validate() const;
};

// 15 conv(3x3, stride 1) layers with batch norm and LeakyReLU after each
// except the last, which is linear.
class DenoiserNet {
 public:
  DenoiserNet(const DenoiserConfig& cfg, Rng& init_rng);

  Tensor forward(const Tensor& x, nn::Mode mode, Rng* rng);
  Tensor backward(const Tensor& dy);

  std::vector<nn::Param*> params();
  std::vector<nn::Param*> buffers();
  const DenoiserConfig& config() const { return cfg_; }

 private:
  DenoiserConfig cfg_;
  nn::Sequential net_;
};

// Replicates the mean of a 3-channel first-layer kernel across 2*T channels,
// scaled by 3/(2*T) to keep expected activations unchanged.
Tensor adapt_pretrained_input(const Tensor& source_weights, int target_channels);

// Deterministic per-sample evaluation noise, seeded from the sample key.
Tensor noise_for_sample(const std::string& sample_key, const std::vector<int>& shape,
                        float std, std::uint64_t eval_seed);

// Snapshot/restore of a parameter list (used for best-model tracking and the
// frozen-network contracts).
std::vector<Tensor> snapshot(const std::vector<nn::Param*>& params);
void restore(const std::vector<nn::Param*>& params, const std::vector<Tensor>& snap);

}  // namespace anony::models
