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

#include <vector>

#include "anony/nn.hpp"

namespace anony::optim {

enum class Scheduler { kCosine, kStep };

struct AdamWConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-2f;
  Scheduler scheduler = Scheduler::kCosine;
  int total_epochs = 200;   // cosine horizon
  int step_period = 100;    // step decay period (epochs)
  float step_gamma = 0.5f;
};

// Decoupled weight decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<nn::Param*> params, AdamWConfig cfg);

  // Applies one update from the accumulated gradients, then zeroes them.
  void step();
  // Epoch-level learning-rate schedule; call once per finished epoch.
  void set_epoch(int epoch);
  float current_lr() const { return lr_now_; }

  // Flat state (m, v per parameter plus step counter) for checkpointing.
  std::vector<float> serialize_state() const;
  void restore_state(const std::vector<float>& state);

 private:
  std::vector<nn::Param*> params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
  float lr_now_;
};

float scheduled_lr(const AdamWConfig& cfg, int epoch);

}  // namespace anony::optim
