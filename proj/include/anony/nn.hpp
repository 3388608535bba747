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

#include "anony/kernels.hpp"
#include "anony/tensor.hpp"

namespace anony::nn {

// kTrainFrozenStats: batch statistics are used for normalization (so gradients
// flow as in training) but running stats and dropout masks leave no state
// change — used when a classifier acts as a frozen critic.
enum class Mode { kTrain, kTrainFrozenStats, kEval };

struct Param {
  std::string name;
  Tensor w;
  Tensor g;  // gradient, same shape as w

  Param(std::string n, Tensor t) : name(std::move(n)), w(std::move(t)), g(w.shape) {}
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode, Rng* rng) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect_params(std::vector<Param*>& out) {}
  // Non-parameter state that must survive checkpointing (BN running stats).
  virtual void collect_buffers(std::vector<Param*>& out) {}
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad,
         Rng& init_rng);
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  kernels::ConvSpec spec_;
  Param weight_, bias_;
  Tensor x_;
};

class Linear : public Layer {
 public:
  Linear(std::string name, int in_dim, int out_dim, Rng& init_rng);
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;

  Param& weight() { return weight_; }

 private:
  Param weight_, bias_;
  Tensor x_;
};

// Works on (N, C, H, W) when spatial=true, else on (N, C).
class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, int channels, bool spatial, float momentum = 0.1f,
            float eps = 1e-5f);
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Param*>& out) override;

 private:
  int channels_;
  bool spatial_;
  float momentum_, eps_;
  Param gamma_, beta_;
  Param running_mean_, running_var_;
  Tensor xhat_;
  std::vector<float> batch_mean_, batch_inv_std_;
  std::vector<int> in_shape_;
  bool used_batch_stats_ = false;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(float slope = 0.01f) : slope_(slope) {}
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;

 private:
  float slope_;
  Tensor x_;
};

class Dropout : public Layer {
 public:
  explicit Dropout(float rate) : rate_(rate) {}
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;

 private:
  float rate_;
  Tensor mask_;
  bool identity_ = true;
};

// (N, C, H, W) -> (N, C)
class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;

 private:
  std::vector<int> in_shape_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int pad) : k_(kernel), stride_(stride), pad_(pad) {}
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;

 private:
  int k_, stride_, pad_;
  std::vector<int> in_shape_;
  std::vector<int> argmax_;
};

class Sequential : public Layer {
 public:
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Param*>& out) override;
  size_t size() const { return layers_.size(); }
  Layer* at(size_t i) { return layers_[i].get(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ResNet bottleneck: 1x1 -> 3x3(stride) -> 1x1 with a projection shortcut
// when shape changes.
class Bottleneck : public Layer {
 public:
  Bottleneck(const std::string& name, int in_ch, int mid_ch, int out_ch, int stride,
             Rng& init_rng);
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Param*>& out) override;

 private:
  Sequential main_;
  std::unique_ptr<Sequential> shortcut_;  // null -> identity
  LeakyReLU out_act_;
};

// Kaiming-style fan-in init used by all layers.
void init_conv_weight(Tensor& w, int fan_in, Rng& rng);

// Utilities over parameter lists.
std::uint64_t params_hash(const std::vector<Param*>& params);
void zero_grads(const std::vector<Param*>& params);

}  // namespace anony::nn
