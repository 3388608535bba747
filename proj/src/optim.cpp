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

#include "anony/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace anony::optim {

float scheduled_lr(const AdamWConfig& cfg, int epoch) {
  if (cfg.scheduler == Scheduler::kCosine) {
    int horizon = cfg.total_epochs > 1 ? cfg.total_epochs : 1;
    double phase = static_cast<double>(epoch) / horizon;
    if (phase > 1.0) phase = 1.0;
    return static_cast<float>(cfg.lr * 0.5 * (1.0 + std::cos(M_PI * phase)));
  }
  int drops = cfg.step_period > 0 ? epoch / cfg.step_period : 0;
  return cfg.lr * std::pow(cfg.step_gamma, static_cast<float>(drops));
}

AdamW::AdamW(std::vector<nn::Param*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg), lr_now_(cfg.lr) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto* p : params_) {
    m_.emplace_back(p->w.shape);
    v_.emplace_back(p->w.shape);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    nn::Param& p = *params_[pi];
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    for (size_t i = 0; i < p.w.v.size(); ++i) {
      float g = p.g.v[i];
      m.v[i] = cfg_.beta1 * m.v[i] + (1 - cfg_.beta1) * g;
      v.v[i] = cfg_.beta2 * v.v[i] + (1 - cfg_.beta2) * g * g;
      float mhat = static_cast<float>(m.v[i] / bc1);
      float vhat = static_cast<float>(v.v[i] / bc2);
      p.w.v[i] -= lr_now_ * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                             cfg_.weight_decay * p.w.v[i]);
    }
    p.g.fill(0.0f);
  }
}

void AdamW::set_epoch(int epoch) { lr_now_ = scheduled_lr(cfg_, epoch); }

std::vector<float> AdamW::serialize_state() const {
  std::vector<float> out;
  out.push_back(static_cast<float>(t_));
  out.push_back(lr_now_);
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    out.insert(out.end(), m_[pi].v.begin(), m_[pi].v.end());
    out.insert(out.end(), v_[pi].v.begin(), v_[pi].v.end());
  }
  return out;
}

void AdamW::restore_state(const std::vector<float>& state) {
  size_t need = 2;
  for (const auto& t : m_) need += 2 * t.v.size();
  if (state.size() != need) throw std::invalid_argument("optimizer state size mismatch");
  size_t off = 0;
  t_ = static_cast<std::int64_t>(state[off++]);
  lr_now_ = state[off++];
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    std::copy(state.begin() + off, state.begin() + off + m_[pi].v.size(), m_[pi].v.begin());
    off += m_[pi].v.size();
    std::copy(state.begin() + off, state.begin() + off + v_[pi].v.size(), v_[pi].v.begin());
    off += v_[pi].v.size();
  }
}

}  // namespace anony::optim
