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

#include "anony/nn.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace anony::nn {

void init_conv_weight(Tensor& w, int fan_in, Rng& rng) {
  float std = std::sqrt(2.0f / static_cast<float>(fan_in));
  rng.fill_normal(w, 0.0f, std);
}

std::uint64_t params_hash(const std::vector<Param*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const Param* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->w.v.data(), p->w.v.size() * sizeof(float));
  }
  return h;
}

void zero_grads(const std::vector<Param*>& params) {
  for (Param* p : params) p->g.fill(0.0f);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride,
               int pad, Rng& init_rng)
    : weight_(name + ".weight", Tensor({out_ch, in_ch, kernel, kernel})),
      bias_(name + ".bias", Tensor({out_ch})) {
  spec_.in_channels = in_ch;
  spec_.out_channels = out_ch;
  spec_.kernel = kernel;
  spec_.stride = stride;
  spec_.pad = pad;
  init_conv_weight(weight_.w, in_ch * kernel * kernel, init_rng);
}

Tensor Conv2d::forward(const Tensor& x, Mode, Rng*) {
  x_ = x;
  Tensor y;
  kernels::conv2d(x, weight_.w, bias_.w, spec_, y);
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  Tensor dx;
  kernels::conv2d_grad(x_, weight_.w, spec_, dy, &dx, weight_.g, bias_.g);
  return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in_dim, int out_dim, Rng& init_rng)
    : weight_(name + ".weight", Tensor({out_dim, in_dim})),
      bias_(name + ".bias", Tensor({out_dim})) {
  init_conv_weight(weight_.w, in_dim, init_rng);
}

Tensor Linear::forward(const Tensor& x, Mode, Rng*) {
  x_ = x;
  Tensor y;
  kernels::linear(x, weight_.w, bias_.w, y);
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  Tensor dx;
  kernels::linear_grad(x_, weight_.w, dy, &dx, weight_.g, bias_.g);
  return dx;
}

void Linear::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, bool spatial, float momentum,
                     float eps)
    : channels_(channels),
      spatial_(spatial),
      momentum_(momentum),
      eps_(eps),
      gamma_(name + ".gamma", Tensor::full({channels}, 1.0f)),
      beta_(name + ".beta", Tensor({channels})),
      running_mean_(name + ".running_mean", Tensor({channels})),
      running_var_(name + ".running_var", Tensor::full({channels}, 1.0f)) {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode, Rng*) {
  if (x.dim(1) != channels_) throw std::invalid_argument("batchnorm: channel mismatch");
  in_shape_ = x.shape;
  const int N = x.dim(0);
  const int spatial = spatial_ ? x.dim(2) * x.dim(3) : 1;
  const std::int64_t per_ch = static_cast<std::int64_t>(N) * spatial;

  batch_mean_.assign(channels_, 0.0f);
  batch_inv_std_.assign(channels_, 0.0f);
  used_batch_stats_ = mode != Mode::kEval;

  Tensor y(x.shape);
  xhat_ = Tensor(x.shape);

  auto idx = [&](int n, int c, int s) {
    return (static_cast<size_t>(n) * channels_ + c) * spatial + s;
  };

  for (int c = 0; c < channels_; ++c) {
    float mean, inv_std;
    if (used_batch_stats_) {
      double m = 0.0;
      for (int n = 0; n < N; ++n)
        for (int s = 0; s < spatial; ++s) m += x.v[idx(n, c, s)];
      m /= static_cast<double>(per_ch);
      double var = 0.0;
      for (int n = 0; n < N; ++n)
        for (int s = 0; s < spatial; ++s) {
          double d = x.v[idx(n, c, s)] - m;
          var += d * d;
        }
      var /= static_cast<double>(per_ch);
      mean = static_cast<float>(m);
      inv_std = static_cast<float>(1.0 / std::sqrt(var + eps_));
      if (mode == Mode::kTrain) {
        running_mean_.w.at(c) = (1 - momentum_) * running_mean_.w.at(c) + momentum_ * mean;
        running_var_.w.at(c) =
            (1 - momentum_) * running_var_.w.at(c) + momentum_ * static_cast<float>(var);
      }
    } else {
      mean = running_mean_.w.at(c);
      inv_std = 1.0f / std::sqrt(running_var_.w.at(c) + eps_);
    }
    batch_mean_[c] = mean;
    batch_inv_std_[c] = inv_std;
    const float g = gamma_.w.at(c), b = beta_.w.at(c);
    for (int n = 0; n < N; ++n)
      for (int s = 0; s < spatial; ++s) {
        size_t i = idx(n, c, s);
        float xh = (x.v[i] - mean) * inv_std;
        xhat_.v[i] = xh;
        y.v[i] = g * xh + b;
      }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  const int N = in_shape_[0];
  const int spatial = spatial_ ? in_shape_[2] * in_shape_[3] : 1;
  const std::int64_t per_ch = static_cast<std::int64_t>(N) * spatial;
  Tensor dx(dy.shape);

  auto idx = [&](int n, int c, int s) {
    return (static_cast<size_t>(n) * channels_ + c) * spatial + s;
  };

  for (int c = 0; c < channels_; ++c) {
    const float g = gamma_.w.at(c), inv_std = batch_inv_std_[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n)
      for (int s = 0; s < spatial; ++s) {
        size_t i = idx(n, c, s);
        sum_dy += dy.v[i];
        sum_dy_xhat += static_cast<double>(dy.v[i]) * xhat_.v[i];
      }
    gamma_.g.at(c) += static_cast<float>(sum_dy_xhat);
    beta_.g.at(c) += static_cast<float>(sum_dy);
    if (used_batch_stats_) {
      const double inv_m = 1.0 / static_cast<double>(per_ch);
      for (int n = 0; n < N; ++n)
        for (int s = 0; s < spatial; ++s) {
          size_t i = idx(n, c, s);
          double t = dy.v[i] - inv_m * sum_dy - xhat_.v[i] * inv_m * sum_dy_xhat;
          dx.v[i] = static_cast<float>(g * inv_std * t);
        }
    } else {
      for (int n = 0; n < N; ++n)
        for (int s = 0; s < spatial; ++s) {
          size_t i = idx(n, c, s);
          dx.v[i] = g * inv_std * dy.v[i];
        }
    }
  }
  return dx;
}

void BatchNorm::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm::collect_buffers(std::vector<Param*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ------------------------------------------------------------- LeakyReLU

Tensor LeakyReLU::forward(const Tensor& x, Mode, Rng*) {
  x_ = x;
  Tensor y(x.shape);
  for (size_t i = 0; i < x.v.size(); ++i)
    y.v[i] = x.v[i] > 0 ? x.v[i] : slope_ * x.v[i];
  return y;
}

Tensor LeakyReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape);
  for (size_t i = 0; i < dy.v.size(); ++i)
    dx.v[i] = x_.v[i] > 0 ? dy.v[i] : slope_ * dy.v[i];
  return dx;
}

// --------------------------------------------------------------- Dropout

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng* rng) {
  if (mode == Mode::kEval || rate_ <= 0.0f) {
    identity_ = true;
    return x;
  }
  if (!rng) throw std::invalid_argument("dropout in training mode needs an rng");
  identity_ = false;
  mask_ = Tensor(x.shape);
  const float keep = 1.0f - rate_;
  Tensor y(x.shape);
  for (size_t i = 0; i < x.v.size(); ++i) {
    float m = rng->uniform() < keep ? 1.0f / keep : 0.0f;
    mask_.v[i] = m;
    y.v[i] = x.v[i] * m;
  }
  return y;
}

Tensor Dropout::backward(const Tensor& dy) {
  if (identity_) return dy;
  Tensor dx(dy.shape);
  for (size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = dy.v[i] * mask_.v[i];
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Mode, Rng*) {
  in_shape_ = x.shape;
  const int N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  Tensor y({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      const float* p = x.v.data() + (static_cast<size_t>(n) * C + c) * S;
      for (int s = 0; s < S; ++s) acc += p[s];
      y.at(n, c) = static_cast<float>(acc / S);
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  const int N = in_shape_[0], C = in_shape_[1], S = in_shape_[2] * in_shape_[3];
  Tensor dx(in_shape_);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float g = dy.at(n, c) / static_cast<float>(S);
      float* p = dx.v.data() + (static_cast<size_t>(n) * C + c) * S;
      for (int s = 0; s < S; ++s) p[s] = g;
    }
  return dx;
}

// ------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x, Mode, Rng*) {
  in_shape_ = x.shape;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H + 2 * pad_ - k_) / stride_ + 1;
  const int Wo = (W + 2 * pad_ - k_) / stride_ + 1;
  Tensor y({N, C, Ho, Wo});
  argmax_.assign(y.v.size(), -1);
  size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          int best_i = -1;
          for (int kh = 0; kh < k_; ++kh) {
            int ih = oh * stride_ - pad_ + kh;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < k_; ++kw) {
              int iw = ow * stride_ - pad_ + kw;
              if (iw < 0 || iw >= W) continue;
              int i = ((n * C + c) * H + ih) * W + iw;
              if (x.v[static_cast<size_t>(i)] > best) {
                best = x.v[static_cast<size_t>(i)];
                best_i = i;
              }
            }
          }
          y.v[o] = best_i >= 0 ? best : 0.0f;
          argmax_[o] = best_i;
        }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  for (size_t o = 0; o < dy.v.size(); ++o)
    if (argmax_[o] >= 0) dx.v[static_cast<size_t>(argmax_[o])] += dy.v[o];
  return dx;
}

// ------------------------------------------------------------ Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode, Rng* rng) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, mode, rng);
  return h;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (auto& l : layers_) l->collect_params(out);
}

void Sequential::collect_buffers(std::vector<Param*>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

// ------------------------------------------------------------ Bottleneck

Bottleneck::Bottleneck(const std::string& name, int in_ch, int mid_ch, int out_ch,
                       int stride, Rng& init_rng) {
  main_.add(std::make_unique<Conv2d>(name + ".conv1", in_ch, mid_ch, 1, 1, 0, init_rng));
  main_.add(std::make_unique<BatchNorm>(name + ".bn1", mid_ch, true));
  main_.add(std::make_unique<LeakyReLU>());
  main_.add(std::make_unique<Conv2d>(name + ".conv2", mid_ch, mid_ch, 3, stride, 1, init_rng));
  main_.add(std::make_unique<BatchNorm>(name + ".bn2", mid_ch, true));
  main_.add(std::make_unique<LeakyReLU>());
  main_.add(std::make_unique<Conv2d>(name + ".conv3", mid_ch, out_ch, 1, 1, 0, init_rng));
  main_.add(std::make_unique<BatchNorm>(name + ".bn3", out_ch, true));
  if (in_ch != out_ch || stride != 1) {
    shortcut_ = std::make_unique<Sequential>();
    shortcut_->add(
        std::make_unique<Conv2d>(name + ".down", in_ch, out_ch, 1, stride, 0, init_rng));
    shortcut_->add(std::make_unique<BatchNorm>(name + ".down_bn", out_ch, true));
  }
}

Tensor Bottleneck::forward(const Tensor& x, Mode mode, Rng* rng) {
  Tensor main_out = main_.forward(x, mode, rng);
  Tensor skip = shortcut_ ? shortcut_->forward(x, mode, rng) : x;
  main_out.add_scaled(skip, 1.0f);
  return out_act_.forward(main_out, mode, rng);
}

Tensor Bottleneck::backward(const Tensor& dy) {
  Tensor d_sum = out_act_.backward(dy);
  Tensor dx = main_.backward(d_sum);
  if (shortcut_) {
    Tensor d_skip = shortcut_->backward(d_sum);
    dx.add_scaled(d_skip, 1.0f);
  } else {
    dx.add_scaled(d_sum, 1.0f);
  }
  return dx;
}

void Bottleneck::collect_params(std::vector<Param*>& out) {
  main_.collect_params(out);
  if (shortcut_) shortcut_->collect_params(out);
}

void Bottleneck::collect_buffers(std::vector<Param*>& out) {
  main_.collect_buffers(out);
  if (shortcut_) shortcut_->collect_buffers(out);
}

}  // namespace anony::nn
