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

#include "anony/models.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace anony::models {

namespace {

float softplus(float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); }
float sigmoid(float x) {
  return x >= 0 ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor out({N, Ca + Cb, H, W});
  const size_t plane = static_cast<size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::copy(a.v.begin() + static_cast<std::ptrdiff_t>(n * Ca * plane),
              a.v.begin() + static_cast<std::ptrdiff_t>((n + 1) * Ca * plane),
              out.v.begin() + static_cast<std::ptrdiff_t>(n * (Ca + Cb) * plane));
    std::copy(b.v.begin() + static_cast<std::ptrdiff_t>(n * Cb * plane),
              b.v.begin() + static_cast<std::ptrdiff_t>((n + 1) * Cb * plane),
              out.v.begin() + static_cast<std::ptrdiff_t>((n * (Ca + Cb) + Ca) * plane));
  }
  return out;
}

}  // namespace

void AnonymizerConfig::validate() const {
  if (!predict_mu && !predict_sigma)
    throw std::invalid_argument("anonymizer must predict at least one of mu/sigma");
  if (in_channels < 1 || hidden_width < 1)
    throw std::invalid_argument("anonymizer channel counts must be positive");
  if (noise_input_std <= 0)
    throw std::invalid_argument("noise_input_std must be positive");
}

CompositionMode composition_mode(const AnonymizerConfig& cfg) {
  if (!cfg.add_input_residual) return CompositionMode::kMuOnly;
  if (cfg.predict_mu && cfg.predict_sigma) return CompositionMode::kFull;
  if (cfg.predict_mu) return CompositionMode::kInputPlusMu;
  return CompositionMode::kInputPlusSigmaNoise;
}

Tensor compose_anonymized(const Tensor& x, const AnonymizerOutput& out, const Tensor& n,
                          CompositionMode mode) {
  if (!x.same_shape(out.mu) || !x.same_shape(out.sigma) || !x.same_shape(n))
    throw std::invalid_argument("compose_anonymized: shape mismatch");
  Tensor y(x.shape);
  switch (mode) {
    case CompositionMode::kFull:
      for (size_t i = 0; i < x.v.size(); ++i)
        y.v[i] = x.v[i] + out.mu.v[i] + out.sigma.v[i] * n.v[i];
      break;
    case CompositionMode::kMuOnly:
      y = out.mu;
      break;
    case CompositionMode::kInputPlusMu:
      for (size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] + out.mu.v[i];
      break;
    case CompositionMode::kInputPlusSigmaNoise:
      for (size_t i = 0; i < x.v.size(); ++i)
        y.v[i] = x.v[i] + out.sigma.v[i] * n.v[i];
      break;
    default:
      throw std::invalid_argument("compose_anonymized: unknown mode");
  }
  return y;
}

void compose_backward(const Tensor& d_out, const AnonymizerOutput& out, const Tensor& n,
                      CompositionMode mode, Tensor& d_mu, Tensor& d_sigma) {
  d_mu = Tensor(d_out.shape);
  d_sigma = Tensor(d_out.shape);
  switch (mode) {
    case CompositionMode::kFull:
      d_mu = d_out;
      for (size_t i = 0; i < d_out.v.size(); ++i) d_sigma.v[i] = d_out.v[i] * n.v[i];
      break;
    case CompositionMode::kMuOnly:
    case CompositionMode::kInputPlusMu:
      d_mu = d_out;
      break;
    case CompositionMode::kInputPlusSigmaNoise:
      for (size_t i = 0; i < d_out.v.size(); ++i) d_sigma.v[i] = d_out.v[i] * n.v[i];
      break;
    default:
      throw std::invalid_argument("compose_backward: unknown mode");
  }
}

// ---------------------------------------------------------- AnonymizerNet

AnonymizerNet::AnonymizerNet(const AnonymizerConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  cfg.validate();
  const int in_ch = cfg.in_channels * (cfg.take_noise_input ? 2 : 1);
  const int out_ch =
      cfg.in_channels * ((cfg.predict_mu ? 1 : 0) + (cfg.predict_sigma ? 1 : 0));
  const int h = cfg.hidden_width;
  const int k = AnonymizerConfig::kKernel;
  net_.add(std::make_unique<nn::Conv2d>("anon.conv1", in_ch, h, k, 1, 1, init_rng));
  net_.add(std::make_unique<nn::LeakyReLU>());
  for (int i = 2; i < AnonymizerConfig::kLayers; ++i) {
    net_.add(std::make_unique<nn::Conv2d>("anon.conv" + std::to_string(i), h, h, k, 1, 1,
                                          init_rng));
    net_.add(std::make_unique<nn::LeakyReLU>());
  }
  net_.add(std::make_unique<nn::Conv2d>("anon.conv6", h, out_ch, k, 1, 1, init_rng));
}

AnonymizerOutput AnonymizerNet::forward(const Tensor& x, const Tensor& n) {
  if (!x.same_shape(n))
    throw std::invalid_argument("anonymizer: noise shape " + n.shape_str() +
                                " does not match input " + x.shape_str());
  in_shape_ = x.shape;
  Tensor input = cfg_.take_noise_input ? concat_channels(x, n) : x;
  Tensor raw = net_.forward(input, nn::Mode::kTrain, nullptr);

  const int N = x.dim(0), C = cfg_.in_channels, H = x.dim(2), W = x.dim(3);
  const size_t plane = static_cast<size_t>(C) * H * W;
  const int heads = (cfg_.predict_mu ? 1 : 0) + (cfg_.predict_sigma ? 1 : 0);

  AnonymizerOutput out;
  out.mu = Tensor(x.shape);
  out.sigma = Tensor(x.shape);
  raw_sigma_ = Tensor(x.shape);
  for (int n_i = 0; n_i < N; ++n_i) {
    const float* rp = raw.v.data() + static_cast<size_t>(n_i) * heads * plane;
    size_t off = 0;
    if (cfg_.predict_mu) {
      std::copy(rp, rp + plane, out.mu.v.begin() + static_cast<std::ptrdiff_t>(n_i * plane));
      off += plane;
    }
    if (cfg_.predict_sigma) {
      for (size_t i = 0; i < plane; ++i) {
        float r = rp[off + i];
        raw_sigma_.v[n_i * plane + i] = r;
        out.sigma.v[n_i * plane + i] = softplus(r);
      }
    }
  }
  return out;
}

void AnonymizerNet::backward(const Tensor& d_mu, const Tensor& d_sigma) {
  const int N = in_shape_[0], C = cfg_.in_channels, H = in_shape_[2], W = in_shape_[3];
  const size_t plane = static_cast<size_t>(C) * H * W;
  const int heads = (cfg_.predict_mu ? 1 : 0) + (cfg_.predict_sigma ? 1 : 0);
  Tensor d_raw({N, heads * C, H, W});
  for (int n_i = 0; n_i < N; ++n_i) {
    float* dp = d_raw.v.data() + static_cast<size_t>(n_i) * heads * plane;
    size_t off = 0;
    if (cfg_.predict_mu) {
      std::copy(d_mu.v.begin() + static_cast<std::ptrdiff_t>(n_i * plane),
                d_mu.v.begin() + static_cast<std::ptrdiff_t>((n_i + 1) * plane), dp);
      off += plane;
    }
    if (cfg_.predict_sigma) {
      for (size_t i = 0; i < plane; ++i)
        dp[off + i] = d_sigma.v[n_i * plane + i] * sigmoid(raw_sigma_.v[n_i * plane + i]);
    }
  }
  net_.backward(d_raw);
}

std::vector<nn::Param*> AnonymizerNet::params() {
  std::vector<nn::Param*> out;
  net_.collect_params(out);
  return out;
}

// ---------------------------------------------------------- ClassifierNet

void ClassifierConfig::validate() const {
  if (n_classes < 2) throw std::invalid_argument("classifier needs >= 2 classes");
  if (in_channels < 1) throw std::invalid_argument("classifier in_channels must be positive");
  if (dropout_rate < 0 || dropout_rate >= 1)
    throw std::invalid_argument("dropout_rate must be in [0, 1)");
}

ClassifierNet::ClassifierNet(const ClassifierConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  cfg.validate();
  int feat_dim = 0;
  if (cfg.backbone == Backbone::kSmallCnn) {
    if (cfg.pretrained_backbone)
      std::fprintf(stderr,
                   "warning: pretrained_backbone has no effect with the small CNN "
                   "backbone; using random initialization\n");
    const int widths[4] = {16, 32, 64, 128};
    int in_ch = cfg.in_channels;
    for (int i = 0; i < 4; ++i) {
      std::string nm = "backbone.block" + std::to_string(i);
      backbone_.add(std::make_unique<nn::Conv2d>(nm + ".conv", in_ch, widths[i], 3, 2, 1,
                                                 init_rng));
      backbone_.add(std::make_unique<nn::BatchNorm>(nm + ".bn", widths[i], true));
      backbone_.add(std::make_unique<nn::LeakyReLU>());
      in_ch = widths[i];
    }
    backbone_.add(std::make_unique<nn::GlobalAvgPool>());
    feat_dim = 128;
  } else {
    backbone_.add(std::make_unique<nn::Conv2d>("backbone.stem", cfg.in_channels, 64, 7, 2,
                                               3, init_rng));
    backbone_.add(std::make_unique<nn::BatchNorm>("backbone.stem_bn", 64, true));
    backbone_.add(std::make_unique<nn::LeakyReLU>());
    backbone_.add(std::make_unique<nn::MaxPool2d>(3, 2, 1));
    struct Stage {
      int blocks, mid, out, stride;
    };
    const Stage stages[4] = {{3, 64, 256, 1}, {4, 128, 512, 2}, {6, 256, 1024, 2},
                             {3, 512, 2048, 2}};
    int in_ch = 64;
    for (int s = 0; s < 4; ++s) {
      for (int b = 0; b < stages[s].blocks; ++b) {
        std::string nm = "backbone.stage" + std::to_string(s) + ".block" + std::to_string(b);
        int stride = b == 0 ? stages[s].stride : 1;
        backbone_.add(std::make_unique<nn::Bottleneck>(nm, in_ch, stages[s].mid,
                                                       stages[s].out, stride, init_rng));
        in_ch = stages[s].out;
      }
    }
    backbone_.add(std::make_unique<nn::GlobalAvgPool>());
    feat_dim = 2048;
  }

  head_.add(std::make_unique<nn::Linear>("head.fc", feat_dim, ClassifierConfig::kEmbedDim,
                                         init_rng));
  head_.add(std::make_unique<nn::BatchNorm>("head.bn", ClassifierConfig::kEmbedDim, false));
  head_.add(std::make_unique<nn::LeakyReLU>());
  head_.add(std::make_unique<nn::Dropout>(cfg.dropout_rate));
  classifier_ = std::make_unique<nn::Linear>("classifier", ClassifierConfig::kEmbedDim,
                                             cfg.n_classes, init_rng);
}

ClassifierOut ClassifierNet::forward(const Tensor& x, nn::Mode mode, Rng* rng) {
  if (x.dim(1) != cfg_.in_channels)
    throw std::invalid_argument("classifier: expected " + std::to_string(cfg_.in_channels) +
                                " channels, got " + std::to_string(x.dim(1)));
  Tensor feats = backbone_.forward(x, mode, rng);
  embedding_ = head_.forward(feats, mode, rng);
  ClassifierOut out;
  out.embedding = embedding_;
  out.logits = classifier_->forward(embedding_, mode, rng);
  return out;
}

Tensor ClassifierNet::backward(const Tensor& d_embedding, const Tensor& d_logits) {
  Tensor d_emb = classifier_->backward(d_logits);
  if (d_embedding.size() > 0) d_emb.add_scaled(d_embedding, 1.0f);
  Tensor d_feat = head_.backward(d_emb);
  return backbone_.backward(d_feat);
}

std::vector<nn::Param*> ClassifierNet::params() {
  std::vector<nn::Param*> out;
  backbone_.collect_params(out);
  head_.collect_params(out);
  classifier_->collect_params(out);
  return out;
}

std::vector<nn::Param*> ClassifierNet::buffers() {
  std::vector<nn::Param*> out;
  backbone_.collect_buffers(out);
  head_.collect_buffers(out);
  return out;
}

nn::Param& ClassifierNet::first_conv_weight() {
  auto* conv = dynamic_cast<nn::Conv2d*>(backbone_.at(0));
  if (!conv) throw std::logic_error("backbone does not start with a conv layer");
  return conv->weight();
}

// ------------------------------------------------------------ DenoiserNet

void DenoiserConfig::validate() const {
  if (in_channels < 1 || hidden_width < 1)
    throw std::invalid_argument("denoiser channel counts must be positive");
}

DenoiserNet::DenoiserNet(const DenoiserConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  cfg.validate();
  const int h = cfg.hidden_width;
  int in_ch = cfg.in_channels;
  for (int i = 1; i < DenoiserConfig::kLayers; ++i) {
    std::string nm = "denoise.conv" + std::to_string(i);
    net_.add(std::make_unique<nn::Conv2d>(nm, in_ch, h, 3, 1, 1, init_rng));
    net_.add(std::make_unique<nn::BatchNorm>(nm + "_bn", h, true));
    net_.add(std::make_unique<nn::LeakyReLU>());
    in_ch = h;
  }
  net_.add(std::make_unique<nn::Conv2d>("denoise.conv15", h, cfg.in_channels, 3, 1, 1,
                                        init_rng));
}

Tensor DenoiserNet::forward(const Tensor& x, nn::Mode mode, Rng* rng) {
  return net_.forward(x, mode, rng);
}

Tensor DenoiserNet::backward(const Tensor& dy) { return net_.backward(dy); }

std::vector<nn::Param*> DenoiserNet::params() {
  std::vector<nn::Param*> out;
  net_.collect_params(out);
  return out;
}

std::vector<nn::Param*> DenoiserNet::buffers() {
  std::vector<nn::Param*> out;
  net_.collect_buffers(out);
  return out;
}

// --------------------------------------------------------------- helpers

Tensor adapt_pretrained_input(const Tensor& source_weights, int target_channels) {
  if (source_weights.ndim() != 4 || source_weights.dim(1) != 3)
    throw std::invalid_argument("adapt_pretrained_input: expected (Cout, 3, k, k) weights");
  const int Co = source_weights.dim(0), k = source_weights.dim(2);
  Tensor out({Co, target_channels, k, source_weights.dim(3)});
  const float scale = 3.0f / static_cast<float>(target_channels);
  for (int co = 0; co < Co; ++co)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < source_weights.dim(3); ++kw) {
        float mean = (source_weights.at(co, 0, kh, kw) + source_weights.at(co, 1, kh, kw) +
                      source_weights.at(co, 2, kh, kw)) /
                     3.0f;
        for (int c = 0; c < target_channels; ++c) out.at(co, c, kh, kw) = mean * scale;
      }
  return out;
}

Tensor noise_for_sample(const std::string& sample_key, const std::vector<int>& shape,
                        float std, std::uint64_t eval_seed) {
  Rng rng(hash64(sample_key) ^ (eval_seed * 0x2545f4914f6cdd1dull + 0x1234567ull));
  Tensor n(shape);
  rng.fill_normal(n, 0.0f, std);
  return n;
}

std::vector<Tensor> snapshot(const std::vector<nn::Param*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const nn::Param* p : params) out.push_back(p->w);
  return out;
}

void restore(const std::vector<nn::Param*>& params, const std::vector<Tensor>& snap) {
  if (params.size() != snap.size())
    throw std::invalid_argument("restore: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->w.same_shape(snap[i]))
      throw std::invalid_argument("restore: shape mismatch for " + params[i]->name);
    params[i]->w = snap[i];
  }
}

}  // namespace anony::models
