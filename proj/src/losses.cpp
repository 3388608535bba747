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

#include "anony/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace anony::losses {

namespace {

constexpr double kDistEps = 1e-12;

double pair_distance(const Tensor& e, int i, int j, Distance dist) {
  const int D = e.dim(1);
  const float* a = e.v.data() + static_cast<size_t>(i) * D;
  const float* b = e.v.data() + static_cast<size_t>(j) * D;
  if (dist == Distance::kEuclidean) {
    double acc = 0.0;
    for (int k = 0; k < D; ++k) {
      double d = static_cast<double>(a[k]) - b[k];
      acc += d * d;
    }
    return std::sqrt(acc);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int k = 0; k < D; ++k) {
    dot += static_cast<double>(a[k]) * b[k];
    na += static_cast<double>(a[k]) * a[k];
    nb += static_cast<double>(b[k]) * b[k];
  }
  na = std::sqrt(std::max(na, kDistEps));
  nb = std::sqrt(std::max(nb, kDistEps));
  return 1.0 - dot / (na * nb);
}

// Adds scale * d(dist(i,j))/d(e) into grad for both endpoints.
void pair_distance_grad(const Tensor& e, int i, int j, Distance dist, double scale,
                        Tensor& grad) {
  const int D = e.dim(1);
  const float* a = e.v.data() + static_cast<size_t>(i) * D;
  const float* b = e.v.data() + static_cast<size_t>(j) * D;
  float* ga = grad.v.data() + static_cast<size_t>(i) * D;
  float* gb = grad.v.data() + static_cast<size_t>(j) * D;
  if (dist == Distance::kEuclidean) {
    double d = pair_distance(e, i, j, dist);
    if (d < kDistEps) return;  // coincident points: zero subgradient
    double s = scale / d;
    for (int k = 0; k < D; ++k) {
      double diff = static_cast<double>(a[k]) - b[k];
      ga[k] += static_cast<float>(s * diff);
      gb[k] -= static_cast<float>(s * diff);
    }
    return;
  }
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (int k = 0; k < D; ++k) {
    dot += static_cast<double>(a[k]) * b[k];
    na2 += static_cast<double>(a[k]) * a[k];
    nb2 += static_cast<double>(b[k]) * b[k];
  }
  na2 = std::max(na2, kDistEps);
  nb2 = std::max(nb2, kDistEps);
  double na = std::sqrt(na2), nb = std::sqrt(nb2);
  // d = 1 - dot/(|a||b|)
  for (int k = 0; k < D; ++k) {
    double dcos_da = b[k] / (na * nb) - dot * a[k] / (na2 * na * nb);
    double dcos_db = a[k] / (na * nb) - dot * b[k] / (nb2 * nb * na);
    ga[k] += static_cast<float>(-scale * dcos_da);
    gb[k] += static_cast<float>(-scale * dcos_db);
  }
}

}  // namespace

void TripletConfig::validate() const {
  if (margin < 0) throw std::invalid_argument("triplet margin must be >= 0");
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     Tensor* d_logits) {
  const int N = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= C)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(C) + ")");
  if (d_logits && !d_logits->same_shape(logits)) *d_logits = Tensor(logits.shape);

  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const float* row = logits.v.data() + static_cast<size_t>(n) * C;
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    double logz = std::log(z) + mx;
    total += logz - row[labels[static_cast<size_t>(n)]];
    if (d_logits) {
      float* g = d_logits->v.data() + static_cast<size_t>(n) * C;
      for (int c = 0; c < C; ++c) {
        double p = std::exp(row[c] - logz);
        g[c] += static_cast<float>((p - (c == labels[static_cast<size_t>(n)] ? 1.0 : 0.0)) / N);
      }
    }
  }
  return total / N;
}

double triplet_loss(const Tensor& embeddings, const std::vector<int>& subject_ids,
                    const TripletConfig& cfg, Tensor* d_embeddings) {
  cfg.validate();
  const int N = embeddings.dim(0);
  if (static_cast<int>(subject_ids.size()) != N)
    throw std::invalid_argument("triplet_loss: id count mismatch");
  if (d_embeddings && !d_embeddings->same_shape(embeddings))
    *d_embeddings = Tensor(embeddings.shape);

  if (cfg.mining == Mining::kBatchHard) {
    struct AnchorPick {
      int anchor, pos, neg;
      double d_ap, d_an;
    };
    std::vector<AnchorPick> picks;
    for (int a = 0; a < N; ++a) {
      int hp = -1, hn = -1;
      double d_ap = -1.0, d_an = 0.0;
      for (int o = 0; o < N; ++o) {
        if (o == a) continue;
        double d = pair_distance(embeddings, a, o, cfg.distance);
        if (subject_ids[static_cast<size_t>(o)] == subject_ids[static_cast<size_t>(a)]) {
          if (d > d_ap) {
            d_ap = d;
            hp = o;
          }
        } else if (hn < 0 || d < d_an) {
          d_an = d;
          hn = o;
        }
      }
      if (hp >= 0 && hn >= 0) picks.push_back({a, hp, hn, d_ap, d_an});
    }
    if (picks.empty())
      throw std::invalid_argument(
          "triplet_loss: no anchor has both a positive and a negative; the batch "
          "sampler must draw >= 2 identities with >= 2 samples each");
    double total = 0.0;
    for (const auto& p : picks) {
      double term = p.d_ap - p.d_an + cfg.margin;
      if (term <= 0) continue;
      total += term;
      if (d_embeddings) {
        double scale = 1.0 / static_cast<double>(picks.size());
        pair_distance_grad(embeddings, p.anchor, p.pos, cfg.distance, scale, *d_embeddings);
        pair_distance_grad(embeddings, p.anchor, p.neg, cfg.distance, -scale, *d_embeddings);
      }
    }
    return total / static_cast<double>(picks.size());
  }

  // batch-all
  std::int64_t n_triplets = 0;
  double total = 0.0;
  std::vector<std::array<int, 3>> active;
  for (int a = 0; a < N; ++a)
    for (int p = 0; p < N; ++p) {
      if (p == a ||
          subject_ids[static_cast<size_t>(p)] != subject_ids[static_cast<size_t>(a)])
        continue;
      double d_ap = pair_distance(embeddings, a, p, cfg.distance);
      for (int n = 0; n < N; ++n) {
        if (subject_ids[static_cast<size_t>(n)] == subject_ids[static_cast<size_t>(a)])
          continue;
        ++n_triplets;
        double term = d_ap - pair_distance(embeddings, a, n, cfg.distance) + cfg.margin;
        if (term > 0) {
          total += term;
          active.push_back({a, p, n});
        }
      }
    }
  if (n_triplets == 0)
    throw std::invalid_argument(
        "triplet_loss: batch contains no valid (anchor, positive, negative) triplet; "
        "check the batch sampler");
  if (d_embeddings) {
    double scale = 1.0 / static_cast<double>(n_triplets);
    for (const auto& t : active) {
      pair_distance_grad(embeddings, t[0], t[1], cfg.distance, scale, *d_embeddings);
      pair_distance_grad(embeddings, t[0], t[2], cfg.distance, -scale, *d_embeddings);
    }
  }
  return total / static_cast<double>(n_triplets);
}

LossReport reid_loss(const Tensor& logits, const std::vector<int>& labels_id,
                     const Tensor& embeddings, const std::vector<int>& subject_ids,
                     const TripletConfig& cfg, const LossWeights& w, Tensor* d_logits,
                     Tensor* d_embeddings) {
  LossReport report;
  double ce = cross_entropy(logits, labels_id, d_logits);
  if (d_logits && w.ce != 1.0f)
    for (float& g : d_logits->v) g *= w.ce;
  Tensor d_emb_local;
  double tl = triplet_loss(embeddings, subject_ids, cfg,
                           d_embeddings ? &d_emb_local : nullptr);
  if (d_embeddings) d_embeddings->add_scaled(d_emb_local, w.triplet);
  report.components["ce_id"] = ce;
  report.components["triplet"] = tl;
  report.total = w.ce * ce + w.triplet * tl;
  return report;
}

LossReport anon_loss(const Tensor& target_logits, const std::vector<int>& labels_t,
                     const Tensor& embeddings, const std::vector<int>& subject_ids,
                     const TripletConfig& cfg, const LossWeights& w,
                     Tensor* d_target_logits, Tensor* d_embeddings) {
  LossReport report;
  double ce = cross_entropy(target_logits, labels_t, d_target_logits);
  if (d_target_logits && w.ce != 1.0f)
    for (float& g : d_target_logits->v) g *= w.ce;
  Tensor d_emb_local;
  double tl = triplet_loss(embeddings, subject_ids, cfg,
                           d_embeddings ? &d_emb_local : nullptr);
  double neg_term = w.triplet * tl;
  double grad_scale = -static_cast<double>(w.triplet);
  if (w.neg_triplet_clip > 0 && neg_term > w.neg_triplet_clip) {
    neg_term = w.neg_triplet_clip;
    grad_scale = 0.0;
  }
  if (tl > 10.0 * cfg.margin)
    std::fprintf(stderr, "anon_loss: negated triplet term %.4f exceeds 10x margin\n", tl);
  if (d_embeddings) d_embeddings->add_scaled(d_emb_local, static_cast<float>(grad_scale));
  report.components["ce_target"] = ce;
  report.components["triplet"] = tl;
  report.total = w.ce * ce - neg_term;
  return report;
}

double mse(const Tensor& a, const Tensor& b, Tensor* d_a) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
  if (d_a && !d_a->same_shape(a)) *d_a = Tensor(a.shape);
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(a.v.size());
  for (size_t i = 0; i < a.v.size(); ++i) {
    double d = static_cast<double>(a.v[i]) - b.v[i];
    total += d * d;
    if (d_a) d_a->v[i] += static_cast<float>(2.0 * d * inv);
  }
  return total * inv;
}

LossReport inversion_loss(const Tensor& recon, const Tensor& original,
                          const Tensor& logits, const std::vector<int>& labels,
                          float lambda_recon, Tensor* d_recon, Tensor* d_logits) {
  LossReport report;
  double ce = cross_entropy(logits, labels, d_logits);
  Tensor d_recon_local;
  double m = mse(recon, original, d_recon ? &d_recon_local : nullptr);
  if (d_recon) {
    if (d_recon->size() == 0) *d_recon = Tensor(recon.shape);
    d_recon->add_scaled(d_recon_local, lambda_recon);
  }
  report.components["ce_target"] = ce;
  report.components["mse_recon"] = m;
  report.total = ce + static_cast<double>(lambda_recon) * m;
  return report;
}

}  // namespace anony::losses
