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

#include <cmath>
#include <vector>

#include <doctest.h>

#include "anony/losses.hpp"

using namespace anony;

namespace {

double oracle_dist(const Tensor& e, int i, int j, losses::Distance d) {
  const int D = e.dim(1);
  if (d == losses::Distance::kEuclidean) {
    double s = 0;
    for (int k = 0; k < D; ++k) {
      double diff = e.at(i, k) - e.at(j, k);
      s += diff * diff;
    }
    return std::sqrt(s);
  }
  double dot = 0, na = 0, nb = 0;
  for (int k = 0; k < D; ++k) {
    dot += static_cast<double>(e.at(i, k)) * e.at(j, k);
    na += static_cast<double>(e.at(i, k)) * e.at(i, k);
    nb += static_cast<double>(e.at(j, k)) * e.at(j, k);
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

// Exhaustive triple enumeration, the BATCH_ALL reference.
double oracle_batch_all(const Tensor& e, const std::vector<int>& ids,
                        const losses::TripletConfig& cfg) {
  const int N = e.dim(0);
  double total = 0;
  std::int64_t count = 0;
  for (int a = 0; a < N; ++a)
    for (int p = 0; p < N; ++p) {
      if (p == a || ids[(size_t)p] != ids[(size_t)a]) continue;
      for (int n = 0; n < N; ++n) {
        if (ids[(size_t)n] == ids[(size_t)a]) continue;
        ++count;
        double term = oracle_dist(e, a, p, cfg.distance) -
                      oracle_dist(e, a, n, cfg.distance) + cfg.margin;
        if (term > 0) total += term;
      }
    }
  return total / static_cast<double>(count);
}

double oracle_softmax_ce(const Tensor& logits, const std::vector<int>& labels) {
  const int N = logits.dim(0), C = logits.dim(1);
  double total = 0;
  for (int n = 0; n < N; ++n) {
    double z = 0;
    for (int c = 0; c < C; ++c) z += std::exp(logits.at(n, c));
    total += -std::log(std::exp(logits.at(n, labels[(size_t)n])) / z);
  }
  return total / N;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("cross entropy: saturated, uniform, scalar oracle") {
  {
    Tensor logits({2, 3});
    logits.at(0, 1) = 20.0f;
    logits.at(1, 2) = 20.0f;
    CHECK(losses::cross_entropy(logits, {1, 2}, nullptr) < 1e-6);
  }
  {
    Tensor logits({4, 5});  // uniform -> ln(5)
    CHECK(losses::cross_entropy(logits, {0, 1, 2, 3}, nullptr) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-9));
  }
  {
    Rng rng(1);
    Tensor logits({3, 4});
    rng.fill_normal(logits, 0.0f, 2.0f);
    std::vector<int> labels = {2, 0, 3};
    CHECK(losses::cross_entropy(logits, labels, nullptr) ==
          doctest::Approx(oracle_softmax_ce(logits, labels)).epsilon(1e-6));
  }
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Tensor logits({2, 3});
  CHECK_THROWS(losses::cross_entropy(logits, {0, 3}, nullptr));
  CHECK_THROWS(losses::cross_entropy(logits, {-1, 0}, nullptr));
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(2);
  Tensor logits({4, 6});
  rng.fill_normal(logits, 0.0f, 1.5f);
  std::vector<int> labels = {0, 5, 2, 2};
  Tensor grad(logits.shape);
  losses::cross_entropy(logits, labels, &grad);
  const float eps = 1e-3f;
  for (size_t i = 0; i < logits.v.size(); ++i) {
    Tensor lp = logits, lm = logits;
    lp.v[i] += eps;
    lm.v[i] -= eps;
    double fd = (losses::cross_entropy(lp, labels, nullptr) -
                 losses::cross_entropy(lm, labels, nullptr)) /
                (2.0 * eps);
    CHECK(grad.v[i] == doctest::Approx(fd).epsilon(2e-3));
  }
}

TEST_CASE("triplet: coincident embeddings give exactly the margin") {
  for (auto mining : {losses::Mining::kBatchHard, losses::Mining::kBatchAll}) {
    losses::TripletConfig cfg;
    cfg.mining = mining;
    Tensor e = Tensor::full({6, 4}, 0.75f);
    std::vector<int> ids = {0, 0, 1, 1, 2, 2};
    CHECK(losses::triplet_loss(e, ids, cfg, nullptr) ==
          static_cast<double>(cfg.margin));
  }
}

TEST_CASE("triplet: satisfied margin gives zero") {
  losses::TripletConfig cfg;
  Tensor e({4, 2});
  // identity clusters far apart, zero intra-identity distance
  e.at(0, 0) = 0;
  e.at(1, 0) = 0;
  e.at(2, 0) = 10;
  e.at(3, 0) = 10;
  std::vector<int> ids = {0, 0, 1, 1};
  CHECK(losses::triplet_loss(e, ids, cfg, nullptr) == 0.0);
}

TEST_CASE("batch-all equals the brute-force oracle on 200 random batches") {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    const int n_ids = 2 + static_cast<int>(rng.uniform_int(3));
    const int per = 2 + static_cast<int>(rng.uniform_int(3));
    const int N = std::min(12, n_ids * per);
    Tensor e({N, 5});
    rng.fill_normal(e, 0.0f, 1.0f);
    std::vector<int> ids;
    for (int i = 0; i < N; ++i) ids.push_back(i % n_ids);
    losses::TripletConfig cfg;
    cfg.mining = losses::Mining::kBatchAll;
    cfg.distance =
        (trial % 2 == 0) ? losses::Distance::kEuclidean : losses::Distance::kCosine;
    CHECK(losses::triplet_loss(e, ids, cfg, nullptr) ==
          doctest::Approx(oracle_batch_all(e, ids, cfg)).epsilon(1e-6));
  }
}

TEST_CASE("triplet gradients match finite differences (both minings/distances)") {
  Rng rng(44);
  for (auto mining : {losses::Mining::kBatchHard, losses::Mining::kBatchAll})
    for (auto dist : {losses::Distance::kEuclidean, losses::Distance::kCosine}) {
      losses::TripletConfig cfg;
      cfg.mining = mining;
      cfg.distance = dist;
      Tensor e({8, 4});
      rng.fill_normal(e, 0.0f, 1.0f);
      std::vector<int> ids = {0, 0, 1, 1, 2, 2, 3, 3};
      Tensor grad(e.shape);
      losses::triplet_loss(e, ids, cfg, &grad);
      const float eps = 1e-3f;
      int checked = 0;
      for (size_t i = 0; i < e.v.size() && checked < 16; i += 3, ++checked) {
        Tensor ep = e, em = e;
        ep.v[i] += eps;
        em.v[i] -= eps;
        double fd = (losses::triplet_loss(ep, ids, cfg, nullptr) -
                     losses::triplet_loss(em, ids, cfg, nullptr)) /
                    (2.0 * eps);
        CHECK(grad.v[i] == doctest::Approx(fd).epsilon(1e-3).scale(1.0));
      }
    }
}

TEST_CASE("triplet rejects batches without valid anchors") {
  losses::TripletConfig cfg;
  Tensor e({3, 2});
  CHECK_THROWS(losses::triplet_loss(e, {0, 1, 2}, cfg, nullptr));  // no positives
  CHECK_THROWS(losses::triplet_loss(e, {0, 0, 0}, cfg, nullptr));  // no negatives
}

TEST_CASE("reid loss: components sum to total; matches independent calls") {
  Rng rng(5);
  Tensor logits({4, 3}), e({4, 6});
  rng.fill_normal(logits, 0.0f, 1.0f);
  rng.fill_normal(e, 0.0f, 1.0f);
  std::vector<int> ids = {0, 0, 1, 1};
  losses::TripletConfig cfg;
  losses::LossWeights w;
  auto rep = losses::reid_loss(logits, ids, e, ids, cfg, w);
  CHECK(rep.total == doctest::Approx(rep.components.at("ce_id") +
                                     rep.components.at("triplet"))
                         .epsilon(1e-6));
  CHECK(rep.components.at("ce_id") ==
        doctest::Approx(losses::cross_entropy(logits, ids, nullptr)));
  CHECK(rep.components.at("triplet") ==
        doctest::Approx(losses::triplet_loss(e, ids, cfg, nullptr)));
}

TEST_CASE("reid loss gradient w.r.t. embeddings matches finite differences") {
  Rng rng(6);
  Tensor logits({4, 2}), e({4, 3});
  rng.fill_normal(logits, 0.0f, 1.0f);
  rng.fill_normal(e, 0.0f, 1.0f);
  std::vector<int> ids = {0, 0, 1, 1};
  losses::TripletConfig cfg;
  losses::LossWeights w;
  Tensor dl(logits.shape), de(e.shape);
  losses::reid_loss(logits, ids, e, ids, cfg, w, &dl, &de);
  const float eps = 1e-3f;
  for (size_t i = 0; i < e.v.size(); ++i) {
    Tensor ep = e, em = e;
    ep.v[i] += eps;
    em.v[i] -= eps;
    double fd = (losses::reid_loss(logits, ids, ep, ids, cfg, w).total -
                 losses::reid_loss(logits, ids, em, ids, cfg, w).total) /
                (2.0 * eps);
    CHECK(de.v[i] == doctest::Approx(fd).epsilon(1e-3).scale(1.0));
  }
}

TEST_CASE("anon loss: negated triplet, sign behavior, shared triplet value") {
  Rng rng(7);
  Tensor logits({4, 3}), e({4, 4});
  rng.fill_normal(logits, 0.0f, 1.0f);
  rng.fill_normal(e, 0.0f, 1.0f);
  std::vector<int> t_labels = {0, 1, 2, 0};
  std::vector<int> ids = {0, 0, 1, 1};
  losses::TripletConfig cfg;
  losses::LossWeights w;

  auto anon = losses::anon_loss(logits, t_labels, e, ids, cfg, w);
  auto reid = losses::reid_loss(logits, ids, e, ids, cfg, w);
  // identical triplet value shared by both objectives on identical inputs
  CHECK(anon.components.at("triplet") == doctest::Approx(reid.components.at("triplet")));
  CHECK(anon.total == doctest::Approx(anon.components.at("ce_target") -
                                      anon.components.at("triplet"))
                          .epsilon(1e-6));

  // zero triplet term (satisfied margin) -> total equals target CE
  Tensor sep({4, 2});
  sep.at(2, 0) = 50;
  sep.at(3, 0) = 50;
  auto anon0 = losses::anon_loss(logits, t_labels, sep, ids, cfg, w);
  CHECK(anon0.total ==
        doctest::Approx(losses::cross_entropy(logits, t_labels, nullptr)).epsilon(1e-6));

  // spreading intra-identity embeddings decreases the anon total
  Tensor tight = Tensor::full({4, 2}, 0.0f);
  Tensor spread = tight;
  spread.at(0, 0) = 0;
  spread.at(1, 0) = 5;  // same id far apart
  spread.at(2, 1) = 0.1f;
  spread.at(3, 1) = 0.1f;
  double tight_total = losses::anon_loss(logits, t_labels, tight, ids, cfg, w).total;
  double spread_total = losses::anon_loss(logits, t_labels, spread, ids, cfg, w).total;
  CHECK(spread_total < tight_total);
}

TEST_CASE("anon loss clip zeroes the triplet gradient past the ceiling") {
  Tensor logits({4, 2});
  Tensor e({4, 2});
  e.at(0, 0) = 0;
  e.at(1, 0) = 100;  // enormous intra-id spread -> huge triplet
  e.at(2, 1) = 1;
  e.at(3, 1) = 1;
  std::vector<int> labels = {0, 1, 0, 1}, ids = {0, 0, 1, 1};
  losses::TripletConfig cfg;
  losses::LossWeights w;
  w.neg_triplet_clip = 1.0f;
  Tensor dl(logits.shape), de(e.shape);
  auto rep = losses::anon_loss(logits, labels, e, ids, cfg, w, &dl, &de);
  CHECK(rep.total == doctest::Approx(rep.components.at("ce_target") - 1.0).epsilon(1e-6));
  for (float g : de.v) CHECK(g == 0.0f);
}

TEST_CASE("mse and inversion loss: oracle, zero cases, lambda scaling") {
  Rng rng(8);
  Tensor a({2, 2}), b({2, 2});
  rng.fill_normal(a, 0.0f, 1.0f);
  rng.fill_normal(b, 0.0f, 1.0f);
  double expect = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    double d = a.v[i] - b.v[i];
    expect += d * d;
  }
  expect /= static_cast<double>(a.v.size());
  CHECK(losses::mse(a, b, nullptr) == doctest::Approx(expect).epsilon(1e-6));
  CHECK(losses::mse(a, a, nullptr) == 0.0);

  Tensor logits({2, 3});
  rng.fill_normal(logits, 0.0f, 1.0f);
  std::vector<int> labels = {1, 2};
  auto full = losses::inversion_loss(a, b, logits, labels, 2.0f, nullptr, nullptr);
  CHECK(full.total == doctest::Approx(losses::cross_entropy(logits, labels, nullptr) +
                                      2.0 * expect)
                          .epsilon(1e-6));
  auto zero = losses::inversion_loss(a, b, logits, labels, 0.0f, nullptr, nullptr);
  CHECK(zero.total ==
        doctest::Approx(losses::cross_entropy(logits, labels, nullptr)).epsilon(1e-6));
  // recon == original -> pure CE regardless of lambda
  auto same = losses::inversion_loss(a, a, logits, labels, 5.0f, nullptr, nullptr);
  CHECK(same.components.at("mse_recon") == 0.0);
}

}  // TEST_SUITE
