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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "anony/evaluation.hpp"
#include "anony/event_core.hpp"

using namespace anony;
namespace fs = std::filesystem;

namespace {

std::vector<event::LabeledSample> make_samples(int n, int subjects, int labels) {
  std::vector<event::LabeledSample> out;
  for (int i = 0; i < n; ++i) {
    event::LabeledSample s;
    s.histogram.T = 1;
    s.histogram.data = Tensor({2, 2, 2});
    s.subject_id = i % subjects;
    s.target_label = (i / subjects) % labels;
    char key[32];
    std::snprintf(key, sizeof(key), "k%03d", i);
    s.sample_key = key;
    out.push_back(std::move(s));
  }
  return out;
}

// Brute-force retrieval reference: L2-normalize, Euclidean distances,
// tie-break by sample_key, AP = (1/R) sum of precision at each hit rank.
struct BruteResult {
  std::vector<std::vector<int>> ranked;
  double top1 = 0, top5 = 0, top10 = 0, mAP = 0;
};

BruteResult brute_force(const event::ReIdSplit& split,
                        const std::vector<event::LabeledSample>& samples,
                        const Tensor& emb) {
  const int D = emb.dim(1);
  auto norm_row = [&](int i) {
    std::vector<double> r(static_cast<size_t>(D));
    double n = 0;
    for (int k = 0; k < D; ++k) n += static_cast<double>(emb.at(i, k)) * emb.at(i, k);
    n = std::sqrt(std::max(n, 1e-24));
    for (int k = 0; k < D; ++k) r[(size_t)k] = emb.at(i, k) / n;
    return r;
  };

  BruteResult res;
  double ap_sum = 0;
  int hits1 = 0, hits5 = 0, hits10 = 0;
  for (int q : split.query) {
    auto cands = event::valid_candidates(split, samples, q);
    auto qe = norm_row(q);
    std::vector<std::pair<double, int>> scored;
    for (int c : cands) {
      auto ce = norm_row(c);
      double d = 0;
      for (int k = 0; k < D; ++k) {
        double diff = qe[(size_t)k] - ce[(size_t)k];
        d += diff * diff;
      }
      scored.push_back({std::sqrt(d), c});
    }
    std::stable_sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return samples[(size_t)a.second].sample_key < samples[(size_t)b.second].sample_key;
    });
    std::vector<int> order;
    for (auto& [d, c] : scored) order.push_back(c);
    res.ranked.push_back(order);

    int R = 0;
    for (int c : order) R += samples[(size_t)c].subject_id == samples[(size_t)q].subject_id;
    int seen = 0;
    double ap = 0;
    bool in1 = false, in5 = false, in10 = false;
    for (size_t r = 0; r < order.size(); ++r) {
      if (samples[(size_t)order[r]].subject_id == samples[(size_t)q].subject_id) {
        ++seen;
        ap += static_cast<double>(seen) / static_cast<double>(r + 1);
        if (r < 1) in1 = true;
        if (r < 5) in5 = true;
        if (r < 10) in10 = true;
      }
    }
    ap_sum += R > 0 ? ap / R : 0.0;
    hits1 += in1;
    hits5 += in5;
    hits10 += in10;
  }
  const double nq = static_cast<double>(split.query.size());
  res.top1 = 100.0 * hits1 / nq;
  res.top5 = 100.0 * hits5 / nq;
  res.top10 = 100.0 * hits10 / nq;
  res.mAP = ap_sum / nq;
  return res;
}

event::ReIdSplit all_vs_all(int n, event::ExclusionRule rule) {
  event::ReIdSplit split;
  split.exclusion_rule = rule;
  for (int i = 0; i < n; ++i) {
    split.gallery.push_back(i);
    if (i < n / 2) split.query.push_back(i);
  }
  return split;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("perfect retrieval: correct item first") {
  auto samples = make_samples(4, 2, 1);  // q shares subject with sample 2
  event::ReIdSplit split;
  split.exclusion_rule = event::ExclusionRule::kNone;
  split.query = {0};
  split.gallery = {1, 2, 3};
  Tensor emb({4, 2});
  emb.at(0, 0) = 1.0f;               // query, subject 0
  emb.at(1, 0) = -1.0f;              // subject 1, far
  emb.at(2, 0) = 0.9f;               // subject 0, close -> rank 1
  emb.at(3, 1) = 1.0f;               // subject 1, middling
  auto r = eval::evaluate_retrieval(split, samples, emb);
  CHECK(r.topk_acc.at(1) == 100.0);
  CHECK(r.mAP == doctest::Approx(1.0));
}

TEST_CASE("correct item at rank 2 with R=1: AP = 0.5") {
  auto samples = make_samples(4, 4, 1);
  samples[2].subject_id = samples[0].subject_id;  // single relevant item
  event::ReIdSplit split;
  split.exclusion_rule = event::ExclusionRule::kNone;
  split.query = {0};
  split.gallery = {1, 2, 3};
  Tensor emb({4, 2});
  emb.at(0, 0) = 1.0f;
  emb.at(1, 0) = 0.95f;  // wrong subject, rank 1
  emb.at(2, 0) = 0.9f;   // right subject, rank 2
  emb.at(3, 0) = -1.0f;
  auto r = eval::evaluate_retrieval(split, samples, emb);
  CHECK(r.topk_acc.at(1) == 0.0);
  CHECK(r.topk_acc.at(5) == 100.0);
  CHECK(r.mAP == doctest::Approx(0.5));
}

TEST_CASE("matches the brute-force oracle on 200 random instances") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const int subjects = 2 + static_cast<int>(rng.uniform_int(4));
    const int n = subjects * (2 + static_cast<int>(rng.uniform_int(4)));
    auto samples = make_samples(std::min(n, 30), subjects, 3);
    auto rule = (trial % 2 == 0) ? event::ExclusionRule::kNone
                                 : event::ExclusionRule::kSameSubjectAndLabel;
    auto split = all_vs_all(static_cast<int>(samples.size()), rule);
    if (split.query.size() > 10) split.query.resize(10);

    Tensor emb({static_cast<int>(samples.size()), 6});
    rng.fill_normal(emb, 0.0f, 1.0f);

    // skip instances that violate the split precondition (query w/o relevant)
    bool valid = true;
    for (int q : split.query) {
      int R = 0;
      for (int c : event::valid_candidates(split, samples, q))
        R += samples[(size_t)c].subject_id == samples[(size_t)q].subject_id;
      if (R == 0) valid = false;
    }
    if (!valid) continue;

    auto got = eval::evaluate_retrieval(split, samples, emb);
    auto want = brute_force(split, samples, emb);
    CHECK(got.ranked == want.ranked);
    CHECK(got.topk_acc.at(1) == doctest::Approx(want.top1).epsilon(1e-9));
    CHECK(got.topk_acc.at(5) == doctest::Approx(want.top5).epsilon(1e-9));
    CHECK(got.topk_acc.at(10) == doctest::Approx(want.top10).epsilon(1e-9));
    CHECK(got.mAP == doctest::Approx(want.mAP).epsilon(1e-9));

    // top-k monotonicity
    CHECK(got.topk_acc.at(1) <= got.topk_acc.at(5));
    CHECK(got.topk_acc.at(5) <= got.topk_acc.at(10));

    // L2-normalization invariance: positive per-row rescaling changes nothing
    Tensor scaled = emb;
    for (int i = 0; i < scaled.dim(0); ++i) {
      float s = 0.5f + static_cast<float>(rng.uniform()) * 3.0f;
      for (int k = 0; k < scaled.dim(1); ++k) scaled.at(i, k) *= s;
    }
    auto got2 = eval::evaluate_retrieval(split, samples, scaled);
    CHECK(got2.ranked == got.ranked);
    CHECK(got2.mAP == doctest::Approx(got.mAP).epsilon(1e-9));

    // exclusion correctness
    if (rule == event::ExclusionRule::kSameSubjectAndLabel)
      for (size_t qi = 0; qi < split.query.size(); ++qi)
        for (int c : got.ranked[qi]) {
          int q = split.query[qi];
          bool same = samples[(size_t)c].subject_id == samples[(size_t)q].subject_id &&
                      samples[(size_t)c].target_label == samples[(size_t)q].target_label;
          CHECK_FALSE(same);
        }
  }
}

TEST_CASE("query with zero relevant candidates is rejected by name") {
  auto samples = make_samples(3, 3, 1);  // all distinct subjects
  event::ReIdSplit split;
  split.exclusion_rule = event::ExclusionRule::kNone;
  split.query = {0};
  split.gallery = {1, 2};
  Tensor emb({3, 2});
  emb.fill(1.0f);
  try {
    eval::evaluate_retrieval(split, samples, emb);
    FAIL("expected rejection");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("k000") != std::string::npos);
  }
}

TEST_CASE("report round-trip and plot emission") {
  std::vector<eval::MetricsRow> rows;
  for (int i = 0; i < 3; ++i) {
    eval::MetricsRow r;
    r.config_label = "cfg" + std::to_string(i);
    r.acc_t = 90.0 - i;
    r.acc_id_top1 = 50.0 + i;
    r.acc_id_top5 = 70.0;
    r.acc_id_top10 = 80.0;
    r.map_id = 40.0 + i;
    if (i == 2) r.recon_mse = 1.25;
    rows.push_back(r);
  }
  auto dir = (fs::temp_directory_path() / "anony_test_report").string();
  fs::remove_all(dir);
  eval::emit_report(rows, dir, "{\"seed\":1}");

  auto parsed = eval::parse_metrics_csv((fs::path(dir) / "metrics.csv").string());
  REQUIRE(parsed.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(parsed[i].config_label == rows[i].config_label);
    CHECK(parsed[i].acc_t == doctest::Approx(rows[i].acc_t));
    CHECK(parsed[i].map_id == doctest::Approx(rows[i].map_id));
  }
  CHECK(parsed[0].recon_mse.has_value() == false);
  CHECK(parsed[2].recon_mse.has_value());

  // three rows -> three plotted points
  std::ifstream svg(fs::path(dir) / "metrics_plot.svg");
  std::stringstream ss;
  ss << svg.rdbuf();
  std::string content = ss.str();
  size_t count = 0;
  for (size_t pos = 0; (pos = content.find("<circle", pos)) != std::string::npos; ++pos)
    ++count;
  CHECK(count == 3);

  CHECK_THROWS(eval::emit_report({}, dir, "{}"));
  fs::remove_all(dir);
}

}  // TEST_SUITE
