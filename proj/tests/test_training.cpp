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

#include <filesystem>

#include <doctest.h>

#include "anony/training.hpp"

using namespace anony;
namespace fs = std::filesystem;

namespace {

train::Dataset tiny_dataset(int subjects = 4, int classes = 2, int per_pair = 6,
                            int hw = 8) {
  event::SyntheticDatasetSpec spec;
  spec.n_subjects = subjects;
  spec.n_target_classes = classes;
  spec.samples_per_pair = per_pair;
  spec.height = hw;
  spec.width = hw;
  spec.T = 2;
  spec.events_per_sample = 400;
  auto samples = event::generate_synthetic_dataset(spec);
  event::AugmentationConfig aug;
  aug.rotation_max_deg = 0;  // keep the tiny tests fast and exact
  return train::make_dataset(std::move(samples), 0.5,
                             event::SplitProtocol::kDvsGesture, 1, aug);
}

train::TrainState tiny_state(const train::Dataset& ds, std::uint64_t seed = 1) {
  models::AnonymizerConfig ac;
  ac.in_channels = ds.channels();
  ac.hidden_width = 4;
  models::ClassifierConfig rc;
  rc.in_channels = ds.channels();
  rc.n_classes = ds.n_subjects;
  models::ClassifierConfig tc = rc;
  tc.n_classes = ds.n_classes;
  models::DenoiserConfig dc;
  dc.in_channels = ds.channels();
  dc.hidden_width = 4;
  return train::TrainState(ac, rc, tc, dc, losses::TripletConfig{},
                           losses::LossWeights{}, seed);
}

train::StageConfig tiny_stage(train::Stage stage, int epochs) {
  train::StageConfig sc;
  sc.stage = stage;
  sc.epochs = epochs;
  sc.batch_size = 8;
  sc.p_identities = 4;
  sc.k_samples = 2;
  return sc;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("make_dataset: counts, splits, label density check") {
  auto ds = tiny_dataset();
  CHECK(ds.n_subjects == 4);
  CHECK(ds.n_classes == 2);
  CHECK(ds.samples.size() == 48);
  CHECK(ds.train_idx.size() + ds.val_samples.size() == 48);
  CHECK(ds.channels() == 4);

  // non-dense labels are rejected
  auto samples = ds.samples;
  samples[0].subject_id = 100;
  CHECK_THROWS(train::make_dataset(samples, 0.5, event::SplitProtocol::kDvsGesture, 1,
                                   ds.augmentation));
}

TEST_CASE("gaussian anonymizer: eval is per-key deterministic, train is fresh") {
  train::GaussianAnonymizer g(2.0f, 42);
  Tensor h({4, 8, 8});
  h.fill(1.0f);
  Tensor a = g.apply_eval(h, "key-1");
  Tensor b = g.apply_eval(h, "key-1");
  CHECK(a.v == b.v);
  Tensor c = g.apply_eval(h, "key-2");
  CHECK(a.v != c.v);

  Rng rng(3);
  Tensor batch({2, 4, 8, 8});
  Tensor t1 = g.apply_train(batch, rng);
  Tensor t2 = g.apply_train(batch, rng);
  CHECK(t1.v != t2.v);
}

TEST_CASE("pretrain runs, returns a sane metric, and is deterministic") {
  auto ds = tiny_dataset();
  auto cfg = tiny_stage(train::Stage::kPretrain, 2);

  auto s1 = tiny_state(ds, 5);
  auto s2 = tiny_state(ds, 5);
  double m1 = train::pretrain(*s1.target, false, ds, cfg, s1.triplet, s1.weights, s1.rng,
                              train::EpochLogger{});
  double m2 = train::pretrain(*s2.target, false, ds, cfg, s2.triplet, s2.weights, s2.rng,
                              train::EpochLogger{});
  CHECK(m1 == m2);
  CHECK(nn::params_hash(s1.target->params()) == nn::params_hash(s2.target->params()));
  CHECK(m1 >= 0.0);
  CHECK(m1 <= 100.0);
}

TEST_CASE("pipeline freeze contracts: aux step leaves anon, anon step leaves aux") {
  // instrumented replication of one pipeline batch using the public pieces
  auto ds = tiny_dataset();
  auto state = tiny_state(ds);
  const auto mode = models::composition_mode(state.anon_cfg);

  std::vector<int> idx(ds.train_idx.begin(), ds.train_idx.begin() + 8);
  Tensor x({8, ds.channels(), ds.height(), ds.width()});
  std::vector<int> subjects, targets;
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& s = ds.samples[(size_t)idx[i]];
    std::copy(s.histogram.data.v.begin(), s.histogram.data.v.end(),
              x.v.begin() + static_cast<std::ptrdiff_t>(i * s.histogram.data.v.size()));
    subjects.push_back(s.subject_id);
    targets.push_back(s.target_label);
  }

  optim::AdamWConfig oc;
  optim::AdamW opt_reid(state.reid->params(), oc);
  optim::AdamW opt_target(state.target->params(), oc);
  optim::AdamW opt_anon(state.anon->params(), oc);

  const auto anon_hash0 = nn::params_hash(state.anon->params());

  // sub-step 1: aux updates with the anonymizer fixed
  Tensor n1(x.shape);
  state.rng.fill_normal(n1, 0.0f, 1.0f);
  auto a1 = state.anon->forward(x, n1);
  Tensor xp1 = models::compose_anonymized(x, a1, n1, mode);
  auto ro = state.reid->forward(xp1, nn::Mode::kTrain, &state.rng);
  Tensor drl(ro.logits.shape), dre(ro.embedding.shape);
  losses::reid_loss(ro.logits, subjects, ro.embedding, subjects, state.triplet,
                    state.weights, &drl, &dre);
  state.reid->backward(dre, drl);
  opt_reid.step();
  auto to = state.target->forward(xp1, nn::Mode::kTrain, &state.rng);
  Tensor dtl(to.logits.shape);
  losses::cross_entropy(to.logits, targets, &dtl);
  state.target->backward(Tensor(), dtl);
  opt_target.step();

  CHECK(nn::params_hash(state.anon->params()) == anon_hash0);  // bitwise frozen

  // sub-step 2: anonymizer update with aux frozen (params AND buffers)
  const auto reid_p = nn::params_hash(state.reid->params());
  const auto reid_b = nn::params_hash(state.reid->buffers());
  const auto target_p = nn::params_hash(state.target->params());
  const auto target_b = nn::params_hash(state.target->buffers());

  Tensor n2(x.shape);
  state.rng.fill_normal(n2, 0.0f, 1.0f);
  auto a2 = state.anon->forward(x, n2);
  Tensor xp2 = models::compose_anonymized(x, a2, n2, mode);
  auto ro2 = state.reid->forward(xp2, nn::Mode::kTrainFrozenStats, &state.rng);
  auto to2 = state.target->forward(xp2, nn::Mode::kTrainFrozenStats, &state.rng);
  Tensor dtl2(to2.logits.shape), de2(ro2.embedding.shape);
  losses::anon_loss(to2.logits, targets, ro2.embedding, subjects, state.triplet,
                    state.weights, &dtl2, &de2);
  Tensor zero_logits(ro2.logits.shape);
  Tensor dx = state.reid->backward(de2, zero_logits);
  dx.add_scaled(state.target->backward(Tensor(), dtl2), 1.0f);
  nn::zero_grads(state.reid->params());
  nn::zero_grads(state.target->params());
  Tensor d_mu, d_sigma;
  models::compose_backward(dx, a2, n2, mode, d_mu, d_sigma);
  state.anon->backward(d_mu, d_sigma);
  opt_anon.step();

  CHECK(nn::params_hash(state.reid->params()) == reid_p);
  CHECK(nn::params_hash(state.reid->buffers()) == reid_b);
  CHECK(nn::params_hash(state.target->params()) == target_p);
  CHECK(nn::params_hash(state.target->buffers()) == target_b);
  CHECK(nn::params_hash(state.anon->params()) != anon_hash0);  // anon did move
}

TEST_CASE("posttrain attack freezes the anonymizer and needs pretrained weights") {
  auto ds = tiny_dataset();
  auto state = tiny_state(ds);
  auto cfg = tiny_stage(train::Stage::kPosttrain, 1);

  // without captured pretrained weights the attack is rejected
  train::IdentityAnonymizer identity;
  CHECK_THROWS(train::posttrain_attack(state, ds, cfg, identity, train::EpochLogger{}));

  train::pretrain_all(state, ds, tiny_stage(train::Stage::kPretrain, 1),
                      train::EpochLogger{});
  const auto anon_hash = nn::params_hash(state.anon->params());
  auto row = train::posttrain_attack(state, ds, cfg, identity, train::EpochLogger{});
  CHECK(nn::params_hash(state.anon->params()) == anon_hash);
  CHECK(row.config_label == "raw");
  CHECK(row.acc_t >= 0.0);
  CHECK(row.map_id >= 0.0);
}

TEST_CASE("inversion attack reports reconstruction error") {
  auto ds = tiny_dataset();
  auto state = tiny_state(ds);
  train::pretrain_all(state, ds, tiny_stage(train::Stage::kPretrain, 1),
                      train::EpochLogger{});
  train::GaussianAnonymizer g(1.0f, state.eval_seed);
  auto row = train::posttrain_inversion_attack(state, ds,
                                               tiny_stage(train::Stage::kPosttrain, 1), g,
                                               train::EpochLogger{});
  CHECK(row.config_label == "gaussian_std1+inversion");
  REQUIRE(row.recon_mse.has_value());
  CHECK(*row.recon_mse >= 0.0);
  CHECK(state.denoiser != nullptr);
}

TEST_CASE("noise baseline: one row per std, positive stds enforced") {
  auto ds = tiny_dataset();
  auto state = tiny_state(ds);
  train::pretrain_all(state, ds, tiny_stage(train::Stage::kPretrain, 1),
                      train::EpochLogger{});
  auto rows = train::run_noise_baseline(state, ds, tiny_stage(train::Stage::kPosttrain, 1),
                                        {0.5f, 2.0f}, train::EpochLogger{});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].config_label == "gaussian_std0.5");
  CHECK(rows[1].config_label == "gaussian_std2");
  CHECK_THROWS(train::run_noise_baseline(state, ds,
                                         tiny_stage(train::Stage::kPosttrain, 1), {},
                                         train::EpochLogger{}));
  CHECK_THROWS(train::run_noise_baseline(state, ds,
                                         tiny_stage(train::Stage::kPosttrain, 1), {-1.0f},
                                         train::EpochLogger{}));
}

TEST_CASE("checkpoint resume reproduces the uninterrupted trajectory bitwise") {
  auto ds = tiny_dataset();
  auto dir = fs::temp_directory_path() / "anony_test_resume";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // uninterrupted: pretrain + 4 pipeline epochs, checkpointing at epoch 2
  auto cfg = tiny_stage(train::Stage::kPipeline, 4);
  cfg.checkpoint_every = 2;
  auto full = tiny_state(ds, 3);
  train::pretrain_all(full, ds, tiny_stage(train::Stage::kPretrain, 1),
                      train::EpochLogger{});
  train::train_pipeline(full, ds, cfg, train::EpochLogger{}, dir.string());
  auto ckpt_path = (dir / "pipeline_epoch2.ckpt").string();
  REQUIRE(fs::exists(ckpt_path));

  // resume the mid-stage checkpoint in a fresh state with an unrelated seed
  auto resumed = tiny_state(ds, 999);  // seed irrelevant, state comes from disk
  train::load_state(resumed, ckpt_path);
  CHECK(resumed.epoch == 2);
  train::train_pipeline(resumed, ds, tiny_stage(train::Stage::kPipeline, 4),
                        train::EpochLogger{});

  CHECK(nn::params_hash(resumed.anon->params()) == nn::params_hash(full.anon->params()));
  CHECK(nn::params_hash(resumed.reid->params()) == nn::params_hash(full.reid->params()));
  CHECK(nn::params_hash(resumed.target->params()) ==
        nn::params_hash(full.target->params()));
  CHECK(nn::params_hash(resumed.reid->buffers()) == nn::params_hash(full.reid->buffers()));
  fs::remove_all(dir);
}

TEST_CASE("save/load state round-trips metrics and rng position") {
  auto ds = tiny_dataset();
  auto state = tiny_state(ds, 7);
  train::pretrain_all(state, ds, tiny_stage(train::Stage::kPretrain, 1),
                      train::EpochLogger{});
  auto path = (fs::temp_directory_path() / "anony_test_state.ckpt").string();
  train::save_state(state, path);

  auto loaded = tiny_state(ds, 1);
  train::load_state(loaded, path);
  CHECK(loaded.has_pretrained);
  REQUIRE(loaded.raw_metrics.has_value());
  CHECK(loaded.raw_metrics->acc_t == state.raw_metrics->acc_t);
  CHECK(loaded.raw_metrics->map_id == state.raw_metrics->map_id);
  CHECK(loaded.rng.state() == state.rng.state());
  CHECK(loaded.eval_seed == state.eval_seed);
  CHECK(nn::params_hash(loaded.reid->params()) == nn::params_hash(state.reid->params()));
  fs::remove(path);
}

TEST_CASE("transfer runs cross-resolution with the frozen anonymizer") {
  auto ds16 = tiny_dataset(3, 2, 4, 8);
  auto state = tiny_state(ds16);
  train::pretrain_all(state, ds16, tiny_stage(train::Stage::kPretrain, 1),
                      train::EpochLogger{});
  const auto anon_hash = nn::params_hash(state.anon->params());

  auto ds32 = tiny_dataset(3, 2, 4, 16);  // double resolution
  auto [raw, attacked] = train::transfer_frozen_anonymizer(
      state, ds32, tiny_stage(train::Stage::kPretrain, 1),
      tiny_stage(train::Stage::kPosttrain, 1), train::EpochLogger{});
  CHECK(raw.config_label == "raw");
  CHECK(attacked.config_label == "transfer_anonynoise");
  CHECK(nn::params_hash(state.anon->params()) == anon_hash);  // returned intact
}

TEST_CASE("export writes a loadable anonymized archive") {
  auto ds = tiny_dataset(2, 2, 3, 8);
  auto state = tiny_state(ds);
  auto dir = (fs::temp_directory_path() / "anony_test_export").string();
  fs::remove_all(dir);
  train::export_anonymized(state, ds, dir);
  auto loaded = event::load_samples(dir);
  REQUIRE(loaded.size() == ds.samples.size());
  CHECK(loaded[0].histogram.data.shape == ds.samples[0].histogram.data.shape);
  // anonymized tensors differ from the originals
  CHECK(loaded[0].histogram.data.v != ds.samples[0].histogram.data.v);
  fs::remove_all(dir);
}

TEST_CASE("stage config validation") {
  auto cfg = tiny_stage(train::Stage::kPretrain, 1);
  cfg.epochs = 0;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_stage(train::Stage::kPretrain, 1);
  cfg.lr_aux = 0;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_stage(train::Stage::kPretrain, 1);
  cfg.p_identities = 1;
  CHECK_THROWS(cfg.validate());
}

}  // TEST_SUITE
