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

#include "anony/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace anony::train {

namespace fs = std::filesystem;
using nlohmann::json;

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kPipeline: return "pipeline";
    case Stage::kPosttrain: return "posttrain";
    case Stage::kPosttrainInversion: return "posttrain_inversion";
  }
  return "?";
}

void StageConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("stage epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (lr_aux <= 0 || lr_anon <= 0) throw std::invalid_argument("learning rates must be > 0");
  if (p_identities < 2 || k_samples < 2)
    throw std::invalid_argument("P x K sampling needs P >= 2 and K >= 2");
}

std::vector<int> Dataset::val_all() const {
  std::vector<int> idx(val_samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return idx;
}

Dataset make_dataset(std::vector<event::LabeledSample> samples, double val_fraction,
                     event::SplitProtocol protocol, std::uint64_t seed,
                     const event::AugmentationConfig& augmentation) {
  if (samples.empty()) throw std::invalid_argument("make_dataset: no samples");
  Dataset ds;
  ds.augmentation = augmentation;
  ds.protocol = protocol;

  std::vector<int> val_idx;
  event::split_train_val(samples, val_fraction, seed, ds.train_idx, val_idx);
  for (int i : val_idx) ds.val_samples.push_back(samples[static_cast<size_t>(i)]);
  ds.samples = std::move(samples);
  ds.val_split = event::build_reid_split(ds.val_samples, protocol, seed);

  std::set<int> subjects, classes;
  for (const auto& s : ds.samples) {
    subjects.insert(s.subject_id);
    classes.insert(s.target_label);
  }
  ds.n_subjects = static_cast<int>(subjects.size());
  ds.n_classes = static_cast<int>(classes.size());
  for (const auto& s : ds.samples)
    if (s.subject_id < 0 || s.subject_id >= ds.n_subjects || s.target_label < 0 ||
        s.target_label >= ds.n_classes)
      throw std::invalid_argument("labels must be dense in [0, n); offending sample: " +
                                  s.sample_key);
  return ds;
}

// ------------------------------------------------------------ anonymizers

Tensor GaussianAnonymizer::apply_train(const Tensor& batch, Rng& rng) {
  Tensor out = batch;
  for (float& x : out.v) x += static_cast<float>(rng.normal(0.0, std_));
  return out;
}

Tensor GaussianAnonymizer::apply_eval(const Tensor& hist, const std::string& key) {
  Tensor noise = models::noise_for_sample(key, hist.shape, std_, eval_seed_);
  Tensor out = hist;
  out.add_scaled(noise, 1.0f);
  return out;
}

std::string GaussianAnonymizer::label() const {
  std::ostringstream os;
  os << "gaussian_std" << std_;
  return os.str();
}

Tensor LearnedAnonymizer::apply_train(const Tensor& batch, Rng& rng) {
  Tensor n(batch.shape);
  rng.fill_normal(n, 0.0f, net_.config().noise_input_std);
  models::AnonymizerOutput out = net_.forward(batch, n);
  return models::compose_anonymized(batch, out, n, models::composition_mode(net_.config()));
}

Tensor LearnedAnonymizer::apply_eval(const Tensor& hist, const std::string& key) {
  // single-sample batch
  Tensor x({1, hist.dim(0), hist.dim(1), hist.dim(2)});
  std::copy(hist.v.begin(), hist.v.end(), x.v.begin());
  Tensor n = models::noise_for_sample(key, x.shape, net_.config().noise_input_std,
                                      eval_seed_);
  models::AnonymizerOutput out = net_.forward(x, n);
  Tensor y = models::compose_anonymized(x, out, n, models::composition_mode(net_.config()));
  Tensor res({hist.dim(0), hist.dim(1), hist.dim(2)});
  std::copy(y.v.begin(), y.v.end(), res.v.begin());
  return res;
}

// -------------------------------------------------------------- TrainState

TrainState::TrainState(const models::AnonymizerConfig& ac,
                       const models::ClassifierConfig& rc,
                       const models::ClassifierConfig& tc,
                       const models::DenoiserConfig& dc, const losses::TripletConfig& tl,
                       const losses::LossWeights& w, std::uint64_t seed)
    : anon_cfg(ac),
      reid_cfg(rc),
      target_cfg(tc),
      denoiser_cfg(dc),
      triplet(tl),
      weights(w),
      rng(seed),
      eval_seed(seed ^ 0xeba1ull) {
  Rng init_rng(seed ^ 0x1217ull);
  anon = std::make_unique<models::AnonymizerNet>(ac, init_rng);
  reid = std::make_unique<models::ClassifierNet>(rc, init_rng);
  target = std::make_unique<models::ClassifierNet>(tc, init_rng);
}

void TrainState::capture_pretrained() {
  pretrained_reid_params = models::snapshot(reid->params());
  pretrained_reid_buffers = models::snapshot(reid->buffers());
  pretrained_target_params = models::snapshot(target->params());
  pretrained_target_buffers = models::snapshot(target->buffers());
  has_pretrained = true;
}

void TrainState::restore_pretrained_attackers() {
  if (!has_pretrained)
    throw std::logic_error("no pre-trained attacker weights captured; run pretrain first");
  models::restore(reid->params(), pretrained_reid_params);
  models::restore(reid->buffers(), pretrained_reid_buffers);
  models::restore(target->params(), pretrained_target_params);
  models::restore(target->buffers(), pretrained_target_buffers);
}

void EpochLogger::write(const std::string& json_line) {
  if (out) {
    (*out) << json_line << "\n";
    out->flush();
  }
}

// ----------------------------------------------------------- batch helpers

namespace {

struct Batch {
  Tensor x;
  std::vector<int> subjects;
  std::vector<int> targets;
  std::vector<std::string> keys;
};

Batch make_batch(const Dataset& ds, const std::vector<int>& indices, bool augmented,
                 Rng& rng) {
  const auto& first = ds.samples[static_cast<size_t>(indices[0])].histogram;
  Batch b;
  b.x = Tensor({static_cast<int>(indices.size()), first.channels(), first.height(),
                first.width()});
  for (size_t i = 0; i < indices.size(); ++i) {
    const auto& s = ds.samples[static_cast<size_t>(indices[i])];
    event::EventHistogram h =
        augmented ? event::augment(s.histogram, ds.augmentation, rng) : s.histogram;
    std::copy(h.data.v.begin(), h.data.v.end(),
              b.x.v.begin() + static_cast<std::ptrdiff_t>(i * h.data.v.size()));
    b.subjects.push_back(s.subject_id);
    b.targets.push_back(s.target_label);
    b.keys.push_back(s.sample_key);
  }
  return b;
}

// P identities x K samples per batch; covers roughly the training set once
// per epoch.
std::vector<std::vector<int>> pk_batches(const Dataset& ds, const StageConfig& cfg,
                                         Rng& rng) {
  std::map<int, std::vector<int>> by_subject;
  for (int i : ds.train_idx)
    by_subject[ds.samples[static_cast<size_t>(i)].subject_id].push_back(i);
  std::vector<int> subject_list;
  for (auto& [sid, v] : by_subject) subject_list.push_back(sid);
  const int P = std::min<int>(cfg.p_identities, static_cast<int>(subject_list.size()));
  if (P < 2) throw std::invalid_argument("P x K sampling needs >= 2 subjects");
  const int K = cfg.k_samples;

  const int n_batches = std::max<int>(
      1, static_cast<int>(ds.train_idx.size()) / (P * K));
  std::vector<std::vector<int>> batches;
  std::vector<int> pool = subject_list;
  rng.shuffle(pool);
  size_t pool_pos = 0;
  for (int bi = 0; bi < n_batches; ++bi) {
    std::vector<int> batch;
    for (int p = 0; p < P; ++p) {
      if (pool_pos >= pool.size()) {
        rng.shuffle(pool);
        pool_pos = 0;
      }
      const auto& candidates = by_subject[pool[pool_pos++]];
      for (int k = 0; k < K; ++k)
        batch.push_back(candidates[static_cast<size_t>(
            rng.uniform_int(static_cast<std::int64_t>(candidates.size())))]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<std::vector<int>> plain_batches(const std::vector<int>& idx, int batch_size,
                                            Rng& rng) {
  std::vector<int> order = idx;
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    if (end - start < 2) break;  // batch norm needs >= 2 samples
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::string report_json(const losses::LossReport& r) {
  json j;
  j["total"] = r.total;
  for (const auto& [k, v] : r.components) j[k] = v;
  return j.dump();
}

void check_finite(double loss, const char* where, std::deque<std::string>& history) {
  if (!std::isfinite(loss)) {
    std::vector<std::string> reports(history.begin(), history.end());
    throw TrainingAbort(std::string("non-finite loss in ") + where, reports);
  }
}

void push_report(std::deque<std::string>& history, const std::string& r) {
  history.push_back(r);
  while (history.size() > 3) history.pop_front();
}

optim::AdamWConfig aux_opt_cfg(const StageConfig& cfg) {
  optim::AdamWConfig oc;
  oc.lr = cfg.lr_aux;
  oc.weight_decay = cfg.weight_decay;
  oc.scheduler = cfg.scheduler_aux;
  oc.total_epochs = cfg.epochs;
  return oc;
}

optim::AdamWConfig anon_opt_cfg(const StageConfig& cfg) {
  optim::AdamWConfig oc;
  oc.lr = cfg.lr_anon;
  oc.weight_decay = cfg.weight_decay;
  oc.scheduler = cfg.scheduler_anon;
  oc.total_epochs = cfg.epochs;
  return oc;
}

}  // namespace

// -------------------------------------------------------------- evaluation

eval::MetricsRow evaluate_state(TrainState& state, const Dataset& ds,
                                Anonymizer& anonymizer, const std::string& label) {
  eval::SampleTransform transform = [&](const Tensor& h, const std::string& key) {
    return anonymizer.apply_eval(h, key);
  };
  eval::MetricsRow row;
  row.config_label = label;
  row.acc_t = eval::evaluate_accuracy(*state.target, ds.val_samples, ds.val_all(), false,
                                      transform);
  Tensor emb = eval::extract_embeddings(*state.reid, ds.val_samples, ds.val_all(), transform);
  eval::RetrievalResult rr = eval::evaluate_retrieval(ds.val_split, ds.val_samples, emb);
  row.acc_id_top1 = rr.topk_acc.at(1);
  row.acc_id_top5 = rr.topk_acc.at(5);
  row.acc_id_top10 = rr.topk_acc.at(10);
  row.map_id = 100.0 * rr.mAP;
  return row;
}

// ---------------------------------------------------------------- pretrain

double pretrain(models::ClassifierNet& net, bool is_reid, const Dataset& ds,
                const StageConfig& cfg, const losses::TripletConfig& triplet,
                const losses::LossWeights& weights, Rng& rng, EpochLogger log) {
  cfg.validate();
  optim::AdamW opt(net.params(), aux_opt_cfg(cfg));
  double best_metric = -1.0;
  std::vector<Tensor> best_params, best_buffers;
  std::deque<std::string> history;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_epoch(epoch);
    auto batches =
        is_reid ? pk_batches(ds, cfg, rng) : plain_batches(ds.train_idx, cfg.batch_size, rng);
    double epoch_loss = 0.0;
    for (const auto& idx : batches) {
      Batch b = make_batch(ds, idx, true, rng);
      models::ClassifierOut out = net.forward(b.x, nn::Mode::kTrain, &rng);
      losses::LossReport report;
      Tensor d_logits(out.logits.shape);
      if (is_reid) {
        Tensor d_emb(out.embedding.shape);
        report = losses::reid_loss(out.logits, b.subjects, out.embedding, b.subjects,
                                   triplet, weights, &d_logits, &d_emb);
        net.backward(d_emb, d_logits);
      } else {
        report.total = losses::cross_entropy(out.logits, b.targets, &d_logits);
        report.components["ce_target"] = report.total;
        net.backward(Tensor(), d_logits);
      }
      push_report(history, report_json(report));
      check_finite(report.total, is_reid ? "pretrain(reid)" : "pretrain(target)", history);
      opt.step();
      epoch_loss += report.total;
    }

    double metric;
    if (is_reid) {
      Tensor emb = eval::extract_embeddings(net, ds.val_samples, ds.val_all());
      metric = 100.0 * eval::evaluate_retrieval(ds.val_split, ds.val_samples, emb).mAP;
    } else {
      metric = eval::evaluate_accuracy(net, ds.val_samples, ds.val_all(), false);
    }
    if (metric > best_metric) {
      best_metric = metric;
      best_params = models::snapshot(net.params());
      best_buffers = models::snapshot(net.buffers());
    }

    json j;
    j["stage"] = "pretrain";
    j["net"] = is_reid ? "reid" : "target";
    j["epoch"] = epoch;
    j["lr_aux"] = opt.current_lr();
    j["train_loss"] = batches.empty() ? 0.0 : epoch_loss / static_cast<double>(batches.size());
    j["val_metric"] = metric;
    log.write(j.dump());
  }
  models::restore(net.params(), best_params);
  models::restore(net.buffers(), best_buffers);
  return best_metric;
}

void pretrain_all(TrainState& state, const Dataset& ds, const StageConfig& cfg,
                  EpochLogger log) {
  state.stage = Stage::kPretrain;
  pretrain(*state.reid, true, ds, cfg, state.triplet, state.weights, state.rng, log);
  pretrain(*state.target, false, ds, cfg, state.triplet, state.weights, state.rng, log);
  state.capture_pretrained();
  IdentityAnonymizer identity;
  state.raw_metrics = evaluate_state(state, ds, identity, "raw");
}

// ---------------------------------------------------------------- pipeline

void train_pipeline(TrainState& state, const Dataset& ds, const StageConfig& cfg,
                    EpochLogger log, const std::string& checkpoint_dir) {
  cfg.validate();
  state.stage = Stage::kPipeline;
  const auto mode = models::composition_mode(state.anon_cfg);
  const float noise_std = state.anon_cfg.noise_input_std;

  if (!state.opt_reid) {
    state.opt_reid = std::make_unique<optim::AdamW>(state.reid->params(), aux_opt_cfg(cfg));
    state.opt_target =
        std::make_unique<optim::AdamW>(state.target->params(), aux_opt_cfg(cfg));
    state.opt_anon = std::make_unique<optim::AdamW>(state.anon->params(), anon_opt_cfg(cfg));
  }
  if (!state.pending_opt_state.empty()) {
    state.opt_reid->restore_state(state.pending_opt_state.at("reid"));
    state.opt_target->restore_state(state.pending_opt_state.at("target"));
    state.opt_anon->restore_state(state.pending_opt_state.at("anon"));
    state.pending_opt_state.clear();
  }

  std::deque<std::string> history;
  auto checkpoint_path = [&](const std::string& tag) {
    return (fs::path(checkpoint_dir) / ("pipeline_" + tag + ".ckpt")).string();
  };

  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    state.opt_reid->set_epoch(epoch);
    state.opt_target->set_epoch(epoch);
    state.opt_anon->set_epoch(epoch);
    auto batches = pk_batches(ds, cfg, state.rng);
    double reid_sum = 0.0, target_sum = 0.0, anon_sum = 0.0;

    for (const auto& idx : batches) {
      Batch b = make_batch(ds, idx, true, state.rng);

      // (1) aux update with the anonymizer held fixed: fresh noise sample,
      // anonymized batch treated as constant input
      Tensor n1(b.x.shape);
      state.rng.fill_normal(n1, 0.0f, noise_std);
      models::AnonymizerOutput a1 = state.anon->forward(b.x, n1);
      Tensor xp1 = models::compose_anonymized(b.x, a1, n1, mode);

      models::ClassifierOut ro = state.reid->forward(xp1, nn::Mode::kTrain, &state.rng);
      Tensor d_rlogits(ro.logits.shape), d_remb(ro.embedding.shape);
      losses::LossReport r_rep =
          losses::reid_loss(ro.logits, b.subjects, ro.embedding, b.subjects, state.triplet,
                            state.weights, &d_rlogits, &d_remb);
      state.reid->backward(d_remb, d_rlogits);
      push_report(history, report_json(r_rep));
      check_finite(r_rep.total, "pipeline aux step (reid)", history);
      state.opt_reid->step();

      models::ClassifierOut to = state.target->forward(xp1, nn::Mode::kTrain, &state.rng);
      Tensor d_tlogits(to.logits.shape);
      double t_loss = losses::cross_entropy(to.logits, b.targets, &d_tlogits);
      state.target->backward(Tensor(), d_tlogits);
      push_report(history, "{\"ce_target\":" + std::to_string(t_loss) + "}");
      check_finite(t_loss, "pipeline aux step (target)", history);
      state.opt_target->step();

      // (2) anonymizer update on a fresh forward pass, aux parameters fixed
      Tensor n2(b.x.shape);
      state.rng.fill_normal(n2, 0.0f, noise_std);
      models::AnonymizerOutput a2 = state.anon->forward(b.x, n2);
      Tensor xp2 = models::compose_anonymized(b.x, a2, n2, mode);

      models::ClassifierOut ro2 =
          state.reid->forward(xp2, nn::Mode::kTrainFrozenStats, &state.rng);
      models::ClassifierOut to2 =
          state.target->forward(xp2, nn::Mode::kTrainFrozenStats, &state.rng);
      Tensor d_tlogits2(to2.logits.shape), d_emb2(ro2.embedding.shape);
      losses::LossReport a_rep =
          losses::anon_loss(to2.logits, b.targets, ro2.embedding, b.subjects, state.triplet,
                            state.weights, &d_tlogits2, &d_emb2);
      push_report(history, report_json(a_rep));
      check_finite(a_rep.total, "pipeline anonymizer step", history);

      Tensor zero_rlogits(ro2.logits.shape);
      Tensor dx = state.reid->backward(d_emb2, zero_rlogits);
      Tensor dx_t = state.target->backward(Tensor(), d_tlogits2);
      dx.add_scaled(dx_t, 1.0f);
      // aux gradients from this critic pass are discarded, not applied
      nn::zero_grads(state.reid->params());
      nn::zero_grads(state.target->params());

      Tensor d_mu, d_sigma;
      models::compose_backward(dx, a2, n2, mode, d_mu, d_sigma);
      state.anon->backward(d_mu, d_sigma);
      state.opt_anon->step();

      reid_sum += r_rep.total;
      target_sum += t_loss;
      anon_sum += a_rep.total;
    }

    state.epoch = epoch + 1;

    LearnedAnonymizer eval_anon(*state.anon, state.eval_seed);
    eval::MetricsRow row = evaluate_state(state, ds, eval_anon, "pipeline");
    json j;
    j["stage"] = "pipeline";
    j["epoch"] = epoch;
    j["lr_aux"] = state.opt_reid->current_lr();
    j["lr_anon"] = state.opt_anon->current_lr();
    double nb = batches.empty() ? 1.0 : static_cast<double>(batches.size());
    j["loss_reid"] = reid_sum / nb;
    j["loss_target"] = target_sum / nb;
    j["loss_anon"] = anon_sum / nb;
    j["val_acc_T"] = row.acc_t;
    j["val_acc_id_top1"] = row.acc_id_top1;
    j["val_mAP"] = row.map_id;
    log.write(j.dump());

    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        state.epoch % cfg.checkpoint_every == 0 && state.epoch < cfg.epochs)
      save_state(state, checkpoint_path("epoch" + std::to_string(state.epoch)));
  }
  if (!checkpoint_dir.empty()) save_state(state, checkpoint_path("final"));
}

// ---------------------------------------------------------------- attacks

namespace {

// Shared attack loop; with_denoiser selects the inversion variant.
eval::MetricsRow attack_impl(TrainState& state, const Dataset& ds, const StageConfig& cfg,
                             Anonymizer& anonymizer, bool with_denoiser,
                             EpochLogger log) {
  cfg.validate();
  if (!state.anon) throw std::invalid_argument("posttrain attack requires an anonymizer");
  const std::uint64_t anon_hash_before = nn::params_hash(state.anon->params());

  state.stage = with_denoiser ? Stage::kPosttrainInversion : Stage::kPosttrain;
  state.restore_pretrained_attackers();
  if (with_denoiser) {
    Rng denoise_init(cfg.seed ^ 0xd303a15ull);
    state.denoiser = std::make_unique<models::DenoiserNet>(state.denoiser_cfg, denoise_init);
  }

  optim::AdamW opt_reid(state.reid->params(), aux_opt_cfg(cfg));
  optim::AdamW opt_target(state.target->params(), aux_opt_cfg(cfg));
  std::unique_ptr<optim::AdamW> opt_denoise;
  if (with_denoiser)
    opt_denoise = std::make_unique<optim::AdamW>(state.denoiser->params(), aux_opt_cfg(cfg));

  std::deque<std::string> history;
  double best_reid = -1.0, best_target = -1.0;
  std::vector<Tensor> best_reid_p, best_reid_b, best_target_p, best_target_b;
  // each attacker co-adapts with the denoiser, so each keeps the denoiser
  // state from its own best epoch
  std::vector<Tensor> den_reid_p, den_reid_b, den_target_p, den_target_b;

  eval::SampleTransform eval_transform = [&](const Tensor& h, const std::string& key) {
    Tensor anon_h = anonymizer.apply_eval(h, key);
    if (!with_denoiser) return anon_h;
    Tensor x({1, anon_h.dim(0), anon_h.dim(1), anon_h.dim(2)});
    std::copy(anon_h.v.begin(), anon_h.v.end(), x.v.begin());
    Tensor y = state.denoiser->forward(x, nn::Mode::kEval, nullptr);
    Tensor out({anon_h.dim(0), anon_h.dim(1), anon_h.dim(2)});
    std::copy(y.v.begin(), y.v.end(), out.v.begin());
    return out;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt_reid.set_epoch(epoch);
    opt_target.set_epoch(epoch);
    if (opt_denoise) opt_denoise->set_epoch(epoch);
    auto batches = pk_batches(ds, cfg, state.rng);

    for (const auto& idx : batches) {
      Batch b = make_batch(ds, idx, true, state.rng);
      Tensor xp = anonymizer.apply_train(b.x, state.rng);

      Tensor input = xp;
      Tensor d_recon;
      double recon_mse = 0.0;
      if (with_denoiser) {
        input = state.denoiser->forward(xp, nn::Mode::kTrain, &state.rng);
        d_recon = Tensor(input.shape);
        recon_mse = losses::mse(input, b.x, nullptr);
      }

      models::ClassifierOut ro = state.reid->forward(input, nn::Mode::kTrain, &state.rng);
      Tensor d_rlogits(ro.logits.shape), d_remb(ro.embedding.shape);
      losses::LossReport r_rep =
          losses::reid_loss(ro.logits, b.subjects, ro.embedding, b.subjects, state.triplet,
                            state.weights, &d_rlogits, &d_remb);
      state.reid->backward(d_remb, d_rlogits);
      push_report(history, report_json(r_rep));
      check_finite(r_rep.total, "posttrain attack (reid)", history);
      opt_reid.step();

      models::ClassifierOut to = state.target->forward(input, nn::Mode::kTrain, &state.rng);
      Tensor d_tlogits(to.logits.shape);
      losses::LossReport t_rep;
      if (with_denoiser) {
        t_rep = losses::inversion_loss(input, b.x, to.logits, b.targets, cfg.lambda_recon,
                                       &d_recon, &d_tlogits);
      } else {
        t_rep.total = losses::cross_entropy(to.logits, b.targets, &d_tlogits);
        t_rep.components["ce_target"] = t_rep.total;
      }
      state.target->backward(Tensor(), d_tlogits);
      push_report(history, report_json(t_rep));
      check_finite(t_rep.total, "posttrain attack (target)", history);
      opt_target.step();

      if (with_denoiser) {
        // denoiser trains on reconstruction only; the classifiers fine-tune on
        // its outputs but their gradients do not steer it
        state.denoiser->backward(d_recon);
        check_finite(recon_mse, "posttrain attack (denoiser)", history);
        opt_denoise->step();
      }
    }

    // model selection: best mAP for the re-id attacker, best accuracy for the
    // target attacker (both under the anonymized evaluation transform)
    Tensor emb =
        eval::extract_embeddings(*state.reid, ds.val_samples, ds.val_all(), eval_transform);
    double reid_metric =
        100.0 * eval::evaluate_retrieval(ds.val_split, ds.val_samples, emb).mAP;
    double target_metric = eval::evaluate_accuracy(*state.target, ds.val_samples,
                                                   ds.val_all(), false, eval_transform);
    if (reid_metric > best_reid) {
      best_reid = reid_metric;
      best_reid_p = models::snapshot(state.reid->params());
      best_reid_b = models::snapshot(state.reid->buffers());
      if (with_denoiser) {
        den_reid_p = models::snapshot(state.denoiser->params());
        den_reid_b = models::snapshot(state.denoiser->buffers());
      }
    }
    if (target_metric > best_target) {
      best_target = target_metric;
      best_target_p = models::snapshot(state.target->params());
      best_target_b = models::snapshot(state.target->buffers());
      if (with_denoiser) {
        den_target_p = models::snapshot(state.denoiser->params());
        den_target_b = models::snapshot(state.denoiser->buffers());
      }
    }

    json j;
    j["stage"] = stage_name(state.stage);
    j["config"] = anonymizer.label();
    j["epoch"] = epoch;
    j["lr_aux"] = opt_reid.current_lr();
    j["val_mAP"] = reid_metric;
    j["val_acc_T"] = target_metric;
    log.write(j.dump());
  }

  models::restore(state.reid->params(), best_reid_p);
  models::restore(state.reid->buffers(), best_reid_b);
  models::restore(state.target->params(), best_target_p);
  models::restore(state.target->buffers(), best_target_b);

  eval::MetricsRow row;
  row.config_label = anonymizer.label() + (with_denoiser ? "+inversion" : "");

  // target metric under the denoiser it co-adapted with
  if (with_denoiser && !den_target_p.empty()) {
    models::restore(state.denoiser->params(), den_target_p);
    models::restore(state.denoiser->buffers(), den_target_b);
  }
  row.acc_t = eval::evaluate_accuracy(*state.target, ds.val_samples, ds.val_all(), false,
                                      eval_transform);

  if (with_denoiser && !den_reid_p.empty()) {
    models::restore(state.denoiser->params(), den_reid_p);
    models::restore(state.denoiser->buffers(), den_reid_b);
  }
  Tensor emb =
      eval::extract_embeddings(*state.reid, ds.val_samples, ds.val_all(), eval_transform);
  eval::RetrievalResult rr = eval::evaluate_retrieval(ds.val_split, ds.val_samples, emb);
  row.acc_id_top1 = rr.topk_acc.at(1);
  row.acc_id_top5 = rr.topk_acc.at(5);
  row.acc_id_top10 = rr.topk_acc.at(10);
  row.map_id = 100.0 * rr.mAP;

  if (with_denoiser) {
    // reconstruction error of the denoiser on the validation set
    double total = 0.0;
    for (const auto& s : ds.val_samples) {
      Tensor anon_h = anonymizer.apply_eval(s.histogram.data, s.sample_key);
      Tensor x({1, anon_h.dim(0), anon_h.dim(1), anon_h.dim(2)});
      std::copy(anon_h.v.begin(), anon_h.v.end(), x.v.begin());
      Tensor y = state.denoiser->forward(x, nn::Mode::kEval, nullptr);
      Tensor flat({anon_h.dim(0), anon_h.dim(1), anon_h.dim(2)});
      std::copy(y.v.begin(), y.v.end(), flat.v.begin());
      total += losses::mse(flat, s.histogram.data, nullptr);
    }
    row.recon_mse = total / static_cast<double>(ds.val_samples.size());
  }

  if (nn::params_hash(state.anon->params()) != anon_hash_before)
    throw std::logic_error("anonymizer parameters changed during a post-training attack");
  return row;
}

}  // namespace

eval::MetricsRow posttrain_attack(TrainState& state, const Dataset& ds,
                                  const StageConfig& cfg, Anonymizer& anonymizer,
                                  EpochLogger log) {
  return attack_impl(state, ds, cfg, anonymizer, false, log);
}

eval::MetricsRow posttrain_inversion_attack(TrainState& state, const Dataset& ds,
                                            const StageConfig& cfg, Anonymizer& anonymizer,
                                            EpochLogger log) {
  return attack_impl(state, ds, cfg, anonymizer, true, log);
}

std::vector<eval::MetricsRow> run_noise_baseline(TrainState& state, const Dataset& ds,
                                                 const StageConfig& cfg,
                                                 const std::vector<float>& std_values,
                                                 EpochLogger log) {
  if (std_values.empty())
    throw std::invalid_argument("noise baseline: std list must not be empty");
  for (float s : std_values)
    if (s <= 0) throw std::invalid_argument("noise baseline: stds must be positive");
  std::vector<eval::MetricsRow> rows;
  for (float s : std_values) {
    GaussianAnonymizer g(s, state.eval_seed);
    rows.push_back(posttrain_attack(state, ds, cfg, g, log));
  }
  return rows;
}

std::pair<eval::MetricsRow, eval::MetricsRow> transfer_frozen_anonymizer(
    TrainState& state, const Dataset& target_ds, const StageConfig& pretrain_cfg,
    const StageConfig& attack_cfg, EpochLogger log) {
  if (!state.anon) throw std::invalid_argument("transfer requires a trained anonymizer");

  models::ClassifierConfig rc = state.reid_cfg;
  rc.n_classes = target_ds.n_subjects;
  models::ClassifierConfig tc = state.target_cfg;
  tc.n_classes = target_ds.n_classes;
  TrainState transfer_state(state.anon_cfg, rc, tc, state.denoiser_cfg, state.triplet,
                            state.weights, pretrain_cfg.seed ^ 0x7a45f3ull);
  pretrain_all(transfer_state, target_ds, pretrain_cfg, log);
  eval::MetricsRow raw = *transfer_state.raw_metrics;

  // borrow the frozen anonymizer; fully convolutional, so the resolution of
  // the target dataset does not need to match the training resolution
  std::swap(transfer_state.anon, state.anon);
  LearnedAnonymizer learned(*transfer_state.anon, transfer_state.eval_seed);
  eval::MetricsRow attacked;
  try {
    attacked = posttrain_attack(transfer_state, target_ds, attack_cfg, learned, log);
  } catch (...) {
    std::swap(transfer_state.anon, state.anon);
    throw;
  }
  std::swap(transfer_state.anon, state.anon);
  attacked.config_label = "transfer_" + attacked.config_label;
  return {raw, attacked};
}

void export_anonymized(TrainState& state, const Dataset& ds, const std::string& out_dir) {
  if (!state.anon) throw std::invalid_argument("export requires an anonymizer");
  LearnedAnonymizer learned(*state.anon, state.eval_seed);
  std::vector<event::LabeledSample> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    event::LabeledSample a = s;
    a.histogram.data = learned.apply_eval(s.histogram.data, s.sample_key);
    out.push_back(std::move(a));
  }
  event::save_samples(out, out_dir);
}

// ------------------------------------------------------------- checkpoints

namespace {

void put_tensor_list(ckpt::Checkpoint& c, const std::string& prefix,
                     const std::vector<Tensor>& list) {
  for (size_t i = 0; i < list.size(); ++i) c.blobs[prefix + "." + std::to_string(i)] = list[i];
}

std::vector<Tensor> get_tensor_list(const ckpt::Checkpoint& c, const std::string& prefix,
                                    size_t count) {
  std::vector<Tensor> out;
  for (size_t i = 0; i < count; ++i) {
    auto it = c.blobs.find(prefix + "." + std::to_string(i));
    if (it == c.blobs.end())
      throw std::runtime_error("checkpoint missing blob " + prefix + "." + std::to_string(i));
    out.push_back(it->second);
  }
  return out;
}

json row_to_json(const eval::MetricsRow& r) {
  json j;
  j["config"] = r.config_label;
  j["acc_T"] = r.acc_t;
  j["acc_id_top1"] = r.acc_id_top1;
  if (r.acc_id_top5) j["acc_id_top5"] = *r.acc_id_top5;
  if (r.acc_id_top10) j["acc_id_top10"] = *r.acc_id_top10;
  j["mAP"] = r.map_id;
  if (r.recon_mse) j["recon_mse"] = *r.recon_mse;
  return j;
}

eval::MetricsRow row_from_json(const json& j) {
  eval::MetricsRow r;
  r.config_label = j.at("config").get<std::string>();
  r.acc_t = j.at("acc_T").get<double>();
  r.acc_id_top1 = j.at("acc_id_top1").get<double>();
  if (j.contains("acc_id_top5")) r.acc_id_top5 = j.at("acc_id_top5").get<double>();
  if (j.contains("acc_id_top10")) r.acc_id_top10 = j.at("acc_id_top10").get<double>();
  r.map_id = j.at("mAP").get<double>();
  if (j.contains("recon_mse")) r.recon_mse = j.at("recon_mse").get<double>();
  return r;
}

}  // namespace

void save_state(const TrainState& state, const std::string& path,
                const std::string& extra_meta_json) {
  ckpt::Checkpoint c;
  auto& mutable_state = const_cast<TrainState&>(state);
  c.put_params("anon", mutable_state.anon->params());
  c.put_params("reid", mutable_state.reid->params());
  c.put_params("reid_buf", mutable_state.reid->buffers());
  c.put_params("target", mutable_state.target->params());
  c.put_params("target_buf", mutable_state.target->buffers());
  if (state.denoiser) {
    c.put_params("denoise", mutable_state.denoiser->params());
    c.put_params("denoise_buf", mutable_state.denoiser->buffers());
  }
  if (state.has_pretrained) {
    put_tensor_list(c, "pretrained_reid", state.pretrained_reid_params);
    put_tensor_list(c, "pretrained_reid_buf", state.pretrained_reid_buffers);
    put_tensor_list(c, "pretrained_target", state.pretrained_target_params);
    put_tensor_list(c, "pretrained_target_buf", state.pretrained_target_buffers);
  }
  if (state.opt_reid) {
    c.put_vector("opt.reid", state.opt_reid->serialize_state());
    c.put_vector("opt.target", state.opt_target->serialize_state());
    c.put_vector("opt.anon", state.opt_anon->serialize_state());
  }

  json meta;
  meta["schema_version"] = 1;
  meta["stage"] = stage_name(state.stage);
  meta["epoch"] = state.epoch;
  meta["rng"] = state.rng.state();
  meta["eval_seed"] = state.eval_seed;
  meta["has_pretrained"] = state.has_pretrained;
  meta["has_denoiser"] = state.denoiser != nullptr;
  meta["has_optimizers"] = state.opt_reid != nullptr;
  meta["n_pretrained_reid"] = state.pretrained_reid_params.size();
  meta["n_pretrained_reid_buf"] = state.pretrained_reid_buffers.size();
  meta["n_pretrained_target"] = state.pretrained_target_params.size();
  meta["n_pretrained_target_buf"] = state.pretrained_target_buffers.size();
  if (state.raw_metrics) meta["raw_metrics"] = row_to_json(*state.raw_metrics);
  meta["extra"] = json::parse(extra_meta_json);
  c.metadata_json = meta.dump();
  ckpt::save_checkpoint(c, path);
}

void load_state(TrainState& state, const std::string& path) {
  ckpt::Checkpoint c = ckpt::load_checkpoint(path);
  json meta = json::parse(c.metadata_json);
  if (meta.value("schema_version", 0) != 1)
    throw std::runtime_error("unsupported checkpoint schema_version");

  c.get_params("anon", state.anon->params());
  c.get_params("reid", state.reid->params());
  c.get_params("reid_buf", state.reid->buffers());
  c.get_params("target", state.target->params());
  c.get_params("target_buf", state.target->buffers());
  if (meta.value("has_denoiser", false)) {
    Rng denoise_init(0);
    state.denoiser = std::make_unique<models::DenoiserNet>(state.denoiser_cfg, denoise_init);
    c.get_params("denoise", state.denoiser->params());
    c.get_params("denoise_buf", state.denoiser->buffers());
  }
  state.has_pretrained = meta.value("has_pretrained", false);
  if (state.has_pretrained) {
    state.pretrained_reid_params =
        get_tensor_list(c, "pretrained_reid", meta.at("n_pretrained_reid").get<size_t>());
    state.pretrained_reid_buffers = get_tensor_list(
        c, "pretrained_reid_buf", meta.at("n_pretrained_reid_buf").get<size_t>());
    state.pretrained_target_params = get_tensor_list(
        c, "pretrained_target", meta.at("n_pretrained_target").get<size_t>());
    state.pretrained_target_buffers = get_tensor_list(
        c, "pretrained_target_buf", meta.at("n_pretrained_target_buf").get<size_t>());
  }
  std::string st = meta.at("stage").get<std::string>();
  for (Stage s : {Stage::kPretrain, Stage::kPipeline, Stage::kPosttrain,
                  Stage::kPosttrainInversion})
    if (stage_name(s) == st) state.stage = s;
  state.epoch = meta.at("epoch").get<int>();
  state.rng.restore(meta.at("rng").get<std::string>());
  state.eval_seed = meta.at("eval_seed").get<std::uint64_t>();
  if (meta.contains("raw_metrics")) state.raw_metrics = row_from_json(meta["raw_metrics"]);

  if (meta.value("has_optimizers", false)) {
    state.pending_opt_state["reid"] = c.get_vector("opt.reid");
    state.pending_opt_state["target"] = c.get_vector("opt.target");
    state.pending_opt_state["anon"] = c.get_vector("opt.anon");
  }
}

}  // namespace anony::train
