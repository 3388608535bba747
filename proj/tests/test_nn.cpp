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
#include <memory>

#include <doctest.h>

#include "anony/nn.hpp"
#include "anony/optim.hpp"

using namespace anony;

namespace {

// Scalar loss sum(f(x) * r); checks dL/dx and parameter grads by central
// finite differences.
void check_layer_gradients(nn::Layer& layer, const Tensor& x, nn::Mode mode,
                           double tol = 2e-2) {
  Rng rng(99);
  Tensor y = layer.forward(x, mode, &rng);
  Tensor r(y.shape);
  Rng rr(17);
  rr.fill_normal(r, 0.0f, 1.0f);

  Tensor dx = layer.backward(r);
  std::vector<nn::Param*> params;
  layer.collect_params(params);

  auto loss_at = [&](const Tensor& xx) {
    Tensor yy = layer.forward(xx, mode, &rng);
    double s = 0.0;
    for (size_t i = 0; i < yy.v.size(); ++i) s += static_cast<double>(yy.v[i]) * r.v[i];
    return s;
  };

  const float eps = 1e-2f;
  Rng pick(5);
  for (int t = 0; t < 6; ++t) {
    size_t i = static_cast<size_t>(pick.uniform_int(x.size()));
    Tensor xp = x, xm = x;
    xp.v[i] += eps;
    xm.v[i] -= eps;
    double fd = (loss_at(xp) - loss_at(xm)) / (2.0 * eps);
    CHECK(dx.v[i] == doctest::Approx(fd).epsilon(tol));
  }
  for (nn::Param* p : params) {
    for (int t = 0; t < 3; ++t) {
      size_t i = static_cast<size_t>(pick.uniform_int(p->w.size()));
      float saved = p->w.v[i];
      p->w.v[i] = saved + eps;
      double lp = loss_at(x);
      p->w.v[i] = saved - eps;
      double lm = loss_at(x);
      p->w.v[i] = saved;
      double fd = (lp - lm) / (2.0 * eps);
      // grads accumulated once from the single backward above
      CHECK(p->g.v[i] == doctest::Approx(fd).epsilon(tol));
    }
  }
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("conv2d layer gradients match finite differences") {
  Rng init(1);
  nn::Conv2d conv("c", 3, 4, 3, 1, 1, init);
  Tensor x({2, 3, 5, 5});
  Rng rng(2);
  rng.fill_normal(x, 0.0f, 1.0f);
  check_layer_gradients(conv, x, nn::Mode::kTrain);
}

TEST_CASE("linear layer gradients match finite differences") {
  Rng init(1);
  nn::Linear lin("l", 6, 4, init);
  Tensor x({3, 6});
  Rng rng(2);
  rng.fill_normal(x, 0.0f, 1.0f);
  check_layer_gradients(lin, x, nn::Mode::kTrain);
}

TEST_CASE("batch norm gradients match finite differences (spatial and 1d)") {
  Rng rng(2);
  {
    nn::BatchNorm bn("bn", 3, true);
    Tensor x({4, 3, 4, 4});
    rng.fill_normal(x, 0.5f, 1.5f);
    check_layer_gradients(bn, x, nn::Mode::kTrainFrozenStats, 5e-2);
  }
  {
    nn::BatchNorm bn("bn1", 5, false);
    Tensor x({8, 5});
    rng.fill_normal(x, -0.3f, 2.0f);
    check_layer_gradients(bn, x, nn::Mode::kTrainFrozenStats, 5e-2);
  }
}

TEST_CASE("batch norm modes: running stats mutate only in train mode") {
  Rng rng(3);
  nn::BatchNorm bn("bn", 4, true);
  std::vector<nn::Param*> buffers;
  bn.collect_buffers(buffers);
  REQUIRE(buffers.size() == 2);

  Tensor x({4, 4, 3, 3});
  rng.fill_normal(x, 1.0f, 2.0f);

  auto buffer_hash = [&] { return nn::params_hash(buffers); };
  const auto h0 = buffer_hash();

  bn.forward(x, nn::Mode::kTrainFrozenStats, nullptr);
  CHECK(buffer_hash() == h0);  // frozen critic pass leaves no trace
  bn.forward(x, nn::Mode::kEval, nullptr);
  CHECK(buffer_hash() == h0);
  bn.forward(x, nn::Mode::kTrain, nullptr);
  CHECK(buffer_hash() != h0);  // training updates running stats
}

TEST_CASE("frozen-stats mode normalizes with batch statistics") {
  // With untouched running stats (mean 0, var 1), eval output differs from
  // the batch-stat normalization unless the batch is already standardized.
  Rng rng(4);
  nn::BatchNorm bn("bn", 2, true);
  Tensor x({4, 2, 2, 2});
  rng.fill_normal(x, 3.0f, 2.0f);
  Tensor y_frozen = bn.forward(x, nn::Mode::kTrainFrozenStats, nullptr);
  Tensor y_eval = bn.forward(x, nn::Mode::kEval, nullptr);
  double diff = 0.0;
  for (size_t i = 0; i < y_frozen.v.size(); ++i)
    diff = std::max(diff, std::fabs(static_cast<double>(y_frozen.v[i]) - y_eval.v[i]));
  CHECK(diff > 0.1);
}

TEST_CASE("dropout: inactive in eval, inverted scaling in train") {
  nn::Dropout drop(0.5f);
  Tensor x = Tensor::full({2, 100}, 1.0f);
  Tensor y_eval = drop.forward(x, nn::Mode::kEval, nullptr);
  for (float v : y_eval.v) CHECK(v == 1.0f);

  Rng rng(8);
  Tensor y_tr = drop.forward(x, nn::Mode::kTrain, &rng);
  int zeros = 0;
  for (float v : y_tr.v) {
    CHECK((v == 0.0f || v == doctest::Approx(2.0f)));
    if (v == 0.0f) ++zeros;
  }
  CHECK(zeros > 50);
  CHECK(zeros < 150);
}

TEST_CASE("pooling layers: shapes and gradients") {
  Rng rng(5);
  {
    nn::GlobalAvgPool gap;
    Tensor x({2, 3, 4, 4});
    rng.fill_normal(x, 0.0f, 1.0f);
    Tensor y = gap.forward(x, nn::Mode::kTrain, nullptr);
    REQUIRE(y.shape == std::vector<int>({2, 3}));
    CHECK(y.at(0, 0) == doctest::Approx([&] {
            double s = 0;
            for (int i = 0; i < 4; ++i)
              for (int j = 0; j < 4; ++j) s += x.at(0, 0, i, j);
            return s / 16.0;
          }()));
    check_layer_gradients(gap, x, nn::Mode::kTrain);
  }
  {
    nn::MaxPool2d mp(3, 2, 1);
    Tensor x({2, 2, 6, 6});
    rng.fill_normal(x, 0.0f, 1.0f);
    Tensor y = mp.forward(x, nn::Mode::kTrain, nullptr);
    REQUIRE(y.shape == std::vector<int>({2, 2, 3, 3}));
    check_layer_gradients(mp, x, nn::Mode::kTrain);
  }
}

TEST_CASE("bottleneck block: shape, gradient flow, shortcut projection") {
  Rng init(6);
  nn::Bottleneck block("b", 8, 4, 16, 2, init);
  Tensor x({2, 8, 8, 8});
  Rng rng(7);
  rng.fill_normal(x, 0.0f, 1.0f);
  Tensor y = block.forward(x, nn::Mode::kTrainFrozenStats, nullptr);
  REQUIRE(y.shape == std::vector<int>({2, 16, 4, 4}));
  Tensor dy(y.shape);
  rng.fill_normal(dy, 0.0f, 1.0f);
  Tensor dx = block.backward(dy);
  REQUIRE(dx.shape == x.shape);
  std::vector<nn::Param*> params;
  block.collect_params(params);
  bool any_grad = false;
  for (auto* p : params)
    for (float g : p->g.v)
      if (g != 0.0f) any_grad = true;
  CHECK(any_grad);
}

TEST_CASE("adamw single step matches the closed-form update") {
  nn::Param p("p", Tensor::full({2}, 1.0f));
  p.g.v = {0.5f, -0.25f};
  optim::AdamWConfig cfg;
  cfg.lr = 0.1f;
  cfg.weight_decay = 0.01f;
  cfg.total_epochs = 10;
  optim::AdamW opt({&p}, cfg);
  opt.set_epoch(0);
  opt.step();

  for (int i = 0; i < 2; ++i) {
    double g = (i == 0) ? 0.5 : -0.25;
    double m = (1 - 0.9) * g, v = (1 - 0.999) * g * g;
    double mh = m / (1 - 0.9), vh = v / (1 - 0.999);
    double expect = 1.0 - 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * 1.0);
    CHECK(p.w.v[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-5));
  }
  // grads zeroed after step
  CHECK(p.g.v[0] == 0.0f);
  CHECK(p.g.v[1] == 0.0f);
}

TEST_CASE("lr schedules: cosine decay and stepwise halving") {
  optim::AdamWConfig cosine;
  cosine.lr = 1e-3f;
  cosine.scheduler = optim::Scheduler::kCosine;
  cosine.total_epochs = 100;
  CHECK(optim::scheduled_lr(cosine, 0) == doctest::Approx(1e-3));
  CHECK(optim::scheduled_lr(cosine, 50) == doctest::Approx(0.5e-3).epsilon(0.05));
  CHECK(optim::scheduled_lr(cosine, 99) < 1e-5);

  optim::AdamWConfig step;
  step.lr = 1e-3f;
  step.scheduler = optim::Scheduler::kStep;
  step.step_period = 100;
  step.step_gamma = 0.5f;
  CHECK(optim::scheduled_lr(step, 0) == doctest::Approx(1e-3));
  CHECK(optim::scheduled_lr(step, 99) == doctest::Approx(1e-3));
  CHECK(optim::scheduled_lr(step, 100) == doctest::Approx(0.5e-3));
  CHECK(optim::scheduled_lr(step, 250) == doctest::Approx(0.25e-3));
}

TEST_CASE("adamw state round-trips through serialization") {
  Rng rng(11);
  nn::Param p("p", Tensor({8}));
  rng.fill_normal(p.w, 0.0f, 1.0f);
  optim::AdamWConfig cfg;
  optim::AdamW opt({&p}, cfg);
  for (int i = 0; i < 3; ++i) {
    rng.fill_normal(p.g, 0.0f, 1.0f);
    opt.step();
  }
  auto state = opt.serialize_state();
  Tensor w_snapshot = p.w;
  Tensor g_next(p.g.shape);
  rng.fill_normal(g_next, 0.0f, 1.0f);

  p.g = g_next;
  opt.step();
  Tensor w_after = p.w;

  // rebuild and replay the same step
  p.w = w_snapshot;
  optim::AdamW opt2({&p}, cfg);
  opt2.restore_state(state);
  p.g = g_next;
  opt2.step();
  for (size_t i = 0; i < p.w.v.size(); ++i) CHECK(p.w.v[i] == w_after.v[i]);
}

}  // TEST_SUITE
