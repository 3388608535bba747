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

#include <doctest.h>

#include "anony/kernels.hpp"
#include "anony/tensor.hpp"

using namespace anony;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a.v[i]) - b.v[i]));
  return m;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("conv2d fast path matches serial reference across shapes") {
  Rng rng(11);
  struct Case {
    int n, h, w;
    kernels::ConvSpec spec;
  };
  const Case cases[] = {
      {2, 8, 8, {3, 5, 3, 1, 1}},    {3, 9, 7, {4, 6, 3, 2, 1}},
      {1, 16, 16, {10, 8, 3, 1, 1}}, {2, 16, 16, {2, 4, 7, 2, 3}},
      {4, 5, 5, {6, 6, 1, 1, 0}},    {2, 12, 10, {5, 7, 5, 3, 2}},
  };
  for (const auto& c : cases) {
    Tensor x({c.n, c.spec.in_channels, c.h, c.w});
    rng.fill_normal(x, 0.0f, 1.0f);
    Tensor w({c.spec.out_channels, c.spec.in_channels, c.spec.kernel, c.spec.kernel});
    rng.fill_normal(w, 0.0f, 0.3f);
    Tensor b({c.spec.out_channels});
    rng.fill_normal(b, 0.0f, 0.3f);

    Tensor y_fast, y_serial;
    kernels::conv2d(x, w, b, c.spec, y_fast);
    kernels::conv2d_serial(x, w, b, c.spec, y_serial);
    CHECK(max_abs_diff(y_fast, y_serial) < 1e-4);

    Tensor dy(y_fast.shape);
    rng.fill_normal(dy, 0.0f, 1.0f);
    Tensor dx_f(x.shape), dx_s(x.shape);
    Tensor dw_f(w.shape), dw_s(w.shape), db_f(b.shape), db_s(b.shape);
    kernels::conv2d_grad(x, w, c.spec, dy, &dx_f, dw_f, db_f);
    kernels::conv2d_grad_serial(x, w, c.spec, dy, &dx_s, dw_s, db_s);
    CHECK(max_abs_diff(dx_f, dx_s) < 1e-3);
    CHECK(max_abs_diff(dw_f, dw_s) < 1e-3);
    CHECK(max_abs_diff(db_f, db_s) < 1e-3);
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(3);
  kernels::ConvSpec spec{2, 3, 3, 1, 1};
  Tensor x({2, 2, 5, 5});
  rng.fill_normal(x, 0.0f, 1.0f);
  Tensor w({3, 2, 3, 3});
  rng.fill_normal(w, 0.0f, 0.4f);
  Tensor b({3});

  // scalar loss: sum(y * r) with fixed random r
  Tensor y;
  kernels::conv2d(x, w, b, spec, y);
  Tensor r(y.shape);
  rng.fill_normal(r, 0.0f, 1.0f);

  Tensor dx(x.shape), dw(w.shape), db(b.shape);
  kernels::conv2d_grad(x, w, spec, r, &dx, dw, db);

  auto loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    Tensor yy;
    kernels::conv2d(xx, ww, bb, spec, yy);
    double s = 0.0;
    for (size_t i = 0; i < yy.v.size(); ++i) s += static_cast<double>(yy.v[i]) * r.v[i];
    return s;
  };

  const float eps = 1e-2f;
  Rng pick(41);
  for (int trial = 0; trial < 8; ++trial) {
    // input gradient
    size_t i = static_cast<size_t>(pick.uniform_int(x.size()));
    Tensor xp = x, xm = x;
    xp.v[i] += eps;
    xm.v[i] -= eps;
    double fd = (loss(xp, w, b) - loss(xm, w, b)) / (2.0 * eps);
    CHECK(dx.v[i] == doctest::Approx(fd).epsilon(1e-2));
    // weight gradient
    size_t j = static_cast<size_t>(pick.uniform_int(w.size()));
    Tensor wp = w, wm = w;
    wp.v[j] += eps;
    wm.v[j] -= eps;
    fd = (loss(x, wp, b) - loss(x, wm, b)) / (2.0 * eps);
    CHECK(dw.v[j] == doctest::Approx(fd).epsilon(1e-2));
  }
}

TEST_CASE("linear matches a scalar-loop oracle and finite differences") {
  Rng rng(5);
  const int N = 3, D = 7, M = 4;
  Tensor x({N, D}), w({M, D}), b({M});
  rng.fill_normal(x, 0.0f, 1.0f);
  rng.fill_normal(w, 0.0f, 0.5f);
  rng.fill_normal(b, 0.0f, 0.5f);

  Tensor y;
  kernels::linear(x, w, b, y);
  REQUIRE(y.shape == std::vector<int>({N, M}));
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) {
      double acc = b.at(m);
      for (int d = 0; d < D; ++d) acc += static_cast<double>(x.at(n, d)) * w.at(m, d);
      CHECK(y.at(n, m) == doctest::Approx(acc).epsilon(1e-5));
    }

  Tensor dy(y.shape);
  rng.fill_normal(dy, 0.0f, 1.0f);
  Tensor dx(x.shape), dw(w.shape), db(b.shape);
  kernels::linear_grad(x, w, dy, &dx, dw, db);

  auto loss = [&](const Tensor& xx, const Tensor& ww) {
    Tensor yy;
    kernels::linear(xx, ww, b, yy);
    double s = 0.0;
    for (size_t i = 0; i < yy.v.size(); ++i) s += static_cast<double>(yy.v[i]) * dy.v[i];
    return s;
  };
  const float eps = 1e-2f;
  for (size_t i = 0; i < 6; ++i) {
    Tensor xp = x, xm = x;
    xp.v[i] += eps;
    xm.v[i] -= eps;
    double fd = (loss(xp, w) - loss(xm, w)) / (2.0 * eps);
    CHECK(dx.v[i] == doctest::Approx(fd).epsilon(1e-2));
  }
}

TEST_CASE("force_serial switch reroutes the fast entry point") {
  Rng rng(9);
  kernels::ConvSpec spec{3, 4, 3, 1, 1};
  Tensor x({2, 3, 6, 6}), w({4, 3, 3, 3}), b({4});
  rng.fill_normal(x, 0.0f, 1.0f);
  rng.fill_normal(w, 0.0f, 0.3f);

  Tensor y_ref;
  kernels::conv2d_serial(x, w, b, spec, y_ref);
  kernels::set_force_serial(true);
  CHECK(kernels::force_serial());
  Tensor y;
  kernels::conv2d(x, w, b, spec, y);
  kernels::set_force_serial(false);
  CHECK(max_abs_diff(y, y_ref) == 0.0);  // identical code path
}

TEST_CASE("rng stream is pinned and serializable") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(a.normal() == b.normal());
  std::string s = a.state();
  double x1 = a.normal();
  Rng c(0);
  c.restore(s);
  CHECK(c.normal() == x1);
  // uniform_int bounds
  Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    auto v = d.uniform_int(13);
    CHECK(v >= 0);
    CHECK(v < 13);
  }
}

}  // TEST_SUITE
