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

// Compares the serial reference convolution against the parallel im2col/GEMM
// path at shapes used by the models.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "anony/kernels.hpp"
#include "anony/tensor.hpp"

using namespace anony;

namespace {

double seconds_per_call(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void bench_case(const char* name, int n, int h, int w, const kernels::ConvSpec& spec) {
  Rng rng(7);
  Tensor x({n, spec.in_channels, h, w});
  rng.fill_normal(x, 0.0f, 1.0f);
  Tensor weight({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
  rng.fill_normal(weight, 0.0f, 0.1f);
  Tensor bias({spec.out_channels});

  Tensor y_fast, y_serial;
  double t_fast =
      seconds_per_call([&] { kernels::conv2d(x, weight, bias, spec, y_fast); }, 5);
  double t_serial =
      seconds_per_call([&] { kernels::conv2d_serial(x, weight, bias, spec, y_serial); }, 2);

  double max_diff = 0.0;
  for (size_t i = 0; i < y_fast.v.size(); ++i)
    max_diff =
        std::max(max_diff, std::fabs(static_cast<double>(y_fast.v[i]) - y_serial.v[i]));

  const double flops = 2.0 * n * spec.out_channels * spec.out_extent(h) *
                       spec.out_extent(w) * spec.in_channels * spec.kernel * spec.kernel;
  std::printf(
      "%-24s serial %8.3f ms  fast %8.3f ms  speedup %5.2fx  %6.2f GFLOP/s  max|diff| %.2e\n",
      name, t_serial * 1e3, t_fast * 1e3, t_serial / t_fast, flops / t_fast / 1e9, max_diff);
}

}  // namespace

int main() {
  std::printf("conv2d: serial reference vs im2col+GEMM (OpenMP over batch)\n\n");
  bench_case("anonymizer 16x16 w64", 32, 16, 16, {20, 64, 3, 1, 1});
  bench_case("anonymizer 32x32 w64", 32, 32, 32, {20, 64, 3, 1, 1});
  bench_case("classifier s2 16x16", 32, 16, 16, {16, 32, 3, 2, 1});
  bench_case("denoiser 16x16 w64", 32, 16, 16, {64, 64, 3, 1, 1});
  bench_case("stem 7x7/2 32x32", 32, 32, 32, {10, 64, 7, 2, 3});
  return 0;
}
