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

#pragma once

#include "anony/tensor.hpp"

namespace anony::kernels {

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_extent(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

// True while the serial reference path is forced (ANONY_DETERMINISTIC=1 or
// set_force_serial). The fast path is deterministic too; the switch exists
// so any platform-specific SIMD/thread variation can be ruled out.
bool force_serial();
void set_force_serial(bool on);

// y: (N, Cout, Ho, Wo) from x: (N, Cin, H, W), w: (Cout, Cin, k, k), b: (Cout).
// The _serial variants are the plain-loop reference implementations; the
// unsuffixed ones use im2col + GEMM with OpenMP over the batch and agree
// with the reference within float tolerance (verified by tests/bench).
// Both paths are run-to-run deterministic.
void conv2d_serial(const Tensor& x, const Tensor& w, const Tensor& b,
                   const ConvSpec& spec, Tensor& y);
void conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
            const ConvSpec& spec, Tensor& y);

// Gradients. dx may be null when input gradients are not needed.
// dw/db are accumulated into (callers zero them between steps).
void conv2d_grad_serial(const Tensor& x, const Tensor& w, const ConvSpec& spec,
                        const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db);
void conv2d_grad(const Tensor& x, const Tensor& w, const ConvSpec& spec,
                 const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db);

// y = x * w^T + b with x: (N, D), w: (M, D), b: (M), y: (N, M).
void linear(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y);
void linear_grad(const Tensor& x, const Tensor& w, const Tensor& dy,
                 Tensor* dx, Tensor& dw, Tensor& db);

}  // namespace anony::kernels
