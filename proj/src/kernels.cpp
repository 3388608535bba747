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

#include "anony/kernels.hpp"

#include <Eigen/Dense>
#include <cstdlib>
#include <stdexcept>

namespace anony::kernels {

namespace {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

bool g_force_serial_init = false;
bool g_force_serial = false;

void check_conv_shapes(const Tensor& x, const Tensor& w, const ConvSpec& s) {
  if (x.ndim() != 4) throw std::invalid_argument("conv2d: input must be 4-D, got " + x.shape_str());
  if (x.dim(1) != s.in_channels) throw std::invalid_argument("conv2d: channel mismatch");
  if (w.dim(0) != s.out_channels || w.dim(1) != s.in_channels ||
      w.dim(2) != s.kernel || w.dim(3) != s.kernel)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  if (x.dim(2) + 2 * s.pad < s.kernel || x.dim(3) + 2 * s.pad < s.kernel)
    throw std::invalid_argument("conv2d: input smaller than kernel");
}

// col: (Cin*k*k, Ho*Wo) for one sample.
void im2col(const float* x, int C, int H, int W, const ConvSpec& s, float* col) {
  const int Ho = s.out_extent(H), Wo = s.out_extent(W);
  const int k = s.kernel;
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        float* row = col + (static_cast<size_t>(c) * k * k + kh * k + kw) *
                               static_cast<size_t>(Ho) * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
          int ih = oh * s.stride - s.pad + kh;
          for (int ow = 0; ow < Wo; ++ow) {
            int iw = ow * s.stride - s.pad + kw;
            row[oh * Wo + ow] =
                (ih >= 0 && ih < H && iw >= 0 && iw < W)
                    ? x[(static_cast<size_t>(c) * H + ih) * W + iw]
                    : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_accum(const float* col, int C, int H, int W, const ConvSpec& s, float* x) {
  const int Ho = s.out_extent(H), Wo = s.out_extent(W);
  const int k = s.kernel;
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const float* row = col + (static_cast<size_t>(c) * k * k + kh * k + kw) *
                                     static_cast<size_t>(Ho) * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
          int ih = oh * s.stride - s.pad + kh;
          if (ih < 0 || ih >= H) continue;
          for (int ow = 0; ow < Wo; ++ow) {
            int iw = ow * s.stride - s.pad + kw;
            if (iw < 0 || iw >= W) continue;
            x[(static_cast<size_t>(c) * H + ih) * W + iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

bool force_serial() {
  if (!g_force_serial_init) {
    const char* env = std::getenv("ANONY_DETERMINISTIC");
    g_force_serial = env && env[0] == '1';
    g_force_serial_init = true;
  }
  return g_force_serial;
}

void set_force_serial(bool on) {
  g_force_serial = on;
  g_force_serial_init = true;
}

void conv2d_serial(const Tensor& x, const Tensor& w, const Tensor& b,
                   const ConvSpec& s, Tensor& y) {
  check_conv_shapes(x, w, s);
  const int N = x.dim(0), C = s.in_channels, H = x.dim(2), W = x.dim(3);
  const int Co = s.out_channels, k = s.kernel;
  const int Ho = s.out_extent(H), Wo = s.out_extent(W);
  y = Tensor({N, Co, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = b.at(co);
          for (int ci = 0; ci < C; ++ci)
            for (int kh = 0; kh < k; ++kh) {
              int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < k; ++kw) {
                int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= W) continue;
                acc += static_cast<double>(x.at(n, ci, ih, iw)) * w.at(co, ci, kh, kw);
              }
            }
          y.at(n, co, oh, ow) = static_cast<float>(acc);
        }
}

void conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
            const ConvSpec& s, Tensor& y) {
  if (force_serial()) {
    conv2d_serial(x, w, b, s, y);
    return;
  }
  check_conv_shapes(x, w, s);
  const int N = x.dim(0), C = s.in_channels, H = x.dim(2), W = x.dim(3);
  const int Co = s.out_channels, k = s.kernel;
  const int Ho = s.out_extent(H), Wo = s.out_extent(W);
  y = Tensor({N, Co, Ho, Wo});
  const std::int64_t patch = static_cast<std::int64_t>(C) * k * k;
  const std::int64_t area = static_cast<std::int64_t>(Ho) * Wo;
  ConstMapRM wm(w.v.data(), Co, patch);

#pragma omp parallel
  {
    std::vector<float> col(static_cast<size_t>(patch * area));
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      const float* xp = x.v.data() + static_cast<size_t>(n) * C * H * W;
      im2col(xp, C, H, W, s, col.data());
      ConstMapRM cm(col.data(), patch, area);
      MapRM ym(y.v.data() + static_cast<size_t>(n) * Co * area, Co, area);
      ym.noalias() = wm * cm;
      for (int co = 0; co < Co; ++co) ym.row(co).array() += b.at(co);
    }
  }
}

void conv2d_grad_serial(const Tensor& x, const Tensor& w, const ConvSpec& s,
                        const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db) {
  check_conv_shapes(x, w, s);
  const int N = x.dim(0), C = s.in_channels, H = x.dim(2), W = x.dim(3);
  const int Co = s.out_channels, k = s.kernel;
  const int Ho = s.out_extent(H), Wo = s.out_extent(W);
  if (dx) *dx = Tensor({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          float g = dy.at(n, co, oh, ow);
          db.at(co) += g;
          for (int ci = 0; ci < C; ++ci)
            for (int kh = 0; kh < k; ++kh) {
              int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < k; ++kw) {
                int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= W) continue;
                dw.at(co, ci, kh, kw) += g * x.at(n, ci, ih, iw);
                if (dx) dx->at(n, ci, ih, iw) += g * w.at(co, ci, kh, kw);
              }
            }
        }
}

void conv2d_grad(const Tensor& x, const Tensor& w, const ConvSpec& s,
                 const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db) {
  if (force_serial()) {
    conv2d_grad_serial(x, w, s, dy, dx, dw, db);
    return;
  }
  check_conv_shapes(x, w, s);
  const int N = x.dim(0), C = s.in_channels, H = x.dim(2), W = x.dim(3);
  const int Co = s.out_channels, k = s.kernel;
  const int Ho = s.out_extent(H), Wo = s.out_extent(W);
  const std::int64_t patch = static_cast<std::int64_t>(C) * k * k;
  const std::int64_t area = static_cast<std::int64_t>(Ho) * Wo;
  if (dx) *dx = Tensor({N, C, H, W});
  ConstMapRM wm(w.v.data(), Co, patch);
  MapRM dwm(dw.v.data(), Co, patch);

  // dx is parallel over samples; dw/db accumulate serially per sample so the
  // summation order is fixed regardless of thread count.
  std::vector<float> col(static_cast<size_t>(patch * area));
  std::vector<float> dcol(static_cast<size_t>(patch * area));
  for (int n = 0; n < N; ++n) {
    const float* xp = x.v.data() + static_cast<size_t>(n) * C * H * W;
    const float* dyp = dy.v.data() + static_cast<size_t>(n) * Co * area;
    im2col(xp, C, H, W, s, col.data());
    ConstMapRM cm(col.data(), patch, area);
    ConstMapRM dym(dyp, Co, area);
    dwm.noalias() += dym * cm.transpose();
    // fixed-order reduction: Eigen's redux order depends on buffer alignment
    for (int co = 0; co < Co; ++co) {
      const float* row = dyp + static_cast<size_t>(co) * area;
      float acc = 0.0f;
      for (std::int64_t i = 0; i < area; ++i) acc += row[i];
      db.at(co) += acc;
    }
    if (dx) {
      MapRM dcm(dcol.data(), patch, area);
      dcm.noalias() = wm.transpose() * dym;
      col2im_accum(dcol.data(), C, H, W, s,
                   dx->v.data() + static_cast<size_t>(n) * C * H * W);
    }
  }
}

void linear(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
  const int N = x.dim(0), D = x.dim(1), M = w.dim(0);
  if (w.dim(1) != D) throw std::invalid_argument("linear: feature mismatch");
  y = Tensor({N, M});
  ConstMapRM xm(x.v.data(), N, D), wm(w.v.data(), M, D);
  MapRM ym(y.v.data(), N, M);
  ym.noalias() = xm * wm.transpose();
  for (int m = 0; m < M; ++m) ym.col(m).array() += b.at(m);
}

void linear_grad(const Tensor& x, const Tensor& w, const Tensor& dy,
                 Tensor* dx, Tensor& dw, Tensor& db) {
  const int N = x.dim(0), D = x.dim(1), M = w.dim(0);
  ConstMapRM xm(x.v.data(), N, D), wm(w.v.data(), M, D), dym(dy.v.data(), N, M);
  MapRM dwm(dw.v.data(), M, D);
  dwm.noalias() += dym.transpose() * xm;
  // fixed-order reduction: Eigen's redux order depends on buffer alignment
  for (int m = 0; m < M; ++m) {
    float acc = 0.0f;
    for (int n = 0; n < N; ++n) acc += dy.v[static_cast<size_t>(n) * M + m];
    db.at(m) += acc;
  }
  if (dx) {
    *dx = Tensor({N, D});
    MapRM dxm(dx->v.data(), N, D);
    dxm.noalias() = dym * wm;
  }
}

}  // namespace anony::kernels
