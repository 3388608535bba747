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

#include <cstdint>
#include <string>
#include <vector>

namespace anony {

// Dense row-major float tensor, up to 4 dimensions in practice.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float value);

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  float& at(int i) { return v[static_cast<size_t>(i)]; }
  float at(int i) const { return v[static_cast<size_t>(i)]; }
  float& at(int a, int b) { return v[static_cast<size_t>(a) * shape[1] + b]; }
  float at(int a, int b) const { return v[static_cast<size_t>(a) * shape[1] + b]; }
  float& at(int a, int b, int c) {
    return v[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  float at(int a, int b, int c) const {
    return v[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  float& at(int a, int b, int c, int d) {
    return v[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  float at(int a, int b, int c, int d) const {
    return v[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }

  float sum() const;
  void fill(float value);
  void add_scaled(const Tensor& other, float scale);  // *this += scale * other

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;
};

// 64-bit seeded RNG with a pinned gaussian implementation so sampled
// streams are identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : s_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n);
  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double std) { return mean + std * normal(); }

  void fill_normal(Tensor& t, float mean, float std);

  // Fisher-Yates shuffle of an index vector.
  void shuffle(std::vector<int>& idx);

  std::string state() const;
  void restore(const std::string& state);

 private:
  // splitmix64 core; has_spare_/spare_ carry the second Box-Muller sample.
  std::uint64_t s_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable 64-bit string hash (FNV-1a); used for per-sample noise seeding.
std::uint64_t hash64(const std::string& s);

}  // namespace anony
