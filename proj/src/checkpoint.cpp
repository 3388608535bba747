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

#include "anony/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace anony::ckpt {

namespace {

constexpr char kMagic[8] = {'A', 'N', 'C', 'K', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return value;
}

}  // namespace

void Checkpoint::put_params(const std::string& prefix,
                            const std::vector<nn::Param*>& params) {
  for (const nn::Param* p : params) blobs[prefix + "." + p->name] = p->w;
}

void Checkpoint::get_params(const std::string& prefix,
                            const std::vector<nn::Param*>& params) const {
  for (nn::Param* p : params) {
    auto it = blobs.find(prefix + "." + p->name);
    if (it == blobs.end())
      throw std::runtime_error("checkpoint missing parameter " + prefix + "." + p->name);
    if (!it->second.same_shape(p->w))
      throw std::runtime_error("checkpoint shape mismatch for " + prefix + "." + p->name);
    p->w = it->second;
  }
}

void Checkpoint::put_vector(const std::string& name, const std::vector<float>& data) {
  Tensor t({static_cast<int>(data.size())});
  t.v = data;
  blobs[name] = std::move(t);
}

std::vector<float> Checkpoint::get_vector(const std::string& name) const {
  auto it = blobs.find(name);
  if (it == blobs.end()) throw std::runtime_error("checkpoint missing blob " + name);
  return it->second.v;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint64_t>(out, c.metadata_json.size());
    out.write(c.metadata_json.data(),
              static_cast<std::streamsize>(c.metadata_json.size()));
    write_pod<std::uint64_t>(out, c.blobs.size());
    for (const auto& [name, t] : c.blobs) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) write_pod<std::int32_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failure on checkpoint: " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  Checkpoint c;
  auto meta_len = read_pod<std::uint64_t>(in);
  c.metadata_json.resize(meta_len);
  in.read(c.metadata_json.data(), static_cast<std::streamsize>(meta_len));
  auto n_blobs = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_blobs; ++i) {
    auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    auto ndim = read_pod<std::uint32_t>(in);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = read_pod<std::int32_t>(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated checkpoint blob " + name);
    c.blobs[name] = std::move(t);
  }
  return c;
}

}  // namespace anony::ckpt
