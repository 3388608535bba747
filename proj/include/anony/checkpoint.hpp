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

#include <map>
#include <string>
#include <vector>

#include "anony/nn.hpp"

namespace anony::ckpt {

// Single-file archive: a JSON metadata block plus float blobs keyed by
// hierarchical names ("reid.backbone.block0.conv.weight", ...).
struct Checkpoint {
  std::string metadata_json;
  std::map<std::string, Tensor> blobs;

  void put_params(const std::string& prefix, const std::vector<nn::Param*>& params);
  // Throws if a named parameter is missing or shaped differently.
  void get_params(const std::string& prefix, const std::vector<nn::Param*>& params) const;
  void put_vector(const std::string& name, const std::vector<float>& data);
  std::vector<float> get_vector(const std::string& name) const;
  bool has(const std::string& name) const { return blobs.count(name) > 0; }
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace anony::ckpt
