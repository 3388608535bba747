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
#include <optional>
#include <string>
#include <vector>

#include "anony/tensor.hpp"

namespace anony::event {

struct Event {
  int x = 0;
  int y = 0;
  std::int64_t t = 0;  // microseconds
  int p = 0;           // polarity, 0 or 1
};

struct EventStream {
  std::vector<Event> events;
  int width = 0;
  int height = 0;

  // Throws if any event is out of bounds, polarities invalid, or timestamps
  // decrease.
  void validate() const;
};

// Dense (2T, H, W) count tensor; channels [0,T) negative polarity,
// [T,2T) positive, in temporal order.
struct EventHistogram {
  Tensor data;
  int T = 0;

  int channels() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
};

struct LabeledSample {
  EventHistogram histogram;
  int subject_id = 0;
  int target_label = 0;
  std::string sample_key;
};

enum class ExclusionRule { kSameSubjectAndLabel, kNone };
enum class SplitProtocol { kDvsGesture, kSee };

struct ReIdSplit {
  // Indices into the sample list the split was built from.
  std::vector<int> query;
  std::vector<int> gallery;
  ExclusionRule exclusion_rule = ExclusionRule::kNone;
};

struct AugmentationConfig {
  double pad_fraction = 1.0 / 12.0;
  double rotation_max_deg = 15.0;
  bool horizontal_flip = false;
  bool enabled = true;
  bool bilinear_rotation = false;  // default nearest-neighbor

  void validate() const;
};

struct SyntheticDatasetSpec {
  int n_subjects = 8;
  int n_target_classes = 4;
  int samples_per_pair = 8;
  int height = 16;
  int width = 16;
  int T = 5;
  int events_per_sample = 2000;
  double identity_signature_strength = 1.0;
  double motion_pattern_strength = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// ---- operations --------------------------------------------------------

// Partition events into T equal-width temporal bins over [t_first, t_last];
// the last bin is closed on the right. window_us > 0 restricts binning to
// [t_first, t_first + window_us].
EventHistogram build_histogram(const EventStream& stream, int T,
                               std::int64_t window_us = 0);

// Adapter for frame-aggregated inputs (SEE-style): per-polarity frames are
// partitioned into T contiguous groups and summed within each group.
// frames[i] has shape (2, H, W).
EventHistogram histogram_from_frames(const std::vector<Tensor>& frames, int T);

// Nearest-neighbor spatial resize of a histogram.
EventHistogram resize_nearest(const EventHistogram& hist, int new_h, int new_w);

// Zero-pad -> random crop -> optional horizontal flip -> random rotation.
EventHistogram augment(const EventHistogram& hist, const AugmentationConfig& cfg,
                       Rng& rng);

// Deterministic augmentation core with explicit parameters; `augment` draws
// them from the rng. crop offsets are in [0, 2*pad].
EventHistogram augment_with(const EventHistogram& hist, int pad_h, int pad_w,
                            int crop_y, int crop_x, bool flip, double angle_deg,
                            bool bilinear);

ReIdSplit build_reid_split(const std::vector<LabeledSample>& samples,
                           SplitProtocol protocol, std::uint64_t seed);

// Gallery candidates for one query after applying the exclusion rule. The
// query sample itself is never a candidate.
std::vector<int> valid_candidates(const ReIdSplit& split,
                                  const std::vector<LabeledSample>& samples,
                                  int query_index);

std::vector<LabeledSample> generate_synthetic_dataset(const SyntheticDatasetSpec& spec);

// ---- I/O ---------------------------------------------------------------

// Event CSV: first line "# width=W height=H", then header "x,y,t,p".
EventStream load_event_csv(const std::string& path);

// Sample archive: directory with manifest.json plus one little-endian f32
// raw tensor file per sample in C-contiguous (2T, H, W) order.
void save_samples(const std::vector<LabeledSample>& samples, const std::string& dir);
std::vector<LabeledSample> load_samples(const std::string& dir);

// Deterministic train/val partition: keeps a val_fraction share of each
// (subject, label) group for validation.
void split_train_val(const std::vector<LabeledSample>& samples, double val_fraction,
                     std::uint64_t seed, std::vector<int>& train_idx,
                     std::vector<int>& val_idx);

}  // namespace anony::event
